use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::Address;

use super::types::{Funds, OperatorRecord, RoundId};

/// Every internal account except operator deposits, which live on the
/// operator records.
///
/// Slashed operator deposits are spread through a per-share `reward_index`:
/// an active operator is owed `reward_index - reward_snapshot` until it
/// settles, so a redistribution touches a constant number of slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundState {
    pub leader_deposit: Funds,
    pub escrow: BTreeMap<RoundId, Funds>,
    pub balances: BTreeMap<Address, Funds>,
    /// Integer-division remainders of redistributions.
    pub redistributed_pool: Funds,
    pub reward_index: Funds,
    /// Everything that ever entered from outside: deposits, fees, top-ups.
    pub external_inflow: Funds,
}

/// How a slashed amount was split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub per_share: Funds,
    pub operator_shares: usize,
    pub leader_shares: u32,
    pub remainder: Funds,
}

impl FundState {
    pub fn credit(&mut self, account: Address, amount: Funds) {
        if amount > 0 {
            *self.balances.entry(account).or_default() += amount;
        }
    }

    pub fn balance(&self, account: &Address) -> Funds {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn accrued(&self, record: &OperatorRecord) -> Funds {
        if record.active {
            self.reward_index - record.reward_snapshot
        } else {
            0
        }
    }

    /// Moves an operator's accrued redistribution share into its balance.
    pub fn settle(&mut self, record: &mut OperatorRecord) {
        let owed = self.accrued(record);
        self.credit(record.address, owed);
        record.reward_snapshot = self.reward_index;
    }

    /// Splits `amount` into `operator_shares + leader_shares` equal parts.
    /// The leader's parts go to `leader`; the remainder, or everything when
    /// nobody is eligible, goes to the pool.
    pub fn redistribute(
        &mut self,
        amount: Funds,
        operator_shares: usize,
        leader_shares: u32,
        leader: Address,
    ) -> Split {
        let shares = operator_shares as Funds + Funds::from(leader_shares);
        if shares == 0 {
            self.redistributed_pool += amount;
            return Split {
                per_share: 0,
                operator_shares,
                leader_shares,
                remainder: amount,
            };
        }
        let per_share = amount / shares;
        let remainder = amount - per_share * shares;
        if operator_shares > 0 {
            self.reward_index += per_share;
        }
        self.credit(leader, per_share * Funds::from(leader_shares));
        self.redistributed_pool += remainder;
        Split {
            per_share,
            operator_shares,
            leader_shares,
            remainder,
        }
    }

    /// Sum of all internal accounts given the operator registry.
    pub fn internal_total(&self, operators: &[OperatorRecord]) -> Funds {
        let deposits: Funds = operators.iter().map(|o| o.deposit).sum();
        let owed: Funds = operators.iter().map(|o| self.accrued(o)).sum();
        deposits
            + owed
            + self.leader_deposit
            + self.escrow.values().sum::<Funds>()
            + self.balances.values().sum::<Funds>()
            + self.redistributed_pool
    }
}
