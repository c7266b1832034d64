use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::actors::{ConsumerPolicy, LeaderPolicy, OperatorPolicy};
use crate::beacon::derive_round;
use crate::crypto::{keccak_concat, Address, Secret, SigningKey};
use crate::ledger::{Funds, LedgerConfig, Mode, RoundId, Tick, Timing};

use super::SimError;

pub const DEFAULT_TICK_BUDGET: Tick = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorRole {
    /// Whoever reveals last in the first attempt of round 0.
    LastRevealer,
    FirstRevealer,
}

/// Picks an operator by activation index or by reveal role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSelector {
    Index(usize),
    Role(SelectorRole),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyAssignment {
    pub operator: OperatorSelector,
    pub policy: OperatorPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Economics {
    pub fee: Funds,
    pub operator_deposit: Funds,
    pub leader_deposit: Funds,
    pub min_deposit: Funds,
    pub min_leader_deposit: Funds,
    pub last_revealer_reward_bps: u32,
    pub leader_compensation_shares: u32,
}

impl Default for Economics {
    fn default() -> Self {
        Self {
            fee: 100,
            operator_deposit: 1_000,
            leader_deposit: 1_000,
            min_deposit: 1_000,
            min_leader_deposit: 1_000,
            last_revealer_reward_bps: 0,
            leader_compensation_shares: 1,
        }
    }
}

fn default_mode() -> Mode {
    Mode::Hybrid
}

fn one_usize() -> usize {
    1
}

fn one_tick() -> Tick {
    1
}

fn default_budget() -> Tick {
    DEFAULT_TICK_BUDGET
}

fn default_chain_id() -> u64 {
    1
}

fn default_ver_contract() -> Address {
    LedgerConfig::default().ver_contract
}

/// A reproducible run description, as stored in scenario files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Operators active from genesis, in activation order.
    pub operators: usize,
    #[serde(default)]
    pub policies: Vec<PolicyAssignment>,
    #[serde(default)]
    pub leader_policy: LeaderPolicy,
    #[serde(default)]
    pub consumer_policy: ConsumerPolicy,
    /// Honest operators that register only when a halt leaves too few.
    #[serde(default)]
    pub standby_operators: usize,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub economics: Economics,
    #[serde(default = "default_chain_id")]
    pub chain_id: u64,
    #[serde(default = "default_ver_contract")]
    pub ver_contract: Address,
    #[serde(default = "one_usize")]
    pub rounds: usize,
    /// Off-chain delivery delay in ticks.
    #[serde(default = "one_tick")]
    pub latency: Tick,
    #[serde(default = "default_budget")]
    pub tick_budget: Tick,
    /// Successful ledger calls expected for round 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_route: Option<Vec<String>>,
}

impl ScenarioScript {
    pub fn honest(n: usize, seed: u64) -> Self {
        Self {
            name: "honest".to_owned(),
            seed,
            mode: Mode::Hybrid,
            operators: n,
            policies: Vec::new(),
            leader_policy: LeaderPolicy::Honest,
            consumer_policy: ConsumerPolicy::Patient,
            standby_operators: 0,
            timing: Timing::default(),
            economics: Economics::default(),
            chain_id: default_chain_id(),
            ver_contract: default_ver_contract(),
            rounds: 1,
            latency: 1,
            tick_budget: DEFAULT_TICK_BUDGET,
            expected_route: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let script: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario is always serializable")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if self.operators < 2 {
            return bad(format!("need at least 2 operators, got {}", self.operators));
        }
        if self.latency == 0 {
            return bad("latency must be at least one tick".to_owned());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".to_owned());
        }
        let e = &self.economics;
        if e.operator_deposit < e.min_deposit {
            return bad("operator_deposit is below min_deposit".to_owned());
        }
        if e.leader_deposit < e.min_leader_deposit {
            return bad("leader_deposit is below min_leader_deposit".to_owned());
        }
        if e.last_revealer_reward_bps > 10_000 {
            return bad("last_revealer_reward_bps exceeds 10000".to_owned());
        }
        for p in &self.policies {
            if let OperatorSelector::Index(i) = p.operator {
                if i >= self.operators {
                    return bad(format!("policy targets operator {i} of {}", self.operators));
                }
            }
        }
        let mut targets = std::collections::BTreeSet::new();
        for p in &self.policies {
            if !targets.insert(self.resolve(p.operator)) {
                return bad("two policy assignments select the same operator".to_owned());
            }
        }
        Ok(())
    }

    pub fn ledger_config(&self) -> LedgerConfig {
        let e = &self.economics;
        LedgerConfig {
            mode: self.mode,
            chain_id: self.chain_id,
            ver_contract: self.ver_contract,
            min_deposit: e.min_deposit,
            min_leader_deposit: e.min_leader_deposit,
            timing: self.timing,
            last_revealer_reward_bps: e.last_revealer_reward_bps,
            leader_compensation_shares: e.leader_compensation_shares,
            ..LedgerConfig::default()
        }
    }

    /// Activation index targeted by a selector.
    pub fn resolve(&self, selector: OperatorSelector) -> usize {
        match selector {
            OperatorSelector::Index(i) => i,
            OperatorSelector::Role(role) => {
                let secrets: Vec<Secret> = (0..self.operators)
                    .map(|i| operator_secret(self.seed, i, 0, 0))
                    .collect();
                let order = derive_round(&secrets).expect("validated operator count").order;
                match role {
                    SelectorRole::LastRevealer => order.permutation[self.operators - 1],
                    SelectorRole::FirstRevealer => order.permutation[0],
                }
            }
        }
    }

    /// Policy of every genesis operator, by activation index.
    pub fn resolved_policies(&self) -> Vec<OperatorPolicy> {
        let mut out = vec![OperatorPolicy::Honest; self.operators];
        for p in &self.policies {
            let i = self.resolve(p.operator);
            if i < out.len() {
                out[i] = p.policy;
            }
        }
        out
    }
}

pub(crate) fn seeded_rng(domain: &[u8], words: &[u64]) -> ChaCha20Rng {
    let mut parts: Vec<Vec<u8>> = vec![domain.to_vec()];
    parts.extend(words.iter().map(|w| w.to_be_bytes().to_vec()));
    ChaCha20Rng::from_seed(keccak_concat(parts).0)
}

/// Fresh secret of operator `index` for one attempt of one round.
pub fn operator_secret(seed: u64, index: usize, round: RoundId, attempt_id: u64) -> Secret {
    let mut rng = seeded_rng(b"cr2/secret", &[seed, index as u64, round, attempt_id]);
    let mut out = [0u8; 32];
    rng.fill_bytes(&mut out);
    Secret(out)
}

fn key_from(domain: &[u8], words: &[u64]) -> SigningKey {
    let mut rng = seeded_rng(domain, words);
    loop {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        if let Ok(key) = SigningKey::from_bytes(&bytes) {
            return key;
        }
    }
}

/// Signing key of operator `index`; standby operators continue the numbering.
pub fn operator_key(seed: u64, index: usize) -> SigningKey {
    key_from(b"cr2/operator-key", &[seed, index as u64])
}

pub fn leader_address(seed: u64) -> Address {
    key_from(b"cr2/leader-key", &[seed]).address()
}

pub fn consumer_address(seed: u64) -> Address {
    key_from(b"cr2/consumer-key", &[seed]).address()
}
