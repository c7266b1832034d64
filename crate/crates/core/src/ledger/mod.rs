//! The verifying contract as a single-owner state machine.
//!
//! Every entry point validates completely before it mutates, so a rejected
//! call leaves no trace except its log entry. Each call is appended to an
//! audit log together with the work it metered.

mod funds;
mod meter;
mod types;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::beacon::{self, RevealOrder};
use crate::crypto::{
    domain_separator, keccak_concat, recover, struct_hash, Address, Digest32, RecoverableSignature, Secret,
    TypedMessage,
};
use crate::merkle::merkle_root;

pub use funds::{FundState, Split};
pub use meter::CostMeter;
pub use types::*;

type SeenKey = (Address, RoundId, u64, SeenSlot);

const BPS: Funds = 10_000;

#[derive(Default)]
struct Cx {
    meter: CostMeter,
    effects: Vec<Effect>,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    config: LedgerConfig,
    leader: Address,
    domain_separator: Digest32,
    now: Tick,
    status: ProtocolStatus,
    operators: Vec<OperatorRecord>,
    operator_slot: BTreeMap<Address, usize>,
    next_activation: u64,
    rounds: BTreeMap<RoundId, RoundState>,
    next_round: RoundId,
    current: Option<RoundId>,
    seen: BTreeSet<SeenKey>,
    funds: FundState,
    log: Vec<CallRecord>,
    meter_total: CostMeter,
}

#[derive(Serialize)]
struct SnapshotView<'a> {
    now: Tick,
    leader: Address,
    status: ProtocolStatus,
    config: &'a LedgerConfig,
    operators: &'a [OperatorRecord],
    rounds: Vec<&'a RoundState>,
    current_round: Option<RoundId>,
    seen_entries: usize,
    funds: &'a FundState,
    internal_total: Funds,
    meter_total: CostMeter,
}

impl Ledger {
    pub fn new(config: LedgerConfig, leader: Address, leader_deposit: Funds) -> Result<Self, LedgerError> {
        if leader_deposit < config.min_leader_deposit {
            return Err(LedgerError::InsufficientDeposit {
                required: config.min_leader_deposit,
                provided: leader_deposit,
            });
        }
        let domain_separator = domain_separator(&config.domain, config.chain_id, &config.ver_contract);
        Ok(Self {
            config,
            leader,
            domain_separator,
            now: 0,
            status: ProtocolStatus::Live,
            operators: Vec::new(),
            operator_slot: BTreeMap::new(),
            next_activation: 0,
            rounds: BTreeMap::new(),
            next_round: 0,
            current: None,
            seen: BTreeSet::new(),
            funds: FundState {
                leader_deposit,
                external_inflow: leader_deposit,
                ..FundState::default()
            },
            log: Vec::new(),
            meter_total: CostMeter::default(),
        })
    }

    // ----- views -------------------------------------------------------

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn leader(&self) -> Address {
        self.leader
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn status(&self) -> ProtocolStatus {
        self.status
    }

    pub fn current_round(&self) -> Option<RoundId> {
        self.current
    }

    pub fn round(&self, id: RoundId) -> Option<&RoundState> {
        self.rounds.get(&id)
    }

    pub fn rounds(&self) -> impl Iterator<Item = &RoundState> {
        self.rounds.values()
    }

    pub fn operator(&self, address: &Address) -> Option<&OperatorRecord> {
        self.operator_slot.get(address).map(|&i| &self.operators[i])
    }

    pub fn operators(&self) -> &[OperatorRecord] {
        &self.operators
    }

    /// Active operators in activation order.
    pub fn active_operators(&self) -> Vec<Address> {
        let mut active: Vec<&OperatorRecord> = self.operators.iter().filter(|o| o.active).collect();
        active.sort_by_key(|o| o.activation_index);
        active.into_iter().map(|o| o.address).collect()
    }

    pub fn active_count(&self) -> usize {
        self.operators.iter().filter(|o| o.active).count()
    }

    pub fn is_active(&self, address: &Address) -> bool {
        self.operator(address).is_some_and(|o| o.active)
    }

    pub fn funds(&self) -> &FundState {
        &self.funds
    }

    /// Withdrawable balance plus any unsettled redistribution share.
    pub fn balance_of(&self, address: &Address) -> Funds {
        let accrued = self.operator(address).map_or(0, |o| self.funds.accrued(o));
        self.funds.balance(address) + accrued
    }

    pub fn internal_total(&self) -> Funds {
        self.funds.internal_total(&self.operators)
    }

    pub fn external_inflow(&self) -> Funds {
        self.funds.external_inflow
    }

    pub fn is_seen(&self, address: Address, round: RoundId, attempt_id: u64, slot: SeenSlot) -> bool {
        self.seen.contains(&(address, round, attempt_id, slot))
    }

    pub fn log(&self) -> &[CallRecord] {
        &self.log
    }

    pub fn meter_total(&self) -> CostMeter {
        self.meter_total
    }

    /// The digest an operator signs for its outer commitment.
    pub fn commit_digest(&self, round: RoundId, attempt_id: u64, cv: &Digest32) -> Digest32 {
        let msg = TypedMessage {
            chain_id: self.config.chain_id,
            ver_contract: self.config.ver_contract,
            round,
            attempt_id,
            cv: *cv,
        };
        keccak_concat([&[0x19u8, 0x01][..], &self.domain_separator.0, &struct_hash(&msg).0])
    }

    pub fn snapshot(&self) -> serde_json::Value {
        let view = SnapshotView {
            now: self.now,
            leader: self.leader,
            status: self.status,
            config: &self.config,
            operators: &self.operators,
            rounds: self.rounds.values().collect(),
            current_round: self.current,
            seen_entries: self.seen.len(),
            funds: &self.funds,
            internal_total: self.internal_total(),
            meter_total: self.meter_total,
        };
        serde_json::to_value(view).expect("ledger snapshot is always serializable")
    }

    /// Checks the structural invariants; returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let total = self.internal_total();
        if total != self.funds.external_inflow {
            return Err(format!(
                "fund conservation: internal {total} != inflow {}",
                self.funds.external_inflow
            ));
        }
        let mut indices = BTreeSet::new();
        for op in self.operators.iter().filter(|o| o.active) {
            if op.deposit < self.config.min_deposit {
                return Err(format!("active operator {} under-collateralized", op.address));
            }
            if !indices.insert(op.activation_index) {
                return Err(format!("duplicate activation index {}", op.activation_index));
            }
        }
        for r in self.rounds.values() {
            match r.phase {
                Phase::Finalized if r.output.is_none() => {
                    return Err(format!("round {} finalized without output", r.round))
                }
                Phase::Refunded if r.output.is_some() => return Err(format!("round {} refunded with output", r.round)),
                Phase::Refunded | Phase::Finalized if self.funds.escrow.contains_key(&r.round) => {
                    return Err(format!("round {} closed with escrow left", r.round))
                }
                _ => {}
            }
        }
        if let Some(id) = self.current {
            let live = self.status == ProtocolStatus::Live;
            if live && self.active_count() < self.config.min_operators {
                return Err(format!("round {id} live with too few operators"));
            }
        }
        Ok(())
    }

    /// Moves the clock forward; earlier ticks are ignored.
    pub fn advance_to(&mut self, tick: Tick) {
        self.now = self.now.max(tick);
    }

    // ----- dispatch ------------------------------------------------------

    pub fn execute(&mut self, caller: Address, call: LedgerCall) -> Result<CallOutcome, LedgerError> {
        let done = |_: ()| CallOutcome::Done;
        match call {
            LedgerCall::DepositAndActivate { amount } => self
                .deposit_and_activate(caller, amount)
                .map(|activation_index| CallOutcome::Activated { activation_index }),
            LedgerCall::RequestRandomNumber { fee } => self
                .request_random_number(caller, fee)
                .map(|round| CallOutcome::RoundOpened { round }),
            LedgerCall::SubmitMerkleRoot { round, root } => self.submit_merkle_root(caller, round, root).map(done),
            LedgerCall::GenerateRandomNumber {
                round,
                secrets,
                signatures,
            } => self
                .generate_random_number(caller, round, &secrets, &signatures)
                .map(|output| CallOutcome::Output { output }),
            LedgerCall::SubmitCv { round, cv } => self.submit_cv(caller, round, cv).map(done),
            LedgerCall::SubmitCo { round, co } => self.submit_co(caller, round, co).map(done),
            LedgerCall::SubmitS { round, secret } => self
                .submit_s(caller, round, secret)
                .map(|output| output.map_or(CallOutcome::Done, |output| CallOutcome::Output { output })),
            LedgerCall::SubmitRevealOrder { round, order } => self.submit_reveal_order(caller, round, order).map(done),
            LedgerCall::RequestToSubmitCv { round, accused, known } => {
                self.request_to_submit_cv(caller, round, &accused, &known).map(done)
            }
            LedgerCall::RequestToSubmitCo {
                round,
                accused,
                cvs,
                signatures,
            } => self
                .request_to_submit_co(caller, round, &accused, &cvs, &signatures)
                .map(done),
            LedgerCall::RequestToSubmitS {
                round,
                cos,
                signatures,
                order,
                revealed,
            } => self
                .request_to_submit_s(caller, round, &cos, &signatures, order, &revealed)
                .map(done),
            LedgerCall::FailToSubmitCv { round } => self.fail_to_submit_cv(caller, round).map(done),
            LedgerCall::FailToSubmitCo { round } => self.fail_to_submit_co(caller, round).map(done),
            LedgerCall::FailToSubmitS { round } => self.fail_to_submit_s(caller, round).map(done),
            LedgerCall::FailToRequestSOrGenerateRandomNumber { round } => self
                .fail_to_request_s_or_generate_random_number(caller, round)
                .map(done),
            LedgerCall::Resume { replenish } => self.resume(caller, replenish).map(done),
            LedgerCall::Refund { round } => self
                .refund(caller, round)
                .map(|amount| CallOutcome::Refunded { amount }),
        }
    }

    fn call<T>(
        &mut self,
        caller: Address,
        name: &'static str,
        round: Option<RoundId>,
        op: impl FnOnce(&mut Self, &mut Cx) -> Result<T, LedgerError>,
        outcome: impl FnOnce(&T) -> CallOutcome,
    ) -> Result<T, LedgerError> {
        let attempt_id = round.and_then(|r| self.rounds.get(&r)).map(|r| r.attempt_id);
        let mut cx = Cx::default();
        let result = op(self, &mut cx);
        let (record, meter, effects) = match &result {
            Ok(value) => {
                cx.meter.transactions += 1;
                (
                    CallResult::Ok {
                        outcome: outcome(value),
                    },
                    cx.meter,
                    cx.effects,
                )
            }
            Err(err) => (
                CallResult::Err {
                    code: err.code().to_owned(),
                    detail: err.to_string(),
                },
                CostMeter::default(),
                Vec::new(),
            ),
        };
        self.meter_total += meter;
        let seq = self.log.len() as u64;
        self.log.push(CallRecord {
            tick: self.now,
            seq,
            call: name.to_owned(),
            caller,
            round,
            attempt_id,
            result: record,
            meter,
            effects,
        });
        result
    }

    // ----- shared checks -------------------------------------------------

    fn round_ref(&self, id: RoundId) -> Result<&RoundState, LedgerError> {
        self.rounds.get(&id).ok_or(LedgerError::UnknownRound(id))
    }

    fn round_mut(&mut self, id: RoundId) -> &mut RoundState {
        self.rounds.get_mut(&id).expect("round validated before mutation")
    }

    fn ensure_leader(&self, caller: &Address) -> Result<(), LedgerError> {
        if *caller == self.leader {
            Ok(())
        } else {
            Err(LedgerError::NotLeader)
        }
    }

    fn ensure_phase(r: &RoundState, phase: Phase, expected: &'static str) -> Result<(), LedgerError> {
        if r.phase == phase {
            Ok(())
        } else {
            Err(LedgerError::PhaseViolation {
                expected,
                actual: r.phase,
            })
        }
    }

    fn ensure_open(&self, r: &RoundState) -> Result<(), LedgerError> {
        match r.deadline {
            Some(deadline) if self.now > deadline => Err(LedgerError::WindowClosed {
                deadline,
                now: self.now,
            }),
            _ => Ok(()),
        }
    }

    fn ensure_expired(&self, r: &RoundState) -> Result<(), LedgerError> {
        match r.deadline {
            Some(deadline) if self.now <= deadline => Err(LedgerError::TooEarly {
                opens_at: deadline + 1,
                now: self.now,
            }),
            _ => Ok(()),
        }
    }

    fn ensure_reached(&self, at: Option<Tick>) -> Result<(), LedgerError> {
        match at {
            None => Err(LedgerError::NothingToRequest),
            Some(t) if self.now < t => Err(LedgerError::TooEarly {
                opens_at: t,
                now: self.now,
            }),
            Some(_) => Ok(()),
        }
    }

    fn participant(r: &RoundState, caller: &Address) -> Result<usize, LedgerError> {
        r.participant_index(caller).ok_or(LedgerError::NotParticipant(*caller))
    }

    fn ensure_fresh(&self, r: &RoundState, address: Address, slot: SeenSlot) -> Result<(), LedgerError> {
        if self.seen.contains(&(address, r.round, r.attempt_id, slot)) {
            Err(LedgerError::Replayed {
                address,
                round: r.round,
                attempt_id: r.attempt_id,
            })
        } else {
            Ok(())
        }
    }

    fn ensure_len(expected: usize, got: usize) -> Result<(), LedgerError> {
        if expected == got {
            Ok(())
        } else {
            Err(LedgerError::LengthMismatch { expected, got })
        }
    }

    /// Non-empty, in range, no repeats.
    fn ensure_indices(indices: &[usize], n: usize) -> Result<(), LedgerError> {
        if indices.is_empty() {
            return Err(LedgerError::NothingToRequest);
        }
        let mut seen = BTreeSet::new();
        for &i in indices {
            if i >= n || !seen.insert(i) {
                return Err(LedgerError::InvalidIndex(i));
            }
        }
        Ok(())
    }

    fn verify_signature(
        &self,
        cx: &mut Cx,
        r: &RoundState,
        index: usize,
        cv: &Digest32,
        signature: Option<&RecoverableSignature>,
    ) -> Result<(), LedgerError> {
        let signature = signature.ok_or(LedgerError::SignatureRequired { index })?;
        cx.meter.signature();
        let digest = self.commit_digest(r.round, r.attempt_id, cv);
        match recover(&digest, signature) {
            Ok(signer) if signer == r.participants[index] => Ok(()),
            Ok(_) => Err(LedgerError::SignatureInvalid {
                index,
                fault: SignatureFault::WrongSigner,
            }),
            Err(err) => Err(LedgerError::SignatureInvalid {
                index,
                fault: err.into(),
            }),
        }
    }

    /// Root check over a full set of outer commitments.
    fn verify_root(cx: &mut Cx, r: &RoundState, cvs: &[Digest32]) -> Result<(), LedgerError> {
        cx.meter.merkle(cvs.len());
        let root = merkle_root(cvs).map_err(|_| LedgerError::RootMismatch)?;
        if Some(root) == r.merkle_root {
            Ok(())
        } else {
            Err(LedgerError::RootMismatch)
        }
    }

    /// Recomputes the order from inner commitments and compares.
    fn verify_claimed_order(
        cx: &mut Cx,
        cos: &[Digest32],
        cvs: &[Digest32],
        claimed: &RevealOrder,
    ) -> Result<(), LedgerError> {
        let computed = Self::compute_order(cx, cos, cvs)?;
        if computed == *claimed && beacon::verify_order(claimed) {
            Ok(())
        } else {
            Err(LedgerError::OrderInvalid)
        }
    }

    fn compute_order(cx: &mut Cx, cos: &[Digest32], cvs: &[Digest32]) -> Result<RevealOrder, LedgerError> {
        cx.meter.hashes(1 + cvs.len());
        let omega_v = beacon::omega_v(cos)?;
        let keys = beacon::order_keys(&omega_v, cvs)?;
        Ok(beacon::reveal_order(&keys)?)
    }

    // ----- lifecycle helpers (mutating) ---------------------------------

    fn start_attempt(&mut self, cx: &mut Cx, id: RoundId, attempt_id: u64) {
        let participants = self.active_operators();
        let n = participants.len();
        let now = self.now;
        let timing = self.config.timing;
        let mode = self.config.mode;
        let r = self.round_mut(id);
        r.attempt_id = attempt_id;
        r.participants = participants;
        r.started_at = now;
        r.phase_started_at = now;
        r.merkle_root = None;
        r.on_chain_cv = vec![None; n];
        r.on_chain_co = vec![None; n];
        r.on_chain_s = vec![None; n];
        r.reveal_order = None;
        r.next_reveal = 0;
        r.co_escalation_at = None;
        r.s_escalation_at = None;
        match mode {
            Mode::Hybrid => {
                r.phase = Phase::OffChainInProgress;
                r.accused.clear();
                r.cv_escalation_at = Some(now + timing.offchain_phase_timeout);
                r.deadline = Some(now + timing.offchain_phase_timeout + timing.merkle_root_submission_period);
            }
            Mode::OnChain => {
                r.phase = Phase::OnChainCvWindow;
                r.accused = (0..n).collect();
                r.cv_escalation_at = None;
                r.deadline = Some(now + timing.onchain_submission_period);
            }
        }
        let (phase, deadline) = (r.phase, r.deadline);
        self.current = Some(id);
        cx.meter.writes(3);
        cx.effects.push(Effect::AttemptStarted {
            round: id,
            attempt_id,
            participants: n,
        });
        cx.effects.push(Effect::PhaseChanged {
            round: id,
            phase,
            deadline,
        });
    }

    fn set_phase(&mut self, cx: &mut Cx, id: RoundId, phase: Phase, deadline: Option<Tick>) {
        let now = self.now;
        let r = self.round_mut(id);
        r.phase = phase;
        r.phase_started_at = now;
        r.deadline = deadline;
        cx.meter.writes(1);
        cx.effects.push(Effect::PhaseChanged {
            round: id,
            phase,
            deadline,
        });
    }

    /// Starts the lowest queued round, if any.
    fn start_next_queued(&mut self, cx: &mut Cx) {
        self.current = None;
        let next = self
            .rounds
            .values()
            .find(|r| r.phase == Phase::AwaitingRequest)
            .map(|r| r.round);
        if let Some(id) = next {
            self.start_attempt(cx, id, 0);
        }
    }

    fn finalize(&mut self, cx: &mut Cx, id: RoundId, output: Digest32, last_revealer: Option<Address>) {
        let fee = self.funds.escrow.remove(&id).unwrap_or(0);
        let reward = match last_revealer {
            Some(_) => fee * Funds::from(self.config.last_revealer_reward_bps) / BPS,
            None => 0,
        };
        if let Some(last) = last_revealer {
            self.funds.credit(last, reward);
            cx.meter.writes(1);
        }
        self.funds.credit(self.leader, fee - reward);
        cx.meter.writes(2);
        let r = self.round_mut(id);
        r.output = Some(output);
        r.accused.clear();
        self.set_phase(cx, id, Phase::Finalized, None);
        cx.meter.writes(1);
        cx.effects.push(Effect::Finalized { round: id, output });
        self.start_next_queued(cx);
    }

    fn halt(&mut self, cx: &mut Cx, id: RoundId, reason: HaltReason) {
        self.status = ProtocolStatus::Halted(reason);
        cx.meter.writes(1);
        self.round_mut(id).accused.clear();
        self.set_phase(cx, id, Phase::Halted, None);
        cx.effects.push(Effect::Halted { reason });
    }

    /// Slashes the given participants of round `id`, redistributes, then
    /// retries the round or halts.
    fn punish_participants(&mut self, cx: &mut Cx, id: RoundId, offenders: &[Address]) {
        let mut slashed_total: Funds = 0;
        for address in offenders {
            let slot = self.operator_slot[address];
            let mut record = self.operators[slot].clone();
            self.funds.settle(&mut record);
            let amount = record.deposit;
            record.deposit = 0;
            record.active = false;
            self.operators[slot] = record;
            slashed_total += amount;
            cx.meter.writes(3);
            cx.effects.push(Effect::Slashed {
                address: *address,
                amount,
            });
            cx.effects.push(Effect::Deactivated { address: *address });
        }
        let remaining = self.active_count();
        let leader_shares = self.config.leader_compensation_shares;
        self.funds
            .redistribute(slashed_total, remaining, leader_shares, self.leader);
        cx.meter.writes(3);
        cx.effects.push(Effect::Redistributed {
            amount: slashed_total,
            recipients: remaining,
            leader_shares,
        });
        if remaining < self.config.min_operators {
            self.halt(cx, id, HaltReason::TooFewOperators);
        } else {
            let attempt = self.rounds[&id].attempt_id + 1;
            self.start_attempt(cx, id, attempt);
        }
    }

    // ----- registry and requests ----------------------------------------

    pub fn deposit_and_activate(&mut self, caller: Address, amount: Funds) -> Result<u64, LedgerError> {
        self.call(
            caller,
            "depositAndActivate",
            None,
            |l, cx| {
                if caller == l.leader {
                    return Err(LedgerError::LeaderCannotOperate);
                }
                if l.is_active(&caller) {
                    return Err(LedgerError::AlreadyActive(caller));
                }
                if amount < l.config.min_deposit {
                    return Err(LedgerError::InsufficientDeposit {
                        required: l.config.min_deposit,
                        provided: amount,
                    });
                }
                let activation_index = l.next_activation;
                l.next_activation += 1;
                let reward_index = l.funds.reward_index;
                let slot = match l.operator_slot.get(&caller) {
                    Some(&slot) => slot,
                    None => {
                        l.operators.push(OperatorRecord {
                            address: caller,
                            deposit: 0,
                            active: false,
                            activation_index,
                            reward_snapshot: reward_index,
                        });
                        l.operator_slot.insert(caller, l.operators.len() - 1);
                        l.operators.len() - 1
                    }
                };
                let record = &mut l.operators[slot];
                record.deposit += amount;
                record.active = true;
                record.activation_index = activation_index;
                record.reward_snapshot = reward_index;
                l.funds.external_inflow += amount;
                cx.meter.writes(3);
                cx.effects.push(Effect::Activated {
                    address: caller,
                    activation_index,
                });
                Ok(activation_index)
            },
            |&activation_index| CallOutcome::Activated { activation_index },
        )
    }

    pub fn request_random_number(&mut self, consumer: Address, fee: Funds) -> Result<RoundId, LedgerError> {
        self.call(
            consumer,
            "requestRandomNumber",
            None,
            |l, cx| {
                if l.status != ProtocolStatus::Live {
                    return Err(LedgerError::ServiceHalted);
                }
                let active = l.active_count();
                if active < l.config.min_operators {
                    return Err(LedgerError::NotEnoughOperators {
                        active,
                        required: l.config.min_operators,
                    });
                }
                let id = l.next_round;
                l.next_round += 1;
                l.rounds.insert(
                    id,
                    RoundState {
                        round: id,
                        attempt_id: 0,
                        phase: Phase::AwaitingRequest,
                        consumer,
                        fee,
                        requested_at: l.now,
                        participants: Vec::new(),
                        started_at: l.now,
                        phase_started_at: l.now,
                        deadline: None,
                        cv_escalation_at: None,
                        co_escalation_at: None,
                        s_escalation_at: None,
                        merkle_root: None,
                        on_chain_cv: Vec::new(),
                        on_chain_co: Vec::new(),
                        on_chain_s: Vec::new(),
                        accused: Vec::new(),
                        reveal_order: None,
                        next_reveal: 0,
                        output: None,
                    },
                );
                l.funds.escrow.insert(id, fee);
                l.funds.external_inflow += fee;
                cx.meter.writes(2);
                if l.current.is_none() {
                    l.start_attempt(cx, id, 0);
                } else {
                    cx.effects.push(Effect::RoundQueued { round: id });
                }
                Ok(id)
            },
            |&round| CallOutcome::RoundOpened { round },
        )
    }

    // ----- hybrid normal path -------------------------------------------

    pub fn submit_merkle_root(&mut self, caller: Address, round: RoundId, root: Digest32) -> Result<(), LedgerError> {
        self.call(
            caller,
            "submitMerkleRoot",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_leader(&caller)?;
                Self::ensure_phase(r, Phase::OffChainInProgress, "OffChainInProgress")?;
                l.ensure_open(r)?;
                let timing = l.config.timing;
                let co_at = l.now + timing.offchain_phase_timeout;
                let s_at = co_at + r.participants.len() as Tick * timing.offchain_reveal_period_per_operator;
                let r = l.round_mut(round);
                r.merkle_root = Some(root);
                r.cv_escalation_at = None;
                r.co_escalation_at = Some(co_at);
                r.s_escalation_at = Some(s_at);
                cx.meter.writes(2);
                l.set_phase(
                    cx,
                    round,
                    Phase::MerkleRootSubmitted,
                    Some(s_at + timing.request_or_generate_period),
                );
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    pub fn generate_random_number(
        &mut self,
        caller: Address,
        round: RoundId,
        secrets: &[Secret],
        signatures: &[Option<RecoverableSignature>],
    ) -> Result<Digest32, LedgerError> {
        self.call(
            caller,
            "generateRandomNumber",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_leader(&caller)?;
                for address in &r.participants {
                    l.ensure_fresh(r, *address, SeenSlot::S)?;
                }
                Self::ensure_phase(r, Phase::MerkleRootSubmitted, "MerkleRootSubmitted")?;
                l.ensure_open(r)?;
                let n = r.participants.len();
                Self::ensure_len(n, secrets.len())?;
                Self::ensure_len(n, signatures.len())?;
                let mut cos = Vec::with_capacity(n);
                let mut cvs = Vec::with_capacity(n);
                for (i, s) in secrets.iter().enumerate() {
                    let co = cx.meter.hash(&s.0);
                    let cv = cx.meter.hash(&co.0);
                    if r.on_chain_co[i].is_some_and(|x| x != co) || r.on_chain_cv[i].is_some_and(|x| x != cv) {
                        return Err(LedgerError::CommitmentMismatch { index: i });
                    }
                    cos.push(co);
                    cvs.push(cv);
                }
                Self::verify_root(cx, r, &cvs)?;
                for i in 0..n {
                    if r.on_chain_cv[i].is_none() {
                        l.verify_signature(cx, r, i, &cvs[i], signatures[i].as_ref())?;
                    }
                }
                cx.meter.hashes(1);
                let output = beacon::omega_o(secrets)?;
                let last_revealer = if l.config.last_revealer_reward_bps > 0 {
                    let order = Self::compute_order(cx, &cos, &cvs)?;
                    order.last().map(|i| r.participants[i])
                } else {
                    None
                };
                let (attempt, participants) = (r.attempt_id, r.participants.clone());
                for address in participants {
                    l.seen.insert((address, round, attempt, SeenSlot::S));
                }
                cx.meter.writes(n);
                l.finalize(cx, round, output, last_revealer);
                Ok(output)
            },
            |&output| CallOutcome::Output { output },
        )
    }

    // ----- direct on-chain submissions ----------------------------------

    pub fn submit_cv(&mut self, caller: Address, round: RoundId, cv: Digest32) -> Result<(), LedgerError> {
        self.call(
            caller,
            "submitCv",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                let idx = Self::participant(r, &caller)?;
                l.ensure_fresh(r, caller, SeenSlot::Cv)?;
                Self::ensure_phase(r, Phase::OnChainCvWindow, "OnChainCvWindow")?;
                l.ensure_open(r)?;
                if !r.accused.contains(&idx) {
                    return Err(LedgerError::NotRequested);
                }
                let attempt = r.attempt_id;
                let r = l.round_mut(round);
                r.on_chain_cv[idx] = Some(cv);
                let complete = r.accused.iter().all(|&i| r.on_chain_cv[i].is_some());
                l.seen.insert((caller, round, attempt, SeenSlot::Cv));
                cx.meter.writes(2);
                if complete {
                    let n = l.rounds[&round].participants.len();
                    let now = l.now;
                    let timing = l.config.timing;
                    match l.config.mode {
                        Mode::Hybrid => {
                            l.round_mut(round).accused.clear();
                            l.set_phase(
                                cx,
                                round,
                                Phase::OffChainInProgress,
                                Some(now + timing.merkle_root_submission_period),
                            );
                        }
                        Mode::OnChain => {
                            l.round_mut(round).accused = (0..n).collect();
                            l.set_phase(
                                cx,
                                round,
                                Phase::OnChainCoWindow,
                                Some(now + timing.onchain_submission_period),
                            );
                        }
                    }
                }
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    pub fn submit_co(&mut self, caller: Address, round: RoundId, co: Digest32) -> Result<(), LedgerError> {
        self.call(
            caller,
            "submitCo",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                let idx = Self::participant(r, &caller)?;
                l.ensure_fresh(r, caller, SeenSlot::Co)?;
                Self::ensure_phase(r, Phase::OnChainCoWindow, "OnChainCoWindow")?;
                l.ensure_open(r)?;
                if !r.accused.contains(&idx) {
                    return Err(LedgerError::NotRequested);
                }
                if Some(cx.meter.hash(&co.0)) != r.on_chain_cv[idx] {
                    return Err(LedgerError::CommitmentMismatch { index: idx });
                }
                let attempt = r.attempt_id;
                let r = l.round_mut(round);
                r.on_chain_co[idx] = Some(co);
                let complete = r.accused.iter().all(|&i| r.on_chain_co[i].is_some());
                l.seen.insert((caller, round, attempt, SeenSlot::Co));
                cx.meter.writes(2);
                if complete {
                    let n = l.rounds[&round].participants.len() as Tick;
                    let now = l.now;
                    let timing = l.config.timing;
                    l.round_mut(round).accused.clear();
                    match l.config.mode {
                        Mode::Hybrid => {
                            let s_at = now + n * timing.offchain_reveal_period_per_operator;
                            let r = l.round_mut(round);
                            r.co_escalation_at = None;
                            r.s_escalation_at = Some(s_at);
                            l.set_phase(
                                cx,
                                round,
                                Phase::MerkleRootSubmitted,
                                Some(s_at + timing.request_or_generate_period),
                            );
                        }
                        Mode::OnChain => {
                            l.set_phase(
                                cx,
                                round,
                                Phase::OnChainSWindow,
                                Some(now + timing.onchain_submission_period),
                            );
                        }
                    }
                }
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    pub fn submit_reveal_order(
        &mut self,
        caller: Address,
        round: RoundId,
        order: RevealOrder,
    ) -> Result<(), LedgerError> {
        self.call(
            caller,
            "submitRevealOrder",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                Self::participant(r, &caller)?;
                Self::ensure_phase(r, Phase::OnChainSWindow, "OnChainSWindow")?;
                l.ensure_open(r)?;
                if r.reveal_order.is_some() {
                    return Err(LedgerError::PhaseViolation {
                        expected: "OnChainSWindow awaiting its order",
                        actual: r.phase,
                    });
                }
                let cos: Vec<Digest32> = r.on_chain_co.iter().map(|c| c.unwrap_or(Digest32::ZERO)).collect();
                let cvs: Vec<Digest32> = r.on_chain_cv.iter().map(|c| c.unwrap_or(Digest32::ZERO)).collect();
                Self::verify_claimed_order(cx, &cos, &cvs, &order)?;
                let n = order.len();
                let deadline = l.now + l.config.timing.onchain_submission_period;
                let r = l.round_mut(round);
                r.reveal_order = Some(order);
                r.deadline = Some(deadline);
                cx.meter.writes(n + 1);
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    /// Accepts the next secret of an on-chain S window. Returns the output
    /// when this submission completes the round.
    pub fn submit_s(
        &mut self,
        caller: Address,
        round: RoundId,
        secret: Secret,
    ) -> Result<Option<Digest32>, LedgerError> {
        self.call(
            caller,
            "submitS",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                let idx = Self::participant(r, &caller)?;
                l.ensure_fresh(r, caller, SeenSlot::S)?;
                Self::ensure_phase(r, Phase::OnChainSWindow, "OnChainSWindow")?;
                l.ensure_open(r)?;
                let expected = r.next_revealer().ok_or(LedgerError::PhaseViolation {
                    expected: "OnChainSWindow with a stored order",
                    actual: r.phase,
                })?;
                if expected != caller {
                    return Err(LedgerError::NotYourTurn { expected });
                }
                if Some(cx.meter.hash(&secret.0)) != r.on_chain_co[idx] {
                    return Err(LedgerError::CommitmentMismatch { index: idx });
                }
                let attempt = r.attempt_id;
                let n = r.participants.len();
                let deadline = l.now + l.config.timing.onchain_submission_period;
                let r = l.round_mut(round);
                r.on_chain_s[idx] = Some(secret);
                r.next_reveal += 1;
                r.deadline = Some(deadline);
                let complete = r.next_reveal == n;
                l.seen.insert((caller, round, attempt, SeenSlot::S));
                cx.meter.writes(3);
                if !complete {
                    return Ok(None);
                }
                let secrets: Vec<Secret> = l.rounds[&round]
                    .on_chain_s
                    .iter()
                    .map(|s| s.expect("every position revealed"))
                    .collect();
                cx.meter.hashes(1);
                let output = beacon::omega_o(&secrets)?;
                let last = (l.config.last_revealer_reward_bps > 0).then_some(caller);
                l.finalize(cx, round, output, last);
                Ok(Some(output))
            },
            |output| output.map_or(CallOutcome::Done, |output| CallOutcome::Output { output }),
        )
    }

    // ----- leader escalations -------------------------------------------

    pub fn request_to_submit_cv(
        &mut self,
        caller: Address,
        round: RoundId,
        accused: &[usize],
        known: &[SignedCommit],
    ) -> Result<(), LedgerError> {
        self.call(
            caller,
            "requestToSubmitCv",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_leader(&caller)?;
                Self::ensure_phase(r, Phase::OffChainInProgress, "OffChainInProgress")?;
                l.ensure_reached(r.cv_escalation_at)?;
                l.ensure_open(r)?;
                let n = r.participants.len();
                Self::ensure_indices(accused, n)?;
                let mut all: Vec<usize> = accused.to_vec();
                all.extend(known.iter().map(|k| k.index));
                Self::ensure_indices(&all, n)?;
                for k in known {
                    match r.on_chain_cv[k.index] {
                        Some(anchored) if anchored == k.cv => {}
                        Some(_) => return Err(LedgerError::CommitmentMismatch { index: k.index }),
                        None => l
                            .verify_signature(cx, r, k.index, &k.cv, k.signature.as_ref())
                            .map_err(|_| LedgerError::SignatureRequired { index: k.index })?,
                    }
                }
                let deadline = l.now + l.config.timing.onchain_submission_period;
                let r = l.round_mut(round);
                for k in known {
                    r.on_chain_cv[k.index] = Some(k.cv);
                }
                r.accused = accused.to_vec();
                r.cv_escalation_at = None;
                cx.meter.writes(known.len() + accused.len());
                l.set_phase(cx, round, Phase::OnChainCvWindow, Some(deadline));
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    pub fn request_to_submit_co(
        &mut self,
        caller: Address,
        round: RoundId,
        accused: &[usize],
        cvs: &[Digest32],
        signatures: &[Option<RecoverableSignature>],
    ) -> Result<(), LedgerError> {
        self.call(
            caller,
            "requestToSubmitCo",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_leader(&caller)?;
                Self::ensure_phase(r, Phase::MerkleRootSubmitted, "MerkleRootSubmitted")?;
                l.ensure_reached(r.co_escalation_at)?;
                l.ensure_open(r)?;
                let n = r.participants.len();
                Self::ensure_len(n, cvs.len())?;
                Self::ensure_len(n, signatures.len())?;
                Self::ensure_indices(accused, n)?;
                for (i, cv) in cvs.iter().enumerate() {
                    if r.on_chain_cv[i].is_some_and(|x| x != *cv) {
                        return Err(LedgerError::CommitmentMismatch { index: i });
                    }
                }
                Self::verify_root(cx, r, cvs)?;
                let mut fresh = 0;
                for i in 0..n {
                    if r.on_chain_cv[i].is_none() {
                        l.verify_signature(cx, r, i, &cvs[i], signatures[i].as_ref())?;
                        fresh += 1;
                    }
                }
                let deadline = l.now + l.config.timing.onchain_submission_period;
                let r = l.round_mut(round);
                for (slot, cv) in r.on_chain_cv.iter_mut().zip(cvs) {
                    *slot = Some(*cv);
                }
                r.accused = accused.to_vec();
                r.co_escalation_at = None;
                cx.meter.writes(fresh + accused.len());
                l.set_phase(cx, round, Phase::OnChainCoWindow, Some(deadline));
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    /// Anchors the full inner-commitment set and the reveal order, records the
    /// secrets already revealed off-chain, and opens the on-chain S window at
    /// the first missing position.
    pub fn request_to_submit_s(
        &mut self,
        caller: Address,
        round: RoundId,
        cos: &[Digest32],
        signatures: &[Option<RecoverableSignature>],
        order: RevealOrder,
        revealed: &[Secret],
    ) -> Result<(), LedgerError> {
        self.call(
            caller,
            "requestToSubmitS",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_leader(&caller)?;
                Self::ensure_phase(r, Phase::MerkleRootSubmitted, "MerkleRootSubmitted")?;
                l.ensure_reached(r.s_escalation_at)?;
                l.ensure_open(r)?;
                let n = r.participants.len();
                Self::ensure_len(n, cos.len())?;
                Self::ensure_len(n, signatures.len())?;
                if revealed.len() == n {
                    return Err(LedgerError::NothingToRequest);
                }
                if revealed.len() > n {
                    return Err(LedgerError::LengthMismatch {
                        expected: n - 1,
                        got: revealed.len(),
                    });
                }
                let mut cvs = Vec::with_capacity(n);
                for (i, co) in cos.iter().enumerate() {
                    let cv = cx.meter.hash(&co.0);
                    if r.on_chain_co[i].is_some_and(|x| x != *co) || r.on_chain_cv[i].is_some_and(|x| x != cv) {
                        return Err(LedgerError::CommitmentMismatch { index: i });
                    }
                    cvs.push(cv);
                }
                Self::verify_root(cx, r, &cvs)?;
                let mut fresh = 0;
                for i in 0..n {
                    if r.on_chain_cv[i].is_none() {
                        l.verify_signature(cx, r, i, &cvs[i], signatures[i].as_ref())?;
                        fresh += 1;
                    }
                }
                Self::verify_claimed_order(cx, cos, &cvs, &order)?;
                for (k, s) in revealed.iter().enumerate() {
                    let index = order.permutation[k];
                    if cx.meter.hash(&s.0) != cos[index] {
                        return Err(LedgerError::CommitmentMismatch { index });
                    }
                }
                let attempt = r.attempt_id;
                let participants = r.participants.clone();
                let deadline = l.now + l.config.timing.onchain_submission_period;
                let r = l.round_mut(round);
                for i in 0..n {
                    r.on_chain_cv[i] = Some(cvs[i]);
                    r.on_chain_co[i] = Some(cos[i]);
                }
                for (k, s) in revealed.iter().enumerate() {
                    r.on_chain_s[order.permutation[k]] = Some(*s);
                }
                let prefix: Vec<usize> = order.permutation[..revealed.len()].to_vec();
                r.next_reveal = revealed.len();
                r.reveal_order = Some(order);
                r.s_escalation_at = None;
                for index in prefix {
                    l.seen.insert((participants[index], round, attempt, SeenSlot::S));
                }
                cx.meter.writes(fresh + 2 * n + 2 * revealed.len());
                l.set_phase(cx, round, Phase::OnChainSWindow, Some(deadline));
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    // ----- timeouts -----------------------------------------------------

    fn ensure_watcher(&self, caller: &Address) -> Result<(), LedgerError> {
        if *caller == self.leader || self.is_active(caller) {
            Ok(())
        } else {
            Err(LedgerError::NotOperator(*caller))
        }
    }

    pub fn fail_to_submit_cv(&mut self, caller: Address, round: RoundId) -> Result<(), LedgerError> {
        self.call(
            caller,
            "failToSubmitCv",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_watcher(&caller)?;
                Self::ensure_phase(r, Phase::OnChainCvWindow, "OnChainCvWindow")?;
                l.ensure_expired(r)?;
                let offenders: Vec<Address> = r
                    .accused
                    .iter()
                    .filter(|&&i| r.on_chain_cv[i].is_none())
                    .map(|&i| r.participants[i])
                    .collect();
                if offenders.is_empty() {
                    return Err(LedgerError::NothingToRequest);
                }
                l.punish_participants(cx, round, &offenders);
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    pub fn fail_to_submit_co(&mut self, caller: Address, round: RoundId) -> Result<(), LedgerError> {
        self.call(
            caller,
            "failToSubmitCo",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_watcher(&caller)?;
                Self::ensure_phase(r, Phase::OnChainCoWindow, "OnChainCoWindow")?;
                l.ensure_expired(r)?;
                let offenders: Vec<Address> = r
                    .accused
                    .iter()
                    .filter(|&&i| r.on_chain_co[i].is_none())
                    .map(|&i| r.participants[i])
                    .collect();
                if offenders.is_empty() {
                    return Err(LedgerError::NothingToRequest);
                }
                l.punish_participants(cx, round, &offenders);
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    /// Slashes the operator whose reveal turn expired. Without a stored order
    /// the ledger derives it, and the first revealer, who failed to post it,
    /// is the offender.
    pub fn fail_to_submit_s(&mut self, caller: Address, round: RoundId) -> Result<(), LedgerError> {
        self.call(
            caller,
            "failToSubmitS",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                l.ensure_watcher(&caller)?;
                Self::ensure_phase(r, Phase::OnChainSWindow, "OnChainSWindow")?;
                l.ensure_expired(r)?;
                let offender = match r.next_revealer() {
                    Some(address) => address,
                    None => {
                        let cos: Vec<Digest32> = r.on_chain_co.iter().map(|c| c.unwrap_or(Digest32::ZERO)).collect();
                        let cvs: Vec<Digest32> = r.on_chain_cv.iter().map(|c| c.unwrap_or(Digest32::ZERO)).collect();
                        let order = Self::compute_order(cx, &cos, &cvs)?;
                        r.participants[order.permutation[0]]
                    }
                };
                l.punish_participants(cx, round, &[offender]);
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    /// Any active operator may call this once the leader's duty deadline has
    /// passed with the round still waiting on the leader.
    pub fn fail_to_request_s_or_generate_random_number(
        &mut self,
        caller: Address,
        round: RoundId,
    ) -> Result<(), LedgerError> {
        self.call(
            caller,
            "failToRequestSOrGenerateRandomNumber",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                if !l.is_active(&caller) {
                    return Err(LedgerError::NotOperator(caller));
                }
                if !matches!(r.phase, Phase::OffChainInProgress | Phase::MerkleRootSubmitted) {
                    return Err(LedgerError::PhaseViolation {
                        expected: "OffChainInProgress or MerkleRootSubmitted",
                        actual: r.phase,
                    });
                }
                l.ensure_expired(r)?;
                let amount = l.funds.leader_deposit;
                l.funds.leader_deposit = 0;
                let remaining = l.active_count();
                l.funds.redistribute(amount, remaining, 0, l.leader);
                cx.meter.writes(4);
                cx.effects.push(Effect::Slashed {
                    address: l.leader,
                    amount,
                });
                cx.effects.push(Effect::Redistributed {
                    amount,
                    recipients: remaining,
                    leader_shares: 0,
                });
                l.halt(cx, round, HaltReason::LeaderFailure);
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    // ----- halt recovery --------------------------------------------------

    pub fn resume(&mut self, caller: Address, replenish: Funds) -> Result<(), LedgerError> {
        self.call(
            caller,
            "resume",
            None,
            |l, cx| {
                if l.status == ProtocolStatus::Live {
                    return Err(LedgerError::NotHalted);
                }
                l.ensure_leader(&caller)?;
                if replenish < l.config.min_leader_deposit {
                    return Err(LedgerError::InsufficientDeposit {
                        required: l.config.min_leader_deposit,
                        provided: replenish,
                    });
                }
                let active = l.active_count();
                if active < l.config.min_operators {
                    return Err(LedgerError::NotEnoughOperators {
                        active,
                        required: l.config.min_operators,
                    });
                }
                l.funds.leader_deposit += replenish;
                l.funds.external_inflow += replenish;
                l.status = ProtocolStatus::Live;
                cx.meter.writes(2);
                cx.effects.push(Effect::Resumed);
                match l.current {
                    Some(id) if l.rounds[&id].phase == Phase::Halted => {
                        let attempt = l.rounds[&id].attempt_id + 1;
                        l.start_attempt(cx, id, attempt);
                    }
                    Some(_) => {}
                    None => l.start_next_queued(cx),
                }
                Ok(())
            },
            |_| CallOutcome::Done,
        )
    }

    pub fn refund(&mut self, caller: Address, round: RoundId) -> Result<Funds, LedgerError> {
        self.call(
            caller,
            "refund",
            Some(round),
            |l, cx| {
                let r = l.round_ref(round)?;
                if r.consumer != caller {
                    return Err(LedgerError::NotYourRequest);
                }
                match r.phase {
                    Phase::Refunded => return Err(LedgerError::AlreadyRefunded),
                    Phase::Finalized => return Err(LedgerError::AlreadyProcessed),
                    _ => {}
                }
                if l.status == ProtocolStatus::Live {
                    return Err(LedgerError::NotHalted);
                }
                let amount = l.funds.escrow.remove(&round).unwrap_or(0);
                l.funds.credit(caller, amount);
                l.round_mut(round).accused.clear();
                l.set_phase(cx, round, Phase::Refunded, None);
                if l.current == Some(round) {
                    l.current = None;
                }
                cx.meter.writes(2);
                cx.effects.push(Effect::Refunded {
                    round,
                    consumer: caller,
                    amount,
                });
                Ok(amount)
            },
            |&amount| CallOutcome::Refunded { amount },
        )
    }
}

#[cfg(test)]
mod tests;
