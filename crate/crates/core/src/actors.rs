//! Leader, operator and consumer behaviours.
//!
//! Actors are deterministic state machines. Each step reads the ledger (free)
//! and the messages delivered to it this tick, and returns off-chain sends
//! and ledger calls for the simulator to execute in order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::beacon::{self, RevealOrder};
use crate::crypto::{
    keccak, recover, sign, Address, CommitmentChain, Digest32, RecoverableSignature, Secret, SigningKey,
};
use crate::ledger::{Funds, Ledger, LedgerCall, Phase, ProtocolStatus, RoundId, RoundState, SignedCommit, Tick};
use crate::merkle::merkle_root;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorPolicy {
    #[default]
    Honest,
    /// Never sends its outer commitment and ignores the on-chain cv window.
    WithholdCvOffChain,
    /// Never sends its inner commitment and ignores the on-chain co window.
    WithholdCoOffChain,
    /// Never reveals its secret and ignores its on-chain reveal turn.
    WithholdSOffChain,
    /// Silent from the commit phase on, off-chain and on-chain.
    NeverSubmitOnChain,
    /// Commits off-chain but holds its secret back until the leader forces
    /// an on-chain reveal, then answers inside the window.
    LateOnChainGriefer,
}

impl OperatorPolicy {
    pub fn sends_cv(self) -> bool {
        !matches!(self, Self::WithholdCvOffChain | Self::NeverSubmitOnChain)
    }

    pub fn sends_co(self) -> bool {
        !matches!(self, Self::WithholdCoOffChain | Self::NeverSubmitOnChain)
    }

    pub fn sends_s(self) -> bool {
        matches!(self, Self::Honest | Self::WithholdCvOffChain | Self::WithholdCoOffChain)
    }

    pub fn answers_cv(self) -> bool {
        self.sends_cv()
    }

    pub fn answers_co(self) -> bool {
        self.sends_co()
    }

    pub fn answers_s(self) -> bool {
        !matches!(self, Self::WithholdSOffChain | Self::NeverSubmitOnChain)
    }
}

/// Leader faults fire once, on the first attempt of round 0; the leader is
/// honest afterwards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeaderPolicy {
    #[default]
    Honest,
    WithholdMerkleRoot,
    WithholdGenerate,
    SubmitWrongRoot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsumerPolicy {
    /// Waits out a halt.
    #[default]
    Patient,
    /// Takes the fee back as soon as the protocol halts.
    RefundOnHalt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum MessageBody {
    CommitCv(Digest32),
    RevealCo(Digest32),
    RevealS(Secret),
    OrderAnnouncement { order: RevealOrder, turn: usize },
}

impl MessageBody {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::CommitCv(_) => "CommitCv",
            MessageBody::RevealCo(_) => "RevealCo",
            MessageBody::RevealS(_) => "RevealS",
            MessageBody::OrderAnnouncement { .. } => "OrderAnnouncement",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffChainMessage {
    pub sender: Address,
    pub round: RoundId,
    pub attempt_id: u64,
    #[serde(flatten)]
    pub body: MessageBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<RecoverableSignature>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { to: Address, message: OffChainMessage },
    Call(LedgerCall),
}

/// What every actor sees when it steps.
pub struct StepContext<'a> {
    pub now: Tick,
    pub ledger: &'a Ledger,
    /// Operator responsible for reporting a silent leader.
    pub watchdog: Option<Address>,
}

fn attempt_key(r: &RoundState) -> (RoundId, u64) {
    (r.round, r.attempt_id)
}

/// Order derived from on-chain commitments, if they are complete.
fn on_chain_order(r: &RoundState) -> Option<RevealOrder> {
    let cos: Option<Vec<Digest32>> = r.on_chain_co.iter().copied().collect();
    let cvs: Option<Vec<Digest32>> = r.on_chain_cv.iter().copied().collect();
    let omega_v = beacon::omega_v(&cos?).ok()?;
    let keys = beacon::order_keys(&omega_v, &cvs?).ok()?;
    beacon::reveal_order(&keys).ok()
}

// ----- operators ----------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct OperatorAttempt {
    key: (RoundId, u64),
    chain: Option<CommitmentChain>,
    sent_cv: bool,
    sent_co: bool,
    sent_s: bool,
    submitted_cv: bool,
    submitted_co: bool,
    submitted_s: bool,
    submitted_order: bool,
}

/// Secret source for an operator: `(round, attempt) -> secret`.
pub type SecretSource = Box<dyn Fn(RoundId, u64) -> Secret + Send + Sync>;

pub struct OperatorActor {
    key: SigningKey,
    policy: OperatorPolicy,
    secrets: SecretSource,
    /// Joins only to restore quorum after a halt.
    standby_deposit: Option<Funds>,
    deposited: bool,
    attempt: OperatorAttempt,
    reported: BTreeSet<(RoundId, u64)>,
}

impl std::fmt::Debug for OperatorActor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorActor")
            .field("address", &self.key.address())
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

impl OperatorActor {
    pub fn new(key: SigningKey, policy: OperatorPolicy, secrets: SecretSource) -> Self {
        Self {
            key,
            policy,
            secrets,
            standby_deposit: None,
            deposited: false,
            attempt: OperatorAttempt::default(),
            reported: BTreeSet::new(),
        }
    }

    pub fn standby(mut self, deposit: Funds) -> Self {
        self.standby_deposit = Some(deposit);
        self
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    pub fn policy(&self) -> OperatorPolicy {
        self.policy
    }

    fn chain_for(&mut self, r: &RoundState) -> CommitmentChain {
        if self.attempt.key != attempt_key(r) || self.attempt.chain.is_none() {
            let secret = (self.secrets)(r.round, r.attempt_id);
            self.attempt = OperatorAttempt {
                key: attempt_key(r),
                chain: Some(CommitmentChain::from_secret(secret)),
                ..OperatorAttempt::default()
            };
        }
        self.attempt.chain.expect("chain set above")
    }

    pub fn step(&mut self, cx: &StepContext<'_>, inbox: &[OffChainMessage]) -> Vec<Action> {
        let ledger = cx.ledger;
        let me = self.address();
        let mut out = Vec::new();

        if !ledger.is_active(&me) {
            let quorum_lost = matches!(ledger.status(), ProtocolStatus::Halted(_))
                && ledger.active_count() < ledger.config().min_operators;
            if let (Some(amount), false, true) = (self.standby_deposit, self.deposited, quorum_lost) {
                self.deposited = true;
                out.push(Action::Call(LedgerCall::DepositAndActivate { amount }));
            }
            return out;
        }
        let Some(r) = ledger.current_round().and_then(|id| ledger.round(id)) else {
            return out;
        };

        if cx.watchdog == Some(me)
            && matches!(r.phase, Phase::OffChainInProgress | Phase::MerkleRootSubmitted)
            && r.deadline.is_some_and(|d| cx.now > d)
            && self.reported.insert(attempt_key(r))
        {
            out.push(Action::Call(LedgerCall::FailToRequestSOrGenerateRandomNumber {
                round: r.round,
            }));
            return out;
        }

        let Some(idx) = r.participant_index(&me) else {
            return out;
        };
        let chain = self.chain_for(r);
        let leader = ledger.leader();
        let message = |body| OffChainMessage {
            sender: me,
            round: r.round,
            attempt_id: r.attempt_id,
            body,
            signature: None,
        };

        for msg in inbox {
            if (msg.round, msg.attempt_id) != attempt_key(r) || msg.sender != leader {
                continue;
            }
            if let MessageBody::OrderAnnouncement { order, turn } = &msg.body {
                let mine = order.permutation.get(*turn) == Some(&idx);
                if mine && self.policy.sends_s() && !self.attempt.sent_s {
                    self.attempt.sent_s = true;
                    out.push(Action::Send {
                        to: leader,
                        message: message(MessageBody::RevealS(chain.secret)),
                    });
                }
            }
        }

        let round = r.round;
        match r.phase {
            Phase::OffChainInProgress if self.policy.sends_cv() && !self.attempt.sent_cv => {
                self.attempt.sent_cv = true;
                let digest = ledger.commit_digest(round, r.attempt_id, &chain.outer);
                let mut msg = message(MessageBody::CommitCv(chain.outer));
                msg.signature = Some(sign(&digest, &self.key));
                out.push(Action::Send {
                    to: leader,
                    message: msg,
                });
            }
            Phase::MerkleRootSubmitted if self.policy.sends_co() && !self.attempt.sent_co => {
                self.attempt.sent_co = true;
                out.push(Action::Send {
                    to: leader,
                    message: message(MessageBody::RevealCo(chain.inner)),
                });
            }
            Phase::OnChainCvWindow
                if r.accused.contains(&idx)
                    && r.on_chain_cv[idx].is_none()
                    && self.policy.answers_cv()
                    && !self.attempt.submitted_cv =>
            {
                self.attempt.submitted_cv = true;
                out.push(Action::Call(LedgerCall::SubmitCv { round, cv: chain.outer }));
            }
            Phase::OnChainCoWindow
                if r.accused.contains(&idx)
                    && r.on_chain_co[idx].is_none()
                    && self.policy.answers_co()
                    && !self.attempt.submitted_co =>
            {
                self.attempt.submitted_co = true;
                out.push(Action::Call(LedgerCall::SubmitCo { round, co: chain.inner }));
            }
            Phase::OnChainSWindow if self.policy.answers_s() => match &r.reveal_order {
                None => {
                    if let Some(order) = on_chain_order(r) {
                        if order.permutation[0] == idx && !self.attempt.submitted_order {
                            self.attempt.submitted_order = true;
                            out.push(Action::Call(LedgerCall::SubmitRevealOrder { round, order }));
                        }
                    }
                }
                Some(_) => {
                    if r.next_revealer() == Some(me) && !self.attempt.submitted_s {
                        self.attempt.submitted_s = true;
                        out.push(Action::Call(LedgerCall::SubmitS {
                            round,
                            secret: chain.secret,
                        }));
                    }
                }
            },
            _ => {}
        }
        out
    }
}

// ----- leader -------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct LeaderAttempt {
    key: (RoundId, u64),
    n: usize,
    cvs: Vec<Option<(Digest32, Option<RecoverableSignature>)>>,
    cos: Vec<Option<Digest32>>,
    secrets: Vec<Option<Secret>>,
    order: Option<RevealOrder>,
    turn: usize,
    root_sent: bool,
    generate_sent: bool,
    cv_escalated: bool,
    co_escalated: bool,
    s_escalated: bool,
    fail_sent: Option<Phase>,
}

#[derive(Debug)]
pub struct LeaderActor {
    address: Address,
    policy: LeaderPolicy,
    attempt: LeaderAttempt,
}

impl LeaderActor {
    pub fn new(address: Address, policy: LeaderPolicy) -> Self {
        Self {
            address,
            policy,
            attempt: LeaderAttempt::default(),
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn policy(&self) -> LeaderPolicy {
        self.policy
    }

    fn faulty(&self, r: &RoundState) -> bool {
        r.round == 0 && r.attempt_id == 0
    }

    fn sync(&mut self, r: &RoundState) {
        if self.attempt.key != attempt_key(r) || self.attempt.n != r.participants.len() {
            let n = r.participants.len();
            self.attempt = LeaderAttempt {
                key: attempt_key(r),
                n,
                cvs: vec![None; n],
                cos: vec![None; n],
                secrets: vec![None; n],
                ..LeaderAttempt::default()
            };
        }
        // adopt anything already anchored on-chain
        for i in 0..r.participants.len() {
            if let (None, Some(cv)) = (self.attempt.cvs[i], r.on_chain_cv[i]) {
                self.attempt.cvs[i] = Some((cv, None));
            }
            if let (None, Some(co)) = (self.attempt.cos[i], r.on_chain_co[i]) {
                self.attempt.cos[i] = Some(co);
            }
        }
    }

    fn announce(&self, r: &RoundState, out: &mut Vec<Action>) {
        let Some(order) = &self.attempt.order else { return };
        let Some(&idx) = order.permutation.get(self.attempt.turn) else {
            return;
        };
        out.push(Action::Send {
            to: r.participants[idx],
            message: OffChainMessage {
                sender: self.address,
                round: r.round,
                attempt_id: r.attempt_id,
                body: MessageBody::OrderAnnouncement {
                    order: order.clone(),
                    turn: self.attempt.turn,
                },
                signature: None,
            },
        });
    }

    /// Verifies an operator message; anything that fails is dropped, which
    /// is indistinguishable from withholding.
    fn accept(&mut self, ledger: &Ledger, r: &RoundState, msg: &OffChainMessage, out: &mut Vec<Action>) {
        if (msg.round, msg.attempt_id) != attempt_key(r) {
            return;
        }
        let Some(i) = r.participant_index(&msg.sender) else {
            return;
        };
        match &msg.body {
            MessageBody::CommitCv(cv) => {
                if self.attempt.cvs[i].is_some() {
                    return;
                }
                let Some(sig) = msg.signature else { return };
                let digest = ledger.commit_digest(r.round, r.attempt_id, cv);
                if recover(&digest, &sig).ok() == Some(msg.sender) {
                    self.attempt.cvs[i] = Some((*cv, Some(sig)));
                }
            }
            MessageBody::RevealCo(co) => {
                let known = self.attempt.cvs[i].map(|(cv, _)| cv);
                if self.attempt.cos[i].is_none() && known == Some(keccak(&co.0)) {
                    self.attempt.cos[i] = Some(*co);
                }
            }
            MessageBody::RevealS(s) => {
                let Some(order) = &self.attempt.order else { return };
                let due = order.permutation.get(self.attempt.turn) == Some(&i);
                if due && self.attempt.cos[i] == Some(keccak(&s.0)) {
                    self.attempt.secrets[i] = Some(*s);
                    self.attempt.turn += 1;
                    self.announce(r, out);
                }
            }
            MessageBody::OrderAnnouncement { .. } => {}
        }
    }

    fn signatures(&self) -> Vec<Option<RecoverableSignature>> {
        self.attempt.cvs.iter().map(|c| c.and_then(|(_, sig)| sig)).collect()
    }

    pub fn step(&mut self, cx: &StepContext<'_>, inbox: &[OffChainMessage]) -> Vec<Action> {
        let ledger = cx.ledger;
        let mut out = Vec::new();
        if let ProtocolStatus::Halted(_) = ledger.status() {
            if ledger.active_count() >= ledger.config().min_operators {
                out.push(Action::Call(LedgerCall::Resume {
                    replenish: ledger.config().min_leader_deposit,
                }));
            }
            return out;
        }
        let Some(r) = ledger.current_round().and_then(|id| ledger.round(id)) else {
            return out;
        };
        self.sync(r);
        for msg in inbox {
            self.accept(ledger, r, msg, &mut out);
        }

        let now = cx.now;
        let round = r.round;
        let reached = |at: Option<Tick>| at.is_some_and(|t| now >= t);
        let fault = self.faulty(r);
        let a = &mut self.attempt;
        match r.phase {
            Phase::OffChainInProgress => {
                let missing: Vec<usize> = (0..a.n).filter(|&i| a.cvs[i].is_none()).collect();
                if missing.is_empty() && !a.root_sent {
                    a.root_sent = true;
                    let cvs: Vec<Digest32> = a.cvs.iter().map(|c| c.expect("all collected").0).collect();
                    let root = merkle_root(&cvs).expect("rounds have at least two participants");
                    match (self.policy, fault) {
                        (LeaderPolicy::WithholdMerkleRoot, true) => {}
                        (LeaderPolicy::SubmitWrongRoot, true) => out.push(Action::Call(LedgerCall::SubmitMerkleRoot {
                            round,
                            root: keccak(&root.0),
                        })),
                        _ => out.push(Action::Call(LedgerCall::SubmitMerkleRoot { round, root })),
                    }
                } else if !missing.is_empty() && !a.cv_escalated && reached(r.cv_escalation_at) {
                    a.cv_escalated = true;
                    let known = (0..a.n)
                        .filter_map(|i| match a.cvs[i] {
                            Some((cv, signature)) if r.on_chain_cv[i].is_none() => Some(SignedCommit {
                                index: i,
                                cv,
                                signature,
                            }),
                            _ => None,
                        })
                        .collect();
                    out.push(Action::Call(LedgerCall::RequestToSubmitCv {
                        round,
                        accused: missing,
                        known,
                    }));
                }
            }
            Phase::MerkleRootSubmitted => {
                let cos_complete = a.cos.iter().all(Option::is_some);
                if cos_complete && a.order.is_none() {
                    let cos: Vec<Digest32> = a.cos.iter().map(|c| c.expect("complete")).collect();
                    let cvs: Vec<Digest32> = a.cvs.iter().map(|c| c.expect("root submitted").0).collect();
                    let order = beacon::omega_v(&cos)
                        .and_then(|ov| beacon::order_keys(&ov, &cvs))
                        .and_then(|keys| beacon::reveal_order(&keys));
                    if let Ok(order) = order {
                        a.order = Some(order);
                        a.turn = 0;
                        self.announce(r, &mut out);
                    }
                }
                let a = &mut self.attempt;
                let secrets_complete = a.secrets.iter().all(Option::is_some);
                if secrets_complete && !a.generate_sent {
                    a.generate_sent = true;
                    if !(self.policy == LeaderPolicy::WithholdGenerate && fault) {
                        let secrets = a.secrets.iter().map(|s| s.expect("complete")).collect();
                        let signatures = self.signatures();
                        out.push(Action::Call(LedgerCall::GenerateRandomNumber {
                            round,
                            secrets,
                            signatures,
                        }));
                    }
                } else if !cos_complete && !a.co_escalated && reached(r.co_escalation_at) {
                    a.co_escalated = true;
                    let accused = (0..a.n).filter(|&i| a.cos[i].is_none()).collect();
                    let cvs = a.cvs.iter().map(|c| c.expect("root submitted").0).collect();
                    let signatures = self.signatures();
                    out.push(Action::Call(LedgerCall::RequestToSubmitCo {
                        round,
                        accused,
                        cvs,
                        signatures,
                    }));
                } else if !secrets_complete && !a.s_escalated && reached(r.s_escalation_at) {
                    if let Some(order) = a.order.clone() {
                        a.s_escalated = true;
                        let revealed = order.permutation[..a.turn]
                            .iter()
                            .map(|&i| a.secrets[i].expect("revealed in turn"))
                            .collect();
                        let cos = a.cos.iter().map(|c| c.expect("order implies cos")).collect();
                        let signatures = self.signatures();
                        out.push(Action::Call(LedgerCall::RequestToSubmitS {
                            round,
                            cos,
                            signatures,
                            order,
                            revealed,
                        }));
                    }
                }
            }
            phase @ (Phase::OnChainCvWindow | Phase::OnChainCoWindow | Phase::OnChainSWindow) => {
                let expired = r.deadline.is_some_and(|d| now > d);
                if expired && a.fail_sent != Some(phase) {
                    a.fail_sent = Some(phase);
                    out.push(Action::Call(match phase {
                        Phase::OnChainCvWindow => LedgerCall::FailToSubmitCv { round },
                        Phase::OnChainCoWindow => LedgerCall::FailToSubmitCo { round },
                        _ => LedgerCall::FailToSubmitS { round },
                    }));
                }
            }
            _ => {}
        }
        out
    }
}

// ----- consumer -----------------------------------------------------------

#[derive(Debug)]
pub struct ConsumerActor {
    address: Address,
    policy: ConsumerPolicy,
    fee: Funds,
    rounds: usize,
    requested: Vec<RoundId>,
    refunded: BTreeSet<RoundId>,
}

impl ConsumerActor {
    pub fn new(address: Address, policy: ConsumerPolicy, fee: Funds, rounds: usize) -> Self {
        Self {
            address,
            policy,
            fee,
            rounds,
            requested: Vec::new(),
            refunded: BTreeSet::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn requested(&self) -> &[RoundId] {
        &self.requested
    }

    pub fn record_request(&mut self, round: RoundId) {
        self.requested.push(round);
    }

    fn pending(&self, ledger: &Ledger) -> Option<RoundId> {
        self.requested
            .iter()
            .copied()
            .find(|&id| ledger.round(id).is_some_and(|r| !r.phase.is_terminal()))
    }

    pub fn is_done(&self, ledger: &Ledger) -> bool {
        self.requested.len() == self.rounds && self.pending(ledger).is_none()
    }

    pub fn step(&mut self, cx: &StepContext<'_>) -> Vec<Action> {
        let ledger = cx.ledger;
        let halted = matches!(ledger.status(), ProtocolStatus::Halted(_));
        match self.pending(ledger) {
            Some(id) if halted && self.policy == ConsumerPolicy::RefundOnHalt && self.refunded.insert(id) => {
                vec![Action::Call(LedgerCall::Refund { round: id })]
            }
            Some(_) => Vec::new(),
            None if !halted
                && self.requested.len() < self.rounds
                && ledger.active_count() >= ledger.config().min_operators =>
            {
                vec![Action::Call(LedgerCall::RequestRandomNumber { fee: self.fee })]
            }
            None => Vec::new(),
        }
    }
}
