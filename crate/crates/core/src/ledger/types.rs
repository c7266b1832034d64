use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beacon::{BeaconError, RevealOrder};
use crate::crypto::{Address, CryptoError, Digest32, Eip712Domain, RecoverableSignature, Secret};

use super::meter::CostMeter;

/// Abstract fund units.
pub type Funds = u128;
/// Logical time.
pub type Tick = u64;
pub type RoundId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every commitment and reveal is an individual ledger call.
    OnChain,
    /// Commit and reveals run off-chain through the leader; the ledger sees a
    /// merkle root and one final submission unless a dispute is opened.
    Hybrid,
}

/// Window lengths in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    /// Off-chain collection time before the leader may escalate a phase.
    pub offchain_phase_timeout: Tick,
    /// Extra time after the off-chain commit phase for the root submission.
    pub merkle_root_submission_period: Tick,
    /// How long a compelled operator has to answer on-chain.
    pub onchain_submission_period: Tick,
    /// Slack the leader has for the final generation or an escalation.
    pub request_or_generate_period: Tick,
    /// Off-chain time budget per operator for the sequential secret reveals.
    pub offchain_reveal_period_per_operator: Tick,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            offchain_phase_timeout: 10,
            merkle_root_submission_period: 10,
            onchain_submission_period: 10,
            request_or_generate_period: 10,
            offchain_reveal_period_per_operator: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerConfig {
    pub mode: Mode,
    pub chain_id: u64,
    pub ver_contract: Address,
    pub domain: Eip712Domain,
    pub min_deposit: Funds,
    pub min_leader_deposit: Funds,
    pub min_operators: usize,
    pub timing: Timing,
    /// Share of the consumer fee paid to the final revealer, in basis points.
    pub last_revealer_reward_bps: u32,
    /// Extra equal shares the leader receives when a participant is slashed.
    pub leader_compensation_shares: u32,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        let mut ver_contract = [0u8; 20];
        ver_contract[19] = 0xC2;
        Self {
            mode: Mode::Hybrid,
            chain_id: 1,
            ver_contract: Address(ver_contract),
            domain: Eip712Domain::default(),
            min_deposit: 1_000,
            min_leader_deposit: 1_000,
            min_operators: 2,
            timing: Timing::default(),
            last_revealer_reward_bps: 0,
            leader_compensation_shares: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Requested and escrowed, waiting for an earlier round to finish.
    AwaitingRequest,
    OffChainInProgress,
    MerkleRootSubmitted,
    OnChainCvWindow,
    OnChainCoWindow,
    OnChainSWindow,
    Finalized,
    Halted,
    Refunded,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Finalized | Phase::Refunded)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    LeaderFailure,
    TooFewOperators,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum ProtocolStatus {
    Live,
    Halted(HaltReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeenSlot {
    Cv,
    Co,
    S,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub address: Address,
    pub deposit: Funds,
    pub active: bool,
    pub activation_index: u64,
    /// Value of the redistribution index when the operator last settled.
    pub reward_snapshot: Funds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: RoundId,
    pub attempt_id: u64,
    pub phase: Phase,
    pub consumer: Address,
    pub fee: Funds,
    pub requested_at: Tick,
    /// Activation-ordered participant snapshot for the current attempt.
    pub participants: Vec<Address>,
    pub started_at: Tick,
    pub phase_started_at: Tick,
    /// End of the open window or of the leader's current duty.
    pub deadline: Option<Tick>,
    pub cv_escalation_at: Option<Tick>,
    pub co_escalation_at: Option<Tick>,
    pub s_escalation_at: Option<Tick>,
    pub merkle_root: Option<Digest32>,
    pub on_chain_cv: Vec<Option<Digest32>>,
    pub on_chain_co: Vec<Option<Digest32>>,
    pub on_chain_s: Vec<Option<Secret>>,
    /// Participant indices compelled by the open dispute window.
    pub accused: Vec<usize>,
    pub reveal_order: Option<RevealOrder>,
    /// Reveal position whose secret is due next in an on-chain S window.
    pub next_reveal: usize,
    pub output: Option<Digest32>,
}

impl RoundState {
    pub fn participant_index(&self, address: &Address) -> Option<usize> {
        self.participants.iter().position(|a| a == address)
    }

    /// Address whose secret is due next in the on-chain S window.
    pub fn next_revealer(&self) -> Option<Address> {
        let order = self.reveal_order.as_ref()?;
        order.permutation.get(self.next_reveal).map(|&i| self.participants[i])
    }
}

/// Signed outer commitment relayed by the leader on an operator's behalf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedCommit {
    pub index: usize,
    pub cv: Digest32,
    pub signature: Option<RecoverableSignature>,
}

/// Every ledger entry point as data, so actors can emit calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerCall {
    DepositAndActivate {
        amount: Funds,
    },
    RequestRandomNumber {
        fee: Funds,
    },
    SubmitMerkleRoot {
        round: RoundId,
        root: Digest32,
    },
    GenerateRandomNumber {
        round: RoundId,
        secrets: Vec<Secret>,
        signatures: Vec<Option<RecoverableSignature>>,
    },
    SubmitCv {
        round: RoundId,
        cv: Digest32,
    },
    SubmitCo {
        round: RoundId,
        co: Digest32,
    },
    SubmitS {
        round: RoundId,
        secret: Secret,
    },
    SubmitRevealOrder {
        round: RoundId,
        order: RevealOrder,
    },
    RequestToSubmitCv {
        round: RoundId,
        accused: Vec<usize>,
        known: Vec<SignedCommit>,
    },
    RequestToSubmitCo {
        round: RoundId,
        accused: Vec<usize>,
        cvs: Vec<Digest32>,
        signatures: Vec<Option<RecoverableSignature>>,
    },
    RequestToSubmitS {
        round: RoundId,
        cos: Vec<Digest32>,
        signatures: Vec<Option<RecoverableSignature>>,
        order: RevealOrder,
        /// Secrets already revealed off-chain, in reveal order.
        revealed: Vec<Secret>,
    },
    FailToSubmitCv {
        round: RoundId,
    },
    FailToSubmitCo {
        round: RoundId,
    },
    FailToSubmitS {
        round: RoundId,
    },
    FailToRequestSOrGenerateRandomNumber {
        round: RoundId,
    },
    Resume {
        replenish: Funds,
    },
    Refund {
        round: RoundId,
    },
}

impl LedgerCall {
    pub fn name(&self) -> &'static str {
        match self {
            LedgerCall::DepositAndActivate { .. } => "depositAndActivate",
            LedgerCall::RequestRandomNumber { .. } => "requestRandomNumber",
            LedgerCall::SubmitMerkleRoot { .. } => "submitMerkleRoot",
            LedgerCall::GenerateRandomNumber { .. } => "generateRandomNumber",
            LedgerCall::SubmitCv { .. } => "submitCv",
            LedgerCall::SubmitCo { .. } => "submitCo",
            LedgerCall::SubmitS { .. } => "submitS",
            LedgerCall::SubmitRevealOrder { .. } => "submitRevealOrder",
            LedgerCall::RequestToSubmitCv { .. } => "requestToSubmitCv",
            LedgerCall::RequestToSubmitCo { .. } => "requestToSubmitCo",
            LedgerCall::RequestToSubmitS { .. } => "requestToSubmitS",
            LedgerCall::FailToSubmitCv { .. } => "failToSubmitCv",
            LedgerCall::FailToSubmitCo { .. } => "failToSubmitCo",
            LedgerCall::FailToSubmitS { .. } => "failToSubmitS",
            LedgerCall::FailToRequestSOrGenerateRandomNumber { .. } => "failToRequestSOrGenerateRandomNumber",
            LedgerCall::Resume { .. } => "resume",
            LedgerCall::Refund { .. } => "refund",
        }
    }

    pub fn round(&self) -> Option<RoundId> {
        match self {
            LedgerCall::DepositAndActivate { .. }
            | LedgerCall::RequestRandomNumber { .. }
            | LedgerCall::Resume { .. } => None,
            LedgerCall::SubmitMerkleRoot { round, .. }
            | LedgerCall::GenerateRandomNumber { round, .. }
            | LedgerCall::SubmitCv { round, .. }
            | LedgerCall::SubmitCo { round, .. }
            | LedgerCall::SubmitS { round, .. }
            | LedgerCall::SubmitRevealOrder { round, .. }
            | LedgerCall::RequestToSubmitCv { round, .. }
            | LedgerCall::RequestToSubmitCo { round, .. }
            | LedgerCall::RequestToSubmitS { round, .. }
            | LedgerCall::FailToSubmitCv { round }
            | LedgerCall::FailToSubmitCo { round }
            | LedgerCall::FailToSubmitS { round }
            | LedgerCall::FailToRequestSOrGenerateRandomNumber { round }
            | LedgerCall::Refund { round } => Some(*round),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CallOutcome {
    Done,
    Activated { activation_index: u64 },
    RoundOpened { round: RoundId },
    Output { output: Digest32 },
    Refunded { amount: Funds },
}

/// State changes worth surfacing in transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "effect")]
pub enum Effect {
    Activated {
        address: Address,
        activation_index: u64,
    },
    RoundQueued {
        round: RoundId,
    },
    AttemptStarted {
        round: RoundId,
        attempt_id: u64,
        participants: usize,
    },
    PhaseChanged {
        round: RoundId,
        phase: Phase,
        deadline: Option<Tick>,
    },
    Slashed {
        address: Address,
        amount: Funds,
    },
    Deactivated {
        address: Address,
    },
    Redistributed {
        amount: Funds,
        recipients: usize,
        leader_shares: u32,
    },
    Halted {
        reason: HaltReason,
    },
    Resumed,
    Finalized {
        round: RoundId,
        output: Digest32,
    },
    Refunded {
        round: RoundId,
        consumer: Address,
        amount: Funds,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CallResult {
    Ok { outcome: CallOutcome },
    Err { code: String, detail: String },
}

impl CallResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, CallResult::Ok { .. })
    }
}

/// One serialized ledger call, successful or reverted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tick: Tick,
    pub seq: u64,
    pub call: String,
    pub caller: Address,
    pub round: Option<RoundId>,
    pub attempt_id: Option<u64>,
    pub result: CallResult,
    /// Zero for reverted calls.
    pub meter: CostMeter,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureFault {
    WrongSigner,
    Malleable,
    Malformed,
}

impl From<CryptoError> for SignatureFault {
    fn from(err: CryptoError) -> Self {
        match err {
            CryptoError::MalleableSignature => SignatureFault::Malleable,
            _ => SignatureFault::Malformed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("deposit {provided} below the required {required}")]
    InsufficientDeposit { required: Funds, provided: Funds },
    #[error("operator {0} is already active")]
    AlreadyActive(Address),
    #[error("the leader cannot register as an operator")]
    LeaderCannotOperate,
    #[error("service is halted")]
    ServiceHalted,
    #[error("{active} active operators, {required} required")]
    NotEnoughOperators { active: usize, required: usize },
    #[error("caller is not the leader")]
    NotLeader,
    #[error("caller {0} is not an active operator")]
    NotOperator(Address),
    #[error("caller {0} is not a participant of the current attempt")]
    NotParticipant(Address),
    #[error("unknown round {0}")]
    UnknownRound(RoundId),
    #[error("round is in phase {actual}, call needs {expected}")]
    PhaseViolation { expected: &'static str, actual: Phase },
    #[error("window closed at tick {deadline}, now {now}")]
    WindowClosed { deadline: Tick, now: Tick },
    #[error("not callable before tick {opens_at}, now {now}")]
    TooEarly { opens_at: Tick, now: Tick },
    #[error("commitments do not reconstruct the stored merkle root")]
    RootMismatch,
    #[error("participant {index}: off-chain value needs an operator signature")]
    SignatureRequired { index: usize },
    #[error("participant {index}: signature rejected ({fault:?})")]
    SignatureInvalid { index: usize, fault: SignatureFault },
    #[error("submission by {address} for round {round} attempt {attempt_id} already accepted")]
    Replayed {
        address: Address,
        round: RoundId,
        attempt_id: u64,
    },
    #[error("participant {index}: value does not hash to its commitment")]
    CommitmentMismatch { index: usize },
    #[error("reveal turn belongs to {expected}")]
    NotYourTurn { expected: Address },
    #[error("reveal order is not the descending order of the committed keys")]
    OrderInvalid,
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("caller was not compelled by the open window")]
    NotRequested,
    #[error("participant index {0} out of range or repeated")]
    InvalidIndex(usize),
    #[error("nothing left to compel on-chain")]
    NothingToRequest,
    #[error("protocol is not halted")]
    NotHalted,
    #[error("round belongs to another consumer")]
    NotYourRequest,
    #[error("round was already processed")]
    AlreadyProcessed,
    #[error("round was already refunded")]
    AlreadyRefunded,
    #[error(transparent)]
    Beacon(#[from] BeaconError),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::InsufficientDeposit { .. } => "InsufficientDeposit",
            LedgerError::AlreadyActive(_) => "AlreadyActive",
            LedgerError::LeaderCannotOperate => "LeaderCannotOperate",
            LedgerError::ServiceHalted => "ServiceHalted",
            LedgerError::NotEnoughOperators { .. } => "NotEnoughOperators",
            LedgerError::NotLeader => "NotLeader",
            LedgerError::NotOperator(_) => "NotOperator",
            LedgerError::NotParticipant(_) => "NotParticipant",
            LedgerError::UnknownRound(_) => "UnknownRound",
            LedgerError::PhaseViolation { .. } => "PhaseViolation",
            LedgerError::WindowClosed { .. } => "WindowClosed",
            LedgerError::TooEarly { .. } => "TooEarly",
            LedgerError::RootMismatch => "RootMismatch",
            LedgerError::SignatureRequired { .. } => "SignatureRequired",
            LedgerError::SignatureInvalid { .. } => "SignatureInvalid",
            LedgerError::Replayed { .. } => "Replayed",
            LedgerError::CommitmentMismatch { .. } => "CommitmentMismatch",
            LedgerError::NotYourTurn { .. } => "NotYourTurn",
            LedgerError::OrderInvalid => "OrderInvalid",
            LedgerError::LengthMismatch { .. } => "LengthMismatch",
            LedgerError::NotRequested => "NotRequested",
            LedgerError::InvalidIndex(_) => "InvalidIndex",
            LedgerError::NothingToRequest => "NothingToRequest",
            LedgerError::NotHalted => "NotHalted",
            LedgerError::NotYourRequest => "NotYourRequest",
            LedgerError::AlreadyProcessed => "AlreadyProcessed",
            LedgerError::AlreadyRefunded => "AlreadyRefunded",
            LedgerError::Beacon(_) => "Beacon",
        }
    }
}
