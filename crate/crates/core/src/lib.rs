//! Commit-reveal randomness beacon with an off-chain commit and reveal path
//! and an on-chain fallback.
//!
//! [`ledger::Ledger`] verifies every transition; [`actors`] drive it;
//! [`simulator`] runs scripted scenarios deterministically; [`analysis`]
//! measures output bias, reveal positions and cost scaling.

pub mod actors;
pub mod analysis;
pub mod beacon;
pub mod crypto;
pub mod ledger;
pub mod merkle;
pub mod simulator;
pub mod vectors;

pub use beacon::{derive_round, omega_o, omega_v, reveal_order, BeaconError, RevealOrder, RoundDerivation};
pub use crypto::{keccak, Address, CommitmentChain, CryptoError, Digest32, RecoverableSignature, Secret, SigningKey};
pub use ledger::{CallRecord, CostMeter, Ledger, LedgerCall, LedgerConfig, LedgerError, Mode, Phase, RoundId, Tick};
pub use merkle::{merkle_root, MerkleError};
pub use simulator::{run, run_checked, ScenarioScript, SimError, Transcript};
