use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::crypto::{keccak, Digest32};

/// Abstract on-chain work, counted per successful call.
///
/// Counting rules:
/// - `transactions`: one per successful ledger call.
/// - `signature_verifications`: one per `ecrecover`.
/// - `keccak_invocations`: every hash the call computes, including merkle
///   interior nodes; a typed-data digest counts as two (struct hash and the
///   `0x1901` wrapper; the domain separator is a deployment constant).
/// - `storage_writes`: one per stored slot (roots, commitments, secrets,
///   Seen entries, balance/deposit changes, round header updates).
/// - `merkle_leaves_hashed`: leaves fed into a root reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostMeter {
    pub transactions: u64,
    pub signature_verifications: u64,
    pub keccak_invocations: u64,
    pub storage_writes: u64,
    pub merkle_leaves_hashed: u64,
}

impl CostMeter {
    pub const COUNTER_NAMES: [&'static str; 5] = [
        "transactions",
        "signature_verifications",
        "keccak_invocations",
        "storage_writes",
        "merkle_leaves_hashed",
    ];

    pub fn counters(&self) -> [u64; 5] {
        [
            self.transactions,
            self.signature_verifications,
            self.keccak_invocations,
            self.storage_writes,
            self.merkle_leaves_hashed,
        ]
    }

    /// Unweighted sum of all counters; the scalar used for work ratios.
    pub fn total(&self) -> u64 {
        self.counters().iter().sum()
    }

    pub(crate) fn hash(&mut self, data: &[u8]) -> Digest32 {
        self.keccak_invocations += 1;
        keccak(data)
    }

    pub(crate) fn hashes(&mut self, count: usize) {
        self.keccak_invocations += count as u64;
    }

    pub(crate) fn writes(&mut self, count: usize) {
        self.storage_writes += count as u64;
    }

    pub(crate) fn merkle(&mut self, leaves: usize) {
        self.merkle_leaves_hashed += leaves as u64;
        self.keccak_invocations += leaves.saturating_sub(1) as u64;
    }

    pub(crate) fn signature(&mut self) {
        self.signature_verifications += 1;
        // typed digest: struct hash + 0x1901 wrapper
        self.keccak_invocations += 2;
    }
}

impl Add for CostMeter {
    type Output = CostMeter;

    fn add(self, rhs: CostMeter) -> CostMeter {
        CostMeter {
            transactions: self.transactions + rhs.transactions,
            signature_verifications: self.signature_verifications + rhs.signature_verifications,
            keccak_invocations: self.keccak_invocations + rhs.keccak_invocations,
            storage_writes: self.storage_writes + rhs.storage_writes,
            merkle_leaves_hashed: self.merkle_leaves_hashed + rhs.merkle_leaves_hashed,
        }
    }
}

impl AddAssign for CostMeter {
    fn add_assign(&mut self, rhs: CostMeter) {
        *self = *self + rhs;
    }
}

/// Saturating per-counter difference.
impl Sub for CostMeter {
    type Output = CostMeter;

    fn sub(self, rhs: CostMeter) -> CostMeter {
        CostMeter {
            transactions: self.transactions.saturating_sub(rhs.transactions),
            signature_verifications: self.signature_verifications.saturating_sub(rhs.signature_verifications),
            keccak_invocations: self.keccak_invocations.saturating_sub(rhs.keccak_invocations),
            storage_writes: self.storage_writes.saturating_sub(rhs.storage_writes),
            merkle_leaves_hashed: self.merkle_leaves_hashed.saturating_sub(rhs.merkle_leaves_hashed),
        }
    }
}

impl std::iter::Sum for CostMeter {
    fn sum<I: Iterator<Item = CostMeter>>(iter: I) -> Self {
        iter.fold(CostMeter::default(), Add::add)
    }
}
