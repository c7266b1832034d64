//! Merkle root over outer commitments, in operator activation order.
//!
//! The construction is the contract's cursor loop rather than a padded binary
//! tree: each of the `n - 1` steps pairs the next two available items, taking
//! unconsumed leaves before previously produced hashes. For power-of-two
//! sizes this coincides with the complete binary tree.

use thiserror::Error;

use crate::crypto::{keccak_concat, Digest32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("a merkle root needs at least two leaves, got {0}")]
    TooFewLeaves(usize),
}

pub fn merkle_root(leaves: &[Digest32]) -> Result<Digest32, MerkleError> {
    if leaves.len() < 2 {
        return Err(MerkleError::TooFewLeaves(leaves.len()));
    }
    let hash_count = leaves.len() - 1;
    let mut hashes: Vec<Digest32> = Vec::with_capacity(hash_count);
    let mut leaf_pos = 0;
    let mut hash_pos = 0;
    for _ in 0..hash_count {
        let mut next = || {
            if leaf_pos < leaves.len() {
                leaf_pos += 1;
                leaves[leaf_pos - 1]
            } else {
                hash_pos += 1;
                hashes[hash_pos - 1]
            }
        };
        let left = next();
        let right = next();
        hashes.push(keccak_concat([left.0, right.0]));
    }
    Ok(hashes[hash_count - 1])
}

/// Rebuilds the root from the full leaf set and compares.
pub fn verify_set(leaves: &[Digest32], committed_root: &Digest32) -> Result<bool, MerkleError> {
    Ok(merkle_root(leaves)? == *committed_root)
}
