//! Golden vectors for hashing, commitment chains, typed-data digests and
//! Merkle roots, and a checker that re-derives each one.
//!
//! Line formats (`#` starts a comment):
//!
//! ```text
//! keccak <input-hex | -> <digest>
//! chain  <secret> <inner> <outer>
//! eip712 <chainId> <verContract> <round> <trialNum> <cv> <name> <version> <digest>
//! merkle <leaf,leaf,...> <root>
//! ```
//!
//! Underscores in `name` stand for spaces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{keccak, typed_digest, Address, CommitmentChain, Digest32, Eip712Domain, Secret, TypedMessage};
use crate::merkle::merkle_root;

pub const GOLDEN: &str = include_str!("../vectors/golden.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Vector {
    Keccak {
        input: Vec<u8>,
        digest: Digest32,
    },
    Chain {
        secret: Secret,
        inner: Digest32,
        outer: Digest32,
    },
    Eip712 {
        message: TypedMessage,
        name: String,
        version: String,
        digest: Digest32,
    },
    Merkle {
        leaves: Vec<Digest32>,
        root: Digest32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct VectorParseError {
    pub line: usize,
    pub reason: String,
}

fn parse_line(fields: &[&str]) -> Result<Vector, String> {
    let digest = |s: &str| s.parse::<Digest32>().map_err(|e| format!("{s}: {e}"));
    let number = |s: &str| s.parse::<u64>().map_err(|e| format!("{s}: {e}"));
    match fields {
        ["keccak", input, d] => Ok(Vector::Keccak {
            input: if *input == "-" {
                Vec::new()
            } else {
                hex::decode(input).map_err(|e| e.to_string())?
            },
            digest: digest(d)?,
        }),
        ["chain", s, inner, outer] => Ok(Vector::Chain {
            secret: s.parse().map_err(|e| format!("{s}: {e}"))?,
            inner: digest(inner)?,
            outer: digest(outer)?,
        }),
        ["eip712", chain_id, ver, round, attempt, cv, name, version, d] => Ok(Vector::Eip712 {
            message: TypedMessage {
                chain_id: number(chain_id)?,
                ver_contract: ver.parse::<Address>().map_err(|e| format!("{ver}: {e}"))?,
                round: number(round)?,
                attempt_id: number(attempt)?,
                cv: digest(cv)?,
            },
            name: name.replace('_', " "),
            version: (*version).to_owned(),
            digest: digest(d)?,
        }),
        ["merkle", leaves, root] => Ok(Vector::Merkle {
            leaves: leaves.split(',').map(digest).collect::<Result<_, _>>()?,
            root: digest(root)?,
        }),
        _ => Err(format!("unrecognised line {:?}", fields.join(" "))),
    }
}

pub fn parse(text: &str) -> Result<Vec<Vector>, VectorParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split_whitespace().collect();
            parse_line(&fields).map_err(|reason| VectorParseError { line: i + 1, reason })
        })
        .collect()
}

impl Vector {
    pub fn kind(&self) -> &'static str {
        match self {
            Vector::Keccak { .. } => "keccak",
            Vector::Chain { .. } => "chain",
            Vector::Eip712 { .. } => "eip712",
            Vector::Merkle { .. } => "merkle",
        }
    }

    /// Re-derives the expected value; `Err` carries what was computed instead.
    pub fn check(&self) -> Result<(), String> {
        let (expected, actual) = match self {
            Vector::Keccak { input, digest } => (vec![*digest], vec![keccak(input)]),
            Vector::Chain { secret, inner, outer } => {
                let c = CommitmentChain::from_secret(*secret);
                (vec![*inner, *outer], vec![c.inner, c.outer])
            }
            Vector::Eip712 {
                message,
                name,
                version,
                digest,
            } => {
                let domain = Eip712Domain {
                    name: name.clone(),
                    version: version.clone(),
                };
                (vec![*digest], vec![typed_digest(message, &domain)])
            }
            Vector::Merkle { leaves, root } => {
                let got = merkle_root(leaves).map_err(|e| e.to_string())?;
                (vec![*root], vec![got])
            }
        };
        if expected == actual {
            Ok(())
        } else {
            let shown: Vec<String> = actual.iter().map(Digest32::to_hex).collect();
            Err(format!("{} vector computed {}", self.kind(), shown.join(" ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorReport {
    pub checked: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl VectorReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty() && self.checked == self.passed
    }
}

pub fn check_all(vectors: &[Vector]) -> VectorReport {
    let failures: Vec<String> = vectors
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.check().err().map(|e| format!("#{i}: {e}")))
        .collect();
    VectorReport {
        checked: vectors.len(),
        passed: vectors.len() - failures.len(),
        failures,
    }
}
