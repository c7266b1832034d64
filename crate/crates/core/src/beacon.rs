//! Round arithmetic: the intermediate value `Ω_v`, per-operator order keys,
//! the descending reveal order, and the final output `Ω_o`.
//!
//! All sequences are indexed by activation order. The reveal order only
//! decides who speaks when; `Ω_o` always concatenates in activation order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{keccak_concat, Digest32, Secret};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BeaconError {
    #[error("a round needs at least two participants, got {0}")]
    TooFewParticipants(usize),
    #[error("order keys at activation indices {0} and {1} collide")]
    AmbiguousOrder(usize, usize),
}

/// Activation indices sorted by descending order key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealOrder {
    pub permutation: Vec<usize>,
    /// `keys[k]` is the key of `permutation[k]`.
    pub keys: Vec<Digest32>,
}

impl RevealOrder {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// Activation index of the final revealer.
    pub fn last(&self) -> Option<usize> {
        self.permutation.last().copied()
    }

    /// Reveal position of the operator at `activation_index`.
    pub fn position_of(&self, activation_index: usize) -> Option<usize> {
        self.permutation.iter().position(|&i| i == activation_index)
    }
}

fn ensure_participants(n: usize) -> Result<(), BeaconError> {
    if n < 2 {
        Err(BeaconError::TooFewParticipants(n))
    } else {
        Ok(())
    }
}

/// `Ω_v = keccak(c_o,1 ‖ … ‖ c_o,n)`
pub fn omega_v(inners: &[Digest32]) -> Result<Digest32, BeaconError> {
    ensure_participants(inners.len())?;
    Ok(keccak_concat(inners.iter().map(|d| d.0)))
}

/// `d_i = keccak(Ω_v ‖ c_v,i)` for each operator, in activation order.
pub fn order_keys(omega_v: &Digest32, outers: &[Digest32]) -> Result<Vec<Digest32>, BeaconError> {
    ensure_participants(outers.len())?;
    Ok(outers.iter().map(|cv| keccak_concat([omega_v.0, cv.0])).collect())
}

pub fn reveal_order(keys: &[Digest32]) -> Result<RevealOrder, BeaconError> {
    ensure_participants(keys.len())?;
    let mut permutation: Vec<usize> = (0..keys.len()).collect();
    permutation.sort_by(|&a, &b| keys[b].cmp(&keys[a]).then(a.cmp(&b)));
    if let Some(pair) = permutation.windows(2).find(|w| keys[w[0]] == keys[w[1]]) {
        let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        return Err(BeaconError::AmbiguousOrder(a, b));
    }
    let keys = permutation.iter().map(|&i| keys[i]).collect();
    Ok(RevealOrder { permutation, keys })
}

/// Strictly descending keys over a bijection on `0..n`.
pub fn verify_order(order: &RevealOrder) -> bool {
    let n = order.permutation.len();
    if order.keys.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in &order.permutation {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    order.keys.windows(2).all(|w| w[0] > w[1])
}

/// `Ω_o = keccak(s_1 ‖ … ‖ s_n)` in activation order.
pub fn omega_o(secrets: &[Secret]) -> Result<Digest32, BeaconError> {
    ensure_participants(secrets.len())?;
    Ok(keccak_concat(secrets.iter().map(|s| s.0)))
}

/// Everything an honest round derives from its activation-ordered secrets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundDerivation {
    pub inners: Vec<Digest32>,
    pub outers: Vec<Digest32>,
    pub omega_v: Digest32,
    pub keys: Vec<Digest32>,
    pub order: RevealOrder,
    pub omega_o: Digest32,
}

pub fn derive_round(secrets: &[Secret]) -> Result<RoundDerivation, BeaconError> {
    ensure_participants(secrets.len())?;
    let chains: Vec<_> = secrets
        .iter()
        .map(|s| crate::crypto::CommitmentChain::from_secret(*s))
        .collect();
    let inners: Vec<Digest32> = chains.iter().map(|c| c.inner).collect();
    let outers: Vec<Digest32> = chains.iter().map(|c| c.outer).collect();
    let omega_v = omega_v(&inners)?;
    let keys = order_keys(&omega_v, &outers)?;
    let order = reveal_order(&keys)?;
    let omega_o = omega_o(secrets)?;
    Ok(RoundDerivation {
        inners,
        outers,
        omega_v,
        keys,
        order,
        omega_o,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keccak;

    fn int_key(v: u8) -> Digest32 {
        let mut b = [0u8; 32];
        b[31] = v;
        Digest32(b)
    }

    #[test]
    fn sorts_descending() {
        let order = reveal_order(&[int_key(3), int_key(1), int_key(2)]).unwrap();
        assert_eq!(order.permutation, vec![0, 2, 1]);
        assert_eq!(order.keys, vec![int_key(3), int_key(2), int_key(1)]);
        assert!(verify_order(&order));
        assert_eq!(order.last(), Some(1));
        assert_eq!(order.position_of(2), Some(1));
    }

    #[test]
    fn descending_input_is_identity() {
        let order = reveal_order(&[int_key(9), int_key(5), int_key(4), int_key(0)]).unwrap();
        assert_eq!(order.permutation, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_are_rejected() {
        assert_eq!(
            reveal_order(&[int_key(1), int_key(7), int_key(7)]),
            Err(BeaconError::AmbiguousOrder(1, 2))
        );
        let equal = RevealOrder {
            permutation: vec![0, 1],
            keys: vec![int_key(4), int_key(4)],
        };
        assert!(!verify_order(&equal));
    }

    #[test]
    fn verify_order_rejects_swaps_and_non_bijections() {
        let mut order = reveal_order(&[int_key(3), int_key(1), int_key(2)]).unwrap();
        order.keys.swap(0, 1);
        order.permutation.swap(0, 1);
        assert!(!verify_order(&order));
        let dup = RevealOrder {
            permutation: vec![0, 0],
            keys: vec![int_key(2), int_key(1)],
        };
        assert!(!verify_order(&dup));
        let out_of_range = RevealOrder {
            permutation: vec![0, 2],
            keys: vec![int_key(2), int_key(1)],
        };
        assert!(!verify_order(&out_of_range));
    }

    #[test]
    fn too_few() {
        assert_eq!(omega_v(&[int_key(1)]), Err(BeaconError::TooFewParticipants(1)));
        assert_eq!(omega_o(&[]), Err(BeaconError::TooFewParticipants(0)));
        assert_eq!(
            order_keys(&int_key(0), &[int_key(1)]),
            Err(BeaconError::TooFewParticipants(1))
        );
        assert_eq!(reveal_order(&[]), Err(BeaconError::TooFewParticipants(0)));
    }

    #[test]
    fn two_party_definitions() {
        let a = Secret([1u8; 32]);
        let b = Secret([2u8; 32]);
        let mut cat = a.0.to_vec();
        cat.extend_from_slice(&b.0);
        assert_eq!(omega_o(&[a, b]).unwrap(), keccak(&cat));
        assert_ne!(omega_o(&[a, b]).unwrap(), omega_o(&[b, a]).unwrap());

        let (x, y) = (keccak(b"x"), keccak(b"y"));
        let mut cat = x.0.to_vec();
        cat.extend_from_slice(&y.0);
        assert_eq!(omega_v(&[x, y]).unwrap(), keccak(&cat));
    }

    #[test]
    fn equal_outers_give_equal_keys() {
        let cv = keccak(b"cv");
        let keys = order_keys(&keccak(b"omega"), &[cv, cv, keccak(b"other")]).unwrap();
        assert_eq!(keys[0], keys[1]);
        assert_ne!(keys[0], keys[2]);
    }
}
