//! Independent oracles and ledger fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use cr2_core::crypto::{self, sign, typed_digest, Eip712Domain, TypedMessage};
use cr2_core::ledger::SignatureFault;
use cr2_core::{
    derive_round, keccak, merkle_root, Address, CommitmentChain, Digest32, Ledger, LedgerConfig, LedgerError, Mode,
    RecoverableSignature, RevealOrder, RoundId, ScenarioScript, Secret, SigningKey,
};
use tiny_keccak::{Hasher, Keccak};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every shipped scenario, sorted by file name.
pub fn shipped_scenarios() -> Vec<(String, ScenarioScript)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, ScenarioScript::load(&p).unwrap())
        })
        .collect()
}

pub fn scenario(name: &str) -> ScenarioScript {
    ScenarioScript::load(&scenarios_dir().join(format!("{name}.json"))).unwrap()
}

// ---- hashing ----

pub fn keccak_oracle(parts: &[&[u8]]) -> [u8; 32] {
    let mut k = Keccak::v256();
    for p in parts {
        k.update(p);
    }
    let mut out = [0u8; 32];
    k.finalize(&mut out);
    out
}

fn word(v: u64) -> [u8; 32] {
    let mut w = [0u8; 32];
    w[24..].copy_from_slice(&v.to_be_bytes());
    w
}

/// Typed-data digest encoded from scratch.
pub fn eip712_oracle(
    chain_id: u64,
    ver: &[u8; 20],
    round: u64,
    trial: u64,
    cv: &[u8; 32],
    name: &str,
    version: &str,
) -> [u8; 32] {
    let domain_type =
        keccak_oracle(&[b"EIP712Domain(string name,string version,uint256 chainId,address verifyingContract)"]);
    let mut addr = [0u8; 32];
    addr[12..].copy_from_slice(ver);
    let separator = keccak_oracle(&[
        &domain_type,
        &keccak_oracle(&[name.as_bytes()]),
        &keccak_oracle(&[version.as_bytes()]),
        &word(chain_id),
        &addr,
    ]);
    let message_type = keccak_oracle(&[b"Message(uint256 round,uint256 trialNum,bytes32 cv)"]);
    let struct_hash = keccak_oracle(&[&message_type, &word(round), &word(trial), cv]);
    keccak_oracle(&[&[0x19, 0x01], &separator, &struct_hash])
}

// ---- merkle ----

fn pair(a: [u8; 32], b: [u8; 32]) -> [u8; 32] {
    keccak_oracle(&[&a, &b])
}

/// Complete binary tree, halves hashed recursively.
pub fn merkle_recursive(leaves: &[[u8; 32]]) -> [u8; 32] {
    assert!(leaves.len().is_power_of_two() && leaves.len() >= 2);
    if leaves.len() == 2 {
        return pair(leaves[0], leaves[1]);
    }
    let (l, r) = leaves.split_at(leaves.len() / 2);
    pair(merkle_recursive(l), merkle_recursive(r))
}

/// Roots for 3, 5 and 7 leaves written out by hand.
pub fn merkle_hand(l: &[[u8; 32]]) -> [u8; 32] {
    match l.len() {
        3 => pair(l[2], pair(l[0], l[1])),
        5 => pair(pair(l[2], l[3]), pair(l[4], pair(l[0], l[1]))),
        7 => pair(pair(l[6], pair(l[0], l[1])), pair(pair(l[2], l[3]), pair(l[4], l[5]))),
        n => panic!("no hand formula for {n} leaves"),
    }
}

pub fn root_of(leaves: &[[u8; 32]]) -> [u8; 32] {
    let d: Vec<Digest32> = leaves.iter().map(|l| Digest32(*l)).collect();
    merkle_root(&d).unwrap().0
}

// ---- secp256k1 over big integers ----

pub mod ec {
    use num_bigint::BigUint;

    fn hex(s: &str) -> BigUint {
        BigUint::parse_bytes(s.as_bytes(), 16).unwrap()
    }

    pub struct Curve {
        pub p: BigUint,
        pub n: BigUint,
        pub g: (BigUint, BigUint),
    }

    type Point = Option<(BigUint, BigUint)>;

    impl Curve {
        pub fn secp256k1() -> Self {
            Self {
                p: hex("FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F"),
                n: hex("FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141"),
                g: (
                    hex("79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798"),
                    hex("483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8"),
                ),
            }
        }

        fn inv(&self, a: &BigUint, m: &BigUint) -> BigUint {
            a.modpow(&(m - 2u32), m)
        }

        fn sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
            (a + &self.p - (b % &self.p)) % &self.p
        }

        fn add(&self, a: &Point, b: &Point) -> Point {
            let (Some((x1, y1)), Some((x2, y2))) = (a, b) else {
                return a.clone().or_else(|| b.clone());
            };
            let p = &self.p;
            let lambda = if x1 == x2 {
                if (y1 + y2) % p == BigUint::ZERO {
                    return None;
                }
                let num = BigUint::from(3u32) * x1 * x1 % p;
                num * self.inv(&(BigUint::from(2u32) * y1 % p), p) % p
            } else {
                self.sub(y2, y1) * self.inv(&self.sub(x2, x1), p) % p
            };
            let x3 = self.sub(&self.sub(&(&lambda * &lambda % p), x1), x2);
            let y3 = self.sub(&(&lambda * self.sub(x1, &x3) % p), y1);
            Some((x3, y3))
        }

        fn mul(&self, k: &BigUint, pt: &Point) -> Point {
            let mut acc: Point = None;
            for i in (0..k.bits()).rev() {
                acc = self.add(&acc, &acc);
                if k.bit(i) {
                    acc = self.add(&acc, pt);
                }
            }
            acc
        }

        fn lift_x(&self, x: &BigUint, odd: bool) -> Option<(BigUint, BigUint)> {
            let p = &self.p;
            let rhs = (x.modpow(&BigUint::from(3u32), p) + 7u32) % p;
            let y = rhs.modpow(&((p + 1u32) / 4u32), p);
            if &y * &y % p != rhs {
                return None;
            }
            let y = if y.bit(0) == odd { y } else { p - y };
            Some((x.clone(), y))
        }

        /// Public key `(x, y)` from a digest and an `(r, s, v)` signature.
        pub fn recover(&self, digest: &[u8; 32], r: &[u8; 32], s: &[u8; 32], v: u8) -> Option<([u8; 32], [u8; 32])> {
            let (r, s) = (BigUint::from_bytes_be(r), BigUint::from_bytes_be(s));
            if r == BigUint::ZERO || s == BigUint::ZERO || r >= self.n || s >= self.n || !(27..=28).contains(&v) {
                return None;
            }
            let big_r = self.lift_x(&r, v == 28)?;
            let e = BigUint::from_bytes_be(digest) % &self.n;
            let r_inv = self.inv(&r, &self.n);
            let u1 = (&self.n - e) % &self.n * &r_inv % &self.n;
            let u2 = &s * &r_inv % &self.n;
            let q = self.add(&self.mul(&u1, &Some(self.g.clone())), &self.mul(&u2, &Some(big_r)))?;
            Some((be32(&q.0), be32(&q.1)))
        }

        /// Textbook verification against a known public key.
        pub fn verify(&self, digest: &[u8; 32], r: &[u8; 32], s: &[u8; 32], q: &([u8; 32], [u8; 32])) -> bool {
            let (r, s) = (BigUint::from_bytes_be(r), BigUint::from_bytes_be(s));
            let e = BigUint::from_bytes_be(digest) % &self.n;
            let w = self.inv(&s, &self.n);
            let q = Some((BigUint::from_bytes_be(&q.0), BigUint::from_bytes_be(&q.1)));
            let x = self.add(
                &self.mul(&(&e * &w % &self.n), &Some(self.g.clone())),
                &self.mul(&(&r * &w % &self.n), &q),
            );
            x.is_some_and(|(x, _)| x % &self.n == r)
        }

        pub fn half_order_exceeded(&self, s: &[u8; 32]) -> bool {
            BigUint::from_bytes_be(s) > &self.n >> 1
        }
    }

    fn be32(v: &BigUint) -> [u8; 32] {
        let b = v.to_bytes_be();
        let mut out = [0u8; 32];
        out[32 - b.len()..].copy_from_slice(&b);
        out
    }
}

pub fn address_oracle(q: &([u8; 32], [u8; 32])) -> [u8; 20] {
    let h = keccak_oracle(&[&q.0, &q.1]);
    h[12..].try_into().unwrap()
}

// ---- ledger fixture ----

pub fn key(tag: &str) -> SigningKey {
    SigningKey::from_bytes(&keccak(tag.as_bytes()).0).unwrap()
}

pub struct Fixture {
    pub ledger: Ledger,
    pub keys: Vec<SigningKey>,
    pub leader: Address,
    pub consumer: Address,
}

pub fn secrets(tag: u64, round: RoundId, attempt: u64, n: usize) -> Vec<Secret> {
    (0..n)
        .map(|i| Secret(keccak(format!("{tag}/{round}/{attempt}/{i}").as_bytes()).0))
        .collect()
}

impl Fixture {
    pub fn new(keys: &[SigningKey], mode: Mode) -> Self {
        let config = LedgerConfig {
            mode,
            ..LedgerConfig::default()
        };
        let leader = key("leader").address();
        let mut ledger = Ledger::new(config, leader, 1_000).unwrap();
        for k in keys {
            ledger.deposit_and_activate(k.address(), 1_000).unwrap();
        }
        Self {
            ledger,
            keys: keys.to_vec(),
            leader,
            consumer: Address([0xC0; 20]),
        }
    }

    fn participant_keys(&self, round: RoundId) -> Vec<&SigningKey> {
        self.ledger
            .round(round)
            .unwrap()
            .participants
            .iter()
            .map(|a| self.keys.iter().find(|k| k.address() == *a).unwrap())
            .collect()
    }

    pub fn signatures(&self, round: RoundId, attempt: u64, secrets: &[Secret]) -> Vec<Option<RecoverableSignature>> {
        let who = self.participant_keys(round);
        secrets
            .iter()
            .zip(who)
            .map(|(s, k)| {
                let cv = CommitmentChain::from_secret(*s).outer;
                Some(sign(&self.ledger.commit_digest(round, attempt, &cv), k))
            })
            .collect()
    }

    /// Signatures over a digest built for a different chain or contract.
    pub fn foreign_signatures(
        &self,
        round: RoundId,
        attempt: u64,
        secrets: &[Secret],
        chain_id: u64,
        ver_contract: Address,
    ) -> Vec<Option<RecoverableSignature>> {
        let domain: Eip712Domain = self.ledger.config().domain.clone();
        let who = self.participant_keys(round);
        secrets
            .iter()
            .zip(who)
            .map(|(s, k)| {
                let msg = TypedMessage {
                    chain_id,
                    ver_contract,
                    round,
                    attempt_id: attempt,
                    cv: CommitmentChain::from_secret(*s).outer,
                };
                Some(sign(&typed_digest(&msg, &domain), k))
            })
            .collect()
    }

    pub fn root(secrets: &[Secret]) -> Digest32 {
        let cvs: Vec<Digest32> = secrets.iter().map(|s| CommitmentChain::from_secret(*s).outer).collect();
        merkle_root(&cvs).unwrap()
    }

    pub fn addr(&self, i: usize) -> Address {
        self.keys[i].address()
    }

    /// Requests a round and submits its root; returns the round and secrets.
    pub fn open_round(&mut self, tag: u64) -> (RoundId, Vec<Secret>) {
        let round = self.ledger.request_random_number(self.consumer, 10).unwrap();
        let n = self.ledger.round(round).unwrap().participants.len();
        let s = secrets(tag, round, 0, n);
        self.ledger
            .submit_merkle_root(self.leader, round, Self::root(&s))
            .unwrap();
        (round, s)
    }

    /// Escalates to the on-chain reveal window with everyone but the last
    /// revealer already revealed.
    pub fn open_s_window(&mut self, round: RoundId, s: &[Secret]) -> RevealOrder {
        let at = self.ledger.round(round).unwrap().s_escalation_at.unwrap();
        self.ledger.advance_to(at.max(self.ledger.now()));
        let d = derive_round(s).unwrap();
        let sigs = self.signatures(round, 0, s);
        let revealed: Vec<Secret> = d.order.permutation[..s.len() - 1].iter().map(|&i| s[i]).collect();
        self.ledger
            .request_to_submit_s(self.leader, round, &d.inners, &sigs, d.order.clone(), &revealed)
            .unwrap();
        d.order
    }
}

// ---- replay suite ----

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub attempts: u64,
    pub rejected: u64,
    /// Valid submissions made alongside the attacks.
    pub fresh: u64,
    pub fresh_accepted: u64,
}

impl Tally {
    fn attack<T, E>(&mut self, result: Result<T, E>) {
        self.attempts += 1;
        self.rejected += result.is_err() as u64;
    }

    fn honest<T, E>(&mut self, result: Result<T, E>) {
        self.fresh += 1;
        self.fresh_accepted += result.is_ok() as u64;
    }

    pub fn all_rejected(&self) -> bool {
        self.attempts > 0 && self.rejected == self.attempts
    }

    pub fn no_false_rejections(&self) -> bool {
        self.fresh_accepted == self.fresh
    }
}

pub fn operator_keys(n: usize) -> Vec<SigningKey> {
    (0..n).map(|i| key(&format!("op-{i}"))).collect()
}

/// Resubmits a finalized generation call and an on-chain commitment.
pub fn same_tuple_resubmission(trials: u64) -> Tally {
    let keys = operator_keys(3);
    let mut hybrid = Fixture::new(&keys, Mode::Hybrid);
    let mut on_chain = Fixture::new(&keys, Mode::OnChain);
    let mut t = Tally::default();
    for trial in 0..trials {
        let (round, s) = hybrid.open_round(trial);
        let sigs = hybrid.signatures(round, 0, &s);
        let leader = hybrid.leader;
        t.honest(hybrid.ledger.generate_random_number(leader, round, &s, &sigs));
        t.attack(hybrid.ledger.generate_random_number(leader, round, &s, &sigs));

        let round = on_chain.ledger.request_random_number(on_chain.consumer, 0).unwrap();
        let s = secrets(trial, round, 0, 3);
        let d = derive_round(&s).unwrap();
        let op = on_chain.addr(0);
        t.honest(on_chain.ledger.submit_cv(op, round, d.outers[0]));
        t.attack(on_chain.ledger.submit_cv(op, round, d.outers[0]));
        for i in 1..3 {
            on_chain.ledger.submit_cv(on_chain.addr(i), round, d.outers[i]).unwrap();
        }
        for i in 0..3 {
            on_chain.ledger.submit_co(on_chain.addr(i), round, d.inners[i]).unwrap();
        }
        let first = on_chain.addr(d.order.permutation[0]);
        on_chain
            .ledger
            .submit_reveal_order(first, round, d.order.clone())
            .unwrap();
        for &i in &d.order.permutation {
            on_chain.ledger.submit_s(on_chain.addr(i), round, s[i]).unwrap();
        }
    }
    t
}

/// Slashes one operator so the round retries, then offers attempt-0 signatures.
pub fn cross_attempt_reuse(trials: u64) -> Tally {
    let keys = operator_keys(4);
    let mut t = Tally::default();
    for trial in 0..trials {
        let mut fx = Fixture::new(&keys, Mode::Hybrid);
        let (round, s0) = fx.open_round(trial);
        let order = fx.open_s_window(round, &s0);
        let deadline = fx.ledger.round(round).unwrap().deadline.unwrap();
        fx.ledger.advance_to(deadline + 1);
        let leader = fx.leader;
        fx.ledger.fail_to_submit_s(leader, round).unwrap();
        assert_eq!(fx.ledger.round(round).unwrap().attempt_id, 1);

        let silent = order.last().unwrap();
        let s: Vec<Secret> = (0..4).filter(|&i| i != silent).map(|i| s0[i]).collect();
        fx.ledger.submit_merkle_root(leader, round, Fixture::root(&s)).unwrap();
        let stale = fx.signatures(round, 0, &s);
        t.attack(fx.ledger.generate_random_number(leader, round, &s, &stale));
        let mut mixed = fx.signatures(round, 1, &s);
        mixed[trial as usize % s.len()] = stale[trial as usize % s.len()];
        t.attack(fx.ledger.generate_random_number(leader, round, &s, &mixed));
        let fresh = fx.signatures(round, 1, &s);
        t.honest(fx.ledger.generate_random_number(leader, round, &s, &fresh));
    }
    t
}

/// Signatures bound to another chain id, contract, or both.
pub fn cross_domain_reuse(trials: u64) -> Tally {
    let keys = operator_keys(3);
    let mut fx = Fixture::new(&keys, Mode::Hybrid);
    let config = fx.ledger.config().clone();
    let mut other_contract = config.ver_contract;
    other_contract.0[0] ^= 0x5a;
    let mut t = Tally::default();
    for trial in 0..trials {
        let (round, s) = fx.open_round(trial);
        let leader = fx.leader;
        let variants = [
            (config.chain_id + 1 + trial, config.ver_contract),
            (config.chain_id, other_contract),
            (config.chain_id + 7, other_contract),
        ];
        for (chain, ver) in variants {
            let sigs = fx.foreign_signatures(round, 0, &s, chain, ver);
            t.attack(fx.ledger.generate_random_number(leader, round, &s, &sigs));
        }
        let sigs = fx.signatures(round, 0, &s);
        t.honest(fx.ledger.generate_random_number(leader, round, &s, &sigs));
    }
    t
}

/// Flips one signature to its high-s twin.
pub fn high_s_malleation(trials: u64) -> Tally {
    let keys = operator_keys(3);
    let mut fx = Fixture::new(&keys, Mode::Hybrid);
    let mut t = Tally::default();
    for trial in 0..trials {
        let (round, s) = fx.open_round(trial);
        let leader = fx.leader;
        let mut sigs = fx.signatures(round, 0, &s);
        let victim = trial as usize % s.len();
        let twin = crypto::malleate(&sigs[victim].unwrap());
        assert!(!twin.is_low_s());
        sigs[victim] = Some(twin);
        let result = fx.ledger.generate_random_number(leader, round, &s, &sigs);
        assert!(matches!(
            result,
            Err(LedgerError::SignatureInvalid {
                fault: SignatureFault::Malleable,
                ..
            })
        ));
        t.attack(result);
        let cv = CommitmentChain::from_secret(s[victim]).outer;
        t.attack(crypto::recover(&fx.ledger.commit_digest(round, 0, &cv), &twin));
        let sigs = fx.signatures(round, 0, &s);
        t.honest(fx.ledger.generate_random_number(leader, round, &s, &sigs));
    }
    t
}

/// Valid rounds only.
pub fn fresh_submissions(trials: u64) -> Tally {
    let keys = operator_keys(3);
    let mut fx = Fixture::new(&keys, Mode::Hybrid);
    let mut t = Tally::default();
    for trial in 0..trials {
        let (round, s) = fx.open_round(1_000_000 + trial);
        let sigs = fx.signatures(round, 0, &s);
        let leader = fx.leader;
        t.honest(fx.ledger.generate_random_number(leader, round, &s, &sigs));
    }
    t
}
