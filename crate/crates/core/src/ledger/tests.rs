use super::*;
use crate::beacon::derive_round;
use crate::crypto::{keccak, sign, CommitmentChain, SigningKey};

struct Fx {
    ledger: Ledger,
    keys: Vec<SigningKey>,
    leader: Address,
    consumer: Address,
}

fn key(tag: &str) -> SigningKey {
    SigningKey::from_bytes(&keccak(tag.as_bytes()).0).unwrap()
}

fn setup(n: usize, mode: Mode) -> Fx {
    let config = LedgerConfig {
        mode,
        ..LedgerConfig::default()
    };
    let leader = key("leader").address();
    let mut ledger = Ledger::new(config, leader, 1_000).unwrap();
    let keys: Vec<SigningKey> = (0..n).map(|i| key(&format!("op-{i}"))).collect();
    for k in &keys {
        ledger.deposit_and_activate(k.address(), 1_000).unwrap();
    }
    Fx {
        ledger,
        keys,
        leader,
        consumer: Address([0xC0; 20]),
    }
}

fn secrets(round: RoundId, attempt: u64, n: usize) -> Vec<Secret> {
    (0..n)
        .map(|i| Secret(keccak(format!("{round}/{attempt}/{i}").as_bytes()).0))
        .collect()
}

impl Fx {
    fn participants(&self, round: RoundId) -> Vec<usize> {
        let r = self.ledger.round(round).unwrap();
        r.participants
            .iter()
            .map(|a| self.keys.iter().position(|k| k.address() == *a).unwrap())
            .collect()
    }

    fn signatures(&self, round: RoundId, attempt: u64, secrets: &[Secret]) -> Vec<Option<RecoverableSignature>> {
        let who = self.participants(round);
        secrets
            .iter()
            .zip(who)
            .map(|(s, k)| {
                let cv = CommitmentChain::from_secret(*s).outer;
                Some(sign(&self.ledger.commit_digest(round, attempt, &cv), &self.keys[k]))
            })
            .collect()
    }

    fn root(secrets: &[Secret]) -> Digest32 {
        let cvs: Vec<Digest32> = secrets.iter().map(|s| CommitmentChain::from_secret(*s).outer).collect();
        merkle_root(&cvs).unwrap()
    }

    fn addr(&self, i: usize) -> Address {
        self.keys[i].address()
    }

    fn assert_conserved(&self) {
        self.ledger.check_invariants().unwrap();
    }
}

fn ok_calls(ledger: &Ledger) -> Vec<String> {
    ledger
        .log()
        .iter()
        .filter(|c| c.result.is_ok())
        .map(|c| c.call.clone())
        .collect()
}

#[test]
fn honest_hybrid_round_finalizes_in_two_calls() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 50).unwrap();
    let s = secrets(round, 0, 3);
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let sigs = fx.signatures(round, 0, &s);
    let out = fx.ledger.generate_random_number(fx.leader, round, &s, &sigs).unwrap();
    assert_eq!(out, derive_round(&s).unwrap().omega_o);
    let r = fx.ledger.round(round).unwrap();
    assert_eq!(r.phase, Phase::Finalized);
    assert_eq!(r.output, Some(out));
    let calls = ok_calls(&fx.ledger);
    assert_eq!(&calls[calls.len() - 2..], ["submitMerkleRoot", "generateRandomNumber"]);
    assert_eq!(fx.ledger.funds().balance(&fx.leader), 50);
    fx.assert_conserved();
}

#[test]
fn merkle_root_is_leader_only() {
    let mut fx = setup(2, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let op = fx.addr(0);
    assert_eq!(
        fx.ledger.submit_merkle_root(op, round, Digest32::ZERO),
        Err(LedgerError::NotLeader)
    );
    let last = fx.ledger.log().last().unwrap();
    assert_eq!(last.meter, CostMeter::default());
    assert!(!last.result.is_ok());
}

#[test]
fn substituted_secret_fails_root_check() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let mut s = secrets(round, 0, 3);
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let sigs = fx.signatures(round, 0, &s);
    s[1] = Secret([9; 32]);
    assert_eq!(
        fx.ledger.generate_random_number(fx.leader, round, &s, &sigs),
        Err(LedgerError::RootMismatch)
    );
    assert_eq!(fx.ledger.round(round).unwrap().phase, Phase::MerkleRootSubmitted);
}

#[test]
fn missing_or_foreign_signature_rejected() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 3);
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let mut sigs = fx.signatures(round, 0, &s);
    let good = sigs.clone();
    sigs[2] = None;
    assert_eq!(
        fx.ledger.generate_random_number(fx.leader, round, &s, &sigs),
        Err(LedgerError::SignatureRequired { index: 2 })
    );
    sigs[2] = good[0];
    assert_eq!(
        fx.ledger.generate_random_number(fx.leader, round, &s, &sigs),
        Err(LedgerError::SignatureInvalid {
            index: 2,
            fault: SignatureFault::WrongSigner
        })
    );
}

#[test]
fn replayed_generation_rejected() {
    let mut fx = setup(2, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 2);
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let sigs = fx.signatures(round, 0, &s);
    fx.ledger.generate_random_number(fx.leader, round, &s, &sigs).unwrap();
    assert!(matches!(
        fx.ledger.generate_random_number(fx.leader, round, &s, &sigs),
        Err(LedgerError::Replayed { .. })
    ));
}

#[test]
fn deposit_rules() {
    let mut fx = setup(2, Mode::Hybrid);
    let newcomer = key("newcomer").address();
    assert_eq!(
        fx.ledger.deposit_and_activate(newcomer, 999),
        Err(LedgerError::InsufficientDeposit {
            required: 1_000,
            provided: 999
        })
    );
    assert_eq!(fx.ledger.deposit_and_activate(newcomer, 1_000), Ok(2));
    assert_eq!(
        fx.ledger.deposit_and_activate(newcomer, 1_000),
        Err(LedgerError::AlreadyActive(newcomer))
    );
    let leader = fx.leader;
    assert_eq!(
        fx.ledger.deposit_and_activate(leader, 1_000),
        Err(LedgerError::LeaderCannotOperate)
    );
}

#[test]
fn first_activation_gets_index_zero() {
    let leader = key("leader").address();
    let mut ledger = Ledger::new(LedgerConfig::default(), leader, 1_000).unwrap();
    assert_eq!(ledger.deposit_and_activate(key("a").address(), 1_000), Ok(0));
}

#[test]
fn request_needs_two_operators() {
    let mut fx = setup(1, Mode::Hybrid);
    assert_eq!(
        fx.ledger.request_random_number(fx.consumer, 0),
        Err(LedgerError::NotEnoughOperators { active: 1, required: 2 })
    );
}

#[test]
fn rounds_queue_behind_the_current_one() {
    let mut fx = setup(2, Mode::Hybrid);
    let a = fx.ledger.request_random_number(fx.consumer, 5).unwrap();
    let b = fx.ledger.request_random_number(fx.consumer, 7).unwrap();
    assert_eq!((a, b), (0, 1));
    assert_eq!(fx.ledger.round(b).unwrap().phase, Phase::AwaitingRequest);
    let s = secrets(a, 0, 2);
    fx.ledger.submit_merkle_root(fx.leader, a, Fx::root(&s)).unwrap();
    let sigs = fx.signatures(a, 0, &s);
    fx.ledger.generate_random_number(fx.leader, a, &s, &sigs).unwrap();
    assert_eq!(fx.ledger.current_round(), Some(b));
    assert_eq!(fx.ledger.round(b).unwrap().phase, Phase::OffChainInProgress);
    fx.assert_conserved();
}

/// Drives a hybrid round to an open S window with the last revealer silent.
fn open_s_window(fx: &mut Fx, round: RoundId) -> (Vec<Secret>, RevealOrder) {
    let s = secrets(round, 0, fx.keys.len());
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let at = fx.ledger.round(round).unwrap().s_escalation_at.unwrap();
    fx.ledger.advance_to(at);
    let d = derive_round(&s).unwrap();
    let sigs = fx.signatures(round, 0, &s);
    let revealed: Vec<Secret> = d.order.permutation[..s.len() - 1].iter().map(|&i| s[i]).collect();
    fx.ledger
        .request_to_submit_s(fx.leader, round, &d.inners, &sigs, d.order.clone(), &revealed)
        .unwrap();
    (s, d.order)
}

#[test]
fn escalation_waits_for_its_window() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 3);
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let d = derive_round(&s).unwrap();
    let sigs = fx.signatures(round, 0, &s);
    let at = fx.ledger.round(round).unwrap().s_escalation_at.unwrap();
    assert_eq!(
        fx.ledger
            .request_to_submit_s(fx.leader, round, &d.inners, &sigs, d.order.clone(), &[]),
        Err(LedgerError::TooEarly { opens_at: at, now: 0 })
    );
}

#[test]
fn request_to_submit_s_validates_order_and_prefix() {
    let mut fx = setup(4, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 4);
    fx.ledger.submit_merkle_root(fx.leader, round, Fx::root(&s)).unwrap();
    let at = fx.ledger.round(round).unwrap().s_escalation_at.unwrap();
    fx.ledger.advance_to(at);
    let d = derive_round(&s).unwrap();
    let sigs = fx.signatures(round, 0, &s);

    let mut swapped = d.order.clone();
    swapped.permutation.swap(0, 1);
    swapped.keys.swap(0, 1);
    assert_eq!(
        fx.ledger
            .request_to_submit_s(fx.leader, round, &d.inners, &sigs, swapped, &[]),
        Err(LedgerError::OrderInvalid)
    );

    let mut tampered = d.inners.clone();
    tampered[0] = keccak(b"tampered");
    assert_eq!(
        fx.ledger
            .request_to_submit_s(fx.leader, round, &tampered, &sigs, d.order.clone(), &[]),
        Err(LedgerError::RootMismatch)
    );

    let wrong_prefix = [Secret([1; 32])];
    assert_eq!(
        fx.ledger
            .request_to_submit_s(fx.leader, round, &d.inners, &sigs, d.order.clone(), &wrong_prefix),
        Err(LedgerError::CommitmentMismatch {
            index: d.order.permutation[0]
        })
    );

    let all: Vec<Secret> = d.order.permutation.iter().map(|&i| s[i]).collect();
    assert_eq!(
        fx.ledger
            .request_to_submit_s(fx.leader, round, &d.inners, &sigs, d.order.clone(), &all),
        Err(LedgerError::NothingToRequest)
    );
}

#[test]
fn late_reveal_in_window_finalizes_with_same_output() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let (s, order) = open_s_window(&mut fx, round);
    let last = order.last().unwrap();
    let before = fx.ledger.operator(&fx.addr(last)).unwrap().deposit;
    let first = fx.addr(order.permutation[0]);
    assert!(matches!(
        fx.ledger.submit_s(first, round, s[order.permutation[0]]),
        Err(LedgerError::Replayed { .. })
    ));
    let out = fx.ledger.submit_s(fx.addr(last), round, s[last]).unwrap();
    assert_eq!(out, Some(derive_round(&s).unwrap().omega_o));
    assert_eq!(fx.ledger.operator(&fx.addr(last)).unwrap().deposit, before);
    fx.assert_conserved();
}

#[test]
fn silent_revealer_is_slashed_and_round_retries() {
    let mut fx = setup(4, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let (_, order) = open_s_window(&mut fx, round);
    let deadline = fx.ledger.round(round).unwrap().deadline.unwrap();
    fx.ledger.advance_to(deadline);
    let leader = fx.leader;
    assert_eq!(
        fx.ledger.fail_to_submit_s(leader, round),
        Err(LedgerError::TooEarly {
            opens_at: deadline + 1,
            now: deadline
        })
    );
    fx.ledger.advance_to(deadline + 1);
    fx.ledger.fail_to_submit_s(leader, round).unwrap();
    let silent = fx.addr(order.last().unwrap());
    let rec = fx.ledger.operator(&silent).unwrap();
    assert!(!rec.active);
    assert_eq!(rec.deposit, 0);
    let r = fx.ledger.round(round).unwrap();
    assert_eq!(
        (r.attempt_id, r.phase, r.participants.len()),
        (1, Phase::OffChainInProgress, 3)
    );
    // 1000 split over 3 operators plus 1 leader share.
    assert_eq!(fx.ledger.funds().balance(&leader), 250);
    assert_eq!(fx.ledger.balance_of(&fx.addr(order.permutation[0])), 250);
    fx.assert_conserved();

    // attempt-0 signatures do not verify under attempt 1
    let s0 = secrets(round, 0, 4);
    let keep: Vec<usize> = (0..4).filter(|&i| fx.addr(i) != silent).collect();
    let s: Vec<Secret> = keep.iter().map(|&i| s0[i]).collect();
    fx.ledger.submit_merkle_root(leader, round, Fx::root(&s)).unwrap();
    let stale = fx.signatures(round, 0, &s);
    assert!(matches!(
        fx.ledger.generate_random_number(leader, round, &s, &stale),
        Err(LedgerError::SignatureInvalid {
            fault: SignatureFault::WrongSigner,
            ..
        })
    ));
    let fresh = fx.signatures(round, 1, &s);
    fx.ledger.generate_random_number(leader, round, &s, &fresh).unwrap();
    fx.assert_conserved();
}

#[test]
fn two_operators_halt_then_recover() {
    let mut fx = setup(2, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 10).unwrap();
    open_s_window(&mut fx, round);
    let deadline = fx.ledger.round(round).unwrap().deadline.unwrap();
    fx.ledger.advance_to(deadline + 1);
    let leader = fx.leader;
    fx.ledger.fail_to_submit_s(leader, round).unwrap();
    assert_eq!(fx.ledger.status(), ProtocolStatus::Halted(HaltReason::TooFewOperators));
    assert_eq!(fx.ledger.round(round).unwrap().phase, Phase::Halted);
    assert_eq!(
        fx.ledger.request_random_number(fx.consumer, 1),
        Err(LedgerError::ServiceHalted)
    );
    assert_eq!(
        fx.ledger.resume(leader, 1_000),
        Err(LedgerError::NotEnoughOperators { active: 1, required: 2 })
    );
    let newcomer = key("newcomer").address();
    fx.ledger.deposit_and_activate(newcomer, 1_000).unwrap();
    assert_eq!(
        fx.ledger.resume(leader, 0),
        Err(LedgerError::InsufficientDeposit {
            required: 1_000,
            provided: 0
        })
    );
    fx.ledger.resume(leader, 1_000).unwrap();
    let r = fx.ledger.round(round).unwrap();
    assert_eq!((r.attempt_id, r.phase), (1, Phase::OffChainInProgress));
    assert_eq!(r.participants.last(), Some(&newcomer));
    assert_eq!(fx.ledger.resume(leader, 1_000), Err(LedgerError::NotHalted));
    fx.assert_conserved();
}

#[test]
fn leader_failure_halts_and_allows_refund() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 40).unwrap();
    let deadline = fx.ledger.round(round).unwrap().deadline.unwrap();
    let op = fx.addr(0);
    fx.ledger.advance_to(deadline);
    assert!(matches!(
        fx.ledger.fail_to_request_s_or_generate_random_number(op, round),
        Err(LedgerError::TooEarly { .. })
    ));
    assert_eq!(fx.ledger.refund(fx.consumer, round), Err(LedgerError::NotHalted));
    fx.ledger.advance_to(deadline + 1);
    let leader = fx.leader;
    assert_eq!(
        fx.ledger.fail_to_request_s_or_generate_random_number(leader, round),
        Err(LedgerError::NotOperator(leader))
    );
    fx.ledger
        .fail_to_request_s_or_generate_random_number(op, round)
        .unwrap();
    assert_eq!(fx.ledger.status(), ProtocolStatus::Halted(HaltReason::LeaderFailure));
    assert_eq!(fx.ledger.funds().leader_deposit, 0);
    // equal split, no leader share: 1000 / 3 = 333 rem 1
    assert_eq!(fx.ledger.balance_of(&op), 333);
    assert_eq!(fx.ledger.funds().redistributed_pool, 1);
    fx.assert_conserved();

    let stranger = Address([0x55; 20]);
    assert_eq!(fx.ledger.refund(stranger, round), Err(LedgerError::NotYourRequest));
    assert_eq!(fx.ledger.refund(fx.consumer, round), Ok(40));
    assert_eq!(fx.ledger.refund(fx.consumer, round), Err(LedgerError::AlreadyRefunded));
    fx.ledger.resume(leader, 1_000).unwrap();
    assert_eq!(fx.ledger.round(round).unwrap().phase, Phase::Refunded);
    assert_eq!(fx.ledger.current_round(), None);
    let next = fx.ledger.request_random_number(fx.consumer, 1).unwrap();
    assert_eq!(next, round + 1);
    fx.assert_conserved();
}

#[test]
fn refund_of_finalized_round_is_rejected() {
    let mut fx = setup(2, Mode::Hybrid);
    let a = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(a, 0, 2);
    fx.ledger.submit_merkle_root(fx.leader, a, Fx::root(&s)).unwrap();
    let sigs = fx.signatures(a, 0, &s);
    fx.ledger.generate_random_number(fx.leader, a, &s, &sigs).unwrap();
    assert_eq!(fx.ledger.refund(fx.consumer, a), Err(LedgerError::AlreadyProcessed));
}

#[test]
fn cv_dispute_recovers_when_accused_answers() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 3);
    let cvs: Vec<Digest32> = s.iter().map(|x| CommitmentChain::from_secret(*x).outer).collect();
    let sigs = fx.signatures(round, 0, &s);
    let at = fx.ledger.round(round).unwrap().cv_escalation_at.unwrap();
    fx.ledger.advance_to(at);
    let leader = fx.leader;

    let fabricated = [SignedCommit {
        index: 1,
        cv: keccak(b"fake"),
        signature: None,
    }];
    assert_eq!(
        fx.ledger.request_to_submit_cv(leader, round, &[2], &fabricated),
        Err(LedgerError::SignatureRequired { index: 1 })
    );
    let forged = [SignedCommit {
        index: 1,
        cv: keccak(b"fake"),
        signature: sigs[1],
    }];
    assert_eq!(
        fx.ledger.request_to_submit_cv(leader, round, &[2], &forged),
        Err(LedgerError::SignatureRequired { index: 1 })
    );

    let known: Vec<SignedCommit> = (0..2)
        .map(|i| SignedCommit {
            index: i,
            cv: cvs[i],
            signature: sigs[i],
        })
        .collect();
    fx.ledger.request_to_submit_cv(leader, round, &[2], &known).unwrap();
    assert_eq!(
        fx.ledger.submit_cv(fx.addr(0), round, cvs[0]),
        Err(LedgerError::NotRequested)
    );
    fx.ledger.submit_cv(fx.addr(2), round, cvs[2]).unwrap();
    assert_eq!(fx.ledger.round(round).unwrap().phase, Phase::OffChainInProgress);

    fx.ledger.submit_merkle_root(leader, round, Fx::root(&s)).unwrap();
    // every cv is anchored now, so no signatures are needed
    let out = fx
        .ledger
        .generate_random_number(leader, round, &s, &[None, None, None])
        .unwrap();
    assert_eq!(out, derive_round(&s).unwrap().omega_o);
    fx.assert_conserved();
}

#[test]
fn co_dispute_slashes_silent_operator() {
    let mut fx = setup(3, Mode::Hybrid);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 3);
    let d = derive_round(&s).unwrap();
    let sigs = fx.signatures(round, 0, &s);
    let leader = fx.leader;
    fx.ledger.submit_merkle_root(leader, round, Fx::root(&s)).unwrap();
    let at = fx.ledger.round(round).unwrap().co_escalation_at.unwrap();
    fx.ledger.advance_to(at);
    fx.ledger
        .request_to_submit_co(leader, round, &[0, 1], &d.outers, &sigs)
        .unwrap();
    assert_eq!(
        fx.ledger.submit_co(fx.addr(0), round, d.inners[1]),
        Err(LedgerError::CommitmentMismatch { index: 0 })
    );
    fx.ledger.submit_co(fx.addr(0), round, d.inners[0]).unwrap();
    assert!(matches!(
        fx.ledger.submit_co(fx.addr(0), round, d.inners[0]),
        Err(LedgerError::Replayed { .. })
    ));
    let deadline = fx.ledger.round(round).unwrap().deadline.unwrap();
    fx.ledger.advance_to(deadline + 1);
    fx.ledger.fail_to_submit_co(fx.addr(2), round).unwrap();
    assert!(!fx.ledger.is_active(&fx.addr(1)));
    assert!(fx.ledger.is_active(&fx.addr(0)));
    assert_eq!(fx.ledger.round(round).unwrap().attempt_id, 1);
    fx.assert_conserved();
}

#[test]
fn on_chain_mode_full_round() {
    let mut fx = setup(3, Mode::OnChain);
    let round = fx.ledger.request_random_number(fx.consumer, 9).unwrap();
    let s = secrets(round, 0, 3);
    let d = derive_round(&s).unwrap();
    assert_eq!(fx.ledger.round(round).unwrap().phase, Phase::OnChainCvWindow);
    for i in 0..3 {
        fx.ledger.submit_cv(fx.addr(i), round, d.outers[i]).unwrap();
    }
    assert!(matches!(
        fx.ledger.submit_cv(fx.addr(0), round, d.outers[0]),
        Err(LedgerError::Replayed { .. })
    ));
    for i in 0..3 {
        fx.ledger.submit_co(fx.addr(i), round, d.inners[i]).unwrap();
    }
    let mut swapped = d.order.clone();
    swapped.permutation.swap(1, 2);
    swapped.keys.swap(1, 2);
    assert_eq!(
        fx.ledger.submit_reveal_order(fx.addr(0), round, swapped),
        Err(LedgerError::OrderInvalid)
    );
    let first = d.order.permutation[0];
    let second = d.order.permutation[1];
    assert_eq!(
        fx.ledger.submit_s(fx.addr(first), round, s[first]),
        Err(LedgerError::PhaseViolation {
            expected: "OnChainSWindow with a stored order",
            actual: Phase::OnChainSWindow
        })
    );
    fx.ledger
        .submit_reveal_order(fx.addr(0), round, d.order.clone())
        .unwrap();
    assert_eq!(
        fx.ledger.submit_s(fx.addr(second), round, s[second]),
        Err(LedgerError::NotYourTurn {
            expected: fx.addr(first)
        })
    );
    let mut out = None;
    for &i in &d.order.permutation {
        out = fx.ledger.submit_s(fx.addr(i), round, s[i]).unwrap();
    }
    assert_eq!(out, Some(d.omega_o));
    fx.assert_conserved();
}

#[test]
fn stale_order_is_rejected() {
    let mut fx = setup(3, Mode::OnChain);
    let round = fx.ledger.request_random_number(fx.consumer, 0).unwrap();
    let s = secrets(round, 0, 3);
    let d = derive_round(&s).unwrap();
    for i in 0..3 {
        fx.ledger.submit_cv(fx.addr(i), round, d.outers[i]).unwrap();
    }
    for i in 0..3 {
        fx.ledger.submit_co(fx.addr(i), round, d.inners[i]).unwrap();
    }
    let mut other = s.clone();
    other[0] = Secret([7; 32]);
    let stale = derive_round(&other).unwrap().order;
    assert_eq!(
        fx.ledger.submit_reveal_order(fx.addr(1), round, stale),
        Err(LedgerError::OrderInvalid)
    );
}

#[test]
fn last_revealer_reward_is_paid() {
    let config = LedgerConfig {
        last_revealer_reward_bps: 2_500,
        ..LedgerConfig::default()
    };
    let leader = key("leader").address();
    let mut ledger = Ledger::new(config, leader, 1_000).unwrap();
    let keys: Vec<SigningKey> = (0..3).map(|i| key(&format!("op-{i}"))).collect();
    for k in &keys {
        ledger.deposit_and_activate(k.address(), 1_000).unwrap();
    }
    let round = ledger.request_random_number(Address([1; 20]), 100).unwrap();
    let s = secrets(round, 0, 3);
    let d = derive_round(&s).unwrap();
    ledger
        .submit_merkle_root(leader, round, merkle_root(&d.outers).unwrap())
        .unwrap();
    let sigs: Vec<_> = (0..3)
        .map(|i| Some(sign(&ledger.commit_digest(round, 0, &d.outers[i]), &keys[i])))
        .collect();
    ledger.generate_random_number(leader, round, &s, &sigs).unwrap();
    let last = keys[d.order.last().unwrap()].address();
    assert_eq!(ledger.funds().balance(&last), 25);
    assert_eq!(ledger.funds().balance(&leader), 75);
    ledger.check_invariants().unwrap();
}

#[test]
fn snapshot_serializes() {
    let mut fx = setup(2, Mode::Hybrid);
    fx.ledger.request_random_number(fx.consumer, 3).unwrap();
    let snap = fx.ledger.snapshot();
    assert_eq!(snap["current_round"], 0);
    assert_eq!(snap["operators"].as_array().unwrap().len(), 2);
}
