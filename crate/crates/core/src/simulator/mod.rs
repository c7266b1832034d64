//! Deterministic discrete-event engine.
//!
//! Each tick delivers due messages in `(deliver_at, seq)` order, then steps
//! operators in activation order (standby operators after them), then the
//! consumer, then the leader. Every ledger call an actor emits executes
//! immediately, so later actors in the same tick observe its effects.

mod scenario;
mod transcript;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{Action, ConsumerActor, LeaderActor, OffChainMessage, OperatorActor, OperatorPolicy, StepContext};
use crate::crypto::{Address, Digest32};
use crate::ledger::{CallOutcome, CallResult, CostMeter, Effect, Ledger, LedgerError, Phase, RoundId, Tick};

pub(crate) use scenario::seeded_rng;
pub use scenario::{
    consumer_address, leader_address, operator_key, operator_secret, Economics, OperatorSelector, PolicyAssignment,
    ScenarioScript, SelectorRole, DEFAULT_TICK_BUDGET,
};
pub use transcript::{Event, EventKind, FundsSummary, OperatorSummary, Route, Summary, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no progress within {budget} ticks")]
    LivenessTimeout { budget: Tick },
    #[error("route mismatch: expected {expected:?}, got {actual:?}")]
    RouteMismatch { expected: Vec<String>, actual: Vec<String> },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("ledger setup failed: {0}")]
    Setup(#[from] LedgerError),
}

struct Engine {
    script: ScenarioScript,
    ledger: Ledger,
    operators: Vec<OperatorActor>,
    by_address: BTreeMap<Address, usize>,
    standby_from: usize,
    leader: LeaderActor,
    consumer: ConsumerActor,
    queue: BTreeMap<(Tick, u64), (Address, OffChainMessage)>,
    inboxes: BTreeMap<Address, Vec<OffChainMessage>>,
    events: Vec<Event>,
    violations: Vec<String>,
    send_seq: u64,
    now: Tick,
}

impl Engine {
    fn new(script: &ScenarioScript) -> Result<Self, SimError> {
        script.validate()?;
        let seed = script.seed;
        let e = script.economics;
        let leader_addr = leader_address(seed);
        let mut ledger = Ledger::new(script.ledger_config(), leader_addr, e.leader_deposit)?;
        let policies = script.resolved_policies();
        let total = script.operators + script.standby_operators;
        let mut operators = Vec::with_capacity(total);
        let mut by_address = BTreeMap::new();
        for index in 0..total {
            let policy = policies.get(index).copied().unwrap_or(OperatorPolicy::Honest);
            let secrets = Box::new(move |round, attempt| operator_secret(seed, index, round, attempt));
            let mut actor = OperatorActor::new(operator_key(seed, index), policy, secrets);
            if index >= script.operators {
                actor = actor.standby(e.operator_deposit);
            } else {
                ledger.deposit_and_activate(actor.address(), e.operator_deposit)?;
            }
            by_address.insert(actor.address(), index);
            operators.push(actor);
        }
        let consumer = ConsumerActor::new(consumer_address(seed), script.consumer_policy, e.fee, script.rounds);
        let mut engine = Self {
            script: script.clone(),
            ledger,
            operators,
            by_address,
            standby_from: script.operators,
            leader: LeaderActor::new(leader_addr, script.leader_policy),
            consumer,
            queue: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            events: Vec::new(),
            violations: Vec::new(),
            send_seq: 0,
            now: 0,
        };
        let genesis: Vec<_> = engine.ledger.log().to_vec();
        for record in genesis {
            engine.push(EventKind::Call { record });
        }
        Ok(engine)
    }

    fn push(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            tick: self.now,
            kind,
        });
    }

    fn perform(&mut self, actor: Address, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, message } => {
                    let deliver_at = self.now + self.script.latency;
                    self.queue.insert((deliver_at, self.send_seq), (to, message.clone()));
                    self.send_seq += 1;
                    self.push(EventKind::Send {
                        to,
                        deliver_at,
                        message,
                    });
                }
                Action::Call(call) => {
                    let result = self.ledger.execute(actor, call);
                    if actor == self.consumer.address() {
                        if let Ok(CallOutcome::RoundOpened { round }) = result {
                            self.consumer.record_request(round);
                        }
                    }
                    let record = self.ledger.log().last().expect("call was logged").clone();
                    self.push(EventKind::Call { record });
                    if let Err(v) = self.ledger.check_invariants() {
                        self.violations.push(format!("tick {}: {v}", self.now));
                    }
                }
            }
        }
    }

    fn deliver(&mut self) {
        let due: Vec<(Tick, u64)> = self.queue.range(..=(self.now, u64::MAX)).map(|(k, _)| *k).collect();
        for key in due {
            let (to, message) = self.queue.remove(&key).expect("key listed above");
            self.push(EventKind::Deliver {
                to,
                sender: message.sender,
                kind: message.body.kind().to_owned(),
            });
            self.inboxes.entry(to).or_default().push(message);
        }
    }

    fn watchdog(&self) -> Option<Address> {
        let active = self.ledger.active_operators();
        active
            .iter()
            .find(|a| self.operators[self.by_address[a]].policy() == OperatorPolicy::Honest)
            .or(active.first())
            .copied()
    }

    fn tick(&mut self) {
        self.ledger.advance_to(self.now);
        self.deliver();

        let mut order: Vec<usize> = self
            .ledger
            .active_operators()
            .iter()
            .filter_map(|a| self.by_address.get(a).copied())
            .collect();
        for i in 0..self.operators.len() {
            if !order.contains(&i) {
                order.push(i);
            }
        }
        for i in order {
            let address = self.operators[i].address();
            let inbox = self.inboxes.remove(&address).unwrap_or_default();
            let cx = StepContext {
                now: self.now,
                ledger: &self.ledger,
                watchdog: self.watchdog(),
            };
            let actions = self.operators[i].step(&cx, &inbox);
            self.perform(address, actions);
        }

        let cx = StepContext {
            now: self.now,
            ledger: &self.ledger,
            watchdog: None,
        };
        let actions = self.consumer.step(&cx);
        let consumer = self.consumer.address();
        self.perform(consumer, actions);

        let leader = self.leader.address();
        let inbox = self.inboxes.remove(&leader).unwrap_or_default();
        let cx = StepContext {
            now: self.now,
            ledger: &self.ledger,
            watchdog: None,
        };
        let actions = self.leader.step(&cx, &inbox);
        self.perform(leader, actions);
    }

    fn run(mut self) -> Result<Transcript, SimError> {
        loop {
            self.tick();
            if self.consumer.is_done(&self.ledger) {
                break;
            }
            if self.now >= self.script.tick_budget {
                return Err(SimError::LivenessTimeout {
                    budget: self.script.tick_budget,
                });
            }
            self.now += 1;
        }
        Ok(self.finish())
    }

    fn finish(self) -> Transcript {
        let ledger = &self.ledger;
        let final_outputs = ledger.rounds().filter_map(|r| r.output.map(|o| (r.round, o))).collect();
        let routes: Vec<Route> = self
            .consumer
            .requested()
            .iter()
            .map(|&round| route_of(ledger, round))
            .collect();
        let mut slashed: BTreeMap<Address, u128> = BTreeMap::new();
        for record in ledger.log() {
            for effect in &record.effects {
                if let Effect::Slashed { address, amount } = effect {
                    *slashed.entry(*address).or_default() += amount;
                }
            }
        }
        let participants = self
            .operators
            .iter()
            .enumerate()
            .map(|(index, actor)| {
                let address = actor.address();
                let record = ledger.operator(&address);
                OperatorSummary {
                    index,
                    address,
                    policy: actor.policy(),
                    standby: index >= self.standby_from,
                    active: record.is_some_and(|r| r.active),
                    deposit: record.map_or(0, |r| r.deposit),
                    balance: ledger.balance_of(&address),
                    slashed: slashed.get(&address).copied().unwrap_or(0),
                }
            })
            .collect();
        let funds = FundsSummary {
            external_inflow: ledger.external_inflow(),
            internal_total: ledger.internal_total(),
            leader_deposit: ledger.funds().leader_deposit,
            leader_balance: ledger.funds().balance(&ledger.leader()),
            redistributed_pool: ledger.funds().redistributed_pool,
        };
        Transcript {
            summary: Summary {
                scenario: self.script.name.clone(),
                seed: self.script.seed,
                mode: self.script.mode,
                operators: self.script.operators,
                ticks: self.now,
                final_outputs,
                meter_totals: ledger.meter_total(),
                routes,
                funds,
                participants,
                invariant_violations: self.violations,
            },
            events: self.events,
        }
    }
}

/// Successful calls from the request that opened `round` up to the call that
/// closed it, skipping calls addressed to other rounds.
fn route_of(ledger: &Ledger, round: RoundId) -> Route {
    let log = ledger.log();
    let opened = log.iter().position(
        |c| matches!(&c.result, CallResult::Ok { outcome: CallOutcome::RoundOpened { round: r } } if *r == round),
    );
    let closes = |c: &&crate::ledger::CallRecord| {
        c.effects
            .iter()
            .any(|e| matches!(e, Effect::Finalized { round: r, .. } | Effect::Refunded { round: r, .. } if *r == round))
    };
    let mut calls = Vec::new();
    let mut meter = CostMeter::default();
    if let Some(start) = opened {
        for c in &log[start + 1..] {
            if !c.result.is_ok() || c.call == "requestRandomNumber" || c.round.is_some_and(|r| r != round) {
                continue;
            }
            calls.push(c.call.clone());
            meter += c.meter;
            if closes(&c) {
                break;
            }
        }
    }
    let outcome = ledger.round(round).map_or(Phase::AwaitingRequest, |r| r.phase);
    Route {
        round,
        calls,
        meter,
        outcome,
    }
}

/// Executes a scenario to completion.
pub fn run(script: &ScenarioScript) -> Result<Transcript, SimError> {
    Engine::new(script)?.run()
}

/// Checks what a finished transcript must satisfy for its script: no
/// invariant violations and, if given, the expected round-0 route.
pub fn verify(script: &ScenarioScript, transcript: &Transcript) -> Result<(), SimError> {
    if let Some(v) = transcript.summary.invariant_violations.first() {
        return Err(SimError::InvariantViolation(v.clone()));
    }
    if !transcript.summary.funds.conserved() {
        return Err(SimError::InvariantViolation("fund conservation".to_owned()));
    }
    if let Some(expected) = &script.expected_route {
        let actual = transcript.route(0).map(|r| r.calls.clone()).unwrap_or_default();
        if *expected != actual {
            return Err(SimError::RouteMismatch {
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok(())
}

/// `run` followed by `verify`.
pub fn run_checked(script: &ScenarioScript) -> Result<Transcript, SimError> {
    let transcript = run(script)?;
    verify(script, &transcript)?;
    Ok(transcript)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub calls: Vec<String>,
    pub meter: CostMeter,
}

/// Runs `template` once per operator count and reports the round-0 route.
pub fn sweep(template: &ScenarioScript, ns: &[usize]) -> Result<Vec<SweepRow>, SimError> {
    let mut rows: Vec<SweepRow> = ns
        .par_iter()
        .map(|&n| {
            let mut script = template.clone();
            script.operators = n;
            script.expected_route = None;
            let transcript = run(&script)?;
            verify(&script, &transcript)?;
            let route = transcript
                .route(0)
                .cloned()
                .ok_or_else(|| SimError::InvariantViolation("sweep run produced no round".to_owned()))?;
            Ok(SweepRow {
                n,
                calls: route.calls,
                meter: route.meter,
            })
        })
        .collect::<Result<_, SimError>>()?;
    rows.sort_by_key(|r| r.n);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriefingReport {
    pub n: usize,
    pub griefer: Address,
    /// Metered work of the leader's forced-reveal request.
    pub leader_work: u64,
    /// Metered work of the griefer's own on-chain reveal.
    pub griefer_work: u64,
    pub ratio: f64,
    pub griefer_slashed: bool,
    pub griefer_deposit_before: u128,
    pub griefer_deposit_after: u128,
    pub route: Vec<String>,
    pub output: Option<Digest32>,
    pub honest_output: Option<Digest32>,
}

impl GriefingReport {
    pub fn same_output(&self) -> bool {
        self.output.is_some() && self.output == self.honest_output
    }
}

/// Measures the griefing asymmetry and the honest counterfactual.
pub fn griefing_report(script: &ScenarioScript) -> Result<GriefingReport, SimError> {
    script.validate()?;
    let policies = script.resolved_policies();
    let griefers: Vec<usize> = (0..policies.len())
        .filter(|&i| policies[i] == OperatorPolicy::LateOnChainGriefer)
        .collect();
    if griefers.len() != 1
        || policies
            .iter()
            .any(|p| !matches!(p, OperatorPolicy::Honest | OperatorPolicy::LateOnChainGriefer))
    {
        return Err(SimError::InvalidScenario(
            "griefing needs exactly one LateOnChainGriefer and otherwise honest operators".to_owned(),
        ));
    }
    let transcript = run(script)?;
    verify(script, &transcript)?;
    let griefer = operator_key(script.seed, griefers[0]).address();
    let mut leader_work = 0;
    let mut griefer_work = 0;
    for (_, call) in transcript.calls() {
        if !call.result.is_ok() || call.round != Some(0) {
            continue;
        }
        match call.call.as_str() {
            "requestToSubmitS" => leader_work += call.meter.total(),
            "submitS" if call.caller == griefer => griefer_work += call.meter.total(),
            _ => {}
        }
    }

    let mut honest = script.clone();
    honest.policies.clear();
    honest.expected_route = None;
    let counterfactual = run(&honest)?;

    let summary = transcript.operator(&griefer).expect("griefer is a genesis operator");
    Ok(GriefingReport {
        n: script.operators,
        griefer,
        leader_work,
        griefer_work,
        ratio: if griefer_work == 0 {
            f64::INFINITY
        } else {
            leader_work as f64 / griefer_work as f64
        },
        griefer_slashed: summary.slashed > 0 || !summary.active,
        griefer_deposit_before: script.economics.operator_deposit,
        griefer_deposit_after: summary.deposit,
        route: transcript.route(0).map(|r| r.calls.clone()).unwrap_or_default(),
        output: transcript.final_output(0),
        honest_output: counterfactual.final_output(0),
    })
}
