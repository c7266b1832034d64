use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actors::{OffChainMessage, OperatorPolicy};
use crate::crypto::{Address, Digest32};
use crate::ledger::{CallRecord, CostMeter, Effect, Funds, Mode, Phase, RoundId, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Call {
        record: CallRecord,
    },
    Send {
        to: Address,
        deliver_at: Tick,
        message: OffChainMessage,
    },
    Deliver {
        to: Address,
        sender: Address,
        kind: String,
    },
}

/// One transcript line; `(tick, seq)` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub tick: Tick,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Successful ledger calls that served one logical round, retries included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub round: RoundId,
    pub calls: Vec<String>,
    pub meter: CostMeter,
    pub outcome: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSummary {
    pub index: usize,
    pub address: Address,
    pub policy: OperatorPolicy,
    pub standby: bool,
    pub active: bool,
    pub deposit: Funds,
    pub balance: Funds,
    pub slashed: Funds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundsSummary {
    pub external_inflow: Funds,
    pub internal_total: Funds,
    pub leader_deposit: Funds,
    pub leader_balance: Funds,
    pub redistributed_pool: Funds,
}

impl FundsSummary {
    pub fn conserved(&self) -> bool {
        self.external_inflow == self.internal_total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub operators: usize,
    pub ticks: Tick,
    pub final_outputs: BTreeMap<RoundId, Digest32>,
    pub routes: Vec<Route>,
    pub meter_totals: CostMeter,
    pub funds: FundsSummary,
    pub participants: Vec<OperatorSummary>,
    pub invariant_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
    pub summary: Summary,
}

impl Transcript {
    pub fn route(&self, round: RoundId) -> Option<&Route> {
        self.summary.routes.iter().find(|r| r.round == round)
    }

    pub fn final_output(&self, round: RoundId) -> Option<Digest32> {
        self.summary.final_outputs.get(&round).copied()
    }

    pub fn calls(&self) -> impl Iterator<Item = (Tick, &CallRecord)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Call { record } => Some((e.tick, record)),
            _ => None,
        })
    }

    pub fn effects(&self) -> impl Iterator<Item = &Effect> {
        self.calls().flat_map(|(_, c)| c.effects.iter())
    }

    pub fn operator(&self, address: &Address) -> Option<&OperatorSummary> {
        self.summary.participants.iter().find(|p| p.address == *address)
    }

    /// One JSON object per event, then a closing summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        let summary = serde_json::json!({ "event": "summary", "summary": self.summary });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut events = Vec::new();
        let mut summary = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let value: serde_json::Value = serde_json::from_str(line)?;
            if value["event"] == "summary" {
                summary = Some(serde_json::from_value(value["summary"].clone())?);
            } else {
                events.push(serde_json::from_value(value)?);
            }
        }
        let summary = summary.ok_or_else(|| serde::de::Error::custom("transcript has no summary line"))?;
        Ok(Self { events, summary })
    }
}
