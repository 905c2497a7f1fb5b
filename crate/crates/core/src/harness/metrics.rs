//! Metrics records, communication transcripts and run outcomes.

use serde::{Deserialize, Serialize};

use crate::commcost::CommCostReport;
use crate::tensor::Tensor;

/// One observation emitted by a run. Serialized as a JSON-Lines row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub protocol: String,
    pub stage: String,
    /// `client-<i>`, `global` or `clients-avg`.
    pub entity: String,
    pub metric: String,
    pub value: f64,
    /// The derived seed governing this entity's randomness.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Client to server.
    Upload,
    /// Server to client.
    Downlink,
}

/// One message in a protocol transcript with its exact scalar count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub direction: Direction,
    pub client: usize,
    pub kind: String,
    pub scalars: u64,
}

/// Ordered log of every message the protocol exchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    messages: Vec<MessageRecord>,
}

impl Transcript {
    pub fn record(&mut self, direction: Direction, client: usize, kind: &str, scalars: u64) {
        self.messages.push(MessageRecord {
            direction,
            client,
            kind: kind.into(),
            scalars,
        });
    }

    pub fn messages(&self) -> &[MessageRecord] {
        &self.messages
    }

    pub fn uploads_for(&self, client: usize) -> Vec<&MessageRecord> {
        self.messages
            .iter()
            .filter(|m| m.direction == Direction::Upload && m.client == client)
            .collect()
    }

    pub fn downlinks_for(&self, client: usize) -> Vec<&MessageRecord> {
        self.messages
            .iter()
            .filter(|m| m.direction == Direction::Downlink && m.client == client)
            .collect()
    }

    pub fn total_scalars(&self, direction: Direction) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.direction == direction)
            .map(|m| m.scalars)
            .sum()
    }

    pub fn extend(&mut self, other: Transcript) {
        self.messages.extend(other.messages);
    }
}

/// Everything a protocol run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub transcript: Transcript,
    pub costs: Vec<CommCostReport>,
    /// Aggregated distillation targets, kept for equivalence checks.
    pub y_g: Option<Tensor>,
}

impl RunOutcome {
    /// Records that belong in the summary CSV: evaluation results and costs.
    pub fn summary_records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.metrics
            .iter()
            .filter(|r| r.stage == "evaluate" || r.stage == "cost")
    }

    pub fn total_cost(&self) -> u64 {
        self.costs.iter().map(|c| c.total).sum()
    }

    /// The value of a metric, looked up by entity and name.
    pub fn metric(&self, entity: &str, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|r| r.entity == entity && r.metric == metric)
            .map(|r| r.value)
    }
}
