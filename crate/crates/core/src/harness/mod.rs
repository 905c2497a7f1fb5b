//! Experiment orchestration: deterministic data preparation, metrics and
//! transcript records, protocol dispatch and output files.

mod metrics;
mod prep;

pub use metrics::{Direction, MessageRecord, MetricsRecord, RunOutcome, Transcript};
pub use prep::{prepare_data, DataBundle};

use std::fs;
use std::path::Path;

use crate::config::{ExperimentConfig, Protocol};
use crate::data::LabeledDataset;
use crate::dlmh::MaskDict;
use crate::error::Result;
use crate::nn::{self, TrainedModel};

/// Dispatch a validated config to its protocol runner.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    match config.protocol {
        Protocol::Dlsh => crate::dlsh::run_dlsh(config),
        Protocol::Dlmh => crate::dlmh::run_dlmh(config),
        Protocol::Idlmh => crate::idlmh::run_idlmh(config),
        Protocol::Fedavg => crate::fedavg::run_fedavg(config),
    }
}

/// Write `metrics.jsonl` (one record per line) and `summary.csv` (final
/// accuracies and communication cost) into `out_dir`.
///
/// Output bytes are a pure function of the outcome, so identical runs
/// produce identical files.
pub fn write_outputs(outcome: &RunOutcome, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut jsonl = String::new();
    for record in &outcome.metrics {
        jsonl.push_str(&serde_json::to_string(record).expect("record serializes"));
        jsonl.push('\n');
    }
    fs::write(out_dir.join("metrics.jsonl"), jsonl)?;

    let mut csv = String::from("protocol,entity,metric,value\n");
    for record in outcome.summary_records() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            record.protocol, record.entity, record.metric, record.value
        ));
    }
    fs::write(out_dir.join("summary.csv"), csv)?;
    Ok(())
}

/// Accuracy of a reduced-head model against global test labels: the model
/// predicts in its local label space and the schema maps each prediction
/// back to a global class.
pub fn accuracy_via_schema(
    model: &TrainedModel,
    test: &LabeledDataset,
    schema: &MaskDict,
) -> Result<f64> {
    if test.is_empty() {
        return Err(crate::Error::invalid("empty test set"));
    }
    let logits = nn::forward(model, test.features())?;
    let mut correct = 0usize;
    for (i, &label) in test.labels().iter().enumerate() {
        let local = nn::argmax(logits.row(i));
        if schema.global_of(local) == Some(label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

