//! FedAvg baseline: sample-count-weighted parameter averaging over
//! homogeneous client models across communication rounds.

use crate::commcost::CommCostReport;
use crate::config::{build_model_spec, ClientSpecs, ExperimentConfig};
use crate::data::partition;
use crate::error::{Error, Result, StageExt};
use crate::harness::{prepare_data, Direction, MetricsRecord, RunOutcome, Transcript};
use crate::nn::{self, train, TrainConfig, TrainedModel};
use crate::seed::derive_seed;

/// Weighted parameter average: each parameter becomes
/// `sum_i (n_i / sum(n)) * param_i`. All models must share one spec.
pub fn fedavg_aggregate(
    models: &[TrainedModel],
    sample_counts: &[usize],
) -> Result<TrainedModel> {
    if models.is_empty() {
        return Err(Error::invalid("no models to aggregate"));
    }
    if models.len() != sample_counts.len() {
        return Err(Error::invalid(format!(
            "{} models vs {} sample counts",
            models.len(),
            sample_counts.len()
        )));
    }
    if let Some(&zero) = sample_counts.iter().find(|&&c| c == 0) {
        return Err(Error::invalid(format!("sample count must be > 0, got {zero}")));
    }
    let spec = models[0].spec();
    if models.iter().any(|m| m.spec() != spec) {
        return Err(Error::invalid("fedavg requires identical model specs"));
    }
    let total: usize = sample_counts.iter().sum();
    // Anchored form p0 + sum_i w_i * (p_i - p0): algebraically the weighted
    // mean, and exact (not just close) when all models coincide.
    let base = models[0].flat_params();
    let mut acc = base.clone();
    for (model, &count) in models.iter().zip(sample_counts) {
        let weight = count as f64 / total as f64;
        for ((a, p), b) in acc.iter_mut().zip(model.flat_params()).zip(&base) {
            *a += weight * (p - b);
        }
    }
    models[0].with_flat_params(&acc)
}

/// The per-round seed for client `i`'s local training in round `round`.
pub fn local_train_seed(master_seed: u64, round: usize, n_clients: usize, client: usize) -> u64 {
    derive_seed(
        master_seed,
        "fedavg-local",
        (round * n_clients + client) as u64,
    )
}

/// R rounds of broadcast, local training and weighted aggregation.
pub fn run_fedavg(config: &ExperimentConfig) -> Result<RunOutcome> {
    if config.model.client.is_heterogeneous() {
        return Err(Error::Config {
            key: "model.client".into(),
            message: "fedavg requires a homogeneous client model".into(),
        });
    }
    let bundle = prepare_data(config)?;
    let n_classes = bundle.n_classes();
    let scheme = config.scheme.to_scheme(n_classes);
    let parts = partition(&bundle.pool, &scheme, config.master_seed).stage("partition")?;
    let n_clients = parts.len();

    let arch = match &config.model.client {
        ClientSpecs::Shared(a) => *a,
        ClientSpecs::PerClient(v) => v[0],
    };
    let spec = build_model_spec(arch, bundle.feature_dim(), n_classes, config.model.hidden)?;
    let params_per_model = spec.param_count()? as u64;

    let run_id = config.fingerprint();
    let mut metrics = Vec::new();
    let mut transcript = Transcript::default();
    let global_seed = derive_seed(config.master_seed, "fedavg-init", 0);
    let mut global = TrainedModel::init(spec, global_seed).stage("fedavg-init")?;
    let rounds = config.train.rounds;

    for round in 0..rounds {
        let mut locals = Vec::with_capacity(n_clients);
        let mut counts = Vec::with_capacity(n_clients);
        for (i, part) in parts.iter().enumerate() {
            // Broadcast: the client receives the current global parameters.
            transcript.record(Direction::Downlink, i, "broadcast", params_per_model);
            let cfg = TrainConfig {
                epochs: config.train.epochs,
                learning_rate: config.train.learning_rate,
                batch_size: config.train.batch_size,
                seed: local_train_seed(config.master_seed, round, n_clients, i),
            };
            let local = train(&global, part, &cfg).stage("fedavg-local-train")?;
            transcript.record(Direction::Upload, i, "update", params_per_model);
            locals.push(local);
            counts.push(part.len());
        }
        global = fedavg_aggregate(&locals, &counts).stage("fedavg-aggregate")?;
        let acc = nn::accuracy(&global, &bundle.test).stage("evaluate")?;
        let cumulative = CommCostReport::fedavg(
            params_per_model,
            params_per_model,
            round as u64 + 1,
            n_clients as u64,
        )
        .total;
        for (metric, value) in [
            (format!("accuracy_round_{round}"), acc),
            (format!("comm_cost_round_{round}"), cumulative as f64),
        ] {
            metrics.push(MetricsRecord {
                run_id: run_id.clone(),
                protocol: "fedavg".into(),
                stage: "round".into(),
                entity: "global".into(),
                metric,
                value,
                seed: global_seed,
            });
        }
    }

    let final_acc = nn::accuracy(&global, &bundle.test).stage("evaluate")?;
    metrics.push(MetricsRecord {
        run_id: run_id.clone(),
        protocol: "fedavg".into(),
        stage: "evaluate".into(),
        entity: "global".into(),
        metric: "accuracy".into(),
        value: final_acc,
        seed: global_seed,
    });
    let cost = CommCostReport::fedavg(
        params_per_model,
        params_per_model,
        rounds as u64,
        n_clients as u64,
    );
    metrics.push(MetricsRecord {
        run_id,
        protocol: "fedavg".into(),
        stage: "cost".into(),
        entity: "global".into(),
        metric: "comm_cost_total".into(),
        value: cost.total as f64,
        seed: config.master_seed,
    });

    Ok(RunOutcome {
        metrics,
        transcript,
        costs: vec![cost],
        y_g: None,
    })
}
