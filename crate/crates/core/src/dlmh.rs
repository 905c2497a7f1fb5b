//! DL-MH: one-round distillation across fully heterogeneous client models.
//!
//! Clients hold different architectures and different head sizes. Each
//! client maps its global class labels onto a compact local label space
//! (its mask dictionary), trains in that space, and uploads narrow logits
//! plus its schema. The server scatters every upload back into the global
//! label space with zeros elsewhere before confidence-weighted aggregation.

use serde::{Deserialize, Serialize};

use crate::commcost::CommCostReport;
use crate::config::{build_model_spec, AggregateMode, ExperimentConfig, HeadMode};
use crate::data::{partition, LabeledDataset};
use crate::error::{Error, Result, StageExt};
use crate::harness::{prepare_data, Direction, MetricsRecord, RunOutcome, Transcript};
use crate::nn::{self, TrainConfig, TrainedModel};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

use crate::dlsh::{
    aggregate_weighted, client_pipeline, normalize_confidence, server_distill, ClientPipelineCfg,
    ClientUploadSh, ConfidenceMatrix, GlobalDistillSet,
};

/// Bijection between a client's local labels `0..k` and the global classes
/// it holds, stored as the ascending class list `d`.
///
/// Local label `l` maps to `class_list[l]`; the wire form is the ordered
/// `(local, global)` pair list, counted as `|d|` scalars by the cost
/// accountant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskDict {
    class_list: Vec<usize>,
}

impl MaskDict {
    /// Schema over the given set of global classes.
    pub fn from_classes(labels_present: &[usize]) -> Result<Self> {
        if labels_present.is_empty() {
            return Err(Error::invalid("mask dict needs at least one class"));
        }
        let mut class_list = labels_present.to_vec();
        class_list.sort_unstable();
        class_list.dedup();
        Ok(Self { class_list })
    }

    /// Identity schema over `0..n_classes`.
    pub fn identity(n_classes: usize) -> Result<Self> {
        Self::from_classes(&(0..n_classes).collect::<Vec<_>>())
    }

    /// Number of classes the client holds.
    pub fn len(&self) -> usize {
        self.class_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_list.is_empty()
    }

    /// The sorted global classes `d`.
    pub fn class_list(&self) -> &[usize] {
        &self.class_list
    }

    pub fn global_of(&self, local: usize) -> Option<usize> {
        self.class_list.get(local).copied()
    }

    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.class_list.binary_search(&global).ok()
    }

    /// Ordered `(local, global)` pairs — the wire form.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.class_list.iter().copied().enumerate().collect()
    }

    pub fn is_identity(&self, n_classes: usize) -> bool {
        self.class_list.len() == n_classes
            && self.class_list.iter().copied().eq(0..n_classes)
    }

    pub fn max_global(&self) -> usize {
        *self.class_list.last().unwrap()
    }
}

/// Build a client's mask dictionary from the global classes in its data.
pub fn build_mask_dict(labels_present: &[usize]) -> Result<MaskDict> {
    MaskDict::from_classes(labels_present)
}

/// Rewrite a dataset's labels into the schema's local space; features are
/// untouched. Every label must appear in the schema.
pub fn remap_local_labels(data: &LabeledDataset, schema: &MaskDict) -> Result<LabeledDataset> {
    let mut labels = Vec::with_capacity(data.len());
    for &l in data.labels() {
        match schema.local_of(l) {
            Some(local) => labels.push(local),
            None => {
                return Err(Error::invalid(format!(
                    "label {l} is not mapped by the schema {:?}",
                    schema.class_list()
                )))
            }
        }
    }
    LabeledDataset::new(data.features().clone(), labels, schema.len())
}

/// A heterogeneous client's upload: narrow logits in local label space,
/// confidence scores, and the schema needed to unmask them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUploadMh {
    /// `|X_dist| x k_i` logits in local label space.
    pub logits: Tensor,
    pub confidence: Vec<f64>,
    pub schema: MaskDict,
}

impl ClientUploadMh {
    pub fn new(logits: Tensor, confidence: Vec<f64>, schema: MaskDict) -> Result<Self> {
        if logits.row_len() != schema.len() {
            return Err(Error::invalid(format!(
                "logit width {} does not match schema size {}",
                logits.row_len(),
                schema.len()
            )));
        }
        Ok(Self {
            logits,
            confidence,
            schema,
        })
    }

    /// Scalars this upload moves: logits, confidence, and the mask dict.
    pub fn scalar_count(&self) -> u64 {
        (self.logits.len() + self.confidence.len() + self.schema.len()) as u64
    }
}

/// Scatter a narrow upload into the global label space: position
/// `(x, g)` receives `logits(x, local(g))` for held classes and exactly 0
/// everywhere else.
pub fn unmask_logits(upload: &ClientUploadMh, n_global_classes: usize) -> Result<Tensor> {
    if upload.schema.max_global() >= n_global_classes {
        return Err(Error::invalid(format!(
            "schema class {} exceeds global class count {n_global_classes}",
            upload.schema.max_global()
        )));
    }
    let n = upload.logits.n_rows();
    let k = upload.schema.len();
    let mut out = vec![0.0; n * n_global_classes];
    for s in 0..n {
        let row = upload.logits.row(s);
        let dst = &mut out[s * n_global_classes..(s + 1) * n_global_classes];
        for local in 0..k {
            dst[upload.schema.class_list()[local]] = row[local];
        }
    }
    Tensor::new(vec![n, n_global_classes], out)
}

/// Aggregate heterogeneous uploads per-class over only the clients that hold
/// the class, renormalizing their confidence weights within each class.
pub fn aggregate_holders_only(
    uploads: &[ClientUploadMh],
    conf: &ConfidenceMatrix,
    n_global_classes: usize,
) -> Result<Tensor> {
    if uploads.len() != conf.n_clients() {
        return Err(Error::invalid(format!(
            "{} uploads vs {} confidence columns",
            uploads.len(),
            conf.n_clients()
        )));
    }
    let n = conf.n_samples();
    let mut out = vec![0.0; n * n_global_classes];
    let w = conf.weights();
    for g in 0..n_global_classes {
        let holders: Vec<(usize, usize)> = uploads
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.schema.local_of(g).map(|local| (i, local)))
            .collect();
        if holders.is_empty() {
            continue;
        }
        for s in 0..n {
            let denom: f64 = holders.iter().map(|&(i, _)| w.row(s)[i]).sum();
            if denom <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for &(i, local) in &holders {
                acc += w.row(s)[i] / denom * uploads[i].logits.row(s)[local];
            }
            out[s * n_global_classes + g] = acc;
        }
    }
    Tensor::new(vec![n, n_global_classes], out)
}

/// The server half of DL-MH: unmask every upload, normalize confidence,
/// aggregate into Y_g.
pub fn server_aggregate(
    uploads: &[ClientUploadMh],
    temperature: f64,
    n_global_classes: usize,
    mode: AggregateMode,
) -> Result<(ConfidenceMatrix, Tensor)> {
    let raw: Vec<Vec<f64>> = uploads.iter().map(|u| u.confidence.clone()).collect();
    let conf = normalize_confidence(&raw, temperature).stage("confidence")?;
    let y_g = match mode {
        AggregateMode::ZeroFill => {
            let mut wide = Vec::with_capacity(uploads.len());
            for u in uploads {
                wide.push(ClientUploadSh {
                    logits: unmask_logits(u, n_global_classes).stage("unmask")?,
                    confidence: u.confidence.clone(),
                });
            }
            aggregate_weighted(&wide, &conf).stage("aggregate")?
        }
        AggregateMode::HoldersOnly => {
            aggregate_holders_only(uploads, &conf, n_global_classes).stage("aggregate")?
        }
    };
    Ok((conf, y_g))
}

/// Everything the DL-MH pipeline produces, kept so the incentive extension
/// can pick up where it left off.
pub(crate) struct DlmhState {
    pub clients: Vec<DlmhClient>,
    pub global: TrainedModel,
    pub y_g: Tensor,
    pub bundle: crate::harness::DataBundle,
    pub transcript: Transcript,
    pub metrics: Vec<MetricsRecord>,
    pub costs: Vec<CommCostReport>,
    pub run_id: String,
}

pub(crate) struct DlmhClient {
    pub model: TrainedModel,
    pub schema: MaskDict,
    pub data_classes: Vec<usize>,
}

pub(crate) fn run_dlmh_state(config: &ExperimentConfig, protocol: &str) -> Result<DlmhState> {
    let bundle = prepare_data(config)?;
    let n_classes = bundle.n_classes();
    let scheme = config.scheme.to_scheme(n_classes);
    let parts = partition(&bundle.pool, &scheme, config.master_seed).stage("partition")?;

    let run_id = config.fingerprint();
    let mut metrics = Vec::new();
    let mut transcript = Transcript::default();
    let mut uploads: Vec<ClientUploadMh> = Vec::new();
    let mut clients = Vec::new();
    let mut costs = Vec::new();

    for (i, part) in parts.iter().enumerate() {
        let data_classes = part.classes_present();
        let schema = match config.model.client_head {
            HeadMode::Data => build_mask_dict(&data_classes).stage("mask-dict")?,
            HeadMode::Full => MaskDict::identity(n_classes).stage("mask-dict")?,
        };
        let local = remap_local_labels(part, &schema).stage("remap")?;
        let spec = build_model_spec(
            config.model.client.for_client(i),
            bundle.feature_dim(),
            schema.len(),
            config.model.hidden,
        )?;
        let train_seed = derive_seed(config.master_seed, "client-train", i as u64);
        let pcfg = ClientPipelineCfg {
            epochs: config.train.epochs,
            embed_epochs: config.train.embed_epochs,
            learning_rate: config.train.learning_rate,
            batch_size: config.train.batch_size,
            balance_ratio: config.train.balance_ratio,
            train_seed,
            embed_seed: derive_seed(config.master_seed, "client-embed", i as u64),
            subsample_seed: derive_seed(config.master_seed, "client-subsample", i as u64),
        };
        let art = client_pipeline(&local, &spec, &bundle.x_dist, &pcfg)?;
        let upload = ClientUploadMh::new(art.logits.clone(), art.confidence.clone(), schema.clone())?;
        transcript.record(Direction::Upload, i, "upload", upload.scalar_count());
        costs.push(CommCostReport::dlmh(
            bundle.x_dist.len() as u64,
            schema.len() as u64,
            bundle.x_dist.len() as u64,
            schema.len() as u64,
            1,
        ));
        metrics.push(MetricsRecord {
            run_id: run_id.clone(),
            protocol: protocol.into(),
            stage: "client".into(),
            entity: format!("client-{i}"),
            metric: "final_train_loss".into(),
            value: *art.model.loss_history().last().unwrap(),
            seed: train_seed,
        });
        uploads.push(upload);
        clients.push(DlmhClient {
            model: art.model,
            schema,
            data_classes,
        });
    }

    let (_conf, y_g) = server_aggregate(
        &uploads,
        config.train.temperature,
        n_classes,
        config.train.aggregate_mode,
    )?;
    let dset = GlobalDistillSet::new(bundle.x_dist.clone(), y_g.clone())?;
    let global_spec = build_model_spec(
        config.model.global,
        bundle.feature_dim(),
        n_classes,
        config.model.hidden,
    )?;
    let server_seed = derive_seed(config.master_seed, "server-distill", 0);
    let global = server_distill(
        &global_spec,
        &dset,
        &TrainConfig {
            epochs: config.train.global_epochs,
            learning_rate: config.train.learning_rate,
            batch_size: config.train.batch_size,
            seed: server_seed,
        },
    )?;

    let mut acc_sum = 0.0;
    for (i, client) in clients.iter().enumerate() {
        let train_seed = derive_seed(config.master_seed, "client-train", i as u64);
        let acc = crate::harness::accuracy_via_schema(&client.model, &bundle.test, &client.schema)
            .stage("evaluate")?;
        acc_sum += acc;
        let mut rows = vec![("accuracy_full", acc)];
        let own_subset = bundle
            .test
            .filter_by_classes(&client.data_classes)
            .stage("evaluate")?;
        if !own_subset.is_empty() {
            rows.push((
                "accuracy_own",
                crate::harness::accuracy_via_schema(&client.model, &own_subset, &client.schema)
                    .stage("evaluate")?,
            ));
            rows.push((
                "global_accuracy_own",
                nn::accuracy(&global, &own_subset).stage("evaluate")?,
            ));
        }
        for (name, value) in rows {
            metrics.push(MetricsRecord {
                run_id: run_id.clone(),
                protocol: protocol.into(),
                stage: "evaluate".into(),
                entity: format!("client-{i}"),
                metric: name.into(),
                value,
                seed: train_seed,
            });
        }
    }
    let global_acc = nn::accuracy(&global, &bundle.test).stage("evaluate")?;
    metrics.push(MetricsRecord {
        run_id: run_id.clone(),
        protocol: protocol.into(),
        stage: "evaluate".into(),
        entity: "clients-avg".into(),
        metric: "accuracy_full".into(),
        value: acc_sum / clients.len() as f64,
        seed: config.master_seed,
    });
    metrics.push(MetricsRecord {
        run_id: run_id.clone(),
        protocol: protocol.into(),
        stage: "evaluate".into(),
        entity: "global".into(),
        metric: "accuracy".into(),
        value: global_acc,
        seed: server_seed,
    });
    let total: u64 = costs.iter().map(|c| c.total).sum();
    metrics.push(MetricsRecord {
        run_id: run_id.clone(),
        protocol: protocol.into(),
        stage: "cost".into(),
        entity: "global".into(),
        metric: "comm_cost_total".into(),
        value: total as f64,
        seed: config.master_seed,
    });

    Ok(DlmhState {
        clients,
        global,
        y_g,
        bundle,
        transcript,
        metrics,
        costs,
        run_id,
    })
}

/// Run the whole DL-MH pipeline for a config.
pub fn run_dlmh(config: &ExperimentConfig) -> Result<RunOutcome> {
    let state = run_dlmh_state(config, "dlmh")?;
    Ok(RunOutcome {
        metrics: state.metrics,
        transcript: state.transcript,
        costs: state.costs,
        y_g: Some(state.y_g),
    })
}
