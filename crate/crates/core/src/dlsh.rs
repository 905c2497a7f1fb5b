//! DL-SH: one-round distillation under statistical heterogeneity.
//!
//! Each client trains locally, trains a binary classifier that tells its own
//! data apart from the public distillation pool, and uploads its logits over
//! X_dist together with the classifier's per-sample confidence scores. The
//! server normalizes confidence across clients with a temperature softmax,
//! takes the confidence-weighted sum of client logits as distillation
//! targets, and trains the global model once.

use rand::seq::index::sample as index_sample;

use crate::commcost::CommCostReport;
use crate::config::{build_model_spec, ExperimentConfig};
use crate::data::{partition, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result, StageExt};
use crate::harness::{prepare_data, Direction, MetricsRecord, RunOutcome, Transcript};
use crate::nn::{
    self, forward, replace_head, soft_train, softmax_t, train, ModelSpec, TrainConfig,
    TrainedModel,
};
use crate::seed::{derive_seed, rng_from};
use crate::tensor::Tensor;

/// One client's upload: logits over X_dist plus raw confidence scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUploadSh {
    /// `|X_dist| x n_classes` logits.
    pub logits: Tensor,
    /// Raw binary-classifier scores, one per X_dist sample, before
    /// cross-client normalization.
    pub confidence: Vec<f64>,
}

impl ClientUploadSh {
    /// Scalars this upload moves over the wire.
    pub fn scalar_count(&self) -> u64 {
        (self.logits.len() + self.confidence.len()) as u64
    }
}

/// Cross-client normalized confidence weights, `|X_dist| x n_clients`.
/// Every row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    weights: Tensor,
}

impl ConfidenceMatrix {
    pub fn new(weights: Tensor) -> Result<Self> {
        for i in 0..weights.n_rows() {
            let row = weights.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "confidence row {i} sums to {sum}, expected 1"
                )));
            }
            if let Some(&bad) = row.iter().find(|&&w| !(0.0..=1.0).contains(&w)) {
                return Err(Error::invalid(format!(
                    "confidence row {i} has weight {bad} outside [0, 1]"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn n_samples(&self) -> usize {
        self.weights.n_rows()
    }

    pub fn n_clients(&self) -> usize {
        self.weights.row_len()
    }
}

/// The global model's distillation dataset: X_dist plus aggregated targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDistillSet {
    pub x_dist: UnlabeledDataset,
    /// `|X_dist| x n_classes` aggregated logits Y_g.
    pub y_g: Tensor,
}

impl GlobalDistillSet {
    pub fn new(x_dist: UnlabeledDataset, y_g: Tensor) -> Result<Self> {
        if x_dist.len() != y_g.n_rows() {
            return Err(Error::invalid(format!(
                "{} distillation samples vs {} target rows",
                x_dist.len(),
                y_g.n_rows()
            )));
        }
        Ok(Self { x_dist, y_g })
    }
}

/// Local training of one client model.
pub fn client_local_train(
    client_data: &LabeledDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let init = TrainedModel::init(spec.clone(), cfg.seed).stage("client-local-train")?;
    train(&init, client_data, cfg).stage("client-local-train")
}

/// Concatenate client samples (label 0) with public samples (label 1) into
/// the binary classifier's training set. Client block first.
pub fn build_embed_dataset(
    client_x: &Tensor,
    x_dist: &UnlabeledDataset,
) -> Result<LabeledDataset> {
    if client_x.row_len() != x_dist.feature_dim() {
        return Err(Error::invalid(format!(
            "client features have width {}, public features {}",
            client_x.row_len(),
            x_dist.feature_dim()
        )));
    }
    if client_x.n_rows() == 0 || x_dist.is_empty() {
        return Err(Error::invalid(
            "embed dataset needs both client and public samples",
        ));
    }
    let mut data = Vec::with_capacity((client_x.n_rows() + x_dist.len()) * client_x.row_len());
    data.extend_from_slice(client_x.data());
    data.extend_from_slice(x_dist.features().data());
    let mut labels = vec![0usize; client_x.n_rows()];
    labels.extend(std::iter::repeat_n(1, x_dist.len()));
    LabeledDataset::new(
        Tensor::new(vec![client_x.n_rows() + x_dist.len(), client_x.row_len()], data)?,
        labels,
        2,
    )
}

/// Swap the client model's head for a 2-node layer and train it to separate
/// client data (label 0) from public data (label 1).
pub fn train_binary_classifier(
    client_model: &TrainedModel,
    embed: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let present = embed.classes_present();
    if present != vec![0, 1] {
        return Err(Error::invalid(format!(
            "embed dataset must hold both labels, found {present:?}"
        )));
    }
    let classifier = replace_head(client_model, 2, cfg.seed).stage("binary-classifier")?;
    train(&classifier, embed, cfg).stage("binary-classifier")
}

/// Per-sample "belongs to client data" score: the softmax probability of
/// label 0 under the binary classifier. Always in (0, 1).
pub fn raw_confidence(classifier: &TrainedModel, x_dist: &UnlabeledDataset) -> Result<Vec<f64>> {
    if classifier.output_dim() != 2 {
        return Err(Error::invalid(format!(
            "confidence needs a 2-node head, got {}",
            classifier.output_dim()
        )));
    }
    let logits = forward(classifier, x_dist.features())?;
    let mut scores = Vec::with_capacity(logits.n_rows());
    for i in 0..logits.n_rows() {
        scores.push(softmax_t(logits.row(i), 1.0)?[0]);
    }
    Ok(scores)
}

/// Normalize raw per-client confidence scores across the client axis with a
/// temperature softmax: every X_dist sample's weights sum to 1.
pub fn normalize_confidence(raw: &[Vec<f64>], temperature: f64) -> Result<ConfidenceMatrix> {
    if raw.is_empty() {
        return Err(Error::invalid("no clients reported confidence"));
    }
    let n = raw[0].len();
    if let Some((i, bad)) = raw.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::invalid(format!(
            "client {i} reported {} scores, expected {n}",
            bad.len()
        )));
    }
    let clients = raw.len();
    let mut data = Vec::with_capacity(n * clients);
    let mut sample_scores = vec![0.0; clients];
    for s in 0..n {
        for (c, scores) in raw.iter().enumerate() {
            sample_scores[c] = scores[s];
        }
        data.extend(softmax_t(&sample_scores, temperature)?);
    }
    ConfidenceMatrix::new(Tensor::new(vec![n, clients], data)?)
}

/// Confidence-weighted sum of client logits:
/// `Y_g(x, c) = sum_i conf(x, i) * logits_i(x, c)`.
pub fn aggregate_weighted(uploads: &[ClientUploadSh], conf: &ConfidenceMatrix) -> Result<Tensor> {
    if uploads.is_empty() {
        return Err(Error::invalid("no uploads to aggregate"));
    }
    if uploads.len() != conf.n_clients() {
        return Err(Error::invalid(format!(
            "{} uploads vs {} confidence columns",
            uploads.len(),
            conf.n_clients()
        )));
    }
    let n = conf.n_samples();
    let width = uploads[0].logits.row_len();
    for (i, u) in uploads.iter().enumerate() {
        if u.logits.n_rows() != n || u.confidence.len() != n {
            return Err(Error::invalid(format!(
                "upload {i} covers {} samples, expected {n}",
                u.logits.n_rows()
            )));
        }
        if u.logits.row_len() != width {
            return Err(Error::invalid(format!(
                "upload {i} has logit width {}, expected {width}",
                u.logits.row_len()
            )));
        }
    }
    let w = conf.weights();
    let mut out = vec![0.0; n * width];
    for (i, u) in uploads.iter().enumerate() {
        for s in 0..n {
            let weight = w.row(s)[i];
            let row = u.logits.row(s);
            let dst = &mut out[s * width..(s + 1) * width];
            for (d, &v) in dst.iter_mut().zip(row) {
                *d += weight * v;
            }
        }
    }
    Tensor::new(vec![n, width], out)
}

/// One-shot global distillation on `(X_dist, Y_g)`.
///
/// Y_g rows are logits; they are softened into distributions with a
/// plain softmax before the cross-entropy fit.
pub fn server_distill(
    global_spec: &ModelSpec,
    dset: &GlobalDistillSet,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if dset.y_g.row_len() != global_spec.output_dim() {
        return Err(Error::invalid(format!(
            "Y_g rows have width {}, global head expects {}",
            dset.y_g.row_len(),
            global_spec.output_dim()
        )));
    }
    let targets = softmax_rows(&dset.y_g)?;
    let init = TrainedModel::init(global_spec.clone(), cfg.seed).stage("server-distill")?;
    soft_train(&init, dset.x_dist.features(), &targets, cfg).stage("server-distill")
}

/// Row-wise softmax at temperature 1.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(logits.len());
    for i in 0..logits.n_rows() {
        data.extend(softmax_t(logits.row(i), 1.0)?);
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), data))
}

/// Per-client derived seeds and shared training knobs for the client side.
pub(crate) struct ClientPipelineCfg {
    pub epochs: usize,
    pub embed_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub balance_ratio: f64,
    pub train_seed: u64,
    pub embed_seed: u64,
    pub subsample_seed: u64,
}

pub(crate) struct ClientArtifacts {
    pub model: TrainedModel,
    pub logits: Tensor,
    pub confidence: Vec<f64>,
}

/// The full client-side sequence: local training, balanced embed set,
/// binary classifier, confidence scores and logits over X_dist.
pub(crate) fn client_pipeline(
    data: &LabeledDataset,
    spec: &ModelSpec,
    x_dist: &UnlabeledDataset,
    cfg: &ClientPipelineCfg,
) -> Result<ClientArtifacts> {
    if data.is_empty() {
        return Err(Error::invalid("client dataset is empty").at_stage("client-local-train"));
    }
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        seed: cfg.train_seed,
    };
    let model = client_local_train(data, spec, &train_cfg)?;

    // Cap the public block so the binary task is not hopelessly unbalanced.
    let cap = ((cfg.balance_ratio * data.len() as f64).ceil() as usize).max(1);
    let public = if x_dist.len() > cap {
        let mut rng = rng_from(cfg.subsample_seed);
        let mut idx: Vec<usize> = index_sample(&mut rng, x_dist.len(), cap).into_vec();
        idx.sort_unstable();
        x_dist.subset(&idx)?
    } else {
        x_dist.clone()
    };
    let embed = build_embed_dataset(data.features(), &public).stage("embed")?;
    let embed_cfg = TrainConfig {
        epochs: cfg.embed_epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        seed: cfg.embed_seed,
    };
    let classifier = train_binary_classifier(&model, &embed, &embed_cfg)?;
    let confidence = raw_confidence(&classifier, x_dist).stage("confidence")?;
    let logits = forward(&model, x_dist.features()).stage("client-logits")?;
    Ok(ClientArtifacts {
        model,
        logits,
        confidence,
    })
}

/// Run the whole DL-SH pipeline for a config.
pub fn run_dlsh(config: &ExperimentConfig) -> Result<RunOutcome> {
    let bundle = prepare_data(config)?;
    let n_classes = bundle.n_classes();
    let scheme = config.scheme.to_scheme(n_classes);
    let parts = partition(&bundle.pool, &scheme, config.master_seed).stage("partition")?;

    let run_id = config.fingerprint();
    let mut metrics = Vec::new();
    let mut transcript = Transcript::default();
    let mut uploads = Vec::new();
    let mut client_models = Vec::new();
    let mut raw_scores = Vec::new();

    for (i, part) in parts.iter().enumerate() {
        let spec = build_model_spec(
            config.model.client.for_client(i),
            bundle.feature_dim(),
            n_classes,
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
        let art = client_pipeline(part, &spec, &bundle.x_dist, &pcfg)?;
        let upload = ClientUploadSh {
            logits: art.logits.clone(),
            confidence: art.confidence.clone(),
        };
        transcript.record(Direction::Upload, i, "upload", upload.scalar_count());
        metrics.push(MetricsRecord {
            run_id: run_id.clone(),
            protocol: "dlsh".into(),
            stage: "client".into(),
            entity: format!("client-{i}"),
            metric: "final_train_loss".into(),
            value: *art.model.loss_history().last().unwrap(),
            seed: train_seed,
        });
        raw_scores.push(art.confidence.clone());
        uploads.push(upload);
        client_models.push(art.model);
    }

    let conf = normalize_confidence(&raw_scores, config.train.temperature).stage("confidence")?;
    let y_g = aggregate_weighted(&uploads, &conf).stage("aggregate")?;
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

    // Evaluation: per-client full-test and own-classes accuracy, their mean,
    // global accuracy, and the global model restricted to each client's classes.
    let mut acc_sum = 0.0;
    for (i, (model, part)) in client_models.iter().zip(&parts).enumerate() {
        let train_seed = derive_seed(config.master_seed, "client-train", i as u64);
        let acc = nn::accuracy(model, &bundle.test).stage("evaluate")?;
        acc_sum += acc;
        let mut rows = vec![("accuracy_full", acc)];
        let own_subset = bundle
            .test
            .filter_by_classes(&part.classes_present())
            .stage("evaluate")?;
        // A degenerate holdout can miss a client's classes entirely; the
        // own-class metrics are then simply not emitted.
        if !own_subset.is_empty() {
            rows.push(("accuracy_own", nn::accuracy(model, &own_subset).stage("evaluate")?));
            rows.push((
                "global_accuracy_own",
                nn::accuracy(&global, &own_subset).stage("evaluate")?,
            ));
        }
        for (name, value) in rows {
            metrics.push(MetricsRecord {
                run_id: run_id.clone(),
                protocol: "dlsh".into(),
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
        protocol: "dlsh".into(),
        stage: "evaluate".into(),
        entity: "clients-avg".into(),
        metric: "accuracy_full".into(),
        value: acc_sum / parts.len() as f64,
        seed: config.master_seed,
    });
    metrics.push(MetricsRecord {
        run_id: run_id.clone(),
        protocol: "dlsh".into(),
        stage: "evaluate".into(),
        entity: "global".into(),
        metric: "accuracy".into(),
        value: global_acc,
        seed: server_seed,
    });

    let cost = CommCostReport::dlsh(
        bundle.x_dist.len() as u64,
        n_classes as u64,
        bundle.x_dist.len() as u64,
        parts.len() as u64,
    );
    metrics.push(MetricsRecord {
        run_id,
        protocol: "dlsh".into(),
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
        y_g: Some(y_g),
    })
}
