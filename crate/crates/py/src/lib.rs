//! Python bindings: the main simulator types and operations, plus a
//! one-call experiment runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fedistill::config::parse_config;
use fedistill::data::{
    class_probability_vector, synth_blobs, PartitionKind, PartitionScheme,
};
use fedistill::dlmh;
use fedistill::dlsh;
use fedistill::harness;
use fedistill::idlmh;
use fedistill::nn::{self, Activation, ModelSpec, TrainConfig, TrainedModel};
use fedistill::Tensor;

fn py_err(e: fedistill::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor_from_rows(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(py_err)
}

fn rows_from_tensor(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.n_rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Temperature softmax of one row.
#[pyfunction]
fn softmax_t(values: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    nn::softmax_t(&values, temperature).map_err(py_err)
}

#[pyfunction]
fn cost_generic(
    hidden_features: u64,
    logits_server: u64,
    logits_client: u64,
    dataset_size: u64,
    rounds: u64,
    clients: u64,
) -> u64 {
    fedistill::commcost::cost_generic(
        hidden_features,
        logits_server,
        logits_client,
        dataset_size,
        rounds,
        clients,
    )
}

#[pyfunction]
fn cost_fedavg(params_server: u64, params_client: u64, rounds: u64, clients: u64) -> u64 {
    fedistill::commcost::cost_fedavg(params_server, params_client, rounds, clients)
}

#[pyfunction]
fn cost_dlsh(x_dist_size: u64, logit_width: u64, conf_size: u64, clients: u64) -> u64 {
    fedistill::commcost::cost_dlsh(x_dist_size, logit_width, conf_size, clients)
}

#[pyfunction]
fn cost_dlmh(
    x_dist_size: u64,
    logit_width: u64,
    conf_size: u64,
    mask_size: u64,
    clients: u64,
) -> u64 {
    fedistill::commcost::cost_dlmh(x_dist_size, logit_width, conf_size, mask_size, clients)
}

#[pyfunction]
fn cost_idlmh_incremental(x_dist_size: u64, client_logit_width: u64, clients: u64) -> u64 {
    fedistill::commcost::cost_idlmh_incremental(x_dist_size, client_logit_width, clients)
}

/// CSV table of costs per per-client class count: `classes,fedavg,dlsh,dlmh`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn cost_sweep_csv(
    class_counts: Vec<u64>,
    x_dist_size: u64,
    full_logit_width: u64,
    conf_size: u64,
    params: u64,
    rounds: u64,
    clients: u64,
) -> PyResult<String> {
    let fixed = fedistill::commcost::SweepOperands {
        x_dist_size,
        full_logit_width,
        conf_size,
        params_server: params,
        params_client: params,
        rounds,
        n_clients: clients,
    };
    let rows = fedistill::commcost::cost_sweep(&class_counts, &fixed).map_err(py_err)?;
    Ok(fedistill::commcost::sweep_csv(&rows))
}

fn parse_kind(kind: &str) -> PyResult<PartitionKind> {
    match kind {
        "iid" => Ok(PartitionKind::Iid),
        "niid1" => Ok(PartitionKind::Niid1),
        "niid2" => Ok(PartitionKind::Niid2),
        "niid3" => Ok(PartitionKind::Niid3),
        other => Err(PyValueError::new_err(format!("unknown scheme {other}"))),
    }
}

/// Per-client class probabilities under a partition scheme.
#[pyfunction]
fn class_probabilities(
    kind: &str,
    n_clients: usize,
    n_classes: usize,
    client: usize,
) -> PyResult<Vec<f64>> {
    let scheme = PartitionScheme {
        kind: parse_kind(kind)?,
        n_clients,
        n_classes,
        samples_per_client: 1,
    };
    Ok(class_probability_vector(&scheme, client)
        .map_err(py_err)?
        .probs()
        .to_vec())
}

/// Seeded Gaussian-blob dataset as `(features, labels)`.
#[pyfunction]
fn make_blobs(
    n_classes: usize,
    n_per_class: usize,
    feature_dim: usize,
    spread: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = synth_blobs(n_classes, n_per_class, feature_dim, spread, seed).map_err(py_err)?;
    Ok((rows_from_tensor(ds.features()), ds.labels().to_vec()))
}

/// A client's local-to-global label mapping.
#[pyclass(name = "MaskDict", from_py_object)]
#[derive(Clone)]
struct PyMaskDict {
    inner: dlmh::MaskDict,
}

#[pymethods]
impl PyMaskDict {
    /// Build from the global classes present in a client's data.
    #[new]
    fn new(labels_present: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: dlmh::build_mask_dict(&labels_present).map_err(py_err)?,
        })
    }

    /// Ordered `(local, global)` pairs.
    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.pairs()
    }

    fn class_list(&self) -> Vec<usize> {
        self.inner.class_list().to_vec()
    }

    fn local_of(&self, global: usize) -> Option<usize> {
        self.inner.local_of(global)
    }

    fn global_of(&self, local: usize) -> Option<usize> {
        self.inner.global_of(local)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("MaskDict({:?})", self.inner.class_list())
    }
}

/// Scatter local-space logits into the global label space (zeros elsewhere).
#[pyfunction]
fn unmask_logits(
    logits: Vec<Vec<f64>>,
    schema: PyMaskDict,
    n_global_classes: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let upload = dlmh::ClientUploadMh::new(
        tensor_from_rows(&logits)?,
        vec![0.0; logits.len()],
        schema.inner,
    )
    .map_err(py_err)?;
    Ok(rows_from_tensor(
        &dlmh::unmask_logits(&upload, n_global_classes).map_err(py_err)?,
    ))
}

/// Reassign each row's max logit to the nearest class in `client_classes`.
#[pyfunction]
fn transform_logits_for_client(
    server_logits: Vec<Vec<f64>>,
    client_classes: Vec<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let t = idlmh::transform_logits_for_client(&tensor_from_rows(&server_logits)?, &client_classes)
        .map_err(py_err)?;
    Ok(rows_from_tensor(&t))
}

/// Cross-client temperature-softmax normalization of raw confidence scores.
#[pyfunction]
fn normalize_confidence(raw: Vec<Vec<f64>>, temperature: f64) -> PyResult<Vec<Vec<f64>>> {
    let conf = dlsh::normalize_confidence(&raw, temperature).map_err(py_err)?;
    Ok(rows_from_tensor(conf.weights()))
}

/// Confidence-weighted aggregation of client logits into Y_g.
#[pyfunction]
fn aggregate_weighted(
    logits_per_client: Vec<Vec<Vec<f64>>>,
    raw_confidence: Vec<Vec<f64>>,
    temperature: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let uploads: Vec<dlsh::ClientUploadSh> = logits_per_client
        .iter()
        .zip(&raw_confidence)
        .map(|(logits, conf)| {
            Ok(dlsh::ClientUploadSh {
                logits: tensor_from_rows(logits)?,
                confidence: conf.clone(),
            })
        })
        .collect::<PyResult<_>>()?;
    let conf = dlsh::normalize_confidence(&raw_confidence, temperature).map_err(py_err)?;
    let y_g = dlsh::aggregate_weighted(&uploads, &conf).map_err(py_err)?;
    Ok(rows_from_tensor(&y_g))
}

/// A dense feed-forward model with manual-backprop SGD training.
#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
}

fn activation_from(name: &str) -> PyResult<Activation> {
    match name {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        "sigmoid" => Ok(Activation::Sigmoid),
        other => Err(PyValueError::new_err(format!("unknown activation {other}"))),
    }
}

fn train_cfg(epochs: usize, learning_rate: f64, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seed,
    }
}

#[pymethods]
impl PyModel {
    /// Seeded multi-layer perceptron: `input_dim -> hidden.. -> output_dim`.
    #[staticmethod]
    #[pyo3(signature = (input_dim, hidden, output_dim, seed, activation = "tanh"))]
    fn mlp(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        seed: u64,
        activation: &str,
    ) -> PyResult<Self> {
        let spec = ModelSpec::mlp(input_dim, &hidden, output_dim, activation_from(activation)?)
            .map_err(py_err)?;
        Ok(Self {
            inner: TrainedModel::init(spec, seed).map_err(py_err)?,
        })
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    /// Raw logits for a batch of feature rows.
    fn forward(&self, batch: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = nn::forward(&self.inner, &tensor_from_rows(&batch)?).map_err(py_err)?;
        Ok(rows_from_tensor(&out))
    }

    /// SGD on hard labels; returns a new model.
    #[pyo3(signature = (features, labels, n_classes, epochs, seed, learning_rate = 0.01, batch_size = 32))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
        epochs: usize,
        seed: u64,
        learning_rate: f64,
        batch_size: usize,
    ) -> PyResult<Self> {
        let data = fedistill::data::LabeledDataset::new(
            tensor_from_rows(&features)?,
            labels,
            n_classes,
        )
        .map_err(py_err)?;
        let trained = nn::train(
            &self.inner,
            &data,
            &train_cfg(epochs, learning_rate, batch_size, seed),
        )
        .map_err(py_err)?;
        Ok(Self { inner: trained })
    }

    /// Distillation on soft target rows; returns a new model.
    #[pyo3(signature = (features, soft_targets, epochs, seed, learning_rate = 0.01, batch_size = 32))]
    fn soft_train(
        &self,
        features: Vec<Vec<f64>>,
        soft_targets: Vec<Vec<f64>>,
        epochs: usize,
        seed: u64,
        learning_rate: f64,
        batch_size: usize,
    ) -> PyResult<Self> {
        let trained = nn::soft_train(
            &self.inner,
            &tensor_from_rows(&features)?,
            &tensor_from_rows(&soft_targets)?,
            &train_cfg(epochs, learning_rate, batch_size, seed),
        )
        .map_err(py_err)?;
        Ok(Self { inner: trained })
    }

    /// Fresh head of the given width; earlier layers keep their parameters.
    fn replace_head(&self, new_output_dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: nn::replace_head(&self.inner, new_output_dim, seed).map_err(py_err)?,
        })
    }

    fn accuracy(
        &self,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> PyResult<f64> {
        let data = fedistill::data::LabeledDataset::new(
            tensor_from_rows(&features)?,
            labels,
            n_classes,
        )
        .map_err(py_err)?;
        nn::accuracy(&self.inner, &data).map_err(py_err)
    }

    fn loss_history(&self) -> Vec<f64> {
        self.inner.loss_history().to_vec()
    }
}

/// Run a full experiment from TOML config text. Returns the metrics records
/// as a JSON array string; optionally writes metrics.jsonl and summary.csv.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir = None))]
fn run_experiment(config_toml: &str, out_dir: Option<&str>) -> PyResult<String> {
    let config = parse_config(config_toml).map_err(py_err)?;
    let outcome = harness::run(&config).map_err(py_err)?;
    if let Some(dir) = out_dir {
        harness::write_outputs(&outcome, std::path::Path::new(dir)).map_err(py_err)?;
    }
    serde_json::to_string(&outcome.metrics)
        .map_err(|e| PyValueError::new_err(format!("serialize metrics: {e}")))
}

#[pymodule]
fn fedistill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(softmax_t, m)?)?;
    m.add_function(wrap_pyfunction!(cost_generic, m)?)?;
    m.add_function(wrap_pyfunction!(cost_fedavg, m)?)?;
    m.add_function(wrap_pyfunction!(cost_dlsh, m)?)?;
    m.add_function(wrap_pyfunction!(cost_dlmh, m)?)?;
    m.add_function(wrap_pyfunction!(cost_idlmh_incremental, m)?)?;
    m.add_function(wrap_pyfunction!(cost_sweep_csv, m)?)?;
    m.add_function(wrap_pyfunction!(class_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(make_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(unmask_logits, m)?)?;
    m.add_function(wrap_pyfunction!(transform_logits_for_client, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_weighted, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyMaskDict>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
