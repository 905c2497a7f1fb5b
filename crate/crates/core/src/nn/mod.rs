//! Minimal neural-network engine.
//!
//! Dense and small convolutional models with manual backpropagation and
//! plain SGD — just enough to train client, binary-classifier and global
//! models at desk scale. Models are immutable values: training returns a
//! new model and never mutates its input.

mod engine;

use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::tensor::Tensor;

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed in terms of the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// One layer of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// Fully connected layer over a flat input.
    Dense { units: usize },
    /// 2-D convolution, stride 1, no padding; input shape `[h, w, c]`.
    Conv { filters: usize, kernel: usize },
    Activation(Activation),
    Flatten,
}

/// Architecture description: input shape plus an ordered layer list.
///
/// The final layer must be `Dense`; its width is the model's output
/// dimension (the count of target nodes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input_shape,
            layers,
        };
        spec.layer_shapes()?;
        Ok(spec)
    }

    /// Dense multi-layer perceptron: `input_dim -> hidden.. -> output_dim`,
    /// with the given activation between consecutive dense layers.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Activation(activation));
        }
        layers.push(LayerSpec::Dense { units: output_dim });
        Self::new(vec![input_dim], layers)
    }

    /// Single conv block followed by a dense head; input `[h, w, c]`.
    pub fn conv_net(
        input_shape: [usize; 3],
        conv_blocks: &[(usize, usize)],
        dense_hidden: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for &(filters, kernel) in conv_blocks {
            layers.push(LayerSpec::Conv { filters, kernel });
            layers.push(LayerSpec::Activation(activation));
        }
        layers.push(LayerSpec::Flatten);
        for &h in dense_hidden {
            layers.push(LayerSpec::Dense { units: h });
            layers.push(LayerSpec::Activation(activation));
        }
        layers.push(LayerSpec::Dense { units: output_dim });
        Self::new(input_shape.to_vec(), layers)
    }

    /// Width of the final dense layer.
    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) => *units,
            _ => 0,
        }
    }

    /// Flat input width the model expects.
    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Same architecture with a different head width.
    pub fn with_output_dim(&self, output_dim: usize) -> Result<Self> {
        let mut layers = self.layers.clone();
        match layers.last_mut() {
            Some(LayerSpec::Dense { units }) => *units = output_dim,
            _ => return Err(Error::Internal("model spec has no dense head".into())),
        }
        Self::new(self.input_shape.clone(), layers)
    }

    /// Shapes flowing through the network: `shapes[0]` is the input shape,
    /// `shapes[i + 1]` the output of layer `i`. Validates the whole chain.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "bad input shape {:?}",
                self.input_shape
            )));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense { .. })) {
            return Err(Error::invalid("final layer must be dense"));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let next = match layer {
                LayerSpec::Dense { units } => {
                    if *units == 0 {
                        return Err(Error::invalid(format!("layer {i}: dense width 0")));
                    }
                    if cur.len() != 1 {
                        return Err(Error::invalid(format!(
                            "layer {i}: dense needs a flat input, got {cur:?} (add flatten)"
                        )));
                    }
                    vec![*units]
                }
                LayerSpec::Conv { filters, kernel } => {
                    if *filters == 0 || *kernel == 0 {
                        return Err(Error::invalid(format!("layer {i}: conv size 0")));
                    }
                    if cur.len() != 3 {
                        return Err(Error::invalid(format!(
                            "layer {i}: conv needs an [h, w, c] input, got {cur:?}"
                        )));
                    }
                    let (h, w) = (cur[0], cur[1]);
                    if h < *kernel || w < *kernel {
                        return Err(Error::invalid(format!(
                            "layer {i}: kernel {kernel} larger than input {h}x{w}"
                        )));
                    }
                    vec![h - kernel + 1, w - kernel + 1, *filters]
                }
                LayerSpec::Activation(_) => cur.clone(),
                LayerSpec::Flatten => vec![cur.iter().product()],
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        let mut total = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { units } => total += shapes[i][0] * units + units,
                LayerSpec::Conv { filters, kernel } => {
                    total += kernel * kernel * shapes[i][2] * filters + filters
                }
                _ => {}
            }
        }
        Ok(total)
    }
}

/// Hyperparameters for one SGD training call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate: 0.01,
            batch_size: 32,
            seed,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_batch_size(mut self, b: usize) -> Self {
        self.batch_size = b;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// A model together with its parameters and per-epoch loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    spec: ModelSpec,
    /// Weight and bias tensors in layer order (w then b per parameterized layer).
    params: Vec<Tensor>,
    loss_history: Vec<f64>,
}

impl TrainedModel {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut rng = rng_from(seed);
        let mut params = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { units } => {
                    let fan_in = shapes[i][0];
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let w: Vec<f64> = (0..fan_in * units)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    params.push(Tensor::from_parts(vec![fan_in, *units], w));
                    params.push(Tensor::zeros(vec![*units]));
                }
                LayerSpec::Conv { filters, kernel } => {
                    let c = shapes[i][2];
                    let fan_in = kernel * kernel * c;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let w: Vec<f64> = (0..fan_in * filters)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    params.push(Tensor::from_parts(vec![*kernel, *kernel, c, *filters], w));
                    params.push(Tensor::zeros(vec![*filters]));
                }
                _ => {}
            }
        }
        Ok(Self {
            spec,
            params,
            loss_history: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// All trainable scalars as one flat vector, in parameter-tensor order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.params {
            out.extend_from_slice(p.data());
        }
        out
    }

    /// Rebuild a model of the same spec from a flat parameter vector.
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let expect: usize = self.params.iter().map(Tensor::len).sum();
        if flat.len() != expect {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                expect,
                flat.len()
            )));
        }
        let mut params = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for p in &self.params {
            let chunk = &flat[offset..offset + p.len()];
            params.push(Tensor::new(p.shape().to_vec(), chunk.to_vec())?);
            offset += p.len();
        }
        Ok(Self {
            spec: self.spec.clone(),
            params,
            loss_history: Vec::new(),
        })
    }

    pub(crate) fn replace_params(&mut self, params: Vec<Tensor>) {
        self.params = params;
    }

    pub(crate) fn push_loss(&mut self, loss: f64) {
        self.loss_history.push(loss);
    }
}

/// Raw pre-softmax logits for a batch; shape `batch x output_dim`.
///
/// Each row is computed independently, so batched and row-wise evaluation
/// agree bit for bit.
pub fn forward(model: &TrainedModel, batch: &Tensor) -> Result<Tensor> {
    engine::forward(model, batch)
}

/// Train on hard labels with mini-batch SGD for `cfg.epochs` epochs.
///
/// Batch order is drawn from `cfg.seed`; identical inputs give bit-identical
/// models. Divergence (non-finite loss) is reported with the epoch at which
/// it happened.
pub fn train(model: &TrainedModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let out = model.output_dim();
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= out) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {out}-class head"
        )));
    }
    let targets = one_hot_rows(data.labels(), out);
    engine::sgd(model, data.features(), &targets, cfg)
}

/// Distillation step: minimize categorical cross-entropy of the model's
/// softmax outputs against the given soft target rows.
///
/// Rows must be nonnegative; they are renormalized to sum to 1.
pub fn soft_train(
    model: &TrainedModel,
    inputs: &Tensor,
    soft_targets: &Tensor,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let out = model.output_dim();
    if soft_targets.row_len() != out {
        return Err(Error::invalid(format!(
            "soft target rows have length {}, expected {}",
            soft_targets.row_len(),
            out
        )));
    }
    if inputs.n_rows() != soft_targets.n_rows() {
        return Err(Error::invalid(format!(
            "{} input rows vs {} target rows",
            inputs.n_rows(),
            soft_targets.n_rows()
        )));
    }
    if inputs.n_rows() == 0 {
        return Err(Error::invalid("distillation dataset is empty"));
    }
    let targets = normalize_target_rows(soft_targets)?;
    engine::sgd(model, inputs, &targets, cfg)
}

/// Temperature softmax of one row: `exp(v_j/T) / sum_k exp(v_k/T)`.
///
/// Computed with max-subtraction; the output sums to 1 within 1e-12 and
/// the argmax never changes with `T`.
pub fn softmax_t(values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if values.is_empty() {
        return Err(Error::invalid("softmax of an empty row"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Replace the final dense layer with a freshly initialized
/// `new_output_dim`-node head; all earlier layers keep their parameters.
pub fn replace_head(model: &TrainedModel, new_output_dim: usize, seed: u64) -> Result<TrainedModel> {
    if new_output_dim == 0 {
        return Err(Error::invalid("head width must be >= 1"));
    }
    let spec = model.spec().with_output_dim(new_output_dim)?;
    let fresh = TrainedModel::init(spec, seed)?;
    let mut params = model.params().to_vec();
    let n = params.len();
    // Last two tensors are the head's weight and bias.
    params[n - 2] = fresh.params()[n - 2].clone();
    params[n - 1] = fresh.params()[n - 1].clone();
    let mut out = fresh;
    out.replace_params(params);
    Ok(out)
}

/// Fraction of test samples whose argmax logit equals the label.
/// Ties break toward the lowest class index.
pub fn accuracy(model: &TrainedModel, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let out = model.output_dim();
    if let Some(&bad) = test.labels().iter().find(|&&l| l >= out) {
        return Err(Error::invalid(format!(
            "test label {bad} out of range for {out}-class head"
        )));
    }
    let logits = forward(model, test.features())?;
    let mut correct = 0usize;
    for (i, &label) in test.labels().iter().enumerate() {
        if argmax(logits.row(i)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Index of the row maximum; first occurrence wins.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of the model's softmax outputs against target rows.
pub fn mean_cross_entropy(model: &TrainedModel, inputs: &Tensor, targets: &Tensor) -> Result<f64> {
    let normalized = normalize_target_rows(targets)?;
    let logits = forward(model, inputs)?;
    engine::batch_loss(&logits, &normalized)
}

fn one_hot_rows(labels: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * width];
    for (i, &l) in labels.iter().enumerate() {
        data[i * width + l] = 1.0;
    }
    Tensor::from_parts(vec![labels.len(), width], data)
}

fn normalize_target_rows(targets: &Tensor) -> Result<Tensor> {
    let width = targets.row_len();
    let mut data = Vec::with_capacity(targets.len());
    for i in 0..targets.n_rows() {
        let row = targets.row(i);
        if let Some(&neg) = row.iter().find(|&&v| v < 0.0) {
            return Err(Error::invalid(format!(
                "soft target row {i} has negative entry {neg}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::invalid(format!(
                "soft target row {i} sums to {sum}; cannot normalize"
            )));
        }
        data.extend(row.iter().map(|v| v / sum));
    }
    Ok(Tensor::from_parts(vec![targets.n_rows(), width], data))
}

/// Mean loss and flat analytic gradient of the cross-entropy objective
/// on one batch. Gradient order matches [`TrainedModel::flat_params`].
pub fn loss_and_gradients(
    model: &TrainedModel,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let normalized = normalize_target_rows(targets)?;
    engine::loss_and_gradients(model, inputs, &normalized)
}
