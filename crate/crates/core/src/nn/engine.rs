//! Forward pass, backpropagation and the SGD loop.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::tensor::Tensor;

use super::{LayerSpec, ModelSpec, TrainConfig, TrainedModel};

pub(super) fn forward(model: &TrainedModel, batch: &Tensor) -> Result<Tensor> {
    let spec = model.spec();
    check_input(spec, batch)?;
    let shapes = spec.layer_shapes()?;
    let n = batch.n_rows();
    let acts = forward_with_caches(spec, &shapes, model.params(), batch.data(), n);
    let out = acts.into_iter().last().unwrap();
    let width = spec.output_dim();
    Tensor::new(vec![n, width], out)
}

fn check_input(spec: &ModelSpec, batch: &Tensor) -> Result<()> {
    let expect = spec.input_dim();
    if batch.row_len() != expect {
        return Err(Error::invalid(format!(
            "input rows have {} features, model expects {}",
            batch.row_len(),
            expect
        )));
    }
    Ok(())
}

/// Activations at every layer boundary: `acts[0]` is the batch input,
/// `acts[i + 1]` the output of layer `i`. All flat `n x width` buffers.
fn forward_with_caches(
    spec: &ModelSpec,
    shapes: &[Vec<usize>],
    params: &[Tensor],
    input: &[f64],
    n: usize,
) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(spec.layers.len() + 1);
    acts.push(input.to_vec());
    let mut pi = 0;
    for (li, layer) in spec.layers.iter().enumerate() {
        let cur = acts.last().unwrap();
        let next = match layer {
            LayerSpec::Dense { units } => {
                let w = &params[pi];
                let b = &params[pi + 1];
                pi += 2;
                dense_forward(cur, n, shapes[li][0], *units, w.data(), b.data())
            }
            LayerSpec::Conv { filters, kernel } => {
                let w = &params[pi];
                let b = &params[pi + 1];
                pi += 2;
                conv_forward(cur, n, &shapes[li], *filters, *kernel, w.data(), b.data())
            }
            LayerSpec::Activation(a) => cur.iter().map(|&x| a.apply(x)).collect(),
            LayerSpec::Flatten => cur.clone(),
        };
        acts.push(next);
    }
    acts
}

fn dense_forward(input: &[f64], n: usize, in_dim: usize, units: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * units];
    for s in 0..n {
        let row = &input[s * in_dim..(s + 1) * in_dim];
        let out_row = &mut out[s * units..(s + 1) * units];
        out_row.copy_from_slice(b);
        for (k, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &w[k * units..(k + 1) * units];
            for (j, &wv) in wrow.iter().enumerate() {
                out_row[j] += x * wv;
            }
        }
    }
    out
}

fn conv_forward(
    input: &[f64],
    n: usize,
    in_shape: &[usize],
    filters: usize,
    kernel: usize,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let (h, wd, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h - kernel + 1, wd - kernel + 1);
    let in_len = h * wd * c;
    let out_len = oh * ow * filters;
    let mut out = vec![0.0; n * out_len];
    for s in 0..n {
        let img = &input[s * in_len..(s + 1) * in_len];
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * filters;
                dst[base..base + filters].copy_from_slice(b);
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let src = ((oy + ky) * wd + (ox + kx)) * c;
                        for ci in 0..c {
                            let x = img[src + ci];
                            if x == 0.0 {
                                continue;
                            }
                            let wbase = ((ky * kernel + kx) * c + ci) * filters;
                            for fi in 0..filters {
                                dst[base + fi] += x * w[wbase + fi];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) rows against target rows, plus the
/// gradient of that mean with respect to the logits.
fn loss_and_dlogits(logits: &[f64], targets: &[f64], n: usize, width: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; logits.len()];
    let inv_n = 1.0 / n as f64;
    for s in 0..n {
        let row = &logits[s * width..(s + 1) * width];
        let t = &targets[s * width..(s + 1) * width];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln() + max;
        let mut row_loss = 0.0;
        for (j, (&v, &tv)) in row.iter().zip(t).enumerate() {
            let p = (v - max).exp() / sum;
            dlogits[s * width + j] = (p - tv) * inv_n;
            if tv > 0.0 {
                row_loss -= tv * (v - log_sum);
            }
        }
        loss += row_loss;
    }
    (loss * inv_n, dlogits)
}

pub(super) fn batch_loss(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    if logits.shape() != targets.shape() {
        return Err(Error::invalid(format!(
            "logits shape {:?} vs target shape {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let (loss, _) = loss_and_dlogits(
        logits.data(),
        targets.data(),
        logits.n_rows(),
        logits.row_len(),
    );
    Ok(loss)
}

/// Gradient of the batch objective for every parameter tensor, via manual
/// backpropagation through the cached activations.
fn backward(
    spec: &ModelSpec,
    shapes: &[Vec<usize>],
    params: &[Tensor],
    acts: &[Vec<f64>],
    dlogits: Vec<f64>,
    n: usize,
) -> Vec<Vec<f64>> {
    let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
    // Parameter tensor index just past each layer's slots.
    let mut pi_ends = Vec::with_capacity(spec.layers.len());
    let mut pi = 0;
    for layer in &spec.layers {
        if matches!(layer, LayerSpec::Dense { .. } | LayerSpec::Conv { .. }) {
            pi += 2;
        }
        pi_ends.push(pi);
    }

    let mut dout = dlogits;
    for (li, layer) in spec.layers.iter().enumerate().rev() {
        match layer {
            LayerSpec::Dense { units } => {
                let wi = pi_ends[li] - 2;
                let in_dim = shapes[li][0];
                let input = &acts[li];
                let w = params[wi].data();
                let mut din = vec![0.0; n * in_dim];
                {
                    let (gw, gb) = {
                        let (a, b) = grads.split_at_mut(wi + 1);
                        (&mut a[wi], &mut b[0])
                    };
                    for s in 0..n {
                        let drow = &dout[s * units..(s + 1) * units];
                        let xrow = &input[s * in_dim..(s + 1) * in_dim];
                        for (j, &d) in drow.iter().enumerate() {
                            gb[j] += d;
                        }
                        for (k, &x) in xrow.iter().enumerate() {
                            let gw_row = &mut gw[k * units..(k + 1) * units];
                            let wrow = &w[k * units..(k + 1) * units];
                            let mut acc = 0.0;
                            for (j, &d) in drow.iter().enumerate() {
                                gw_row[j] += x * d;
                                acc += wrow[j] * d;
                            }
                            din[s * in_dim + k] = acc;
                        }
                    }
                }
                dout = din;
            }
            LayerSpec::Conv { filters, kernel } => {
                let wi = pi_ends[li] - 2;
                let in_shape = &shapes[li];
                let (h, wd, c) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (h - kernel + 1, wd - kernel + 1);
                let in_len = h * wd * c;
                let out_len = oh * ow * filters;
                let input = &acts[li];
                let w = params[wi].data();
                let mut din = vec![0.0; n * in_len];
                {
                    let (gw, gb) = {
                        let (a, b) = grads.split_at_mut(wi + 1);
                        (&mut a[wi], &mut b[0])
                    };
                    for s in 0..n {
                        let img = &input[s * in_len..(s + 1) * in_len];
                        let drow = &dout[s * out_len..(s + 1) * out_len];
                        let dimg = &mut din[s * in_len..(s + 1) * in_len];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let base = (oy * ow + ox) * filters;
                                for fi in 0..*filters {
                                    gb[fi] += drow[base + fi];
                                }
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        let src = ((oy + ky) * wd + (ox + kx)) * c;
                                        for ci in 0..c {
                                            let x = img[src + ci];
                                            let wbase = ((ky * kernel + kx) * c + ci) * filters;
                                            for fi in 0..*filters {
                                                let d = drow[base + fi];
                                                gw[wbase + fi] += x * d;
                                                dimg[src + ci] += w[wbase + fi] * d;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                dout = din;
            }
            LayerSpec::Activation(a) => {
                let output = &acts[li + 1];
                for (d, &y) in dout.iter_mut().zip(output) {
                    *d *= a.derivative_from_output(y);
                }
            }
            LayerSpec::Flatten => {}
        }
    }
    grads
}

pub(super) fn loss_and_gradients(
    model: &TrainedModel,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let spec = model.spec();
    check_input(spec, inputs)?;
    let width = spec.output_dim();
    if targets.row_len() != width || targets.n_rows() != inputs.n_rows() {
        return Err(Error::invalid(format!(
            "target shape {:?} does not match {} rows x {} classes",
            targets.shape(),
            inputs.n_rows(),
            width
        )));
    }
    let shapes = spec.layer_shapes()?;
    let n = inputs.n_rows();
    let acts = forward_with_caches(spec, &shapes, model.params(), inputs.data(), n);
    let (loss, dlogits) = loss_and_dlogits(acts.last().unwrap(), targets.data(), n, width);
    let grads = backward(spec, &shapes, model.params(), &acts, dlogits, n);
    let mut flat = Vec::new();
    for g in grads {
        flat.extend(g);
    }
    Ok((loss, flat))
}

/// Mini-batch SGD over `(features, target rows)` for `cfg.epochs` epochs.
pub(super) fn sgd(
    model: &TrainedModel,
    features: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let spec = model.spec();
    check_input(spec, features)?;
    let shapes = spec.layer_shapes()?;
    let width = spec.output_dim();
    let n = features.n_rows();
    let in_dim = features.row_len();

    let mut out = model.clone();
    let mut params = out.params().to_vec();
    let mut rng = rng_from(cfg.seed);
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let bs = chunk.len();
            let mut bx = Vec::with_capacity(bs * in_dim);
            let mut bt = Vec::with_capacity(bs * width);
            for &i in chunk {
                bx.extend_from_slice(features.row(i));
                bt.extend_from_slice(targets.row(i));
            }
            let acts = forward_with_caches(spec, &shapes, &params, &bx, bs);
            let (loss, dlogits) = loss_and_dlogits(acts.last().unwrap(), &bt, bs, width);
            let grads = backward(spec, &shapes, &params, &acts, dlogits, bs);
            for (p, g) in params.iter_mut().zip(&grads) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g) {
                    *pv -= cfg.learning_rate * gv;
                }
            }
            epoch_loss += loss * bs as f64;
        }
        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: loss became non-finite at epoch {epoch}"
            )));
        }
        out.push_loss(epoch_loss);
    }
    for p in &params {
        p.check_finite("trained parameters")?;
    }
    out.replace_params(params);
    Ok(out)
}
