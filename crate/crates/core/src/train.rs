//! Minibatch SGD with momentum on the composite objective
//!
//! `CE + lambda_recon * mean |x - h(y, z*; 0)|^2 + lambda_neg * mean sum_l |h_-(l)|^2`
//!
//! The reconstruction renders with the true label. Masks and pool indices are
//! recomputed by every forward pass and held fixed while differentiating the
//! rendering path.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::kernels::{conv2d_transpose_backward, pool_gather, softmax_cross_entropy};
use crate::network::{Checkpoint, Network, Params, TrainingMeta};
use crate::render::{negativity, render, RenderTrace};
use crate::tensor::Tensor;

fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    32
}
fn default_lambda_recon() -> f64 {
    0.01
}
fn default_lambda_neg() -> f64 {
    0.1
}
fn default_log_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lambda_recon")]
    pub lambda_recon: f64,
    #[serde(default = "default_lambda_neg")]
    pub lambda_neg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Multiply the learning rate by 0.1 at 50% and again at 75% of the epochs.
    #[serde(default)]
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            momentum: default_momentum(),
            epochs: 10,
            batch_size: default_batch(),
            lambda_recon: default_lambda_recon(),
            lambda_neg: default_lambda_neg(),
            seed: 0,
            log_every: default_log_every(),
            lr_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.learning_rate) {
            return Err(invalid_arg!("learning_rate must be finite and >= 0"));
        }
        if !(finite_nonneg(self.momentum) && self.momentum < 1.0) {
            return Err(invalid_arg!("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(invalid_arg!("batch_size and log_every must be positive"));
        }
        if !finite_nonneg(self.lambda_recon) || !finite_nonneg(self.lambda_neg) {
            return Err(invalid_arg!("loss weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if !self.lr_decay {
            return self.learning_rate;
        }
        let e = epoch as f64;
        let total = self.epochs as f64;
        if e >= 0.75 * total {
            self.learning_rate * 0.01
        } else if e >= 0.5 * total {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }
}

/// Batch means of each objective term; `recon` and `neg` are unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub recon: f64,
    pub neg: f64,
    pub lambda_recon: f64,
    pub lambda_neg: f64,
    pub total: f64,
    pub correct: usize,
    pub count: usize,
}

impl LossBreakdown {
    fn new(ce: f64, recon: f64, neg: f64, lambda_recon: f64, lambda_neg: f64, correct: usize, count: usize) -> Self {
        let mut b = LossBreakdown { ce, recon, neg, lambda_recon, lambda_neg, total: 0.0, correct, count };
        let [a, r, n] = b.weighted_terms();
        b.total = a + r + n;
        b
    }

    /// `[ce, lambda_recon * recon, lambda_neg * neg]`; they sum to `total`.
    pub fn weighted_terms(&self) -> [f64; 3] {
        [self.ce, self.lambda_recon * self.recon, self.lambda_neg * self.neg]
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }
}

struct SampleGrad {
    ce: f64,
    recon: f64,
    neg: f64,
    correct: bool,
    grads: Params,
}

/// Backpropagates `scale_recon * |h(0) - x|^2 + scale_neg * sum_{l>=1} |h_-(l)|^2`
/// through the rendering path into `grads`.
fn render_backward(
    net: &Network,
    x: &Tensor,
    z: &crate::network::LatentState,
    rendered: &RenderTrace,
    scale_recon: f64,
    scale_neg: f64,
    grads: &mut Params,
) -> Result<()> {
    let h0 = rendered.h(0).expect("rendered to layer 0");
    let mut upstream = h0.zip_with(x, |h, x| 2.0 * scale_recon * (h - x))?;
    for l in 1..=net.depth() {
        let latent = &z.layers[l - 1];
        let u = rendered.masked(l).expect("rendered through l");
        let (grad_u, grad_w) = conv2d_transpose_backward(u, &net.params.convs[l - 1], &upstream)?;
        grads.convs[l - 1].weights.axpy(1.0, &grad_w)?;
        let grad_a = latent.mask.apply(&grad_u)?;
        let mut grad_h = match &latent.pool {
            Some(idx) => pool_gather(&grad_a, idx)?,
            None => grad_a,
        };
        let h = rendered.h(l).expect("rendered through l");
        for (g, &v) in grad_h.data_mut().iter_mut().zip(h.data()) {
            if v < 0.0 {
                *g += 2.0 * scale_neg * v;
            }
        }
        upstream = grad_h;
    }
    // h(L) is row `label` of the dense weights.
    let label = rendered.label();
    let width = net.params.dense.in_features();
    let row = &mut grads.dense.weights.data_mut()[label * width..(label + 1) * width];
    for (w, g) in row.iter_mut().zip(upstream.data()) {
        *w += g;
    }
    Ok(())
}

fn sample_grad(net: &Network, x: &Tensor, y: usize, batch: usize, cfg: &LossWeights) -> Result<SampleGrad> {
    let trace = net.forward_trace(x)?;
    let (ce, mut grad_logits) = softmax_cross_entropy(&trace.logits.clone().reshape(&[net.classes()])?, y)?;
    grad_logits = grad_logits.scale(1.0 / batch as f64).reshape(&[1, net.classes()])?;
    let mut grads = net.backward(&trace, &grad_logits)?;
    let rendered = render(net, y, &trace.latents, 0)?;
    let recon = trace.features[0].sq_dist(rendered.h(0).expect("rendered to layer 0"));
    let neg = negativity(&rendered);
    let scale = 1.0 / batch as f64;
    render_backward(
        net,
        &trace.features[0],
        &trace.latents,
        &rendered,
        cfg.lambda_recon * scale,
        cfg.lambda_neg * scale,
        &mut grads,
    )?;
    Ok(SampleGrad { ce, recon, neg, correct: trace.predictions[0] == y, grads })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_recon: f64,
    pub lambda_neg: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        LossWeights { lambda_recon: c.lambda_recon, lambda_neg: c.lambda_neg }
    }
}

/// Composite loss over a batch `[B, C, H, W]` and its gradient with respect
/// to every parameter. Per-sample gradients are reduced in sample order.
pub fn total_loss(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    weights: LossWeights,
) -> Result<(LossBreakdown, Params)> {
    let images = net.batched_input(images)?;
    let b = images.batch();
    if b != labels.len() {
        return Err(shape_err!("{b} images but {} labels", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.classes()) {
        return Err(invalid_arg!("label {bad} out of range for {} classes", net.classes()));
    }
    let per_sample: Vec<SampleGrad> = (0..b)
        .into_par_iter()
        .map(|i| sample_grad(net, &images.sample(i), labels[i], b, &weights))
        .collect::<Result<_>>()?;

    let mut grads = net.params.zeros_like();
    let (mut ce, mut recon, mut neg, mut correct) = (0.0, 0.0, 0.0, 0);
    for s in &per_sample {
        ce += s.ce;
        recon += s.recon;
        neg += s.neg;
        correct += s.correct as usize;
        grads.axpy(1.0, &s.grads)?;
    }
    let n = b as f64;
    let breakdown =
        LossBreakdown::new(ce / n, recon / n, neg / n, weights.lambda_recon, weights.lambda_neg, correct, b);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {} (ce {}, recon {}, neg {})",
            breakdown.total, breakdown.ce, breakdown.recon, breakdown.neg
        )));
    }
    Ok((breakdown, grads))
}

/// `v <- momentum * v - lr * grad; theta <- theta + v`
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        SgdMomentum { learning_rate, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: Vec<&Tensor>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err!("{} parameter tensors but {} gradients", params.len(), grads.len()));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || v.shape() != g.shape() {
                return Err(shape_err!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()));
            }
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv - self.learning_rate * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

/// One optimizer update on a batch. Returns the pre-update loss breakdown.
pub fn train_step(
    net: &mut Network,
    images: &Tensor,
    labels: &[usize],
    weights: LossWeights,
    opt: &mut SgdMomentum,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = total_loss(net, images, labels, weights)?;
    opt.step(net.params.tensors_mut(), grads.tensors())?;
    Ok(breakdown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub ce: f64,
    pub recon: f64,
    pub neg: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    /// Every `log_every`-th step (1-based global step count).
    pub rows: Vec<MetricsRow>,
    /// Sample-weighted means over each epoch, `step` being the epoch's last step.
    pub epochs: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "epoch,step,ce,recon,neg,acc").map_err(io)?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.epoch, r.step, r.ce, r.recon, r.neg, r.acc).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Trains `net` on `data` (labels required). Epoch order is shuffled from `cfg.seed`.
pub fn fit(mut net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, MetricsLog)> {
    cfg.validate()?;
    let labels = data.labels.as_ref().ok_or_else(|| invalid_arg!("training set {:?} has no labels", data.name))?;
    if data.is_empty() {
        return Err(invalid_arg!("training set {:?} is empty", data.name));
    }
    net.batched_input(&data.image(0))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let mut log = MetricsLog::default();
    let weights = LossWeights::from(cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let (mut correct, mut seen) = (0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let images = data.batch(chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let b = train_step(&mut net, &images, &batch_labels, weights, &mut opt)?;
            step += 1;
            let n = b.count as f64;
            sums[0] += b.ce * n;
            sums[1] += b.recon * n;
            sums[2] += b.neg * n;
            correct += b.correct;
            seen += b.count;
            if step % cfg.log_every == 0 {
                log.rows.push(MetricsRow { epoch, step, ce: b.ce, recon: b.recon, neg: b.neg, acc: b.accuracy() });
            }
        }
        let n = seen as f64;
        log.epochs.push(MetricsRow {
            epoch,
            step,
            ce: sums[0] / n,
            recon: sums[1] / n,
            neg: sums[2] / n,
            acc: correct as f64 / n,
        });
    }
    let meta = TrainingMeta {
        epoch: cfg.epochs,
        seed: cfg.seed,
        lambda_recon: cfg.lambda_recon,
        lambda_neg: cfg.lambda_neg,
    };
    Ok((Checkpoint::new(net, meta), log))
}

/// Fraction of `data` the network classifies correctly.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let labels = data.labels.as_ref().ok_or_else(|| invalid_arg!("dataset {:?} has no labels", data.name))?;
    let predictions = net.predict(&data.images)?;
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}
