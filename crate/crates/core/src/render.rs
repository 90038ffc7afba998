//! Top-down rendering and the likelihood decomposition.
//!
//! Rendering from layer `l` to `l - 1` places the pooled image `h(l)` back at
//! the recorded argmax positions `t(l)`, keeps only the pixels the ReLU mask
//! `s(l)` switched on, and stamps each surviving pixel's template through the
//! transposed convolution. The top image `h(L)` is the dense head's transpose
//! applied to `onehot(y)`.
//!
//! Scores use the network's single `sigma`:
//!
//! - reconstruction term: `-|g(x;k) - h(y*, z*; k)|^2 / (2 sigma^2)`
//! - prior score: `(1/sigma^2) * sum_l <b(l), s(l) ⊙ h(l)>`, the softmax logit
//!   of the structured prior (its partition constant is dropped).

use crate::error::{invalid_arg, shape_err, Result};
use crate::kernels::{conv2d_transpose, dense_transpose, unpool, ConvParams, PoolIndices, ReluMask};
use crate::network::{ForwardTrace, LayerLatent, Network};
use crate::tensor::Tensor;

pub use crate::network::LatentState;

/// Rendered images `h(y, z; l)` for `l = stop..=L`, each `[1, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTrace {
    label: usize,
    stop: usize,
    /// `images[i]` is `h(stop + i)`.
    images: Vec<Tensor>,
    /// `masked[i]` is `s(l) ⊙ unpool(h(l), t(l))` for `l = stop + 1 + i`.
    masked: Vec<Tensor>,
}

impl RenderTrace {
    /// A trace from explicit images `h(stop), h(stop + 1), ...`, without the
    /// masked intermediates.
    pub fn from_images(label: usize, stop: usize, images: Vec<Tensor>) -> RenderTrace {
        RenderTrace { label, stop, images, masked: Vec::new() }
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Lowest rendered layer.
    pub fn stop(&self) -> usize {
        self.stop
    }

    /// Highest rendered layer.
    pub fn top(&self) -> usize {
        self.stop + self.images.len() - 1
    }

    pub fn h(&self, layer: usize) -> Option<&Tensor> {
        layer.checked_sub(self.stop).and_then(|i| self.images.get(i))
    }

    /// The masked, unpooled image that layer `layer` hands to its transposed conv.
    pub fn masked(&self, layer: usize) -> Option<&Tensor> {
        layer.checked_sub(self.stop + 1).and_then(|i| self.masked.get(i))
    }

    pub fn images(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.images.iter().enumerate().map(move |(i, t)| (self.stop + i, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodDecomposition {
    pub recon_term: f64,
    pub prior_score: f64,
    pub lower_bound: f64,
    /// 0 for the pixel level, `k` for the feature map after block `k`.
    pub layer: usize,
}

impl LikelihoodDecomposition {
    fn new(recon_term: f64, prior_score: f64, layer: usize) -> Self {
        LikelihoodDecomposition { recon_term, prior_score, lower_bound: recon_term + prior_score, layer }
    }
}

/// `-squared_error / (2 sigma^2)`
pub fn recon_term(squared_error: f64, sigma: f64) -> f64 {
    -squared_error / (2.0 * sigma * sigma)
}

fn check_label(net: &Network, y: usize) -> Result<()> {
    if y >= net.classes() {
        return Err(invalid_arg!("label {y} out of range for {} classes", net.classes()));
    }
    Ok(())
}

fn check_latents(net: &Network, z: &LatentState) -> Result<()> {
    if z.layers.len() != net.depth() {
        return Err(shape_err!("latent state has {} layers, network has {}", z.layers.len(), net.depth()));
    }
    for (l, (latent, block)) in z.layers.iter().zip(&net.architecture().blocks).enumerate() {
        let [c, h, w] = block.conv_shape;
        if latent.mask.shape() != [1, c, h, w] {
            return Err(shape_err!("layer {} mask {:?} does not match [1, {c}, {h}, {w}]", l + 1, latent.mask.shape()));
        }
        if latent.pool.is_some() != block.pool.is_some() {
            return Err(shape_err!("layer {} pooling latents disagree with the network", l + 1));
        }
    }
    Ok(())
}

/// `h(L)`: the dense head's transpose applied to `onehot(y)`, shaped `[1, D(L)]`.
pub fn init_top(net: &Network, y: usize) -> Result<Tensor> {
    check_label(net, y)?;
    let mut onehot = Tensor::zeros(&[1, net.classes()]);
    onehot.data_mut()[y] = 1.0;
    let [c, h, w] = net.feature_shape(net.depth());
    dense_transpose(&onehot, &net.params.dense.weights)?.reshape(&[1, c, h, w])
}

/// `s ⊙ unpool(h, t)`: the image at conv-output resolution whose pixels
/// each stamp one template.
pub fn masked_unpool(h: &Tensor, s: &ReluMask, t: Option<&PoolIndices>) -> Result<Tensor> {
    match t {
        Some(idx) => s.apply(&unpool(h, idx, &idx.input_shape)?),
        None => s.apply(h),
    }
}

/// One rendering step `h(l) -> h(l - 1)`. `input_hw` is the spatial size of `D(l - 1)`.
pub fn render_layer(
    h: &Tensor,
    s: &ReluMask,
    t: Option<&PoolIndices>,
    conv: &ConvParams,
    input_hw: (usize, usize),
) -> Result<Tensor> {
    conv2d_transpose(&masked_unpool(h, s, t)?, conv, input_hw)
}

fn render_from(
    net: &Network,
    label: usize,
    top: Tensor,
    z: &LatentState,
    stop: usize,
) -> Result<RenderTrace> {
    let depth = net.depth();
    let mut images = vec![top];
    let mut masked = Vec::with_capacity(depth - stop);
    for l in (stop + 1..=depth).rev() {
        let LayerLatent { mask, pool } = &z.layers[l - 1];
        let current = images.last().expect("top pushed");
        let u = masked_unpool(current, mask, pool.as_ref())?;
        let [_, h, w] = net.feature_shape(l - 1);
        let next = conv2d_transpose(&u, &net.params.convs[l - 1], (h, w))?;
        masked.push(u);
        images.push(next);
    }
    images.reverse();
    masked.reverse();
    Ok(RenderTrace { label, stop, images, masked })
}

/// Renders `h(y, z; l)` for `l = L` down to `stop`.
pub fn render(net: &Network, y: usize, z: &LatentState, stop: usize) -> Result<RenderTrace> {
    if stop > net.depth() {
        return Err(invalid_arg!("stop layer {stop} exceeds network depth {}", net.depth()));
    }
    check_latents(net, z)?;
    render_from(net, y, init_top(net, y)?, z, stop)
}

fn layer_prior_sum(net: &Network, z: &LatentState, trace: &RenderTrace, layer: usize) -> Result<f64> {
    let h = trace
        .h(layer)
        .ok_or_else(|| invalid_arg!("render trace lacks layer {layer} (covers {}..={})", trace.stop(), trace.top()))?;
    let latent = &z.layers[layer - 1];
    let u = match trace.masked(layer) {
        Some(u) => u.clone(),
        None => masked_unpool(h, &latent.mask, latent.pool.as_ref())?,
    };
    let bias = net.params.convs[layer - 1].bias.data();
    let plane = u.len() / bias.len();
    Ok(bias.iter().zip(u.data().chunks_exact(plane)).map(|(b, p)| b * p.iter().sum::<f64>()).sum())
}

/// `(1/sigma^2) * sum_{l = from..=L} <b(l), s(l) ⊙ h(l)>` (layer 0 has no term).
pub fn prior_score_from(net: &Network, z: &LatentState, trace: &RenderTrace, from: usize) -> Result<f64> {
    check_latents(net, z)?;
    let mut total = 0.0;
    for l in from.max(1)..=net.depth() {
        total += layer_prior_sum(net, z, trace, l)?;
    }
    Ok(total / (net.sigma() * net.sigma()))
}

/// Log structured prior of `z` given the trace's label, up to the partition constant.
pub fn prior_score(net: &Network, z: &LatentState, trace: &RenderTrace) -> Result<f64> {
    prior_score_from(net, z, trace, 1)
}

fn single_trace(net: &Network, x: &Tensor) -> Result<ForwardTrace> {
    let trace = net.forward_trace(x)?;
    if trace.batch() != 1 {
        return Err(shape_err!("expected a single sample, got a batch of {}", trace.batch()));
    }
    Ok(trace)
}

/// Likelihood bound of the feature map `g(x; k)`, rendering with the
/// predicted label and the latents of layers `k..=L`.
pub fn layer_likelihood(net: &Network, x: &Tensor, k: usize) -> Result<LikelihoodDecomposition> {
    if k > net.depth() {
        return Err(invalid_arg!("layer {k} out of range 0..={}", net.depth()));
    }
    let trace = single_trace(net, x)?;
    let y = trace.predictions[0];
    let rendered = render(net, y, &trace.latents, k)?;
    let sq = trace.features[k].sq_dist(rendered.h(k).expect("rendered down to k"));
    let prior = prior_score_from(net, &trace.latents, &rendered, k)?;
    Ok(LikelihoodDecomposition::new(recon_term(sq, net.sigma()), prior, k))
}

/// Pixel-level bound: `-|x - h(y*, z*; 0)|^2 / (2 sigma^2) + log pi(z* | y*)`.
pub fn likelihood_lower_bound(net: &Network, x: &Tensor) -> Result<LikelihoodDecomposition> {
    layer_likelihood(net, x, 0)
}

/// Where reconstruction losses are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// After every block (post-pool), plus the pixel level.
    #[default]
    Block,
    /// Additionally at the post-ReLU, pre-pool map of each pooling block.
    Layer,
}

/// Checkpoint names for [`recon_losses`], bottom to top: `"0"`, `"1"`, ... at
/// block level; pre-pool checkpoints are named `"<l>.pre_pool"`.
pub fn checkpoint_names(net: &Network, granularity: Granularity) -> Vec<String> {
    let mut names = vec!["0".to_string()];
    for (i, block) in net.architecture().blocks.iter().enumerate() {
        if granularity == Granularity::Layer && block.pool.is_some() {
            names.push(format!("{}.pre_pool", i + 1));
        }
        names.push((i + 1).to_string());
    }
    names
}

/// Raw squared reconstruction errors `|g - h|^2` at each checkpoint, using a
/// forward trace and a render of it down to layer 0.
pub fn recon_losses(
    net: &Network,
    trace: &ForwardTrace,
    rendered: &RenderTrace,
    granularity: Granularity,
) -> Result<Vec<f64>> {
    if rendered.stop() != 0 {
        return Err(invalid_arg!("reconstruction losses need a render down to layer 0"));
    }
    let mut out = vec![trace.features[0].sq_dist(rendered.h(0).expect("stop is 0"))];
    for (i, block) in net.architecture().blocks.iter().enumerate() {
        let l = i + 1;
        if granularity == Granularity::Layer && block.pool.is_some() {
            let latent = &trace.latents.layers[i];
            let activation = latent.mask.apply(&trace.pre_activations[i])?;
            out.push(activation.sq_dist(rendered.masked(l).expect("rendered through l")));
        }
        out.push(trace.features[l].sq_dist(rendered.h(l).expect("rendered through l")));
    }
    Ok(out)
}

/// Block-level `|g(x;k) - h(y*, z~; k)|^2` for `k = 0..=L`.
pub fn recon_loss_per_layer(net: &Network, x: &Tensor) -> Result<Vec<f64>> {
    recon_loss_per_layer_with(net, x, Granularity::Block)
}

pub fn recon_loss_per_layer_with(net: &Network, x: &Tensor, granularity: Granularity) -> Result<Vec<f64>> {
    let trace = single_trace(net, x)?;
    let rendered = render(net, trace.predictions[0], &trace.latents, 0)?;
    recon_losses(net, &trace, &rendered, granularity)
}

/// `h(y_false, z*(x); 0)`: the pixel-level rendering of `x`'s latents from another label.
pub fn render_with_label(net: &Network, x: &Tensor, y_false: usize) -> Result<Tensor> {
    check_label(net, y_false)?;
    let trace = single_trace(net, x)?;
    let rendered = render(net, y_false, &trace.latents, 0)?;
    Ok(rendered.h(0).expect("stop is 0").clone())
}

/// `sum_{l >= 1} |min(h(l), 0)|^2` over the rendered intermediate images.
pub fn negativity(trace: &RenderTrace) -> f64 {
    trace
        .images()
        .filter(|(l, _)| *l >= 1)
        .map(|(_, h)| h.data().iter().map(|&v| if v < 0.0 { v * v } else { 0.0 }).sum::<f64>())
        .sum()
}
