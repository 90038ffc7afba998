//! The feed-forward CNN. Its forward pass records the ReLU masks and max-pool
//! argmaxes, which are exactly the optimal (JMAP) latent configuration of the
//! rendering model.

mod checkpoint;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::kernels::{
    argmax, conv2d, conv2d_backward, dense_backward, dense_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, ConvParams, DenseParams, PoolIndices, ReluMask,
};
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spec::{Architecture, Block, LayerKind, LayerSpec, NetworkSpec};

/// All trainable parameters, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub convs: Vec<ConvParams>,
    pub dense: DenseParams,
}

impl Params {
    /// Weights then bias for each conv, then the dense weights and bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &self.convs {
            out.push(&c.weights);
            out.push(&c.bias);
        }
        out.push(&self.dense.weights);
        out.push(&self.dense.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &mut self.convs {
            out.push(&mut c.weights);
            out.push(&mut c.bias);
        }
        out.push(&mut self.dense.weights);
        out.push(&mut self.dense.bias);
        out
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &Params) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }
}

/// Optimal latents of one rendering layer: the ReLU mask `s` at conv-output
/// resolution and, for pooling blocks, the argmax positions `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLatent {
    pub mask: ReluMask,
    pub pool: Option<PoolIndices>,
}

/// Latents for layers `1..=L`; `layers[l - 1]` belongs to layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub layers: Vec<LayerLatent>,
}

impl LatentState {
    pub fn sample(&self, i: usize) -> LatentState {
        LatentState {
            layers: self
                .layers
                .iter()
                .map(|l| LayerLatent { mask: l.mask.sample(i), pool: l.pool.as_ref().map(|p| p.sample(i)) })
                .collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.layers.first().map_or(1, |l| l.mask.shape()[0])
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `g(x; k)` for `k = 0..=L`, each `[N, C, H, W]`; `features[0]` is the input.
    pub features: Vec<Tensor>,
    /// Conv outputs before the ReLU, one per block.
    pub pre_activations: Vec<Tensor>,
    pub latents: LatentState,
    /// `[N, K]`
    pub logits: Tensor,
    /// Argmax label per sample (lowest index on ties).
    pub predictions: Vec<usize>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.features[0].batch()
    }

    pub fn sample(&self, i: usize) -> ForwardTrace {
        ForwardTrace {
            features: self.features.iter().map(|t| t.sample(i)).collect(),
            pre_activations: self.pre_activations.iter().map(|t| t.sample(i)).collect(),
            latents: self.latents.sample(i),
            logits: self.logits.sample(i),
            predictions: vec![self.predictions[i]],
        }
    }

    pub fn logits_row(&self, i: usize) -> &[f64] {
        let k = self.logits.shape()[1];
        &self.logits.data()[i * k..(i + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    arch: Architecture,
    pub params: Params,
}

impl Network {
    /// He fan-in normal weights, zero biases, reproducible from `seed`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Network> {
        let arch = spec.architecture()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |shape: &[usize], fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let mut convs = Vec::with_capacity(arch.blocks.len());
        for block in &arch.blocks {
            let LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } =
                spec.layers[block.layer_index].kind
            else {
                unreachable!("blocks start at conv layers");
            };
            let w = he(&[out_channels, in_channels, kernel, kernel], in_channels * kernel * kernel);
            convs.push(ConvParams::new(w, Tensor::zeros(&[out_channels]), stride, padding)?);
        }
        let w = he(&[arch.classes, arch.dense_in], arch.dense_in);
        let dense = DenseParams::new(w, Tensor::zeros(&[arch.classes]))?;
        Ok(Network { spec, arch, params: Params { convs, dense } })
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(spec: NetworkSpec, params: Params) -> Result<Network> {
        let reference = Network::build(spec, 0)?;
        for (i, (got, want)) in params.tensors().iter().zip(reference.params.tensors()).enumerate() {
            if got.shape() != want.shape() {
                return Err(shape_err!("parameter tensor {i} has shape {:?}, expected {:?}", got.shape(), want.shape()));
            }
        }
        if params.convs.len() != reference.params.convs.len() {
            return Err(shape_err!("expected {} conv layers, got {}", reference.params.convs.len(), params.convs.len()));
        }
        for (got, want) in params.convs.iter().zip(&reference.params.convs) {
            if (got.stride, got.padding) != (want.stride, want.padding) {
                return Err(shape_err!("conv stride/padding disagree with the layer description"));
            }
        }
        Ok(Network { params, ..reference })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Number of rendering layers `L`.
    pub fn depth(&self) -> usize {
        self.arch.blocks.len()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.spec.input_shape[0], self.spec.input_shape[1], self.spec.input_shape[2]]
    }

    /// Per-sample shape `D(k)` of the feature map after block `k` (`k = 0` is the input).
    pub fn feature_shape(&self, k: usize) -> [usize; 3] {
        if k == 0 {
            self.input_shape()
        } else {
            self.arch.blocks[k - 1].out_shape
        }
    }

    /// Accepts `[C, H, W]` or `[N, C, H, W]` and returns the batched form.
    pub fn batched_input(&self, x: &Tensor) -> Result<Tensor> {
        let want = self.input_shape();
        match x.shape() {
            s if s == want => x.clone().reshape(&[1, want[0], want[1], want[2]]),
            [n, rest @ ..] if rest == want && *n > 0 => Ok(x.clone()),
            s => Err(shape_err!("input shape {:?} does not match the network input {:?}", s, want)),
        }
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<ForwardTrace> {
        let x = self.batched_input(x)?;
        let n = x.batch();
        let mut features = Vec::with_capacity(self.depth() + 1);
        let mut pre_activations = Vec::with_capacity(self.depth());
        let mut latents = Vec::with_capacity(self.depth());
        features.push(x);
        for (block, conv) in self.arch.blocks.iter().zip(&self.params.convs) {
            let pre = conv2d(features.last().expect("input pushed"), conv)?;
            let (act, mask) = relu_forward(&pre);
            let (out, pool) = match block.pool {
                Some((window, stride)) => {
                    let (pooled, idx) = maxpool_forward(&act, window, stride)?;
                    (pooled, Some(idx))
                }
                None => (act, None),
            };
            pre_activations.push(pre);
            latents.push(LayerLatent { mask, pool });
            features.push(out);
        }
        let logits = dense_forward(features.last().expect("input pushed"), &self.params.dense)?;
        let k = self.classes();
        let predictions = (0..n).map(|i| argmax(&logits.data()[i * k..(i + 1) * k])).collect();
        Ok(ForwardTrace { features, pre_activations, latents: LatentState { layers: latents }, logits, predictions })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward_trace(x)?.predictions)
    }

    /// Backpropagates `dL/d(logits)` through the forward pass recorded in `trace`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<Params> {
        if trace.features.len() != self.depth() + 1 || trace.latents.layers.len() != self.depth() {
            return Err(shape_err!(
                "trace has {} feature maps for a network of depth {}",
                trace.features.len(),
                self.depth()
            ));
        }
        let mut grads = self.params.zeros_like();
        let top = &trace.features[self.depth()];
        let head = dense_backward(top, &self.params.dense, grad_logits)?;
        grads.dense.weights = head.weights;
        grads.dense.bias = head.bias;
        let mut upstream = head.input;
        for l in (0..self.depth()).rev() {
            let latent = &trace.latents.layers[l];
            if let Some(idx) = &latent.pool {
                upstream = maxpool_backward(&upstream, idx)?;
            }
            upstream = relu_backward(&upstream, &latent.mask)?;
            let g = conv2d_backward(&trace.features[l], &self.params.convs[l], &upstream)?;
            grads.convs[l].weights = g.weights;
            grads.convs[l].bias = g.bias;
            upstream = g.input;
        }
        Ok(grads)
    }
}
