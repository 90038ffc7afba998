//! Randomized kernel checks shared by the kernel suite and the acceptance run.
//! Each returns the worst error it saw so callers can apply their own tolerance.

use nrm::kernels::{
    conv2d, conv2d_backward, conv2d_nobias, conv2d_transpose, conv2d_transpose_backward, dense_backward,
    dense_forward, dense_transpose, maxpool_backward, maxpool_forward, pool_gather, relu_backward, relu_forward,
    softmax_cross_entropy, unpool, ConvParams, DenseParams, ReluMask,
};
use nrm::network::Params;
use nrm::render::render_layer;
use nrm::{Network, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{central_diff, rand_tensor, tiny_spec};

/// `(batch, in_channels, out_channels, kernel, stride, padding, height, width)`
pub type ConvConfig = (usize, usize, usize, usize, usize, usize, usize, usize);

pub const CONV_CONFIGS: [ConvConfig; 6] = [
    (1, 1, 1, 1, 1, 0, 4, 4),
    (2, 1, 3, 3, 1, 1, 6, 6),
    (1, 3, 2, 3, 1, 0, 7, 5),
    (2, 2, 4, 5, 1, 2, 8, 8),
    (1, 2, 3, 3, 2, 1, 7, 7),
    (3, 1, 2, 2, 2, 0, 6, 4),
];

pub fn conv_params(rng: &mut ChaCha8Rng, cfg: ConvConfig) -> ConvParams {
    let (_, cin, cout, k, stride, pad, _, _) = cfg;
    ConvParams::new(rand_tensor(rng, &[cout, cin, k, k]), rand_tensor(rng, &[cout]), stride, pad).unwrap()
}

fn norm(t: &Tensor) -> f64 {
    t.dot(t).sqrt()
}

/// `|<A a, b> - <a, A^T b>| / (|A a| |b| + |a| |A^T b|)`.
fn adjoint_gap(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / scale.max(1e-300)
}

pub fn conv_adjoint(rng: &mut ChaCha8Rng, cfg: ConvConfig) -> f64 {
    let (n, cin, _, _, _, _, h, w) = cfg;
    let p = conv_params(rng, cfg);
    let x = rand_tensor(rng, &[n, cin, h, w]);
    let ax = conv2d_nobias(&x, &p).unwrap();
    let u = rand_tensor(rng, ax.shape());
    let atu = conv2d_transpose(&u, &p, (h, w)).unwrap();
    adjoint_gap(ax.dot(&u), x.dot(&atu), norm(&ax) * norm(&u) + norm(&x) * norm(&atu))
}

pub fn dense_adjoint(rng: &mut ChaCha8Rng, n: usize, fin: usize, fout: usize) -> f64 {
    let p = DenseParams::new(rand_tensor(rng, &[fout, fin]), Tensor::zeros(&[fout])).unwrap();
    let x = rand_tensor(rng, &[n, fin]);
    let ax = dense_forward(&x, &p).unwrap();
    let u = rand_tensor(rng, &[n, fout]);
    let atu = dense_transpose(&u, &p.weights).unwrap();
    adjoint_gap(ax.dot(&u), x.dot(&atu), norm(&ax) * norm(&u) + norm(&x) * norm(&atu))
}

/// `render_layer` with an all-ones mask against `pool_gather ∘ conv2d_nobias`.
/// Pooling indices come from max-pooling a random conv-resolution map.
pub fn render_layer_adjoint(rng: &mut ChaCha8Rng, cfg: ConvConfig, pooled: bool) -> f64 {
    let (n, cin, cout, _, _, _, h, w) = cfg;
    let p = conv_params(rng, cfg);
    let (oh, ow) = p.output_hw(h, w).unwrap();
    let mask = ReluMask::all(&[n, cout, oh, ow], true);
    let idx = (pooled && oh % 2 == 0 && ow % 2 == 0)
        .then(|| maxpool_forward(&rand_tensor(rng, &[n, cout, oh, ow]), 2, 2).unwrap().1);
    let top_shape = idx.as_ref().map_or(vec![n, cout, oh, ow], |i| i.shape.to_vec());
    let top = rand_tensor(rng, &top_shape);
    let rendered = render_layer(&top, &mask, idx.as_ref(), &p, (h, w)).unwrap();
    let v = rand_tensor(rng, &[n, cin, h, w]);
    let conv_v = conv2d_nobias(&v, &p).unwrap();
    let back = match &idx {
        Some(i) => pool_gather(&conv_v, i).unwrap(),
        None => conv_v,
    };
    adjoint_gap(rendered.dot(&v), top.dot(&back), norm(&rendered) * norm(&v) + norm(&top) * norm(&back))
}

/// Runs `trials` adjoint checks per configuration and returns the worst gap.
pub fn adjoint_suite(rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for cfg in CONV_CONFIGS {
        for _ in 0..trials {
            worst = worst.max(conv_adjoint(rng, cfg));
            worst = worst.max(render_layer_adjoint(rng, cfg, false));
            worst = worst.max(render_layer_adjoint(rng, cfg, true));
        }
    }
    for (n, fin, fout) in [(1, 1, 1), (2, 5, 3), (4, 27, 10), (1, 64, 7)] {
        for _ in 0..trials {
            worst = worst.max(dense_adjoint(rng, n, fin, fout));
        }
    }
    worst
}

/// For non-overlapping windows: `pool_gather(unpool(v)) == v`, and
/// `unpool(maxpool(x))` keeps exactly the argmax entries of `x`. Returns whether both held exactly.
pub fn pool_roundtrip(rng: &mut ChaCha8Rng, shape: [usize; 4], window: usize, stride: usize) -> bool {
    let x = rand_tensor(rng, &shape);
    let (pooled, idx) = maxpool_forward(&x, window, stride).unwrap();
    if pool_gather(&x, &idx).unwrap() != pooled {
        return false;
    }
    let v = rand_tensor(rng, pooled.shape());
    let up = unpool(&v, &idx, &shape).unwrap();
    if pool_gather(&up, &idx).unwrap() != v {
        return false;
    }
    let kept = unpool(&pooled, &idx, &shape).unwrap();
    let nonzero = kept.data().iter().filter(|&&k| k != 0.0).count();
    nonzero == pooled.len() && kept.data().iter().zip(x.data()).all(|(&k, &xv)| k == 0.0 || k == xv)
}

/// `|a - fd| / max(|a|, |fd|, 1e-6)`: relative error with a floor so
/// coordinates whose true gradient is zero are compared absolutely.
pub fn grad_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

fn worst_fd(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, analytic: &Tensor, eps: f64) -> f64 {
    (0..x.len()).map(|i| grad_err(analytic.data()[i], central_diff(f, x, i, eps))).fold(0.0, f64::max)
}

/// Gradient checks for every kernel with a hand-written backward pass,
/// plus the full network backward pass. Returns `(name, worst error)` pairs.
pub fn gradient_suite(rng: &mut ChaCha8Rng, eps: f64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    // conv2d: L = <conv2d(x), g>
    let cfg = (2, 2, 3, 3, 2, 1, 7, 6);
    let p = conv_params(rng, cfg);
    let x = rand_tensor(rng, &[2, 2, 7, 6]);
    let g = rand_tensor(rng, conv2d(&x, &p).unwrap().shape());
    let grads = conv2d_backward(&x, &p, &g).unwrap();
    out.push(("conv2d input", worst_fd(&|x| conv2d(x, &p).unwrap().dot(&g), &x, &grads.input, eps)));
    let with_w = |w: &Tensor| {
        let q = ConvParams { weights: w.clone(), ..p.clone() };
        conv2d(&x, &q).unwrap().dot(&g)
    };
    out.push(("conv2d weights", worst_fd(&with_w, &p.weights, &grads.weights, eps)));
    let with_b = |b: &Tensor| {
        let q = ConvParams { bias: b.clone(), ..p.clone() };
        conv2d(&x, &q).unwrap().dot(&g)
    };
    out.push(("conv2d bias", worst_fd(&with_b, &p.bias, &grads.bias, eps)));

    // conv2d_transpose: L = <conv2d_transpose(u), g>
    let u = rand_tensor(rng, conv2d(&x, &p).unwrap().shape());
    let g_in = rand_tensor(rng, &[2, 2, 7, 6]);
    let (gu, gw) = conv2d_transpose_backward(&u, &p, &g_in).unwrap();
    let with_u = |u: &Tensor| conv2d_transpose(u, &p, (7, 6)).unwrap().dot(&g_in);
    out.push(("conv2d_transpose input", worst_fd(&with_u, &u, &gu, eps)));
    let with_tw = |w: &Tensor| {
        let q = ConvParams { weights: w.clone(), ..p.clone() };
        conv2d_transpose(&u, &q, (7, 6)).unwrap().dot(&g_in)
    };
    out.push(("conv2d_transpose weights", worst_fd(&with_tw, &p.weights, &gw, eps)));

    // dense: L = <dense(x), g>
    let dp = DenseParams::new(rand_tensor(rng, &[4, 6]), rand_tensor(rng, &[4])).unwrap();
    let dx = rand_tensor(rng, &[3, 6]);
    let dg = rand_tensor(rng, &[3, 4]);
    let dgr = dense_backward(&dx, &dp, &dg).unwrap();
    out.push(("dense input", worst_fd(&|x| dense_forward(x, &dp).unwrap().dot(&dg), &dx, &dgr.input, eps)));
    let with_dw = |w: &Tensor| {
        let q = DenseParams { weights: w.clone(), bias: dp.bias.clone() };
        dense_forward(&dx, &q).unwrap().dot(&dg)
    };
    out.push(("dense weights", worst_fd(&with_dw, &dp.weights, &dgr.weights, eps)));
    let with_db = |b: &Tensor| {
        let q = DenseParams { weights: dp.weights.clone(), bias: b.clone() };
        dense_forward(&dx, &q).unwrap().dot(&dg)
    };
    out.push(("dense bias", worst_fd(&with_db, &dp.bias, &dgr.bias, eps)));

    // relu and maxpool, away from their kinks: |x| >= 0.1 and distinct window values
    let rx = Tensor::from_fn(&[2, 3, 4, 4], |i| {
        let m = 0.1 + 0.9 * rng.random::<f64>();
        if (i * 7 + 3) % 5 < 2 { -m } else { m }
    });
    let rg = rand_tensor(rng, &[2, 3, 4, 4]);
    let (_, mask) = relu_forward(&rx);
    let rgr = relu_backward(&rg, &mask).unwrap();
    out.push(("relu", worst_fd(&|x| relu_forward(x).0.dot(&rg), &rx, &rgr, eps)));
    let (pooled, idx) = maxpool_forward(&rx, 2, 2).unwrap();
    let pg = rand_tensor(rng, pooled.shape());
    let pgr = maxpool_backward(&pg, &idx).unwrap();
    out.push(("maxpool", worst_fd(&|x| maxpool_forward(x, 2, 2).unwrap().0.dot(&pg), &rx, &pgr, eps)));

    // softmax cross-entropy
    let z = rand_tensor(rng, &[1, 5]).scale(3.0);
    let (_, zg) = softmax_cross_entropy(&z, 2).unwrap();
    out.push(("softmax cross-entropy", worst_fd(&|z| softmax_cross_entropy(z, 2).unwrap().0, &z, &zg, eps)));

    // whole network: cross-entropy summed over a small batch
    let mut net = Network::build(tiny_spec(), rng.random()).unwrap();
    for c in &mut net.params.convs {
        c.bias = rand_tensor(rng, c.bias.shape()).scale(0.2);
    }
    let nx = rand_tensor(rng, &[3, 1, 6, 6]);
    let labels = [0, 1, 1];
    let loss_of = |net: &Network| -> (f64, Tensor) {
        let trace = net.forward_trace(&nx).unwrap();
        let k = net.classes();
        let mut total = 0.0;
        let mut grad = Vec::new();
        for (i, &y) in labels.iter().enumerate() {
            let row = Tensor::new(vec![1, k], trace.logits_row(i).to_vec()).unwrap();
            let (l, g) = softmax_cross_entropy(&row, y).unwrap();
            total += l;
            grad.extend_from_slice(g.data());
        }
        (total, Tensor::new(vec![labels.len(), k], grad).unwrap())
    };
    let trace = net.forward_trace(&nx).unwrap();
    let analytic: Params = net.backward(&trace, &loss_of(&net).1).unwrap();
    let mut worst: f64 = 0.0;
    let n_tensors = net.params.tensors().len();
    for ti in 0..n_tensors {
        let len = net.params.tensors()[ti].len();
        for i in 0..len {
            let bump = |delta: f64| {
                let mut moved = net.clone();
                moved.params.tensors_mut()[ti].data_mut()[i] += delta;
                loss_of(&moved).0
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            worst = worst.max(grad_err(analytic.tensors()[ti].data()[i], fd));
        }
    }
    out.push(("network backward", worst));
    out
}

/// Worst deviations seen by [`decomposition_trial`].
#[derive(Debug, Default, Clone, Copy)]
pub struct DecompositionGaps {
    /// `|lower_bound - (recon_term + prior_score)|`, expected to be exactly 0.
    pub bound: f64,
    /// `layer_likelihood(x, 0)` differs from `likelihood_lower_bound(x)` (expected false).
    pub layer0_differs: bool,
    /// Relative error of each layer's prior against the explicit partial sum.
    pub partial_sum: f64,
    /// Relative error of `sigma^2 prior_from(k + 1)` against
    /// `logit_y - b_y - <h(k), g(x; k)>`.
    pub logit_identity: f64,
}

impl DecompositionGaps {
    pub fn merge(self, o: DecompositionGaps) -> DecompositionGaps {
        DecompositionGaps {
            bound: self.bound.max(o.bound),
            layer0_differs: self.layer0_differs || o.layer0_differs,
            partial_sum: self.partial_sum.max(o.partial_sum),
            logit_identity: self.logit_identity.max(o.logit_identity),
        }
    }
}

fn scaled_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.abs().max(1.0)
}

pub fn decomposition_trial(net: &Network, x: &Tensor) -> DecompositionGaps {
    use nrm::render::{layer_likelihood, likelihood_lower_bound};
    let trace = net.forward_trace(x).unwrap();
    let y = trace.predictions[0];
    let (hs, us) = super::render_oracle(net, y, &trace.latents);
    let mut gaps = DecompositionGaps::default();
    let pixel = likelihood_lower_bound(net, x).unwrap();
    gaps.layer0_differs = layer_likelihood(net, x, 0).unwrap() != pixel;
    let sigma2 = net.sigma() * net.sigma();
    let logit = trace.logits_row(0)[y] - net.params.dense.bias.data()[y];
    for (k, h) in hs.iter().enumerate().take(net.depth() + 1) {
        let d = layer_likelihood(net, x, k).unwrap();
        gaps.bound = gaps.bound.max((d.lower_bound - (d.recon_term + d.prior_score)).abs());
        let expected = super::prior_oracle(net, &us, k);
        gaps.partial_sum = gaps.partial_sum.max(scaled_err(d.prior_score, expected, expected));
        // the prior from k + 1 up, seen through the network's own logit
        let above = super::prior_oracle(net, &us, k + 1) * sigma2;
        let via_logit = logit - h.dot(&trace.features[k]);
        gaps.logit_identity = gaps.logit_identity.max(scaled_err(above, via_logit, logit));
    }
    gaps
}
