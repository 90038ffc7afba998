//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod checks;
pub mod pipeline;

use nrm::network::{LayerKind, NetworkSpec};
use nrm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Relative error of two inner products, scaled by the magnitude of the terms.
pub fn inner_rel_err(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / scale.max(1e-300)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, i: usize, eps: f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += eps;
    let mut minus = x.clone();
    minus.data_mut()[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

fn at(t: &Tensor, idx: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]]
}

/// Direct-summation cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2] as i64, xs[3] as i64);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = ((h + 2 * pad as i64 - kh as i64) / stride as i64 + 1) as usize;
    let ow = ((wd + 2 * pad as i64 - kw as i64) / stride as i64 + 1) as usize;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let mut k = 0;
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && iy < h && ix >= 0 && ix < wd {
                                    acc += at(w, [co, ci, ky, kx]) * at(x, [bi, ci, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.data_mut()[k] = acc;
                    k += 1;
                }
            }
        }
    }
    out
}

/// Transposed convolution by stamping: every pixel of `u` adds its value
/// times the kernel template at the receptive field it came from.
pub fn stamp_oracle(u: &Tensor, w: &Tensor, stride: usize, pad: usize, hw: (usize, usize)) -> Tensor {
    let (us, ws) = (u.shape(), w.shape());
    let (n, cout, uh, uw) = (us[0], us[1], us[2], us[3]);
    let (cin, kh, kw) = (ws[1], ws[2], ws[3]);
    let (h, wd) = hw;
    let mut out = Tensor::zeros(&[n, cin, h, wd]);
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..uh {
                for ox in 0..uw {
                    let v = at(u, [bi, co, oy, ox]);
                    if v == 0.0 {
                        continue;
                    }
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wd {
                                    let idx = ((bi * cin + ci) * h + iy as usize) * wd + ix as usize;
                                    out.data_mut()[idx] += v * at(w, [co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exhaustive `2 #(pos > neg) + #(pos == neg)` over all pairs.
pub fn brute_pair_count(pos: &[f64], neg: &[f64]) -> u64 {
    let mut acc = 0;
    for &p in pos {
        for &q in neg {
            acc += if p > q {
                2
            } else if p == q {
                1
            } else {
                0
            };
        }
    }
    acc
}

/// Checks `auroc` against the exhaustive pair count: the count recovered from
/// it must be exact and the value within 2^-53 of the correctly rounded ratio.
pub fn auroc_agrees(auroc: f64, pos: &[f64], neg: &[f64]) -> bool {
    let pairs = 2 * pos.len() as u64 * neg.len() as u64;
    let count = brute_pair_count(pos, neg);
    (auroc * pairs as f64).round() as u64 == count && (auroc - count as f64 / pairs as f64).abs() <= f64::EPSILON / 2.0
}

/// Exhaustive pairwise `P(pos > neg) + 0.5 P(pos == neg)`.
pub fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &p in pos {
        for &q in neg {
            acc += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (pos.len() * neg.len()) as f64
}

/// conv(2)-relu-pool / conv(3)-relu / dense(2) on 1x6x6: 133 parameters.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![1, 6, 6],
        classes: 2,
        sigma: 1.0,
        layers: vec![
            LayerKind::Conv { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, padding: 1 }.into(),
            LayerKind::Relu.into(),
            LayerKind::Maxpool { window: 2, stride: 2 }.into(),
            LayerKind::Conv { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 }.into(),
            LayerKind::Relu.into(),
            LayerKind::Flatten.into(),
            LayerKind::Dense { in_features: 27, out_features: 2 }.into(),
        ],
    }
}

/// Replaces every conv bias with uniform values in `[-scale, scale]`
/// (fresh networks have zero biases, which would make the prior vanish).
pub fn randomize_biases(net: &mut nrm::Network, rng: &mut ChaCha8Rng, scale: f64) {
    for c in &mut net.params.convs {
        c.bias = Tensor::from_fn(c.bias.shape(), |_| rng.random_range(-scale..scale));
    }
}

/// Rendering written out directly: dense-row top, scatter unpool, mask
/// multiply and template stamping. Returns `(h(0..=L), u(1..=L))`, where
/// `u[l - 1]` is the masked, unpooled image that layer `l` stamps.
pub fn render_oracle(net: &nrm::Network, y: usize, z: &nrm::LatentState) -> (Vec<Tensor>, Vec<Tensor>) {
    let depth = net.depth();
    let [c, h, w] = net.feature_shape(depth);
    let d = c * h * w;
    let row = net.params.dense.weights.data()[y * d..(y + 1) * d].to_vec();
    let mut hs = vec![Tensor::new(vec![1, c, h, w], row).unwrap()];
    let mut us = Vec::new();
    for l in (1..=depth).rev() {
        let latent = &z.layers[l - 1];
        let current = hs.last().unwrap();
        let mut u = match &latent.pool {
            Some(idx) => {
                let [_, _, ih, iw] = idx.input_shape;
                let [_, _, oh, ow] = idx.shape;
                let mut up = Tensor::zeros(&idx.input_shape);
                for (k, &v) in current.data().iter().enumerate() {
                    up.data_mut()[(k / (oh * ow)) * ih * iw + idx.indices[k]] += v;
                }
                up
            }
            None => current.clone(),
        };
        for (v, &on) in u.data_mut().iter_mut().zip(latent.mask.bits()) {
            if !on {
                *v = 0.0;
            }
        }
        let conv = &net.params.convs[l - 1];
        let [_, ph, pw] = net.feature_shape(l - 1);
        hs.push(stamp_oracle(&u, &conv.weights, conv.stride, conv.padding, (ph, pw)));
        us.push(u);
    }
    hs.reverse();
    us.reverse();
    (hs, us)
}

/// `(1/sigma^2) sum_{l = max(from, 1)..=L} sum_c b_c sum_p u(l)_{c,p}` by explicit loops.
pub fn prior_oracle(net: &nrm::Network, us: &[Tensor], from: usize) -> f64 {
    let mut total = 0.0;
    for l in from.max(1)..=net.depth() {
        let u = &us[l - 1];
        let s = u.shape();
        let plane = s[2] * s[3];
        for ch in 0..s[1] {
            let b = net.params.convs[l - 1].bias.data()[ch];
            for p in 0..plane {
                total += b * u.data()[ch * plane + p];
            }
        }
    }
    total / (net.sigma() * net.sigma())
}
