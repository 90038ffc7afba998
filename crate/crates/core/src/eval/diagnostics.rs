//! Ranking and image dumps for inspecting a trained model.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{denormalize_pixel, Dataset};
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Highest,
    Lowest,
}

/// Indices of the `k` highest (or lowest) scores; ties keep index order.
pub fn topk_indices(scores: &[f64], k: usize, order: Order) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(invalid_arg!("k = {k} exceeds the {} available scores", scores.len()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    match order {
        Order::Highest => idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
        Order::Lowest => idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
    }
    idx.truncate(k);
    Ok(idx)
}

/// Binary PGM (one channel) or PPM (three channels) of a `[C, H, W]` or
/// `[1, C, H, W]` image in `[-1, 1]`.
pub fn write_pnm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = match image.shape() {
        [c, h, w] | [1, c, h, w] => (*c, *h, *w),
        s => return Err(shape_err!("cannot write image of shape {s:?}")),
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(shape_err!("PNM images need 1 or 3 channels, got {c}")),
    };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    for p in 0..plane {
        for ch in 0..c {
            bytes.push(denormalize_pixel(data[ch * plane + p]));
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Lays the channels of `[C, H, W]` out on a `ceil(sqrt(C))`-wide grid,
/// giving a single-channel `[1, rows * H, cols * W]` image. Unused cells are `fill`.
pub fn tile_channels(t: &Tensor, fill: f64) -> Result<Tensor> {
    let [c, h, w]: [usize; 3] = t.shape().try_into().map_err(|_| shape_err!("expected [C, H, W], got {:?}", t.shape()))?;
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = Tensor::full(&[1, gh, gw], fill);
    for ch in 0..c {
        let (r0, c0) = ((ch / cols) * h, (ch % cols) * w);
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[(r0 + y) * gw + c0 + x] = t.data()[(ch * h + y) * w + x];
            }
        }
    }
    Ok(out)
}

fn chunks(n: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(CHUNK).map(<[usize]>::to_vec).collect()
}

/// Elementwise mean of each layer's ReLU mask over the dataset, `[C, H, W]` per layer.
pub fn mean_latents(net: &Network, ds: &Dataset) -> Result<Vec<Tensor>> {
    if ds.is_empty() {
        return Err(invalid_arg!("dataset {:?} is empty", ds.name));
    }
    let partial: Vec<Vec<Vec<f64>>> = chunks(ds.len())
        .into_par_iter()
        .map(|idx| {
            let trace = net.forward_trace(&ds.batch(&idx)?)?;
            Ok(trace
                .latents
                .layers
                .iter()
                .map(|l| {
                    let per = l.mask.bits().len() / idx.len();
                    let mut sum = vec![0.0; per];
                    for sample in l.mask.bits().chunks_exact(per) {
                        for (s, &b) in sum.iter_mut().zip(sample) {
                            *s += b as u8 as f64;
                        }
                    }
                    sum
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = ds.len() as f64;
    (0..net.depth())
        .map(|l| {
            let shape = net.architecture().blocks[l].conv_shape;
            let mut total = Tensor::zeros(&shape);
            for p in &partial {
                for (t, v) in total.data_mut().iter_mut().zip(&p[l]) {
                    *t += v;
                }
            }
            Ok(total.scale(1.0 / n))
        })
        .collect()
}

/// For each channel in `features`, the `top_n` images whose feature map
/// `g(x; layer)` reaches the highest spatial maximum on that channel.
pub fn top_activations(
    net: &Network,
    ds: &Dataset,
    layer: usize,
    features: &[usize],
    top_n: usize,
) -> Result<Vec<Vec<usize>>> {
    if layer > net.depth() {
        return Err(invalid_arg!("layer {layer} out of range 0..={}", net.depth()));
    }
    let [c, h, w] = net.feature_shape(layer);
    if let Some(&f) = features.iter().find(|&&f| f >= c) {
        return Err(invalid_arg!("feature {f} out of range for {c} channels at layer {layer}"));
    }
    let plane = h * w;
    let maxima: Vec<Vec<f64>> = chunks(ds.len())
        .into_par_iter()
        .map(|idx| {
            let trace = net.forward_trace(&ds.batch(&idx)?)?;
            let g = &trace.features[layer];
            Ok(idx
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    features
                        .iter()
                        .map(|&f| {
                            let base = (i * c + f) * plane;
                            g.data()[base..base + plane].iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    (0..features.len())
        .map(|j| {
            let scores: Vec<f64> = maxima.iter().map(|m| m[j]).collect();
            topk_indices(&scores, top_n, Order::Highest)
        })
        .collect()
}
