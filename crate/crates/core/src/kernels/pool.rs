use crate::error::{invalid_arg, shape_err, Result};
use crate::tensor::Tensor;

/// Per-output argmax positions of a max-pool. Each entry is the flat spatial
/// index (`row * width + col`) into the pre-pool channel plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    /// Pre-pool `[N, C, H, W]`.
    pub input_shape: [usize; 4],
    /// `[rows, cols]`
    pub window: [usize; 2],
    /// `[rows, cols]`
    pub stride: [usize; 2],
    /// Pooled `[N, C, OH, OW]`.
    pub shape: [usize; 4],
    pub indices: Vec<usize>,
}

/// Pooled extent, requiring the windows to tile the input exactly.
pub fn pool_output_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(invalid_arg!("pool window and stride must be >= 1"));
    }
    if len < window || !(len - window).is_multiple_of(stride) {
        return Err(shape_err!("extent {len} is not divisible into {window}-wide windows at stride {stride}"));
    }
    Ok((len - window) / stride + 1)
}

impl PoolIndices {
    /// Checks that every index lies inside its own pooling window.
    pub fn validate(&self) -> Result<()> {
        let [_, _, h, w] = self.input_shape;
        let [n, c, oh, ow] = self.shape;
        if self.indices.len() != n * c * oh * ow {
            return Err(shape_err!("{} pool indices for pooled shape {:?}", self.indices.len(), self.shape));
        }
        for (k, &idx) in self.indices.iter().enumerate() {
            let plane_pos = k % (oh * ow);
            let (r, col) = (plane_pos / ow, plane_pos % ow);
            let (ir, ic) = (idx / w, idx % w);
            let r0 = r * self.stride[0];
            let c0 = col * self.stride[1];
            if idx >= h * w || ir < r0 || ir >= r0 + self.window[0] || ic < c0 || ic >= c0 + self.window[1] {
                return Err(invalid_arg!("pool index {idx} at output {k} lies outside its window"));
            }
        }
        Ok(())
    }

    pub fn sample(&self, i: usize) -> PoolIndices {
        let per = self.indices.len() / self.shape[0];
        let mut shape = self.shape;
        shape[0] = 1;
        let mut input_shape = self.input_shape;
        input_shape[0] = 1;
        PoolIndices {
            input_shape,
            window: self.window,
            stride: self.stride,
            shape,
            indices: self.indices[i * per..(i + 1) * per].to_vec(),
        }
    }
}

/// Max-pool over square windows with argmax recording. Ties go to the lowest flat index.
pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    maxpool_forward_rect(x, [window, window], [stride, stride])
}

/// [`maxpool_forward`] with independent row/column window and stride.
pub fn maxpool_forward_rect(x: &Tensor, window: [usize; 2], stride: [usize; 2]) -> Result<(Tensor, PoolIndices)> {
    let [n, c, h, w] = x.dims4()?;
    let oh = pool_output_len(h, window[0], stride[0])?;
    let ow = pool_output_len(w, window[1], stride[1])?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut indices = Vec::with_capacity(out.capacity());
    let xs = x.data();
    for plane in 0..n * c {
        let src = &xs[plane * h * w..(plane + 1) * h * w];
        for r in 0..oh {
            for col in 0..ow {
                let (r0, c0) = (r * stride[0], col * stride[1]);
                let mut best_idx = r0 * w + c0;
                let mut best = src[best_idx];
                for i in 0..window[0] {
                    for j in 0..window[1] {
                        let idx = (r0 + i) * w + c0 + j;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                indices.push(best_idx);
            }
        }
    }
    let shape = [n, c, oh, ow];
    Ok((
        Tensor::new(shape.to_vec(), out)?,
        PoolIndices { input_shape: [n, c, h, w], window, stride, shape, indices },
    ))
}

/// Scatters `u` to the recorded argmax positions of a `target_shape` map
/// (accumulating if windows overlap). Also the max-pool input gradient.
pub fn unpool(u: &Tensor, idx: &PoolIndices, target_shape: &[usize]) -> Result<Tensor> {
    if u.shape() != idx.shape {
        return Err(shape_err!("unpool input {:?} does not match indices {:?}", u.shape(), idx.shape));
    }
    if target_shape != idx.input_shape {
        return Err(shape_err!("unpool target {:?} is not the pre-pool shape {:?}", target_shape, idx.input_shape));
    }
    idx.validate()?;
    let [_, _, h, w] = idx.input_shape;
    let [_, _, oh, ow] = idx.shape;
    let mut out = Tensor::zeros(target_shape);
    let od = out.data_mut();
    for (k, (&v, &pos)) in u.data().iter().zip(&idx.indices).enumerate() {
        let plane = k / (oh * ow);
        od[plane * h * w + pos] += v;
    }
    Ok(out)
}

/// Reads `x` at the recorded argmax positions: the adjoint of [`unpool`].
pub fn pool_gather(x: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    if x.shape() != idx.input_shape {
        return Err(shape_err!("gather source {:?} is not the pre-pool shape {:?}", x.shape(), idx.input_shape));
    }
    let [_, _, h, w] = idx.input_shape;
    let [_, _, oh, ow] = idx.shape;
    let xs = x.data();
    let data = idx
        .indices
        .iter()
        .enumerate()
        .map(|(k, &pos)| xs[(k / (oh * ow)) * h * w + pos])
        .collect();
    Tensor::new(idx.shape.to_vec(), data)
}

pub fn maxpool_backward(upstream: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    unpool(upstream, idx, &idx.input_shape)
}
