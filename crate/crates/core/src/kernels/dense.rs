use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[out_features, in_features]`
    pub weights: Tensor,
    /// `[out_features]`
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[out, _] = weights.shape() else {
            return Err(shape_err!("dense weights must be rank 2, got {:?}", weights.shape()));
        };
        if bias.shape() != [out] {
            return Err(shape_err!("dense bias {:?} does not match {} outputs", bias.shape(), out));
        }
        Ok(DenseParams { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }
}

fn rows(x: &Tensor, width: usize) -> Result<usize> {
    let n = x.batch();
    if x.shape().len() < 2 || x.len() != n * width {
        return Err(shape_err!("expected [N, ...] with {width} features per sample, got {:?}", x.shape()));
    }
    Ok(n)
}

/// `y = W x + b` per sample; trailing axes of `x` are flattened.
pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor> {
    let (out_f, in_f) = (p.out_features(), p.in_features());
    let n = rows(x, in_f)?;
    let ws = p.weights.data();
    let mut out = Vec::with_capacity(n * out_f);
    for row in x.data().chunks_exact(in_f) {
        for o in 0..out_f {
            let w_row = &ws[o * in_f..(o + 1) * in_f];
            let acc: f64 = w_row.iter().zip(row).map(|(a, b)| a * b).sum();
            out.push(acc + p.bias.data()[o]);
        }
    }
    Tensor::new(vec![n, out_f], out)
}

/// `Wᵀ u` per sample: the bias-free adjoint of [`dense_forward`].
pub fn dense_transpose(u: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let &[out_f, in_f] = weights.shape() else {
        return Err(shape_err!("dense weights must be rank 2, got {:?}", weights.shape()));
    };
    let n = rows(u, out_f)?;
    let ws = weights.data();
    let mut out = vec![0.0; n * in_f];
    for (row, dst) in u.data().chunks_exact(out_f).zip(out.chunks_exact_mut(in_f)) {
        for (o, &uv) in row.iter().enumerate() {
            for (d, &w) in dst.iter_mut().zip(&ws[o * in_f..(o + 1) * in_f]) {
                *d += uv * w;
            }
        }
    }
    Tensor::new(vec![n, in_f], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    /// Same shape as the forward input.
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, p: &DenseParams, grad_out: &Tensor) -> Result<DenseGrads> {
    let (out_f, in_f) = (p.out_features(), p.in_features());
    let n = rows(x, in_f)?;
    if grad_out.shape() != [n, out_f] {
        return Err(shape_err!("upstream gradient {:?} does not match [{n}, {out_f}]", grad_out.shape()));
    }
    let input = dense_transpose(grad_out, &p.weights)?.reshape(x.shape())?;
    let mut weights = Tensor::zeros(&[out_f, in_f]);
    let mut bias = Tensor::zeros(&[out_f]);
    for (row, g) in x.data().chunks_exact(in_f).zip(grad_out.data().chunks_exact(out_f)) {
        for (o, &gv) in g.iter().enumerate() {
            bias.data_mut()[o] += gv;
            for (w, &xv) in weights.data_mut()[o * in_f..(o + 1) * in_f].iter_mut().zip(row) {
                *w += gv * xv;
            }
        }
    }
    Ok(DenseGrads { input, weights, bias })
}
