use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Binary ReLU activation pattern: `true` exactly where the pre-activation is positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReluMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl ReluMask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(shape_err!("mask shape {:?} needs {} entries, got {}", shape, shape.iter().product::<usize>(), bits.len()));
        }
        Ok(ReluMask { shape, bits })
    }

    pub fn from_tensor(x: &Tensor) -> Self {
        ReluMask { shape: x.shape().to_vec(), bits: x.data().iter().map(|&v| v > 0.0).collect() }
    }

    pub fn all(shape: &[usize], value: bool) -> Self {
        ReluMask { shape: shape.to_vec(), bits: vec![value; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .expect("mask shape is consistent")
    }

    /// Zeroes the entries of `x` where the mask is off.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.shape.as_slice() {
            return Err(shape_err!("mask {:?} applied to tensor {:?}", self.shape, x.shape()));
        }
        let data = x.data().iter().zip(&self.bits).map(|(&v, &on)| if on { v } else { 0.0 }).collect();
        Tensor::new(self.shape.clone(), data)
    }

    /// Sample `i` along the leading axis.
    pub fn sample(&self, i: usize) -> ReluMask {
        let n = self.shape[0];
        let per = self.bits.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        ReluMask { shape, bits: self.bits[i * per..(i + 1) * per].to_vec() }
    }
}

pub fn relu_forward(x: &Tensor) -> (Tensor, ReluMask) {
    let mask = ReluMask::from_tensor(x);
    let out = x.map(|v| if v > 0.0 { v } else { 0.0 });
    (out, mask)
}

/// `upstream ⊙ mask`
pub fn relu_backward(upstream: &Tensor, mask: &ReluMask) -> Result<Tensor> {
    mask.apply(upstream)
}
