use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{conv_output_len, pool_output_len};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    Maxpool { window: usize, stride: usize },
    Flatten,
    Dense { in_features: usize, out_features: usize },
}

/// One layer of the feed-forward network. `out_shape`, when given, is the
/// declared per-sample output size and is checked against the computed one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_shape: Option<Vec<usize>>,
}

impl From<LayerKind> for LayerSpec {
    fn from(kind: LayerKind) -> Self {
        LayerSpec { kind, out_shape: None }
    }
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Pixel-noise standard deviation.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub layers: Vec<LayerSpec>,
}

/// A conv → relu → optional maxpool group: one rendering layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// Index of the conv layer within `NetworkSpec::layers`.
    pub layer_index: usize,
    pub in_shape: [usize; 3],
    /// Conv (and ReLU) output, before pooling.
    pub conv_shape: [usize; 3],
    /// `(window, stride)`
    pub pool: Option<(usize, usize)>,
    pub out_shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub blocks: Vec<Block>,
    pub dense_in: usize,
    pub classes: usize,
}

fn spec_err(layer: usize, reason: impl Into<String>) -> Error {
    Error::Spec { layer, reason: reason.into() }
}

impl NetworkSpec {
    /// conv(16)-relu-pool / conv(32)-relu-pool / conv(64)-relu / flatten-dense(K),
    /// all 3x3 with stride 1 and padding 1.
    pub fn reference(input_shape: [usize; 3], classes: usize) -> NetworkSpec {
        let mut layers = Vec::new();
        let mut c = input_shape[0];
        let mut hw = (input_shape[1], input_shape[2]);
        for (out, pool) in [(16, true), (32, true), (64, false)] {
            layers.push(LayerKind::Conv { in_channels: c, out_channels: out, kernel: 3, stride: 1, padding: 1 }.into());
            layers.push(LayerKind::Relu.into());
            if pool {
                layers.push(LayerKind::Maxpool { window: 2, stride: 2 }.into());
                hw = (hw.0 / 2, hw.1 / 2);
            }
            c = out;
        }
        layers.push(LayerKind::Flatten.into());
        layers.push(LayerKind::Dense { in_features: c * hw.0 * hw.1, out_features: classes }.into());
        NetworkSpec { input_shape: input_shape.to_vec(), classes, sigma: 1.0, layers }
    }

    /// The reference network with each max-pool replaced by a stride-2 conv.
    pub fn all_conv(input_shape: [usize; 3], classes: usize) -> NetworkSpec {
        let mut layers = Vec::new();
        let mut c = input_shape[0];
        let (mut h, mut w) = (input_shape[1], input_shape[2]);
        for (out, stride) in [(16, 2), (32, 2), (64, 1)] {
            layers.push(LayerKind::Conv { in_channels: c, out_channels: out, kernel: 3, stride, padding: 1 }.into());
            layers.push(LayerKind::Relu.into());
            h = (h + 2 - 3) / stride + 1;
            w = (w + 2 - 3) / stride + 1;
            c = out;
        }
        layers.push(LayerKind::Flatten.into());
        layers.push(LayerKind::Dense { in_features: c * h * w, out_features: classes }.into());
        NetworkSpec { input_shape: input_shape.to_vec(), classes, sigma: 1.0, layers }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Checks the layer chain and groups it into rendering blocks. Errors name
    /// the first offending layer.
    pub fn architecture(&self) -> Result<Architecture> {
        let n_layers = self.layers.len();
        let input: [usize; 3] = self
            .input_shape
            .as_slice()
            .try_into()
            .map_err(|_| spec_err(0, format!("input shape {:?} must be [C, H, W]", self.input_shape)))?;
        if input.contains(&0) {
            return Err(spec_err(0, "input shape has a zero extent"));
        }
        if self.classes == 0 {
            return Err(spec_err(n_layers, "class count must be positive"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(spec_err(0, format!("sigma must be a positive finite number, got {}", self.sigma)));
        }

        let mut blocks = Vec::new();
        let mut shape = input;
        let mut i = 0;
        let check_declared = |idx: usize, got: &[usize]| -> Result<()> {
            match &self.layers[idx].out_shape {
                Some(declared) if declared.as_slice() != got => Err(spec_err(
                    idx,
                    format!("declared output shape {declared:?} but the layer produces {got:?}"),
                )),
                _ => Ok(()),
            }
        };

        while i < n_layers {
            match self.layers[i].kind {
                LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } => {
                    if in_channels != shape[0] {
                        return Err(spec_err(
                            i,
                            format!("conv expects {in_channels} input channels but receives {}", shape[0]),
                        ));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(spec_err(i, "conv channels, kernel and stride must be positive"));
                    }
                    let oh = conv_output_len(shape[1], kernel, stride, padding);
                    let ow = conv_output_len(shape[2], kernel, stride, padding);
                    let (Some(oh), Some(ow)) = (oh, ow) else {
                        return Err(spec_err(i, format!("{kernel}x{kernel} kernel does not fit {shape:?}")));
                    };
                    let conv_shape = [out_channels, oh, ow];
                    check_declared(i, &conv_shape)?;
                    if !matches!(self.layers.get(i + 1).map(|l| &l.kind), Some(LayerKind::Relu)) {
                        return Err(spec_err(i + 1, "every conv must be followed by relu"));
                    }
                    check_declared(i + 1, &conv_shape)?;
                    let mut out_shape = conv_shape;
                    let mut pool = None;
                    let mut next = i + 2;
                    if let Some(LayerKind::Maxpool { window, stride }) = self.layers.get(next).map(|l| &l.kind) {
                        let ph = pool_output_len(oh, *window, *stride).map_err(|e| spec_err(next, e.to_string()))?;
                        let pw = pool_output_len(ow, *window, *stride).map_err(|e| spec_err(next, e.to_string()))?;
                        out_shape = [out_channels, ph, pw];
                        check_declared(next, &out_shape)?;
                        pool = Some((*window, *stride));
                        next += 1;
                    }
                    blocks.push(Block { layer_index: i, in_shape: shape, conv_shape, pool, out_shape });
                    shape = out_shape;
                    i = next;
                }
                LayerKind::Flatten => {
                    if !matches!(self.layers.get(i + 1).map(|l| &l.kind), Some(LayerKind::Dense { .. })) {
                        return Err(spec_err(i, "flatten must directly precede the dense head"));
                    }
                    check_declared(i, &[shape.iter().product()])?;
                    i += 1;
                }
                LayerKind::Dense { in_features, out_features } => {
                    let features: usize = shape.iter().product();
                    if in_features != features {
                        return Err(spec_err(i, format!("dense expects {in_features} inputs but receives {features}")));
                    }
                    if out_features != self.classes {
                        return Err(spec_err(
                            i,
                            format!("dense head has {out_features} outputs but there are {} classes", self.classes),
                        ));
                    }
                    if i + 1 != n_layers {
                        return Err(spec_err(i + 1, "the dense head must be the last layer"));
                    }
                    check_declared(i, &[out_features])?;
                    return Ok(Architecture { blocks, dense_in: features, classes: self.classes });
                }
                LayerKind::Relu => return Err(spec_err(i, "relu must directly follow a conv")),
                LayerKind::Maxpool { .. } => return Err(spec_err(i, "maxpool must directly follow conv-relu")),
            }
        }
        Err(spec_err(n_layers, "missing the dense classifier head"))
    }
}
