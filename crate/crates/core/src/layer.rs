//! Feed-forward layers with deterministic execution and exact
//! multiply-accumulate accounting. Only multiplies are counted: bias adds,
//! pooling and comparisons are free, matching a MAC-based cost metric.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax, Tensor};

/// Count of multiply-accumulate operations. Additive over layer sequences.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct MacCount(pub u64);

impl MacCount {
    pub const ZERO: MacCount = MacCount(0);

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl Add for MacCount {
    type Output = MacCount;
    fn add(self, rhs: MacCount) -> MacCount {
        MacCount(self.0 + rhs.0)
    }
}

impl AddAssign for MacCount {
    fn add_assign(&mut self, rhs: MacCount) {
        self.0 += rhs.0;
    }
}

impl Sub for MacCount {
    type Output = MacCount;
    fn sub(self, rhs: MacCount) -> MacCount {
        MacCount(self.0 - rhs.0)
    }
}

impl Sum for MacCount {
    fn sum<I: Iterator<Item = MacCount>>(iter: I) -> MacCount {
        iter.fold(MacCount::ZERO, Add::add)
    }
}

impl fmt::Display for MacCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Padding mode for 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

/// One layer of a feed-forward network.
///
/// Dense expects a 1-D input of length `in_dim` with weights stored row-major
/// as `(in_dim, out_dim)`. Conv1d expects `[length, channels]` (a plain
/// `[length]` input is treated as single-channel) with kernels stored
/// row-major as `(kernel_size, in_channels, out_channels)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Conv1d {
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Maxpool1d {
        width: usize,
        stride: usize,
    },
    AvgpoolGlobal,
    Relu,
    Softmax,
    Flatten,
}

fn default_stride() -> usize {
    1
}

fn check_finite_params(weights: &[f64], bias: Option<&[f64]>, kind: &str) -> Result<()> {
    let finite = weights.iter().all(|v| v.is_finite())
        && bias.is_none_or(|b| b.iter().all(|v| v.is_finite()));
    if finite {
        Ok(())
    } else {
        Err(Error::Model(format!("{kind} has non-finite parameters")))
    }
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv1d { .. } => "conv1d",
            Layer::Maxpool1d { .. } => "maxpool1d",
            Layer::AvgpoolGlobal => "avgpool_global",
            Layer::Relu => "relu",
            Layer::Softmax => "softmax",
            Layer::Flatten => "flatten",
        }
    }

    /// Checks the layer's own parameters (weight lengths, strides, finiteness).
    pub fn validate(&self) -> Result<()> {
        match self {
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                bias,
            } => {
                if *in_dim == 0 || *out_dim == 0 {
                    return Err(Error::Model("dense dimensions must be positive".into()));
                }
                if weights.len() != in_dim * out_dim {
                    return Err(Error::Model(format!(
                        "dense weight count {} does not match in_dim*out_dim = {}",
                        weights.len(),
                        in_dim * out_dim
                    )));
                }
                if let Some(b) = bias {
                    if b.len() != *out_dim {
                        return Err(Error::Model(format!(
                            "dense bias length {} does not match out_dim {}",
                            b.len(),
                            out_dim
                        )));
                    }
                }
                check_finite_params(weights, bias.as_deref(), "dense")
            }
            Layer::Conv1d {
                kernel_size,
                in_channels,
                out_channels,
                stride,
                weights,
                bias,
                ..
            } => {
                if *kernel_size == 0 || *in_channels == 0 || *out_channels == 0 {
                    return Err(Error::Model("conv1d dimensions must be positive".into()));
                }
                if *stride == 0 {
                    return Err(Error::Model("conv1d stride must be at least 1".into()));
                }
                let expected = kernel_size * in_channels * out_channels;
                if weights.len() != expected {
                    return Err(Error::Model(format!(
                        "conv1d weight count {} does not match k*c_in*c_out = {expected}",
                        weights.len()
                    )));
                }
                if let Some(b) = bias {
                    if b.len() != *out_channels {
                        return Err(Error::Model(format!(
                            "conv1d bias length {} does not match out_channels {}",
                            b.len(),
                            out_channels
                        )));
                    }
                }
                check_finite_params(weights, bias.as_deref(), "conv1d")
            }
            Layer::Maxpool1d { width, stride } => {
                if *width == 0 || *stride == 0 {
                    return Err(Error::Model(
                        "maxpool1d width and stride must be at least 1".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape, or a shape error naming the layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: &str| -> Error {
            Error::shape(
                format!("{} layer", self.kind_name()),
                expected,
                format!("{input:?}"),
            )
        };
        match self {
            Layer::Dense {
                in_dim, out_dim, ..
            } => {
                if input.len() == 1 && input[0] == *in_dim {
                    Ok(vec![*out_dim])
                } else {
                    Err(mismatch(&format!("[{in_dim}]")))
                }
            }
            Layer::Conv1d {
                kernel_size,
                in_channels,
                out_channels,
                stride,
                padding,
                ..
            } => {
                let (len, channels) = series_shape(input)
                    .ok_or_else(|| mismatch(&format!("[length, {in_channels}] or [length]")))?;
                if channels != *in_channels {
                    return Err(mismatch(&format!("[length, {in_channels}]")));
                }
                let out_len = conv_output_len(len, *kernel_size, *stride, *padding)
                    .ok_or_else(|| mismatch(&format!("length >= kernel_size {kernel_size}")))?;
                Ok(vec![out_len, *out_channels])
            }
            Layer::Maxpool1d { width, stride } => {
                let (len, _) = series_shape(input).ok_or_else(|| mismatch("[length, channels]"))?;
                if *width > len {
                    return Err(mismatch(&format!("length >= pool width {width}")));
                }
                let out_len = (len - width) / stride + 1;
                let mut out = input.to_vec();
                out[0] = out_len;
                Ok(out)
            }
            Layer::AvgpoolGlobal => {
                let (_, channels) =
                    series_shape(input).ok_or_else(|| mismatch("[length, channels]"))?;
                Ok(vec![channels])
            }
            Layer::Relu | Layer::Softmax => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Multiply-accumulate cost of applying this layer to `input_shape`.
    /// Dense costs `in*out`; conv1d costs `out_len*k*c_in*c_out`; pooling,
    /// activations and flatten cost zero.
    pub fn mac_cost(&self, input_shape: &[usize]) -> Result<MacCount> {
        let out = self.output_shape(input_shape)?;
        Ok(match self {
            Layer::Dense {
                in_dim, out_dim, ..
            } => MacCount((in_dim * out_dim) as u64),
            Layer::Conv1d {
                kernel_size,
                in_channels,
                out_channels,
                ..
            } => MacCount((out[0] * kernel_size * in_channels * out_channels) as u64),
            _ => MacCount::ZERO,
        })
    }

    /// Applies the layer. Deterministic: identical input yields bit-identical
    /// output.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let data = input.data();
        let out_data = match self {
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                bias,
            } => {
                let mut out = vec![0.0; *out_dim];
                for (j, slot) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..*in_dim {
                        acc += data[i] * weights[i * out_dim + j];
                    }
                    if let Some(b) = bias {
                        acc += b[j];
                    }
                    *slot = acc;
                }
                out
            }
            Layer::Conv1d {
                kernel_size,
                in_channels,
                out_channels,
                stride,
                padding,
                weights,
                bias,
            } => {
                let (len, _) = series_shape(input.shape()).expect("validated by output_shape");
                let out_len = out_shape[0];
                let pad_left = match padding {
                    Padding::Valid => 0isize,
                    Padding::Same => {
                        let total = ((out_len - 1) * stride + kernel_size).saturating_sub(len);
                        (total / 2) as isize
                    }
                };
                let at = |pos: isize, c: usize| -> f64 {
                    if pos < 0 || pos as usize >= len {
                        0.0
                    } else {
                        data[pos as usize * in_channels + c]
                    }
                };
                let mut out = vec![0.0; out_len * out_channels];
                for o in 0..out_len {
                    let start = (o * stride) as isize - pad_left;
                    for co in 0..*out_channels {
                        let mut acc = 0.0;
                        for k in 0..*kernel_size {
                            for ci in 0..*in_channels {
                                let w = weights[(k * in_channels + ci) * out_channels + co];
                                acc += at(start + k as isize, ci) * w;
                            }
                        }
                        if let Some(b) = bias {
                            acc += b[co];
                        }
                        out[o * out_channels + co] = acc;
                    }
                }
                out
            }
            Layer::Maxpool1d { width, stride } => {
                let (len, channels) = series_shape(input.shape()).expect("validated");
                let out_len = out_shape[0];
                let mut out = vec![0.0; out_len * channels];
                for o in 0..out_len {
                    for c in 0..channels {
                        let mut best = f64::NEG_INFINITY;
                        for k in 0..*width {
                            let pos = o * stride + k;
                            if pos < len {
                                best = best.max(data[pos * channels + c]);
                            }
                        }
                        out[o * channels + c] = best;
                    }
                }
                out
            }
            Layer::AvgpoolGlobal => {
                let (len, channels) = series_shape(input.shape()).expect("validated");
                let mut out = vec![0.0; channels];
                for (c, slot) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for pos in 0..len {
                        acc += data[pos * channels + c];
                    }
                    *slot = acc / len as f64;
                }
                out
            }
            Layer::Relu => data
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
            Layer::Softmax => {
                // Softmax over the last axis.
                let width = *input.shape().last().expect("non-empty shape");
                let mut out = Vec::with_capacity(data.len());
                for row in data.chunks(width) {
                    out.extend(softmax(row));
                }
                out
            }
            Layer::Flatten => data.to_vec(),
        };
        Tensor::new(out_shape, out_data)
    }
}

/// Interprets a shape as a 1-D series: `[length]` is single-channel,
/// `[length, channels]` is multi-channel.
fn series_shape(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [len] => Some((*len, 1)),
        [len, channels] => Some((*len, *channels)),
        _ => None,
    }
}

fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Valid => {
            if kernel > len {
                None
            } else {
                Some((len - kernel) / stride + 1)
            }
        }
        Padding::Same => Some(len.div_ceil(stride)),
    }
}

/// Total MAC cost of a layer sequence applied to `input_shape`, chaining
/// shapes layer to layer.
pub fn sequence_cost(layers: &[Layer], input_shape: &[usize]) -> Result<MacCount> {
    let mut shape = input_shape.to_vec();
    let mut total = MacCount::ZERO;
    for layer in layers {
        total += layer.mac_cost(&shape)?;
        shape = layer.output_shape(&shape)?;
    }
    Ok(total)
}

/// Runs a layer sequence, returning the final activation.
pub fn sequence_forward(layers: &[Layer], input: &Tensor) -> Result<Tensor> {
    let mut current = input.clone();
    for layer in layers {
        current = layer.forward(&current)?;
    }
    Ok(current)
}
