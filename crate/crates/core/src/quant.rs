//! Symmetric per-tensor int8 quantization.
//!
//! Codes are `clamp(round(x / scale), -127, 127)` with round-half-away-from-
//! zero and a zero point fixed at 0. Integer layers accumulate in i32 and
//! requantize with a 15-bit fixed-point multiplier plus a rounding shift, so
//! the inference path never touches floating point.

use crate::error::{Error, Result};
use crate::ops::{ConvWeights, FcWeights, KERNEL, KERNEL_AREA, PADDING};
use crate::tensor::Tensor;

pub const BIT_WIDTH: u32 = 8;
pub const QMAX: i32 = 127;
/// Fractional bits carried by [`Requantizer::multiplier`].
pub const MULTIPLIER_BITS: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    scale: f32,
}

impl QuantParams {
    pub fn new(scale: f32) -> Result<Self> {
        if scale.is_finite() && scale > 0.0 {
            Ok(Self { scale })
        } else {
            Err(Error::Quant(format!("scale must be positive and finite, got {scale}")))
        }
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn zero_point(&self) -> i32 {
        0
    }

    /// Largest magnitude representable without saturating.
    pub fn range(&self) -> f32 {
        QMAX as f32 * self.scale
    }

    pub(crate) fn same_as(&self, other: &QuantParams) -> bool {
        self.scale.to_bits() == other.scale.to_bits()
    }
}

/// `max|x| / 127`; an all-zero (or empty) tensor gets scale 1.
pub fn choose_scale(values: &[f32]) -> QuantParams {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    scale_for_max(max)
}

pub(crate) fn scale_for_max(max_abs: f32) -> QuantParams {
    if max_abs > 0.0 && max_abs.is_finite() {
        QuantParams { scale: max_abs / QMAX as f32 }
    } else {
        QuantParams { scale: 1.0 }
    }
}

pub fn quantize_value(x: f32, q: QuantParams) -> i8 {
    // f32::round rounds half away from zero
    (x / q.scale).round().clamp(-QMAX as f32, QMAX as f32) as i8
}

pub fn quantize(x: &[f32], q: QuantParams) -> Vec<i8> {
    x.iter().map(|&v| quantize_value(v, q)).collect()
}

pub fn dequantize(codes: &[i8], q: QuantParams) -> Vec<f32> {
    codes.iter().map(|&c| c as f32 * q.scale).collect()
}

pub fn fake_quant_forward(x: &[f32], q: QuantParams) -> Vec<f32> {
    x.iter().map(|&v| quantize_value(v, q) as f32 * q.scale).collect()
}

/// Straight-through estimator: identity inside the representable range, zero
/// where the forward pass saturated.
pub fn fake_quant_backward(grad_out: &[f32], x: &[f32], q: QuantParams) -> Vec<f32> {
    let limit = q.range();
    grad_out
        .iter()
        .zip(x)
        .map(|(&g, &v)| if v.abs() <= limit { g } else { 0.0 })
        .collect()
}

/// Rounds `x` half away from zero and converts to i32, failing when out of range.
fn round_to_i32(x: f64) -> Option<i32> {
    let r = x.round();
    (r.is_finite() && r >= i32::MIN as f64 && r <= i32::MAX as f64).then_some(r as i32)
}

/// Fixed-point representation of a positive real multiplier:
/// `real ≈ multiplier · 2^-shift` with `multiplier ∈ [2^14, 2^15)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requantizer {
    pub multiplier: i32,
    pub shift: u8,
}

impl Requantizer {
    pub fn from_real(real: f64) -> Result<Self> {
        if !(real.is_finite() && real > 0.0) {
            return Err(Error::Quant(format!("requantization scale must be positive, got {real}")));
        }
        let lo = 1i64 << (MULTIPLIER_BITS - 1);
        let mut shift = MULTIPLIER_BITS as i32 - 1 - real.log2().floor() as i32;
        let mut mult = (real * 2f64.powi(shift)).round() as i64;
        // log2 can be off by one near powers of two
        while mult < lo {
            shift += 1;
            mult = (real * 2f64.powi(shift)).round() as i64;
        }
        while mult >= 2 * lo {
            shift -= 1;
            mult = (real * 2f64.powi(shift)).round() as i64;
        }
        if mult == 2 * lo {
            mult = lo;
            shift -= 1;
        }
        if !(1..=62).contains(&shift) {
            return Err(Error::Quant(format!("requantization scale {real} outside fixed-point range")));
        }
        Ok(Self {
            multiplier: mult as i32,
            shift: shift as u8,
        })
    }

    pub fn to_real(&self) -> f64 {
        self.multiplier as f64 / 2f64.powi(self.shift as i32)
    }

    /// `round(acc · multiplier / 2^shift)`, ties away from zero.
    pub fn apply(&self, acc: i32) -> i32 {
        let p = acc as i64 * self.multiplier as i64;
        let half = 1i64 << (self.shift - 1);
        let r = if p >= 0 {
            (p + half) >> self.shift
        } else {
            -((-p + half) >> self.shift)
        };
        r.clamp(i32::MIN as i64, i32::MAX as i64) as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizedKind {
    Conv { in_channels: usize, out_channels: usize },
    Fc { in_features: usize, out_features: usize },
}

impl QuantizedKind {
    pub fn fan_in(&self) -> usize {
        match *self {
            QuantizedKind::Conv { in_channels, .. } => in_channels * KERNEL_AREA,
            QuantizedKind::Fc { in_features, .. } => in_features,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            QuantizedKind::Conv { out_channels, .. } => out_channels,
            QuantizedKind::Fc { out_features, .. } => out_features,
        }
    }
}

/// Largest |accumulator| a layer can reach: every product at `127·128`
/// (requantized activations may carry -128) plus the bias.
pub fn max_accumulator(fan_in: usize, max_abs_bias: i32) -> i64 {
    fan_in as i64 * 127 * 128 + max_abs_bias.unsigned_abs() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub kind: QuantizedKind,
    pub weights: Vec<i8>,
    /// Bias in accumulator units, i.e. scaled by `input.scale · weight.scale`.
    pub bias: Vec<i32>,
    pub input: QuantParams,
    pub weight: QuantParams,
    pub output: QuantParams,
    pub requant: Requantizer,
    pub relu: bool,
}

impl QuantizedLayer {
    /// Assembles a layer from already-quantized parts, checking sizes and that
    /// the i32 accumulator cannot overflow.
    pub fn from_parts(
        kind: QuantizedKind,
        weights: Vec<i8>,
        bias: Vec<i32>,
        input: QuantParams,
        weight: QuantParams,
        output: QuantParams,
        requant: Requantizer,
        relu: bool,
    ) -> Result<Self> {
        if weights.len() != kind.fan_in() * kind.outputs() || bias.len() != kind.outputs() {
            return Err(Error::Quant(format!(
                "{kind:?} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        let max_bias = bias.iter().map(|b| b.unsigned_abs()).max().unwrap_or(0);
        if max_accumulator(kind.fan_in(), max_bias.min(i32::MAX as u32) as i32) > i32::MAX as i64 {
            return Err(Error::Quant(format!("{kind:?} can overflow the 32-bit accumulator")));
        }
        Ok(Self {
            kind,
            weights,
            bias,
            input,
            weight,
            output,
            requant,
            relu,
        })
    }

    fn build(
        kind: QuantizedKind,
        weight_f: &[f32],
        bias_f: &[f32],
        input: QuantParams,
        weight: QuantParams,
        output: QuantParams,
        relu: bool,
    ) -> Result<Self> {
        let acc_scale = input.scale as f64 * weight.scale as f64;
        let bias = bias_f
            .iter()
            .map(|&b| {
                round_to_i32(b as f64 / acc_scale)
                    .ok_or_else(|| Error::Quant(format!("bias {b} does not fit in i32 at scale {acc_scale}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let requant = Requantizer::from_real(acc_scale / output.scale as f64)?;
        Self::from_parts(kind, quantize(weight_f, weight), bias, input, weight, output, requant, relu)
    }

    pub fn conv(w: &ConvWeights, input: QuantParams, weight: QuantParams, output: QuantParams, relu: bool) -> Result<Self> {
        let kind = QuantizedKind::Conv {
            in_channels: w.in_channels,
            out_channels: w.out_channels,
        };
        Self::build(kind, &w.weight, &w.bias, input, weight, output, relu)
    }

    pub fn fc(w: &FcWeights, input: QuantParams, weight: QuantParams, output: QuantParams, relu: bool) -> Result<Self> {
        let kind = QuantizedKind::Fc {
            in_features: w.in_features,
            out_features: w.out_features,
        };
        Self::build(kind, &w.weight, &w.bias, input, weight, output, relu)
    }

    fn finish(&self, acc: i32) -> i8 {
        let v = self.requant.apply(acc).clamp(-128, 127);
        if self.relu {
            v.max(0) as i8
        } else {
            v as i8
        }
    }

    fn check_input(&self, op: &str, t: &QuantizedTensor) -> Result<()> {
        if !t.params.same_as(&self.input) {
            return Err(Error::Quant(format!(
                "{op}: input scale {} does not match layer input scale {}",
                t.params.scale, self.input.scale
            )));
        }
        Ok(())
    }
}

/// Int8 codes together with the scale that gives them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Tensor<i8>,
    pub params: QuantParams,
}

impl QuantizedTensor {
    pub fn quantize(x: &Tensor, params: QuantParams) -> Self {
        let codes = Tensor::new(x.shape().to_vec(), quantize(x.data(), params)).expect("same shape");
        Self { codes, params }
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor::new(self.codes.shape().to_vec(), dequantize(self.codes.data(), self.params)).expect("same shape")
    }
}

fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

/// Integer 3x3 same-padded convolution with fused requantization and
/// optional ReLU.
pub fn qconv2d_int8(input: &QuantizedTensor, layer: &QuantizedLayer) -> Result<QuantizedTensor> {
    layer.check_input("qconv2d_int8", input)?;
    let QuantizedKind::Conv {
        in_channels,
        out_channels,
    } = layer.kind
    else {
        return Err(Error::Quant("qconv2d_int8 given a dense layer".into()));
    };
    let (c, h, w) = input.codes.chw()?;
    if c != in_channels || h == 0 || w == 0 {
        return Err(Error::shape(
            "qconv2d_int8",
            format!("input {:?} for {in_channels}-channel layer", input.codes.shape()),
        ));
    }
    let k = in_channels * KERNEL_AREA;
    let plane = h * w;
    let src = input.codes.data();

    // one contiguous patch per output pixel, ordered like the weight rows
    let mut patches = vec![0i8; plane * k];
    for y in 0..h {
        for x in 0..w {
            let patch = &mut patches[(y * w + x) * k..][..k];
            for ci in 0..c {
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - PADDING as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - PADDING as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        patch[ci * KERNEL_AREA + ky * KERNEL + kx] = src[ci * plane + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }

    let mut out = vec![0i8; out_channels * plane];
    for (co, (row, &bias)) in layer.weights.chunks_exact(k).zip(&layer.bias).enumerate() {
        let dst = &mut out[co * plane..][..plane];
        for (d, patch) in dst.iter_mut().zip(patches.chunks_exact(k)) {
            *d = layer.finish(dot_i8(row, patch) + bias);
        }
    }
    Ok(QuantizedTensor {
        codes: Tensor::new(vec![out_channels, h, w], out)?,
        params: layer.output,
    })
}

pub fn qfc_int8(input: &QuantizedTensor, layer: &QuantizedLayer) -> Result<QuantizedTensor> {
    layer.check_input("qfc_int8", input)?;
    let QuantizedKind::Fc {
        in_features,
        out_features,
    } = layer.kind
    else {
        return Err(Error::Quant("qfc_int8 given a conv layer".into()));
    };
    if input.codes.len() != in_features {
        return Err(Error::shape(
            "qfc_int8",
            format!("input length {} != in_features {in_features}", input.codes.len()),
        ));
    }
    let x = input.codes.data();
    let out: Vec<i8> = layer
        .weights
        .chunks_exact(in_features)
        .zip(&layer.bias)
        .map(|(row, &b)| layer.finish(dot_i8(row, x) + b))
        .collect();
    debug_assert_eq!(out.len(), out_features);
    Ok(QuantizedTensor {
        codes: Tensor::from_codes(out),
        params: layer.output,
    })
}

impl Tensor<i8> {
    pub fn from_codes(codes: Vec<i8>) -> Self {
        let n = codes.len();
        Tensor::new(vec![n], codes).expect("rank 1")
    }
}
