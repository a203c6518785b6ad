//! Forward and backward kernels for the operator set the detector uses:
//! 3x3 same-padded convolution, 2x2/2 max pooling, fully connected and ReLU.
//!
//! Convolutions are lowered to im2col + sgemm. `matrixmultiply` is run
//! without its threading feature, so a given input always produces the same
//! bits.

use crate::error::{Error, Result};
use crate::tensor::{ensure_finite, Tensor};

pub const KERNEL: usize = 3;
pub const KERNEL_AREA: usize = KERNEL * KERNEL;
pub const PADDING: usize = 1;

/// A bank of 3x3 filters, `[out][in][ky][kx]` row-major, plus one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(out_channels: usize, in_channels: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::shape("conv weights", "channel counts must be positive"));
        }
        if weight.len() != out_channels * in_channels * KERNEL_AREA {
            return Err(Error::shape(
                "conv weights",
                format!(
                    "{out_channels}x{in_channels}x3x3 needs {} weights, got {}",
                    out_channels * in_channels * KERNEL_AREA,
                    weight.len()
                ),
            ));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(
                "conv weights",
                format!("expected {out_channels} biases, got {}", bias.len()),
            ));
        }
        Ok(Self {
            out_channels,
            in_channels,
            weight,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weight: vec![0.0; out_channels * in_channels * KERNEL_AREA],
            bias: vec![0.0; out_channels],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * KERNEL_AREA
    }
}

/// Dense layer weights, `[out][in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FcWeights {
    pub out_features: usize,
    pub in_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl FcWeights {
    pub fn new(out_features: usize, in_features: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if out_features == 0 || in_features == 0 {
            return Err(Error::shape("fc weights", "feature counts must be positive"));
        }
        if weight.len() != out_features * in_features || bias.len() != out_features {
            return Err(Error::shape(
                "fc weights",
                format!(
                    "{out_features}x{in_features} layer got {} weights and {} biases",
                    weight.len(),
                    bias.len()
                ),
            ));
        }
        Ok(Self {
            out_features,
            in_features,
            weight,
            bias,
        })
    }

    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        Self {
            out_features,
            in_features,
            weight: vec![0.0; out_features * in_features],
            bias: vec![0.0; out_features],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Argmax positions recorded by [`maxpool2x2_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

/// Lays out every 3x3 neighbourhood (zero padded) as a column:
/// row `ci*9 + ky*3 + kx`, column `y*W + x`.
pub(crate) fn im2col(input: &[f32], channels: usize, height: usize, width: usize, col: &mut Vec<f32>) {
    let plane = height * width;
    col.clear();
    col.resize(channels * KERNEL_AREA * plane, 0.0);
    for ci in 0..channels {
        let src = &input[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((ci * KERNEL_AREA) + ky * KERNEL + kx) * plane..][..plane];
                for y in 0..height {
                    let sy = y as isize + ky as isize - PADDING as isize;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let src_row = &src[sy as usize * width..][..width];
                    let dst_row = &mut row[y * width..][..width];
                    match kx {
                        0 if width > 1 => dst_row[1..].copy_from_slice(&src_row[..width - 1]),
                        1 => dst_row.copy_from_slice(src_row),
                        2 if width > 1 => dst_row[..width - 1].copy_from_slice(&src_row[1..]),
                        _ => {}
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the input plane,
/// accumulating overlapping contributions.
fn col2im(col: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let plane = height * width;
    let mut out = vec![0.0f32; channels * plane];
    for ci in 0..channels {
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((ci * KERNEL_AREA) + ky * KERNEL + kx) * plane..][..plane];
                for y in 0..height {
                    let sy = y as isize + ky as isize - PADDING as isize;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[sy as usize * width..][..width];
                    let src_row = &row[y * width..][..width];
                    match kx {
                        0 if width > 1 => {
                            for (d, s) in dst_row[..width - 1].iter_mut().zip(&src_row[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst_row.iter_mut().zip(src_row) {
                                *d += s;
                            }
                        }
                        2 if width > 1 => {
                            for (d, s) in dst_row[1..].iter_mut().zip(&src_row[..width - 1]) {
                                *d += s;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    out
}

/// `c = a · b` for row-major `a` (m×k) and `b` (k×n), with explicit strides
/// so transposed operands can be passed without copying.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
) {
    assert!(m > 0 && k > 0 && n > 0 && c.len() >= m * n);
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the slices cover every index the strides address (checked above
    // in debug builds, guaranteed by callers' shape validation).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_conv_input(op: &'static str, input: &Tensor, w: &ConvWeights) -> Result<(usize, usize, usize)> {
    let (c, h, wd) = input.chw()?;
    if h == 0 || wd == 0 {
        return Err(Error::shape(op, "empty spatial input"));
    }
    if c != w.in_channels {
        return Err(Error::shape(
            op,
            format!("input has {c} channels, weights expect {}", w.in_channels),
        ));
    }
    Ok((c, h, wd))
}

/// Same-padded 3x3 convolution, stride 1: `(Cin,H,W) -> (Cout,H,W)`.
pub fn conv2d_forward(input: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    let (c, h, wd) = check_conv_input("conv2d_forward", input, w)?;
    let plane = h * wd;
    let mut col = Vec::new();
    im2col(input.data(), c, h, wd, &mut col);
    let k = w.patch_len();
    let mut out = vec![0.0f32; w.out_channels * plane];
    gemm(w.out_channels, k, plane, &w.weight, (k, 1), &col, (plane, 1), &mut out);
    for (row, b) in out.chunks_exact_mut(plane).zip(&w.bias) {
        for v in row {
            *v += b;
        }
    }
    ensure_finite("conv2d_forward", &out)?;
    Tensor::new(vec![w.out_channels, h, wd], out)
}

pub fn conv2d_backward(grad_out: &Tensor, input: &Tensor, w: &ConvWeights) -> Result<ConvGrads> {
    let (c, h, wd) = check_conv_input("conv2d_backward", input, w)?;
    if grad_out.shape() != [w.out_channels, h, wd] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [w.out_channels, h, wd]
            ),
        ));
    }
    let plane = h * wd;
    let k = w.patch_len();
    let mut col = Vec::new();
    im2col(input.data(), c, h, wd, &mut col);

    let mut grad_w = vec![0.0f32; w.out_channels * k];
    // dW = dY · colᵀ
    gemm(w.out_channels, plane, k, grad_out.data(), (plane, 1), &col, (1, plane), &mut grad_w);

    // dcol = Wᵀ · dY, reusing the col buffer
    gemm(k, w.out_channels, plane, &w.weight, (1, k), grad_out.data(), (plane, 1), &mut col);
    let grad_in = col2im(&col, c, h, wd);

    let grad_b: Vec<f32> = grad_out.data().chunks_exact(plane).map(|r| r.iter().sum()).collect();

    ensure_finite("conv2d_backward", &grad_w)?;
    ensure_finite("conv2d_backward", &grad_in)?;
    Ok(ConvGrads {
        input: Tensor::new(vec![c, h, wd], grad_in)?,
        weight: grad_w,
        bias: grad_b,
    })
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped; ties
/// resolve to the first position in row-major order within the window.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolCache)> {
    let (c, h, w) = input.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2x2_forward", format!("spatial dims {h}x{w} below 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    ensure_finite("maxpool2x2_forward", &out)?;
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        PoolCache {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool2x2_backward",
            format!("grad_out has {} elements, cache {}", grad_out.len(), cache.argmax.len()),
        ));
    }
    let [c, h, w] = cache.input_shape;
    let mut grad_in = vec![0.0f32; c * h * w];
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        grad_in[idx] += g;
    }
    Tensor::new(cache.input_shape.to_vec(), grad_in)
}

/// Max pooling over int8 codes. Quantization is monotone, so this commutes
/// with dequantization exactly.
pub fn maxpool2x2_int8(input: &Tensor<i8>) -> Result<Tensor<i8>> {
    let (c, h, w) = input.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2x2_int8", format!("spatial dims {h}x{w} below 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                out.push(src[top].max(src[top + 1]).max(src[top + w]).max(src[top + w + 1]));
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn fc_forward(input: &Tensor, w: &FcWeights) -> Result<Tensor> {
    if input.len() != w.in_features {
        return Err(Error::shape(
            "fc_forward",
            format!("input length {} != in_features {}", input.len(), w.in_features),
        ));
    }
    let x = input.data();
    let out: Vec<f32> = w
        .weight
        .chunks_exact(w.in_features)
        .zip(&w.bias)
        .map(|(row, b)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>() + b)
        .collect();
    ensure_finite("fc_forward", &out)?;
    Ok(Tensor::from_vec(out))
}

pub fn fc_backward(grad_out: &Tensor, input: &Tensor, w: &FcWeights) -> Result<FcGrads> {
    if input.len() != w.in_features || grad_out.len() != w.out_features {
        return Err(Error::shape(
            "fc_backward",
            format!(
                "input {} / grad_out {} vs layer {}x{}",
                input.len(),
                grad_out.len(),
                w.out_features,
                w.in_features
            ),
        ));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut grad_in = vec![0.0f32; w.in_features];
    let mut grad_w = vec![0.0f32; w.weight.len()];
    for ((row, grow), &go) in w
        .weight
        .chunks_exact(w.in_features)
        .zip(grad_w.chunks_exact_mut(w.in_features))
        .zip(g)
    {
        for ((gi, gw), (&wv, &xv)) in grad_in.iter_mut().zip(grow.iter_mut()).zip(row.iter().zip(x)) {
            *gi += wv * go;
            *gw = go * xv;
        }
    }
    ensure_finite("fc_backward", &grad_in)?;
    ensure_finite("fc_backward", &grad_w)?;
    Ok(FcGrads {
        input: Tensor::new(input.shape().to_vec(), grad_in)?,
        weight: grad_w,
        bias: g.to_vec(),
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient passes where the forward input was strictly positive; at zero it
/// is zero.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}
