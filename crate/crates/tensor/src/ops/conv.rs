//! Strided 2-D convolution over NCHW tensors and its adjoint.
//!
//! Kernels are laid out `[Cout, Cin, Kh, Kw]`. The transposed convolution
//! with the same kernel and geometry is the exact adjoint of the forward
//! convolution, so a compress/reconstruct pair built from one stride
//! configuration maps lengths back to the original extent.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, zeros split evenly with the odd
    /// one at the trailing edge.
    Same,
    /// No padding, output extent `floor((in - k) / stride) + 1`.
    Valid,
}

/// Resolved geometry of one spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisGeometry {
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_before: usize,
}

impl AxisGeometry {
    pub fn resolve(
        op: &'static str,
        input: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 || input == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "{op}: input {input}, kernel {kernel} and stride {stride} must be positive"
            )));
        }
        match padding {
            Padding::Same => {
                let output = input.div_ceil(stride);
                let total = ((output - 1) * stride + kernel).saturating_sub(input);
                Ok(AxisGeometry {
                    input,
                    output,
                    kernel,
                    stride,
                    pad_before: total / 2,
                })
            }
            Padding::Valid => {
                if kernel > input {
                    return Err(TensorError::KernelTooLarge {
                        op,
                        kernel,
                        input,
                    });
                }
                Ok(AxisGeometry {
                    input,
                    output: (input - kernel) / stride + 1,
                    kernel,
                    stride,
                    pad_before: 0,
                })
            }
        }
    }

    /// Output positions `o` for which `o * stride + k - pad_before` lands
    /// inside the input, as a half-open range.
    #[inline]
    fn valid_outputs(&self, k: usize) -> (usize, usize) {
        let lo = if self.pad_before > k {
            (self.pad_before - k).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.input + self.pad_before > k {
            ((self.input - 1 + self.pad_before - k) / self.stride + 1).min(self.output)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    #[inline]
    fn input_index(&self, o: usize, k: usize) -> usize {
        o * self.stride + k - self.pad_before
    }
}

/// Fully resolved convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub h: AxisGeometry,
    pub w: AxisGeometry,
}

impl ConvGeometry {
    /// Geometry of `conv2d(input, kernel)` where `input` is `[B, Cin, H, W]`.
    pub fn for_conv(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if input_shape.len() != 4 || kernel_shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "expected 4-D input and kernel, got {input_shape:?} and {kernel_shape:?}"
                ),
            });
        }
        if input_shape[1] != kernel_shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "input has {} channels but kernel expects {}",
                    input_shape[1], kernel_shape[1]
                ),
            });
        }
        Ok(ConvGeometry {
            batch: input_shape[0],
            in_channels: kernel_shape[1],
            out_channels: kernel_shape[0],
            h: AxisGeometry::resolve("conv2d", input_shape[2], kernel_shape[2], stride.0, padding)?,
            w: AxisGeometry::resolve("conv2d", input_shape[3], kernel_shape[3], stride.1, padding)?,
        })
    }

    /// Geometry of the transposed convolution that maps `input`
    /// (`[B, Cout, h, w]`) back to spatial extent `output_hw`.
    pub fn for_transposed(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: (usize, usize),
        padding: Padding,
        output_hw: (usize, usize),
    ) -> Result<Self> {
        if input_shape.len() != 4 || kernel_shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_transposed",
                detail: format!(
                    "expected 4-D input and kernel, got {input_shape:?} and {kernel_shape:?}"
                ),
            });
        }
        if input_shape[1] != kernel_shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_transposed",
                detail: format!(
                    "input has {} channels but kernel produces {}",
                    input_shape[1], kernel_shape[0]
                ),
            });
        }
        let h = AxisGeometry::resolve(
            "conv2d_transposed",
            output_hw.0,
            kernel_shape[2],
            stride.0,
            padding,
        )?;
        let w = AxisGeometry::resolve(
            "conv2d_transposed",
            output_hw.1,
            kernel_shape[3],
            stride.1,
            padding,
        )?;
        for (axis, given) in [(h, input_shape[2]), (w, input_shape[3])] {
            if axis.output != given {
                return Err(TensorError::InconsistentOutputHint {
                    hint: axis.input,
                    input: given,
                    stride: axis.stride,
                });
            }
        }
        Ok(ConvGeometry {
            batch: input_shape[0],
            in_channels: kernel_shape[1],
            out_channels: kernel_shape[0],
            h,
            w,
        })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.in_channels, self.h.input, self.w.input]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.h.output, self.w.output]
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.h.kernel, self.w.kernel]
    }
}

/// One contiguous stretch of work: kernel tap `tap` applied to `count`
/// output rows starting at flat plane offsets `out_off` / `in_off`.
#[derive(Clone, Copy, Debug)]
struct Run {
    tap: usize,
    out_off: usize,
    in_off: usize,
    count: usize,
}

/// Every (kernel tap, output column) pair with its valid output-row range.
///
/// For each kernel tap `(kh, kw)` and output column `ow`, output rows
/// `oh0..oh1` read input rows `oh * sh + kh - ph`. The table depends only
/// on the geometry, so it is built once per call and reused for every
/// (batch, channel) plane pair.
fn runs(g: &ConvGeometry) -> Vec<Run> {
    let (ow_dim, iw_dim) = (g.w.output, g.w.input);
    let mut out = Vec::new();
    for kh in 0..g.h.kernel {
        let (oh0, oh1) = g.h.valid_outputs(kh);
        if oh0 >= oh1 {
            continue;
        }
        for kw in 0..g.w.kernel {
            let (ow0, ow1) = g.w.valid_outputs(kw);
            for ow in ow0..ow1 {
                out.push(Run {
                    tap: kh * g.w.kernel + kw,
                    out_off: oh0 * ow_dim + ow,
                    in_off: g.h.input_index(oh0, kh) * iw_dim + g.w.input_index(ow, kw),
                    count: oh1 - oh0,
                });
            }
        }
    }
    out
}

/// Raw forward convolution over resolved geometry.
pub(crate) fn conv_forward_raw(g: &ConvGeometry, x: &[f32], k: &[f32]) -> Vec<f32> {
    let table = runs(g);
    let in_plane = g.h.input * g.w.input;
    let out_plane = g.h.output * g.w.output;
    let taps = g.h.kernel * g.w.kernel;
    let out_step = g.w.output;
    let in_step = g.h.stride * g.w.input;
    let mut out = vec![0f32; g.batch * g.out_channels * out_plane];
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let o = &mut out[(b * g.out_channels + co) * out_plane..][..out_plane];
            for ci in 0..g.in_channels {
                let xi = &x[(b * g.in_channels + ci) * in_plane..][..in_plane];
                let kk = &k[(co * g.in_channels + ci) * taps..][..taps];
                for &Run { tap, out_off, in_off, count: n } in &table {
                    let kv = kk[tap];
                    if out_step == 1 && in_step == 1 {
                        for (ov, &xv) in o[out_off..out_off + n].iter_mut().zip(&xi[in_off..in_off + n]) {
                            *ov += kv * xv;
                        }
                    } else {
                        for j in 0..n {
                            o[out_off + j * out_step] += kv * xi[in_off + j * in_step];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv_forward_raw`] with respect to the input.
pub(crate) fn conv_input_grad_raw(g: &ConvGeometry, gy: &[f32], k: &[f32]) -> Vec<f32> {
    let table = runs(g);
    let in_plane = g.h.input * g.w.input;
    let out_plane = g.h.output * g.w.output;
    let taps = g.h.kernel * g.w.kernel;
    let out_step = g.w.output;
    let in_step = g.h.stride * g.w.input;
    let mut gx = vec![0f32; g.batch * g.in_channels * in_plane];
    for b in 0..g.batch {
        for ci in 0..g.in_channels {
            let xi = &mut gx[(b * g.in_channels + ci) * in_plane..][..in_plane];
            for co in 0..g.out_channels {
                let o = &gy[(b * g.out_channels + co) * out_plane..][..out_plane];
                let kk = &k[(co * g.in_channels + ci) * taps..][..taps];
                for &Run { tap, out_off, in_off, count: n } in &table {
                    let kv = kk[tap];
                    if out_step == 1 && in_step == 1 {
                        for (xv, &ov) in xi[in_off..in_off + n].iter_mut().zip(&o[out_off..out_off + n]) {
                            *xv += kv * ov;
                        }
                    } else {
                        for j in 0..n {
                            xi[in_off + j * in_step] += kv * o[out_off + j * out_step];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut part = [0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            part[l] += x[l] * y[l];
        }
    }
    part.iter().sum::<f32>() + tail
}

/// Gradient of [`conv_forward_raw`] with respect to the kernel.
pub(crate) fn conv_kernel_grad_raw(g: &ConvGeometry, x: &[f32], gy: &[f32]) -> Vec<f32> {
    let table = runs(g);
    let in_plane = g.h.input * g.w.input;
    let out_plane = g.h.output * g.w.output;
    let taps = g.h.kernel * g.w.kernel;
    let out_step = g.w.output;
    let in_step = g.h.stride * g.w.input;
    let mut gk = vec![0f64; g.out_channels * g.in_channels * taps];
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            let o = &gy[(b * g.out_channels + co) * out_plane..][..out_plane];
            for ci in 0..g.in_channels {
                let xi = &x[(b * g.in_channels + ci) * in_plane..][..in_plane];
                let kk = &mut gk[(co * g.in_channels + ci) * taps..][..taps];
                for &Run { tap, out_off, in_off, count: n } in &table {
                    let mut acc = 0f32;
                    if out_step == 1 && in_step == 1 {
                        acc = dot(&o[out_off..out_off + n], &xi[in_off..in_off + n]);
                    } else {
                        for j in 0..n {
                            acc += o[out_off + j * out_step] * xi[in_off + j * in_step];
                        }
                    }
                    kk[tap] += acc as f64;
                }
            }
        }
    }
    gk.into_iter().map(|v| v as f32).collect()
}

/// Strided 2-D convolution (cross-correlation) of `input` `[B, Cin, H, W]`
/// with `kernel` `[Cout, Cin, Kh, Kw]`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::for_conv(input.shape(), kernel.shape(), stride, padding)?;
    let out = conv_forward_raw(&g, input.data(), kernel.data());
    Ok(Tensor::from_parts(g.output_shape().to_vec(), out))
}

/// Transposed convolution: the adjoint of `conv2d(·, kernel, stride,
/// padding)` applied to an input of spatial extent `output_hw`.
///
/// `input` is `[B, Cout, h, w]` and must have exactly the extent that the
/// forward convolution would produce from `output_hw`.
pub fn conv2d_transposed(
    input: &Tensor,
    kernel: &Tensor,
    stride: (usize, usize),
    padding: Padding,
    output_hw: (usize, usize),
) -> Result<Tensor> {
    let g = ConvGeometry::for_transposed(input.shape(), kernel.shape(), stride, padding, output_hw)?;
    let out = conv_input_grad_raw(&g, input.data(), kernel.data());
    Ok(Tensor::from_parts(g.input_shape().to_vec(), out))
}
