//! Average pooling over `[B, C, H, W]`.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad_before: (usize, usize),
    pub input: (usize, usize),
    pub output: (usize, usize),
}

fn axis(op_input: usize, kernel: usize, stride: usize, pad_to_table: bool) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 || op_input == 0 {
        return Err(TensorError::InvalidArgument(
            "avgpool2d: dimensions must be positive".into(),
        ));
    }
    if pad_to_table {
        let out = op_input.div_ceil(stride);
        let total = ((out - 1) * stride + kernel).saturating_sub(op_input);
        Ok((out, total / 2))
    } else {
        if kernel > op_input {
            return Err(TensorError::KernelTooLarge {
                op: "avgpool2d",
                kernel,
                input: op_input,
            });
        }
        Ok(((op_input - kernel) / stride + 1, 0))
    }
}

impl PoolGeometry {
    pub fn resolve(
        input_shape: &[usize],
        kernel: (usize, usize),
        stride: (usize, usize),
        pad_to_table: bool,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "avgpool2d",
                detail: format!("expected [B, C, H, W], got {input_shape:?}"),
            });
        }
        let (oh, ph) = axis(input_shape[2], kernel.0, stride.0, pad_to_table)?;
        let (ow, pw) = axis(input_shape[3], kernel.1, stride.1, pad_to_table)?;
        Ok(PoolGeometry {
            kernel,
            stride,
            pad_before: (ph, pw),
            input: (input_shape[2], input_shape[3]),
            output: (oh, ow),
        })
    }

    /// Calls `f(out_index, in_index)` for every in-bounds window element of
    /// one plane.
    fn each(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w) = self.input;
        for oh in 0..self.output.0 {
            for ow in 0..self.output.1 {
                let o = oh * self.output.1 + ow;
                for kh in 0..self.kernel.0 {
                    let ih = (oh * self.stride.0 + kh) as isize - self.pad_before.0 as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kw in 0..self.kernel.1 {
                        let iw = (ow * self.stride.1 + kw) as isize - self.pad_before.1 as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        f(o, ih as usize * w + iw as usize);
                    }
                }
            }
        }
    }

    pub fn forward(&self, planes: usize, x: &[f32]) -> Vec<f32> {
        let (ip, op) = (self.input.0 * self.input.1, self.output.0 * self.output.1);
        let inv = 1.0 / (self.kernel.0 * self.kernel.1) as f32;
        let mut out = vec![0f32; planes * op];
        for p in 0..planes {
            let xi = &x[p * ip..][..ip];
            let o = &mut out[p * op..][..op];
            self.each(|oi, ii| o[oi] += xi[ii]);
            o.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    pub fn backward(&self, planes: usize, gy: &[f32]) -> Vec<f32> {
        let (ip, op) = (self.input.0 * self.input.1, self.output.0 * self.output.1);
        let inv = 1.0 / (self.kernel.0 * self.kernel.1) as f32;
        let mut gx = vec![0f32; planes * ip];
        for p in 0..planes {
            let g = &gy[p * op..][..op];
            let xi = &mut gx[p * ip..][..ip];
            self.each(|oi, ii| xi[ii] += g[oi] * inv);
        }
        gx
    }
}

/// Average pooling. With `pad_to_table` the input is zero-padded (odd pad
/// at the trailing edge) so the output extent is `ceil(in / stride)`;
/// otherwise no padding is applied. The divisor is always the full window
/// size, padded positions included.
pub fn avgpool2d(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad_to_table: bool,
) -> Result<Tensor> {
    let g = PoolGeometry::resolve(input.shape(), kernel, stride, pad_to_table)?;
    let planes = input.dim(0) * input.dim(1);
    let out = g.forward(planes, input.data());
    Ok(Tensor::from_parts(
        vec![input.dim(0), input.dim(1), g.output.0, g.output.1],
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_padding_gives_t_over_fifteen() {
        let x = Tensor::zeros(&[1, 1, 1125, 1]).unwrap();
        let y = avgpool2d(&x, (75, 1), (15, 1), true).unwrap();
        assert_eq!(y.shape(), &[1, 1, 75, 1]);
        let x = Tensor::zeros(&[1, 1, 150, 1]).unwrap();
        assert_eq!(avgpool2d(&x, (75, 1), (15, 1), true).unwrap().dim(2), 10);
    }

    #[test]
    fn unpadded_length() {
        let x = Tensor::zeros(&[1, 1, 1125, 1]).unwrap();
        let y = avgpool2d(&x, (75, 1), (15, 1), false).unwrap();
        assert_eq!(y.dim(2), 71);
    }

    #[test]
    fn constant_single_window_averages_to_constant() {
        let x = Tensor::full(&[1, 1, 75, 1], 2.5).unwrap();
        let y = avgpool2d(&x, (75, 1), (15, 1), false).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert!((y.data()[0] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn padded_windows_count_pads_in_divisor() {
        // T = 15: one output window of 75 with 30 pads on each side
        let x = Tensor::ones(&[1, 1, 15, 1]).unwrap();
        let y = avgpool2d(&x, (75, 1), (15, 1), true).unwrap();
        assert!((y.data()[0] - 15.0 / 75.0).abs() < 1e-6);
    }
}
