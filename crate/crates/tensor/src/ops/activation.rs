//! Pointwise nonlinearities and row-wise (log-)softmax.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Lower clamp applied before the logarithm in [`Activation::SafeLog`].
pub const SAFE_LOG_FLOOR: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Square,
    SafeLog,
    /// Over the last axis.
    Softmax,
    /// Over the last axis.
    LogSoftmax,
}

fn rows(t: &Tensor) -> usize {
    *t.shape().last().expect("tensors are never rank 0")
}

pub(crate) fn activation_forward(kind: Activation, x: &Tensor) -> Tensor {
    let d = x.data();
    let out: Vec<f32> = match kind {
        Activation::Relu => d.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Square => d.iter().map(|&v| v * v).collect(),
        Activation::SafeLog => d.iter().map(|&v| v.max(SAFE_LOG_FLOOR).ln()).collect(),
        Activation::Softmax | Activation::LogSoftmax => {
            let width = rows(x);
            let mut out = vec![0f32; d.len()];
            for (row, o) in d.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let sum: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
                if kind == Activation::Softmax {
                    for (ov, &v) in o.iter_mut().zip(row) {
                        *ov = (((v - max) as f64).exp() / sum) as f32;
                    }
                } else {
                    let lse = sum.ln();
                    for (ov, &v) in o.iter_mut().zip(row) {
                        *ov = ((v - max) as f64 - lse) as f32;
                    }
                }
            }
            out
        }
    };
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Gradient with respect to the input given the input `x`, the output `y`
/// and the upstream gradient `gy`.
pub(crate) fn activation_backward(kind: Activation, x: &Tensor, y: &Tensor, gy: &[f32]) -> Vec<f32> {
    let (xd, yd) = (x.data(), y.data());
    match kind {
        Activation::Relu => xd
            .iter()
            .zip(gy)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Square => xd.iter().zip(gy).map(|(&v, &g)| 2.0 * v * g).collect(),
        Activation::SafeLog => xd
            .iter()
            .zip(gy)
            .map(|(&v, &g)| if v > SAFE_LOG_FLOOR { g / v } else { 0.0 })
            .collect(),
        Activation::Softmax => {
            let width = rows(x);
            let mut gx = vec![0f32; gy.len()];
            for ((yr, gr), o) in yd
                .chunks_exact(width)
                .zip(gy.chunks_exact(width))
                .zip(gx.chunks_exact_mut(width))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
                for ((ov, &yv), &g) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = (yv as f64 * (g as f64 - dot)) as f32;
                }
            }
            gx
        }
        Activation::LogSoftmax => {
            let width = rows(x);
            let mut gx = vec![0f32; gy.len()];
            for ((yr, gr), o) in yd
                .chunks_exact(width)
                .zip(gy.chunks_exact(width))
                .zip(gx.chunks_exact_mut(width))
            {
                let total: f64 = gr.iter().map(|&g| g as f64).sum();
                for ((ov, &yv), &g) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = (g as f64 - (yv as f64).exp() * total) as f32;
                }
            }
            gx
        }
    }
}

pub fn pointwise_activation(kind: Activation, input: &Tensor) -> Result<Tensor> {
    let y = activation_forward(kind, input);
    if !y.is_finite() {
        return Err(TensorError::NonFinite("activation"));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_safe_log() {
        let x = Tensor::new(&[2], vec![-2.0, 3.0]).unwrap();
        assert_eq!(pointwise_activation(Activation::Square, &x).unwrap().data(), &[4.0, 9.0]);
        let z = Tensor::new(&[1], vec![0.0]).unwrap();
        let l = pointwise_activation(Activation::SafeLog, &z).unwrap();
        assert!((l.data()[0] as f64 - (1e-6f64).ln()).abs() < 1e-4);
        assert!((l.data()[0] + 13.8155).abs() < 1e-3);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::zeros(&[1, 4]).unwrap();
        let y = pointwise_activation(Activation::Softmax, &x).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let x = Tensor::new(&[1, 3], vec![1000.0, 999.0, -1000.0]).unwrap();
        let y = pointwise_activation(Activation::Softmax, &x).unwrap();
        assert!((y.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let l = pointwise_activation(Activation::LogSoftmax, &x).unwrap();
        assert!(l.is_finite());
    }
}
