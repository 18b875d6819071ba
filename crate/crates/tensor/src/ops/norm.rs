//! Per-channel batch normalization over `[B, C, H, W]`.

use super::Mode;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Running mean and (unbiased) variance per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(RunningStats {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::ones(&[channels])?,
        })
    }
}

/// What the backward pass needs from a forward batch-norm.
#[derive(Clone, Debug)]
pub(crate) struct BnSaved {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    /// Train-mode statistics depend on the input; eval-mode ones do not.
    pub batch_stats: bool,
}

pub(crate) fn check_bn_shapes(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize> {
    if input.ndim() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            detail: format!("expected [B, C, H, W], got {:?}", input.shape()),
        });
    }
    let c = input.dim(1);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            detail: format!(
                "{c} channels but gamma {:?} and beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        });
    }
    Ok(c)
}

/// Forward pass. In `Train` mode the batch moments are used and
/// `running` is updated with momentum [`BN_MOMENTUM`]; in `Eval` mode the
/// running moments are used and left untouched.
pub(crate) fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    running: &mut RunningStats,
) -> Result<(Tensor, BnSaved)> {
    let c = check_bn_shapes(input, gamma, beta)?;
    if running.mean.shape() != [c] || running.var.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            detail: format!("running stats do not cover {c} channels"),
        });
    }
    let b = input.dim(0);
    let plane = input.dim(2) * input.dim(3);
    let n = b * plane;
    let x = input.data();
    let mut out = vec![0f32; x.len()];
    let mut xhat = vec![0f32; x.len()];
    let mut inv_std = vec![0f32; c];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut s = 0f64;
                let mut s2 = 0f64;
                for bi in 0..b {
                    for &v in &x[(bi * c + ch) * plane..][..plane] {
                        s += v as f64;
                        s2 += (v as f64) * (v as f64);
                    }
                }
                let mean = s / n as f64;
                let var = (s2 / n as f64 - mean * mean).max(0.0);
                let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
                let rm = &mut running.mean.data_mut()[ch];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean as f32;
                let rv = &mut running.var.data_mut()[ch];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
                (mean, var)
            }
            Mode::Eval => (
                running.mean.data()[ch] as f64,
                running.var.data()[ch] as f64,
            ),
        };
        let is = 1.0 / (var + BN_EPSILON as f64).sqrt();
        inv_std[ch] = is as f32;
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                let h = ((x[i] as f64 - mean) * is) as f32;
                xhat[i] = h;
                out[i] = g * h + bt;
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), out),
        BnSaved {
            xhat,
            inv_std,
            batch_stats: mode == Mode::Train,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub(crate) fn batchnorm_backward(
    shape: &[usize],
    gamma: &Tensor,
    saved: &BnSaved,
    gy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (b, c) = (shape[0], shape[1]);
    let plane = shape[2] * shape[3];
    let n = (b * plane) as f64;
    let mut gx = vec![0f32; gy.len()];
    let mut gg = vec![0f32; c];
    let mut gb = vec![0f32; c];
    for ch in 0..c {
        let mut sum_gy = 0f64;
        let mut sum_gy_xhat = 0f64;
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            for (&g, &xh) in gy[off..off + plane].iter().zip(&saved.xhat[off..off + plane]) {
                sum_gy += g as f64;
                sum_gy_xhat += g as f64 * xh as f64;
            }
        }
        gg[ch] = sum_gy_xhat as f32;
        gb[ch] = sum_gy as f32;
        let scale = gamma.data()[ch] as f64 * saved.inv_std[ch] as f64;
        for bi in 0..b {
            let off = (bi * c + ch) * plane;
            for i in off..off + plane {
                gx[i] = if saved.batch_stats {
                    (scale * (gy[i] as f64 - sum_gy / n - saved.xhat[i] as f64 * sum_gy_xhat / n))
                        as f32
                } else {
                    (scale * gy[i] as f64) as f32
                };
            }
        }
    }
    (gx, gg, gb)
}

/// Batch normalization as a standalone function.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    running: &mut RunningStats,
) -> Result<Tensor> {
    batchnorm_forward(input, gamma, beta, mode, running).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_moments(t: &Tensor, ch: usize) -> (f64, f64) {
        let (b, c) = (t.dim(0), t.dim(1));
        let plane = t.dim(2) * t.dim(3);
        let vals: Vec<f64> = (0..b)
            .flat_map(|bi| t.data()[(bi * c + ch) * plane..][..plane].iter().map(|&v| v as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[1, 2, 5, 1], 3.5).unwrap();
        let mut rs = RunningStats::new(2).unwrap();
        let y = batchnorm(&x, &Tensor::ones(&[2]).unwrap(), &Tensor::zeros(&[2]).unwrap(), Mode::Train, &mut rs).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn affine_shifts_channel_mean_to_beta() {
        let x = Tensor::from_fn(&[2, 1, 6, 1], |i| (i as f32 * 0.7).sin()).unwrap();
        let mut rs = RunningStats::new(1).unwrap();
        let y = batchnorm(&x, &Tensor::full(&[1], 2.0).unwrap(), &Tensor::full(&[1], 3.0).unwrap(), Mode::Train, &mut rs).unwrap();
        let (mean, std) = channel_moments(&y, 0);
        assert!((mean - 3.0).abs() < 1e-5);
        assert!((std - 2.0).abs() < 1e-3);
    }

    #[test]
    fn random_batch_moments_match_direct_recomputation() {
        let mut rng = crate::RngState::new(11);
        let x = Tensor::from_fn(&[4, 8, 16, 1], |_| rng.normal() as f32 * 3.0 + 1.5).unwrap();
        let mut rs = RunningStats::new(8).unwrap();
        let y = batchnorm(&x, &Tensor::ones(&[8]).unwrap(), &Tensor::zeros(&[8]).unwrap(), Mode::Train, &mut rs).unwrap();
        for ch in 0..8 {
            let (mean, std) = channel_moments(&y, ch);
            assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
            assert!((std - 1.0).abs() < 1e-3, "channel {ch} std {std}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let mut rs = RunningStats::new(1).unwrap();
        batchnorm(&x, &Tensor::ones(&[1]).unwrap(), &Tensor::zeros(&[1]).unwrap(), Mode::Train, &mut rs).unwrap();
        assert!((rs.mean.data()[0] - 0.2).abs() < 1e-7);
        // unbiased var of {1, 3} is 2
        assert!((rs.var.data()[0] - (0.9 + 0.2)).abs() < 1e-6);
        let before = rs.clone();
        batchnorm(&x, &Tensor::ones(&[1]).unwrap(), &Tensor::zeros(&[1]).unwrap(), Mode::Eval, &mut rs).unwrap();
        assert_eq!(before, rs);
    }
}
