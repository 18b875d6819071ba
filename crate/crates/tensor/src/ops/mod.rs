//! Forward kernels and their hand-written adjoints.
//!
//! Each public function here is a plain tensor-in, tensor-out operation. The
//! [`Tape`](crate::Tape) records the same kernels and calls the matching
//! backward routines.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;

use crate::error::{Result, TensorError};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn dropout_mask(len: usize, rate: f32, rng: &mut RngState) -> Vec<f32> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.bernoulli(rate as f64) { 0.0 } else { keep })
        .collect()
}

pub(crate) fn check_rate(rate: f32) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Inverted dropout: in `Train` mode zero each value with probability
/// `rate` and scale survivors by `1 / (1 - rate)`; identity in `Eval`.
pub fn dropout(input: &Tensor, rate: f32, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.len(), rate, rng);
    let data = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::new(input.shape(), data)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute(input: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let shape = input.shape();
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
        return Err(TensorError::InvalidArgument(format!(
            "permutation {axes:?} invalid for rank {}",
            shape.len()
        )));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = input.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let data = input.data();
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
    let rank = first.ndim();
    if axis >= rank {
        return Err(TensorError::InvalidArgument(format!("axis {axis} >= rank {rank}")));
    }
    for p in parts {
        let ok = p.ndim() == rank
            && (0..rank).all(|a| a == axis || p.dim(a) == first.dim(a));
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("{:?} vs {:?} along axis {axis}", first.shape(), p.shape()),
            });
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.dim(axis)).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.dim(axis) * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Ok(Tensor::from_parts(shape, out))
}

/// `len` entries of `axis` starting at `start`.
pub fn slice(input: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= input.ndim() || len == 0 || start + len > input.dim(axis) {
        return Err(TensorError::InvalidArgument(format!(
            "slice [{start}, {}) of axis {axis} out of range for {:?}",
            start + len,
            input.shape()
        )));
    }
    let outer: usize = input.shape()[..axis].iter().product();
    let inner: usize = input.shape()[axis + 1..].iter().product();
    let full = input.dim(axis) * inner;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&input.data()[o * full + start * inner..][..len * inner]);
    }
    let mut shape = input.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

/// Scatter `grad` (shape of a slice) back into a zero tensor of `full_shape`.
pub(crate) fn unslice(grad: &[f32], full_shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<f32> {
    let outer: usize = full_shape[..axis].iter().product();
    let inner: usize = full_shape[axis + 1..].iter().product();
    let full = full_shape[axis] * inner;
    let mut out = vec![0f32; outer * full];
    for o in 0..outer {
        out[o * full + start * inner..][..len * inner].copy_from_slice(&grad[o * len * inner..][..len * inner]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_identity_cases() {
        let mut rng = RngState::new(1);
        let x = Tensor::from_fn(&[10], |i| i as f32).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = RngState::new(2);
        let x = Tensor::ones(&[100_000]).unwrap();
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn permute_round_trip_and_layout() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f32).unwrap();
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k, i, j] = x[i, j, k]
        assert_eq!(p.data()[(2 + 1) * 3 + 2], x.data()[(3 + 2) * 4 + 1]);
        let back = permute(&p, &inverse_permutation(&[2, 0, 1])).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor::from_fn(&[2, 1, 3], |i| i as f32).unwrap();
        let b = Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f32).unwrap();
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(slice(&c, 1, 0, 1).unwrap(), a);
        assert_eq!(slice(&c, 1, 1, 2).unwrap(), b);
    }
}
