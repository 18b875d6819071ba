use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub(crate) fn check_dense(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    if input.ndim() != 2 || weight.ndim() != 2 || input.dim(1) != weight.dim(0) {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            detail: format!(
                "input {:?} cannot multiply weight {:?}",
                input.shape(),
                weight.shape()
            ),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [weight.dim(1)] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                detail: format!("bias {:?} for {} outputs", b.shape(), weight.dim(1)),
            });
        }
    }
    Ok((input.dim(0), input.dim(1), weight.dim(1)))
}

pub(crate) fn dense_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, f, o) = check_dense(input, weight, bias)?;
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![0f32; b * o];
    for (xr, yr) in x.chunks_exact(f).zip(out.chunks_exact_mut(o)) {
        if let Some(bias) = bias {
            yr.copy_from_slice(bias.data());
        }
        for (fi, &xv) in xr.iter().enumerate() {
            for (yv, &wv) in yr.iter_mut().zip(&w[fi * o..(fi + 1) * o]) {
                *yv += xv * wv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, o], out))
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub(crate) fn dense_backward(input: &Tensor, weight: &Tensor, gy: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (f, o) = (weight.dim(0), weight.dim(1));
    let (x, w) = (input.data(), weight.data());
    let mut gx = vec![0f32; x.len()];
    let mut gw = vec![0f32; w.len()];
    let mut gb = vec![0f32; o];
    for ((xr, gr), gxr) in x.chunks_exact(f).zip(gy.chunks_exact(o)).zip(gx.chunks_exact_mut(f)) {
        for (bv, &g) in gb.iter_mut().zip(gr) {
            *bv += g;
        }
        for fi in 0..f {
            let wr = &w[fi * o..(fi + 1) * o];
            gxr[fi] = wr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            let xv = xr[fi];
            for (gwv, &g) in gw[fi * o..(fi + 1) * o].iter_mut().zip(gr) {
                *gwv += xv * g;
            }
        }
    }
    (gx, gw, gb)
}

/// Affine map `input · weight + bias` with `input` `[B, F]`, `weight`
/// `[F, O]`, `bias` `[O]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    dense_forward(input, weight, bias)
}
