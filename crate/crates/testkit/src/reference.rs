//! Reference kernels that share no code with the production kernels.
//!
//! Everything here works on plain `f64` slices with explicit shapes and is
//! written in the most literal way possible: convolutions materialize the
//! padded input, transposed convolutions scatter into a padded buffer and
//! crop, batch-norm recomputes moments in two passes. Gradients are obtained
//! by central finite differences of these reference forwards.

/// Row-major 4-D array `[n, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Arr4 {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Arr4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Arr4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Arr4 { shape, data }
    }

    fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(n, c, h, w)]
    }

    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f64 {
        let i = self.idx(n, c, h, w);
        &mut self.data[i]
    }
}

/// Zero padding `(before, after)` for one axis: `same` follows the
/// `ceil(in / stride)` rule with the odd zero at the end.
pub fn pads(input: usize, kernel: usize, stride: usize, same: bool) -> (usize, usize) {
    if !same {
        return (0, 0);
    }
    let out = input.div_ceil(stride);
    let need = (out - 1) * stride + kernel;
    let total = need.saturating_sub(input);
    (total / 2, total - total / 2)
}

fn pad(x: &Arr4, ph: (usize, usize), pw: (usize, usize)) -> Arr4 {
    let [n, c, h, w] = x.shape;
    let mut p = Arr4::zeros([n, c, h + ph.0 + ph.1, w + pw.0 + pw.1]);
    for a in 0..n {
        for b in 0..c {
            for i in 0..h {
                for j in 0..w {
                    *p.at_mut(a, b, i + ph.0, j + pw.0) = x.at(a, b, i, j);
                }
            }
        }
    }
    p
}

/// Cross-correlation with kernel `[cout, cin, kh, kw]`.
pub fn conv2d(x: &Arr4, k: &Arr4, stride: (usize, usize), same: bool) -> Arr4 {
    let [n, cin, h, w] = x.shape;
    let [cout, kcin, kh, kw] = k.shape;
    assert_eq!(cin, kcin);
    let ph = pads(h, kh, stride.0, same);
    let pw = pads(w, kw, stride.1, same);
    let p = pad(x, ph, pw);
    let oh = (p.shape[2] - kh) / stride.0 + 1;
    let ow = (p.shape[3] - kw) / stride.1 + 1;
    let mut y = Arr4::zeros([n, cout, oh, ow]);
    for a in 0..n {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                s += k.at(o, c, u, v) * p.at(a, c, i * stride.0 + u, j * stride.1 + v);
                            }
                        }
                    }
                    *y.at_mut(a, o, i, j) = s;
                }
            }
        }
    }
    y
}

/// Transposed convolution producing spatial extent `out_hw`: scatter every
/// input sample through the kernel into a padded buffer, then crop.
pub fn conv2d_transposed(z: &Arr4, k: &Arr4, stride: (usize, usize), same: bool, out_hw: (usize, usize)) -> Arr4 {
    let [n, cout, zh, zw] = z.shape;
    let [kcout, cin, kh, kw] = k.shape;
    assert_eq!(cout, kcout);
    let ph = pads(out_hw.0, kh, stride.0, same);
    let pw = pads(out_hw.1, kw, stride.1, same);
    let mut buf = Arr4::zeros([n, cin, out_hw.0 + ph.0 + ph.1, out_hw.1 + pw.0 + pw.1]);
    for a in 0..n {
        for o in 0..cout {
            for i in 0..zh {
                for j in 0..zw {
                    let zv = z.at(a, o, i, j);
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (r, s) = (i * stride.0 + u, j * stride.1 + v);
                                if r < buf.shape[2] && s < buf.shape[3] {
                                    *buf.at_mut(a, c, r, s) += zv * k.at(o, c, u, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut y = Arr4::zeros([n, cin, out_hw.0, out_hw.1]);
    for a in 0..n {
        for c in 0..cin {
            for i in 0..out_hw.0 {
                for j in 0..out_hw.1 {
                    *y.at_mut(a, c, i, j) = buf.at(a, c, i + ph.0, j + pw.0);
                }
            }
        }
    }
    y
}

/// Train-mode batch-norm using biased batch variance and `eps`.
pub fn batchnorm_train(x: &Arr4, gamma: &[f64], beta: &[f64], eps: f64) -> Arr4 {
    let [n, c, h, w] = x.shape;
    let mut y = x.clone();
    for ch in 0..c {
        let mut vals = Vec::new();
        for a in 0..n {
            for i in 0..h {
                for j in 0..w {
                    vals.push(x.at(a, ch, i, j));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        for a in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let v = x.at(a, ch, i, j);
                    *y.at_mut(a, ch, i, j) = gamma[ch] * (v - mean) / (var + eps).sqrt() + beta[ch];
                }
            }
        }
    }
    y
}

/// Eval-mode batch-norm with fixed statistics.
pub fn batchnorm_eval(x: &Arr4, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Arr4 {
    let mut y = x.clone();
    let [n, c, h, w] = x.shape;
    for a in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    *y.at_mut(a, ch, i, j) = gamma[ch] * (x.at(a, ch, i, j) - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch];
                }
            }
        }
    }
    y
}

/// Average pooling; `pad` applies the `ceil(in / stride)` zero padding and
/// the divisor is always the full window.
pub fn avgpool(x: &Arr4, kernel: (usize, usize), stride: (usize, usize), pad_same: bool) -> Arr4 {
    let [_, _, h, w] = x.shape;
    let p = pad(
        x,
        pads(h, kernel.0, stride.0, pad_same),
        pads(w, kernel.1, stride.1, pad_same),
    );
    let oh = (p.shape[2] - kernel.0) / stride.0 + 1;
    let ow = (p.shape[3] - kernel.1) / stride.1 + 1;
    let mut y = Arr4::zeros([x.shape[0], x.shape[1], oh, ow]);
    for a in 0..x.shape[0] {
        for c in 0..x.shape[1] {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for u in 0..kernel.0 {
                        for v in 0..kernel.1 {
                            s += p.at(a, c, i * stride.0 + u, j * stride.1 + v);
                        }
                    }
                    *y.at_mut(a, c, i, j) = s / (kernel.0 * kernel.1) as f64;
                }
            }
        }
    }
    y
}

pub fn map(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

pub fn safe_log(v: f64) -> f64 {
    v.max(1e-6).ln()
}

/// `x` `[b, f]` times `w` `[f, o]` plus optional bias.
pub fn dense(x: &[f64], b: usize, w: &[f64], f: usize, o: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; b * o];
    for r in 0..b {
        for c in 0..o {
            let mut s = bias.map_or(0.0, |bb| bb[c]);
            for i in 0..f {
                s += x[r * f + i] * w[i * o + c];
            }
            y[r * o + c] = s;
        }
    }
    y
}

pub fn log_softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        y.extend(row.iter().map(|v| v - lse));
    }
    y
}

pub fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    log_softmax_rows(x, width).into_iter().map(f64::exp).collect()
}

pub fn nll(logprobs: &[f64], width: usize, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(r, &l)| -logprobs[r * width + l])
        .sum::<f64>()
        / labels.len() as f64
}

/// `Σ_i w_i · y_i`, a generic scalar projection for gradient checks.
pub fn project(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Small deterministic generator (SplitMix64) so oracles need no external
/// randomness.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`, rounded to the nearest `f32` so values are
    /// exactly representable on both sides of a comparison.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        (lo + (hi - lo) * u) as f32 as f64
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn same_padding_rule() {
        assert_eq!(pads(150, 64, 1, true), (31, 32));
        assert_eq!(pads(1125, 75, 15, true), (30, 30));
    }
}
