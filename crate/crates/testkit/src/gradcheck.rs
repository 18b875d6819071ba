//! Gradient checks: autodiff gradients from the `f32` tape against central
//! finite differences (h = 1e-3) of the `f64` reference forwards.

use bwnet_tensor::{Activation, Mode, Padding, RngState, RunningStats, Tape, Tensor, Var};

use crate::reference::{self as r, Arr4, SplitMix};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
pub const ZERO_FLOOR: f64 = 1e-4;

/// Outcome of one layer's check: worst relative error over its inputs.
#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub max_rel_error: f64,
    pub inputs_checked: usize,
    pub max_elements: usize,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE && self.max_elements <= 100
    }
}

struct Input {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn input(rng: &mut SplitMix, shape: &[usize], lo: f64, hi: f64) -> Input {
    let n = shape.iter().product();
    Input {
        shape: shape.to_vec(),
        data: rng.vec(n, lo, hi),
    }
}

fn tensor(inp: &Input) -> Tensor {
    Tensor::new(&inp.shape, inp.data.iter().map(|&v| v as f32).collect()).expect("valid test shape")
}

/// Runs `build` on a tape with every input as a gradient leaf, projects the
/// output onto `proj` when it is not already scalar, and returns the
/// gradients as f64.
fn autodiff(inputs: &[Input], proj: Option<&[f64]>, build: impl Fn(&mut Tape, &[Var]) -> Var) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|i| tape.leaf(tensor(i), true)).collect();
    let out = build(&mut tape, &vars);
    let loss = match proj {
        Some(w) => {
            let shape = tape.shape(out).to_vec();
            let wv = tape.constant(Tensor::new(&shape, w.iter().map(|&v| v as f32).collect()).unwrap());
            let prod = tape.mul(out, wv).unwrap();
            tape.sum(prod).unwrap()
        }
        None => out,
    };
    let grads = tape.backward(loss).unwrap();
    vars.iter()
        .map(|&v| {
            grads
                .get(v)
                .map(|g| g.data().iter().map(|&x| x as f64).collect())
                .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
        })
        .collect()
}

fn finite_differences(inputs: &[Input], f: impl Fn(&[Vec<f64>]) -> f64) -> Vec<Vec<f64>> {
    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.clone()).collect();
    (0..inputs.len())
        .map(|k| {
            r::central_difference(
                |x| {
                    let mut all = base.clone();
                    all[k] = x.to_vec();
                    f(&all)
                },
                &base[k],
                STEP,
            )
        })
        .collect()
}

/// Relative error, except that gradients which vanish analytically (such as
/// a batch-norm shift cancelled by a later batch-norm) are compared on an
/// absolute scale of [`ZERO_FLOOR`].
fn floored_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(ZERO_FLOOR)
}

fn compare(layer: &'static str, inputs: &[Input], ad: Vec<Vec<f64>>, fd: Vec<Vec<f64>>) -> LayerCheck {
    let max_rel_error = ad
        .iter()
        .zip(&fd)
        .map(|(a, b)| floored_error(a, b))
        .fold(0.0, f64::max);
    LayerCheck {
        layer,
        max_rel_error,
        inputs_checked: inputs.len(),
        max_elements: inputs.iter().map(|i| i.data.len()).max().unwrap_or(0),
    }
}

fn arr(shape: &[usize], data: &[f64]) -> Arr4 {
    Arr4::from_vec([shape[0], shape[1], shape[2], shape[3]], data.to_vec())
}

pub fn check_conv2d(seed: u64, same: bool) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[2, 2, 7, 2], -1.0, 1.0), input(&mut rng, &[3, 2, 3, 2], -1.0, 1.0)];
    let stride = (2, 1);
    let padding = if same { Padding::Same } else { Padding::Valid };
    let out = r::conv2d(&arr(&inputs[0].shape, &inputs[0].data), &arr(&inputs[1].shape, &inputs[1].data), stride, same);
    let proj = rng.vec(out.data.len(), -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| t.conv2d(v[0], v[1], stride, padding).unwrap());
    let fd = finite_differences(&inputs, |x| {
        let y = r::conv2d(&arr(&inputs[0].shape, &x[0]), &arr(&inputs[1].shape, &x[1]), stride, same);
        r::project(&y.data, &proj)
    });
    compare(if same { "conv2d (same)" } else { "conv2d (valid)" }, &inputs, ad, fd)
}

pub fn check_conv2d_transposed(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    // stride 3 over an 11-sample target: ceil(11 / 3) = 4 input samples
    let inputs = [input(&mut rng, &[2, 1, 4, 1], -1.0, 1.0), input(&mut rng, &[1, 2, 5, 1], -1.0, 1.0)];
    let stride = (3, 1);
    let out_hw = (11, 1);
    let proj = rng.vec(2 * 2 * 11, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| {
        t.conv2d_transposed(v[0], v[1], stride, Padding::Same, out_hw).unwrap()
    });
    let fd = finite_differences(&inputs, |x| {
        let y = r::conv2d_transposed(&arr(&inputs[0].shape, &x[0]), &arr(&inputs[1].shape, &x[1]), stride, true, out_hw);
        r::project(&y.data, &proj)
    });
    compare("conv2d_transposed", &inputs, ad, fd)
}

pub fn check_batchnorm_train(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [
        input(&mut rng, &[3, 2, 4, 1], -2.0, 2.0),
        input(&mut rng, &[2], 0.5, 1.5),
        input(&mut rng, &[2], -0.5, 0.5),
    ];
    let proj = rng.vec(24, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| {
        let mut rs = RunningStats::new(2).unwrap();
        t.batchnorm(v[0], v[1], v[2], Mode::Train, &mut rs).unwrap()
    });
    let fd = finite_differences(&inputs, |x| {
        let y = r::batchnorm_train(&arr(&inputs[0].shape, &x[0]), &x[1], &x[2], 1e-5);
        r::project(&y.data, &proj)
    });
    compare("batchnorm (train)", &inputs, ad, fd)
}

pub fn check_batchnorm_eval(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [
        input(&mut rng, &[2, 3, 5, 1], -2.0, 2.0),
        input(&mut rng, &[3], 0.5, 1.5),
        input(&mut rng, &[3], -0.5, 0.5),
    ];
    let mean = rng.vec(3, -0.5, 0.5);
    let var = rng.vec(3, 0.5, 2.0);
    let proj = rng.vec(30, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| {
        let mut rs = RunningStats {
            mean: Tensor::new(&[3], mean.iter().map(|&m| m as f32).collect()).unwrap(),
            var: Tensor::new(&[3], var.iter().map(|&m| m as f32).collect()).unwrap(),
        };
        t.batchnorm(v[0], v[1], v[2], Mode::Eval, &mut rs).unwrap()
    });
    let fd = finite_differences(&inputs, |x| {
        let y = r::batchnorm_eval(&arr(&inputs[0].shape, &x[0]), &x[1], &x[2], &mean, &var, 1e-5);
        r::project(&y.data, &proj)
    });
    compare("batchnorm (eval)", &inputs, ad, fd)
}

fn check_pointwise(layer: &'static str, seed: u64, kind: Activation, lo: f64, hi: f64, f: fn(f64) -> f64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let mut inputs = [input(&mut rng, &[4, 6], lo, hi)];
    if kind == Activation::Relu {
        // keep away from the kink
        for v in &mut inputs[0].data {
            if v.abs() < 0.05 {
                *v = 0.25;
            }
        }
    }
    let proj = rng.vec(24, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| t.activation(kind, v[0]).unwrap());
    let fd = finite_differences(&inputs, |x| r::project(&r::map(&x[0], f), &proj));
    compare(layer, &inputs, ad, fd)
}

pub fn check_square(seed: u64) -> LayerCheck {
    check_pointwise("square", seed, Activation::Square, -2.0, 2.0, |v| v * v)
}

pub fn check_safe_log(seed: u64) -> LayerCheck {
    check_pointwise("safe-log", seed, Activation::SafeLog, 0.05, 3.0, r::safe_log)
}

pub fn check_relu(seed: u64) -> LayerCheck {
    check_pointwise("relu", seed, Activation::Relu, -1.0, 1.0, |v| v.max(0.0))
}

pub fn check_softmax(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[3, 5], -2.0, 2.0)];
    let proj = rng.vec(15, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| t.activation(Activation::Softmax, v[0]).unwrap());
    let fd = finite_differences(&inputs, |x| r::project(&r::softmax_rows(&x[0], 5), &proj));
    compare("softmax", &inputs, ad, fd)
}

pub fn check_avgpool(seed: u64, padded: bool) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[1, 2, 30, 1], -1.0, 1.0)];
    let (k, s) = ((10, 1), (3, 1));
    let out = r::avgpool(&arr(&inputs[0].shape, &inputs[0].data), k, s, padded);
    let proj = rng.vec(out.data.len(), -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| t.avgpool2d(v[0], k, s, padded).unwrap());
    let fd = finite_differences(&inputs, |x| r::project(&r::avgpool(&arr(&inputs[0].shape, &x[0]), k, s, padded).data, &proj));
    compare(if padded { "avgpool (table padding)" } else { "avgpool (valid)" }, &inputs, ad, fd)
}

pub fn check_dropout_off(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[4, 5], -1.0, 1.0)];
    let proj = rng.vec(20, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| {
        let mut drng = RngState::new(seed);
        let y = t.dropout(v[0], 0.5, Mode::Eval, &mut drng).unwrap();
        // route through an op so the identity is actually on the tape
        t.scale(y, 1.0).unwrap()
    });
    let fd = finite_differences(&inputs, |x| r::project(&x[0], &proj));
    compare("dropout (eval)", &inputs, ad, fd)
}

pub fn check_dense(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [
        input(&mut rng, &[3, 4], -1.0, 1.0),
        input(&mut rng, &[4, 5], -1.0, 1.0),
        input(&mut rng, &[5], -1.0, 1.0),
    ];
    let proj = rng.vec(15, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| t.dense(v[0], v[1], Some(v[2])).unwrap());
    let fd = finite_differences(&inputs, |x| r::project(&r::dense(&x[0], 3, &x[1], 4, 5, Some(&x[2])), &proj));
    compare("dense", &inputs, ad, fd)
}

pub fn check_log_softmax_cross_entropy(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[4, 5], -2.0, 2.0)];
    let labels = [0usize, 3, 4, 1];
    let ad = autodiff(&inputs, None, |t, v| {
        let lp = t.log_softmax(v[0]).unwrap();
        t.cross_entropy(lp, &labels).unwrap()
    });
    let fd = finite_differences(&inputs, |x| r::nll(&r::log_softmax_rows(&x[0], 5), 5, &labels));
    compare("log-softmax + cross-entropy", &inputs, ad, fd)
}

pub fn check_mse(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[2, 1, 6, 1], -1.0, 1.0), input(&mut rng, &[2, 1, 6, 1], -1.0, 1.0)];
    let ad = autodiff(&inputs, None, |t, v| t.mse(v[0], v[1]).unwrap());
    let fd = finite_differences(&inputs, |x| {
        x[0].iter().zip(&x[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 12.0
    });
    compare("mse", &inputs, ad, fd)
}

pub fn check_channel_mix(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [input(&mut rng, &[2, 3, 4, 1], -1.0, 1.0), input(&mut rng, &[2, 3], -1.0, 1.0)];
    let proj = rng.vec(16, -1.0, 1.0);
    let ad = autodiff(&inputs, Some(&proj), |t, v| t.channel_mix(v[0], v[1]).unwrap());
    let fd = finite_differences(&inputs, |x| {
        let mut y = vec![0.0; 16];
        for b in 0..2 {
            for m in 0..2 {
                for k in 0..3 {
                    for l in 0..4 {
                        y[(b * 2 + m) * 4 + l] += x[1][m * 3 + k] * x[0][(b * 3 + k) * 4 + l];
                    }
                }
            }
        }
        r::project(&y, &proj)
    });
    compare("channel mix", &inputs, ad, fd)
}

/// A miniature filter-bank stack: time conv → batch-norm → spatial conv →
/// batch-norm → square → padded average pool → safe-log → dense →
/// log-softmax → cross-entropy.
pub fn check_composite(seed: u64) -> LayerCheck {
    let mut rng = SplitMix(seed);
    let inputs = [
        input(&mut rng, &[2, 1, 20, 2], -1.0, 1.0), // x: batch 2, 20 samples, 2 channels
        input(&mut rng, &[2, 1, 5, 1], -0.5, 0.5),  // time kernel
        input(&mut rng, &[2], 0.8, 1.2),            // bn1 gamma
        input(&mut rng, &[2], -0.2, 0.2),           // bn1 beta
        input(&mut rng, &[2, 2, 1, 2], -0.5, 0.5),  // spatial kernel
        input(&mut rng, &[2], 0.8, 1.2),            // bn2 gamma
        input(&mut rng, &[2], -0.2, 0.2),           // bn2 beta
        input(&mut rng, &[8, 3], -0.5, 0.5),        // dense: 2 filters x 4 pooled samples -> 3 classes
    ];
    let labels = [2usize, 0];
    let ad = autodiff(&inputs, None, |t, v| {
        let mut rs1 = RunningStats::new(2).unwrap();
        let mut rs2 = RunningStats::new(2).unwrap();
        let h = t.conv2d(v[0], v[1], (1, 1), Padding::Same).unwrap();
        let h = t.batchnorm(h, v[2], v[3], Mode::Train, &mut rs1).unwrap();
        let h = t.conv2d(h, v[4], (1, 1), Padding::Valid).unwrap();
        let h = t.batchnorm(h, v[5], v[6], Mode::Train, &mut rs2).unwrap();
        let h = t.activation(Activation::Square, h).unwrap();
        let h = t.avgpool2d(h, (10, 1), (5, 1), true).unwrap();
        let h = t.activation(Activation::SafeLog, h).unwrap();
        let h = t.reshape(h, &[2, 8]).unwrap();
        let h = t.dense(h, v[7], None).unwrap();
        let h = t.log_softmax(h).unwrap();
        t.cross_entropy(h, &labels).unwrap()
    });
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|i| i.shape.clone()).collect();
    let fd = finite_differences(&inputs, |x| {
        let h = r::conv2d(&arr(&shapes[0], &x[0]), &arr(&shapes[1], &x[1]), (1, 1), true);
        let h = r::batchnorm_train(&h, &x[2], &x[3], 1e-5);
        let h = r::conv2d(&h, &arr(&shapes[4], &x[4]), (1, 1), false);
        let h = r::batchnorm_train(&h, &x[5], &x[6], 1e-5);
        let h = Arr4::from_vec(h.shape, r::map(&h.data, |v| v * v));
        let h = r::avgpool(&h, (10, 1), (5, 1), true);
        let h = r::map(&h.data, r::safe_log);
        let h = r::dense(&h, 2, &x[7], 8, 3, None);
        r::nll(&r::log_softmax_rows(&h, 3), 3, &labels)
    });
    compare("composite filter-bank stack", &inputs, ad, fd)
}

/// Every layer check, each at a fixed seed.
pub fn run_all(seed: u64) -> Vec<LayerCheck> {
    vec![
        check_conv2d(seed, true),
        check_conv2d(seed + 1, false),
        check_conv2d_transposed(seed + 2),
        check_batchnorm_train(seed + 3),
        check_batchnorm_eval(seed + 4),
        check_square(seed + 5),
        check_safe_log(seed + 6),
        check_relu(seed + 7),
        check_softmax(seed + 8),
        check_avgpool(seed + 9, true),
        check_avgpool(seed + 10, false),
        check_dropout_off(seed + 11),
        check_dense(seed + 12),
        check_log_softmax_cross_entropy(seed + 13),
        check_mse(seed + 14),
        check_channel_mix(seed + 15),
        check_composite(seed + 16),
    ]
}
