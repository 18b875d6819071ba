use bwnet_core::{build_msfbcnn, count_params, MsfbcnnConfig, MsfbcnnModel};
use bwnet_tensor::{RngState, Tensor, BN_EPSILON};
use bwnet_testkit::{avgpool, batchnorm_eval, conv2d, dense, log_softmax_rows, safe_log, Arr4, SplitMix};

/// Independent count straight from the layer table: the four time kernels
/// 64/40/26/16 times F_T, a batch-norm over all 4F_T concatenated channels,
/// the (1 × C) spatial kernel, the second batch-norm and a bias-free dense.
fn table_count(c: usize, t: usize, ft: usize, fs: usize, nc: usize) -> usize {
    64 * ft + 40 * ft + 26 * ft + 16 * ft + 2 * (4 * ft) + 4 * c * ft * fs + 2 * fs + fs * (t / 15) * nc
}

fn random_config(rng: &mut SplitMix) -> MsfbcnnConfig {
    let pick = |rng: &mut SplitMix, lo: usize, hi: usize| lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize;
    MsfbcnnConfig {
        channels: pick(rng, 1, 8),
        window_len: 15 * pick(rng, 1, 20),
        temporal_filters: pick(rng, 1, 12),
        spatial_filters: pick(rng, 1, 12),
        num_classes: pick(rng, 2, 6),
        dropout_rate: 0.5,
    }
}

#[test]
fn parameter_count_matches_layer_table() {
    for (c, want) in [(1, 4960), (6, 6960)] {
        let cfg = MsfbcnnConfig { channels: c, ..Default::default() };
        assert_eq!(table_count(c, 1125, 10, 10, 4), want);
        assert_eq!(count_params(&cfg), want);
        let model = build_msfbcnn(cfg, &mut RngState::new(0)).unwrap();
        assert_eq!(model.num_params(), want);
        let x = Tensor::zeros(&[2, c, 1125, 1]).unwrap();
        assert_eq!(model.predict_logprobs(&x).unwrap().shape(), &[2, 4]);
    }
    let mut rng = SplitMix(42);
    for _ in 0..10 {
        let cfg = random_config(&mut rng);
        let want = table_count(cfg.channels, cfg.window_len, cfg.temporal_filters, cfg.spatial_filters, cfg.num_classes);
        assert_eq!(count_params(&cfg), want, "{cfg:?}");
        let model = build_msfbcnn(cfg, &mut RngState::new(1)).unwrap();
        assert_eq!(model.num_params(), want, "{cfg:?}");
        let x = Tensor::zeros(&[3, cfg.channels, cfg.window_len, 1]).unwrap();
        assert_eq!(model.predict_logprobs(&x).unwrap().shape(), &[3, cfg.num_classes]);
    }
}

#[test]
fn zero_dense_weights_give_uniform_output() {
    let cfg = MsfbcnnConfig { channels: 2, window_len: 150, ..Default::default() };
    let mut model = build_msfbcnn(cfg, &mut RngState::new(5)).unwrap();
    model.store.get_mut("dense.weight").unwrap().data_mut().fill(0.0);
    let mut rng = RngState::new(6);
    let x = Tensor::from_fn(&[4, 2, 150, 1], |_| rng.normal() as f32).unwrap();
    let lp = model.predict_logprobs(&x).unwrap();
    let uniform = -(4f32).ln();
    assert!(lp.data().iter().all(|&v| (v - uniform).abs() < 1e-6), "{:?}", lp.data());
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Eval-mode forward built from the reference kernels, with the spatial
/// layer as a (1 × C) convolution over a `[B, 4F_T, T, C]` map.
fn reference_forward(model: &MsfbcnnModel, x: &Tensor) -> Vec<f64> {
    let cfg = *model.config();
    let (b, c, t, ft, fs, nc) =
        (x.dim(0), cfg.channels, cfg.window_len, cfg.temporal_filters, cfg.spatial_filters, cfg.num_classes);
    let p = |n: &str| to_f64(model.store.get(n).unwrap());
    let buf = |n: &str| to_f64(model.store.buffer(n).unwrap());
    let eps = BN_EPSILON as f64;

    let rows = Arr4::from_vec([b * c, 1, t, 1], to_f64(x));
    let mut concat = Arr4::zeros([b * c, 4 * ft, t, 1]);
    for (i, k) in [64, 40, 26, 16].into_iter().enumerate() {
        let kernel = Arr4::from_vec([ft, 1, k, 1], p(&format!("timeconv{}.weight", i + 1)));
        let y = conv2d(&rows, &kernel, (1, 1), true);
        for r in 0..b * c {
            for f in 0..ft {
                for s in 0..t {
                    *concat.at_mut(r, i * ft + f, s, 0) = y.at(r, f, s, 0);
                }
            }
        }
    }
    let h = batchnorm_eval(&concat, &p("bn1.gamma"), &p("bn1.beta"), &buf("bn1.running_mean"), &buf("bn1.running_var"), eps);
    let mut grid = Arr4::zeros([b, 4 * ft, t, c]);
    for bi in 0..b {
        for ci in 0..c {
            for f in 0..4 * ft {
                for s in 0..t {
                    *grid.at_mut(bi, f, s, ci) = h.at(bi * c + ci, f, s, 0);
                }
            }
        }
    }
    let spatial = Arr4::from_vec([fs, 4 * ft, 1, c], p("spatial.weight"));
    let h = conv2d(&grid, &spatial, (1, 1), false);
    let h = batchnorm_eval(&h, &p("bn2.gamma"), &p("bn2.beta"), &buf("bn2.running_mean"), &buf("bn2.running_var"), eps);
    let sq = Arr4::from_vec(h.shape, h.data.iter().map(|v| v * v).collect());
    let pooled = avgpool(&sq, (75, 1), (15, 1), true);
    let feats: Vec<f64> = pooled.data.iter().map(|&v| safe_log(v)).collect();
    let logits = dense(&feats, b, &p("dense.weight"), fs * (t / 15), nc, None);
    log_softmax_rows(&logits, nc)
}

#[test]
fn eval_forward_matches_reference_kernels() {
    let cfg = MsfbcnnConfig {
        channels: 3,
        window_len: 90,
        temporal_filters: 3,
        spatial_filters: 4,
        num_classes: 4,
        dropout_rate: 0.5,
    };
    let mut model = build_msfbcnn(cfg, &mut RngState::new(7)).unwrap();
    let mut rng = RngState::new(8);
    // move every affine parameter and running statistic off its default
    for name in ["bn1", "bn2"] {
        for (suffix, lo, hi) in [("gamma", 0.5, 1.5), ("beta", -0.5, 0.5)] {
            let t = model.store.get_mut(&format!("{name}.{suffix}")).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(lo, hi));
        }
        for (suffix, lo, hi) in [("running_mean", -0.2, 0.2), ("running_var", 0.5, 2.0)] {
            let t = model.store.buffer_mut(&format!("{name}.{suffix}")).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(lo, hi));
        }
    }
    let x = Tensor::from_fn(&[2, 3, 90, 1], |_| rng.normal() as f32).unwrap();
    let got = model.predict_logprobs(&x).unwrap();
    let want = reference_forward(&model, &x);
    for (g, w) in got.data().iter().zip(&want) {
        assert!((*g as f64 - w).abs() < 1e-4, "{g} vs {w}");
    }
    for row in got.data().chunks(4) {
        let total: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}
