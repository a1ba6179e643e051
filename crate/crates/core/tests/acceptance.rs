//! Acceptance gate: one test per criterion, each printing a PASS/FAIL line.
//! A shared fixture generates the synthetic dataset and trains the
//! classifier once; run with `--nocapture` to see the per-criterion lines.

use std::path::PathBuf;
use std::time::Instant;

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use invariance::cnn::{self, DataFormat, Dataset, ModelConfig, ModelWeights, Split};
use invariance::diff_transformer::{warp_spatial, COLOR_IDENTITY, SPATIAL_IDENTITY};
use invariance::image::Image;
use invariance::itn::{
    self, itn_forward, sample_unit_vectors, Branch, ControlVector, FcBlock, ItnConfig,
};
use invariance::sweep::{extract_threshold, run_sweep};
use invariance::synth;
use invariance::tensor::{Tape, Tensor};
use invariance::transforms::{self, TransformKind, ALL_KINDS};
use invariance::verification::{self, naive_conv, naive_warp};

struct Fixture {
    _dir: tempfile::TempDir,
    data_dir: PathBuf,
    train: Dataset<f64>,
    test: Dataset<f64>,
    weights: ModelWeights<f64>,
    clean_acc: f64,
    epochs_run: usize,
    train_secs: f64,
}

static FIXTURE: Lazy<Fixture> = Lazy::new(|| {
    let dir = tempfile::tempdir().expect("tempdir");
    let data_dir = dir.path().join("data");
    synth::write_split(&data_dir, Split::Train, 2000, 42).expect("train split");
    synth::write_split(&data_dir, Split::Test, 500, 1042).expect("test split");
    let train = cnn::load_dataset(&data_dir, DataFormat::Idx, Split::Train).expect("load train");
    let test = cnn::load_dataset(&data_dir, DataFormat::Idx, Split::Test).expect("load test");
    let t0 = Instant::now();
    let (weights, report) = cnn::train(
        &ModelConfig { seed: 42 },
        &train,
        10,
        0.05,
        32,
        Some((&test, 0.95)),
    )
    .expect("training");
    let train_secs = t0.elapsed().as_secs_f64();
    let (clean_acc, _) = cnn::evaluate(&weights, &test).expect("evaluate");
    Fixture {
        _dir: dir,
        data_dir,
        train,
        test,
        weights,
        clean_acc,
        epochs_run: report.epochs_run,
        train_secs,
    }
});

fn report(n: usize, desc: &str, ok: bool) {
    println!("[{}] criterion {}: {}", if ok { "PASS" } else { "FAIL" }, n, desc);
    assert!(ok, "criterion {} failed: {}", n, desc);
}

fn random_image(side: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::black(side, side);
    for p in img.pixels_mut() {
        *p = rng.gen_range(0.0f64..=255.0).floor();
    }
    img
}

#[test]
fn criterion_1_gradient_suite() {
    let t0 = Instant::now();
    let reports = verification::gradcheck_suite().expect("suite runs");
    let mut ok = true;
    for r in &reports {
        if !r.passes(verification::SUITE_TOL) {
            println!("  gradient check failed: {} rel {:.3e}", r.op, r.max_rel_error);
            ok = false;
        }
    }
    let within_budget = t0.elapsed().as_secs() <= 120;
    report(
        1,
        &format!(
            "all {} differentiable ops match central differences (rel ≤ 1e-4, {:?})",
            reports.len(),
            t0.elapsed()
        ),
        ok && within_budget && reports.len() >= 16,
    );
}

#[test]
fn criterion_2_identity_suite() {
    let img = random_image(16, 7);
    let mut ok = true;
    for kind in ALL_KINDS {
        let out = kind.apply(&img, kind.identity_magnitude(), 99).expect("apply");
        let bit_exact = matches!(
            kind,
            TransformKind::Brightness
                | TransformKind::Contrast
                | TransformKind::Grayscale
                | TransformKind::GaussianBlur
                | TransformKind::GaussianNoise
        );
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            let fine = if bit_exact { a == b } else { (a - b).abs() <= 1e-6 };
            if !fine {
                println!("  identity violated for {}: {} vs {}", kind.name(), a, b);
                ok = false;
                break;
            }
        }
    }
    // zoom is the scale composition, bit-exact at arbitrary magnitudes
    for v in [0.6, 1.0, 1.7] {
        let zoom = TransformKind::Zoom.apply(&img, v, 0).unwrap();
        let composed = TransformKind::ScaleY
            .apply(&TransformKind::ScaleX.apply(&img, v, 0).unwrap(), v, 0)
            .unwrap();
        if zoom.pixels() != composed.pixels() {
            println!("  zoom deviates from scale composition at v={}", v);
            ok = false;
        }
    }
    report(2, "all nine transforms reproduce inputs at identity; zoom = scale∘scale", ok);
}

#[test]
fn criterion_3_oracle_suite() {
    let mut ok = true;
    // blur vs naive convolution
    for i in 0..20u64 {
        let img = random_image(16, 100 + i);
        for sigma in [0.5, 1.0, 2.0] {
            let fast = transforms::apply_blur(&img, sigma).unwrap();
            let (radius, k) = transforms::gaussian_kernel::<f64>(sigma).unwrap();
            let side = 2 * radius + 1;
            let kernel: Vec<Vec<f64>> =
                (0..side).map(|r| k[r * side..(r + 1) * side].to_vec()).collect();
            let slow = naive_conv(&img, &kernel).unwrap();
            let worst = fast
                .pixels()
                .iter()
                .zip(slow.pixels())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if worst > 1e-9 {
                println!("  blur/naive_conv deviate by {} at σ={}", worst, sigma);
                ok = false;
            }
        }
    }

    // 90° rotation is an exact permutation
    let img = random_image(15, 3);
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let map: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| {
            (0..w).map(move |x| {
                // rotate by −90°: sin = −1, cos = 0
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                (cx + dy, cy - dx)
            })
        })
        .collect();
    let fast = transforms::apply_spatial(TransformKind::Rotate, &img, 90.0);
    let slow = naive_warp(&img, &map).unwrap();
    if fast.pixels() != slow.pixels() {
        println!("  90° rotation is not the exact permutation");
        ok = false;
    }

    // integer-pixel translations are exact
    for pixels in [1usize, 3, 7] {
        let v = pixels as f64 / w as f64;
        let fast = transforms::apply_spatial(TransformKind::TranslateX, &img, v);
        let map: Vec<(f64, f64)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x as f64 - pixels as f64, y as f64)))
            .collect();
        let slow = naive_warp(&img, &map).unwrap();
        if fast.pixels() != slow.pixels() {
            println!("  translation by {} pixels is not exact", pixels);
            ok = false;
        }
    }

    // random affine maps through the differentiable warp
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5 {
        let img = random_image(12, rng.gen());
        let theta: Vec<f64> = vec![
            rng.gen_range(0.6..1.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(0.6..1.2),
            rng.gen_range(-0.3..0.3),
        ];
        let tape = Tape::<f64>::new();
        let xt = img.to_normalized_tensor();
        let tt = Tensor::from_vec(vec![2, 3], theta.clone()).unwrap();
        let fast = warp_spatial(&tape, &xt, &tt).unwrap();
        let (w, h) = (img.width(), img.height());
        let map: Vec<(f64, f64)> = (0..h)
            .flat_map(|y| {
                let theta = theta.clone();
                (0..w).map(move |x| {
                    let xn = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
                    let yn = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
                    let xs = theta[0] * xn + theta[1] * yn + theta[2];
                    let ys = theta[3] * xn + theta[4] * yn + theta[5];
                    (
                        (xs + 1.0) / 2.0 * (w - 1) as f64,
                        (ys + 1.0) / 2.0 * (h - 1) as f64,
                    )
                })
            })
            .collect();
        let mut norm = Image::black(w, h);
        let plane = w * h;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    norm.set(x, y, c, xt.data()[c * plane + y * w + x]);
                }
            }
        }
        let slow = naive_warp(&norm, &map).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let a = fast.data()[c * plane + y * w + x];
                    let b = slow.get(x, y, c);
                    if (a - b).abs() > 1e-6 {
                        println!("  affine warp deviates by {} at ({},{},{})", (a - b).abs(), x, y, c);
                        ok = false;
                    }
                }
            }
        }
    }
    report(3, "blur matches naive convolution ≤1e-9; warps match naive lookup ≤1e-6", ok);
}

#[test]
fn criterion_4_loss_hat_analytics() {
    let tape = Tape::<f64>::new();
    let eye = Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
    let two = Tensor::from_vec(vec![3, 3], vec![2., 0., 0., 0., 2., 0., 0., 0., 1.]).unwrap();
    let mut ok = true;
    for seed in [0u64, 5, 123, 9999] {
        let s = sample_unit_vectors::<f64>(3, 24, seed).unwrap();
        if itn::loss_hat(&tape, &eye, &s).unwrap().item() != 0.0 {
            println!("  identity displacement loss nonzero at seed {}", seed);
            ok = false;
        }
        let l = itn::loss_hat(&tape, &two, &s).unwrap().item();
        if (l + 1.0).abs() > 1e-9 {
            println!("  diag(2,2,1) loss {} ≠ -1 at seed {}", l, seed);
            ok = false;
        }
    }
    report(4, "displacement loss: identity → 0, diag(2,2,1) → −1 for any seed", ok);
}

#[test]
fn criterion_5_toy_cnn_training() {
    let f = &*FIXTURE;
    let mut ok = f.clean_acc >= 0.95 && f.epochs_run <= 10 && f.train_secs <= 900.0;

    // bit-reproducibility under the fixed seed
    let (again, _) = cnn::train(
        &ModelConfig { seed: 42 },
        &f.train,
        10,
        0.05,
        32,
        Some((&f.test, 0.95)),
    )
    .expect("retrain");
    for (a, b) in f.weights.tensors().into_iter().zip(again.tensors()) {
        if a.data() != b.data() {
            println!("  retraining produced different weights");
            ok = false;
            break;
        }
    }
    report(
        5,
        &format!(
            "test accuracy {:.4} in {} epoch(s) ({:.1}s), training bit-reproducible",
            f.clean_acc, f.epochs_run, f.train_secs
        ),
        ok,
    );
}

#[test]
fn criterion_6_sweep_reproduction() {
    let f = &*FIXTURE;
    let mut ok = true;

    // (a) Gaussian noise erodes accuracy and crosses the threshold
    let probe_class = f.test.filter_class(0);
    let noise_grid: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
    let noise = run_sweep(&f.weights, &probe_class, TransformKind::GaussianNoise, &noise_grid, 11)
        .expect("noise sweep");
    let clean = noise.mean_accuracy[0];
    let at_max = *noise.mean_accuracy.last().unwrap();
    if at_max > clean - 0.20 {
        println!("  noise σ=0.5 accuracy {} not ≥20 points below clean {}", at_max, clean);
        ok = false;
    }
    let threshold = extract_threshold(&noise, 0.5).unwrap();
    if threshold.is_none() {
        println!("  no noise threshold crossed at tau=0.5");
        ok = false;
    }

    // (b) rotation collapses the true-class softmax by 45°
    let class0 = f.test.filter_class(0);
    let rot_grid: Vec<f64> = (0..9).map(|i| -180.0 + 45.0 * i as f64).collect();
    let rot = run_sweep(&f.weights, &class0, TransformKind::Rotate, &rot_grid, 12)
        .expect("rotation sweep");
    let at_zero = rot.mean_softmax[4][0];
    let at_45 = rot.mean_softmax[5][0];
    if at_45 > at_zero - 0.20 {
        println!("  45° softmax {} not ≥20 points below 0° value {}", at_45, at_zero);
        ok = false;
    }

    // (c) identity magnitude reproduces clean accuracy exactly, every kind
    let subset = f.test.filter_class(2).take(20);
    let (clean_subset, _) = cnn::evaluate(&f.weights, &subset).unwrap();
    for kind in ALL_KINDS {
        let id = kind.identity_magnitude();
        let grid = [id, id + 0.25];
        let r = run_sweep(&f.weights, &subset, kind, &grid, 13).expect("identity sweep");
        if r.mean_accuracy[0] != clean_subset {
            println!("  {} identity accuracy {} ≠ clean {}", kind.name(), r.mean_accuracy[0], clean_subset);
            ok = false;
        }
    }
    report(
        6,
        &format!(
            "noise drops accuracy {:.3}→{:.3} (threshold {:?}); rotation softmax {:.3}→{:.3} at 45°; identity exact",
            clean, at_max, threshold, at_zero, at_45
        ),
        ok,
    );
}

#[test]
fn criterion_7_itn_training() {
    let f = &*FIXTURE;
    let mut ok = true;
    let acc_orig = f.clean_acc - 0.02;
    let cfg = ItnConfig {
        acc_orig,
        steps: 2000,
        batch: 16,
        lr: 1e-5,
        seed: 7,
        ..ItnConfig::default()
    };
    let holdout = f.test.take(100);

    // (a) identity initialization keeps every held-out prediction
    let color0 = FcBlock::<f64>::init(invariance::diff_transformer::AffineKind::Color, cfg.hidden, 1);
    let spatial0 =
        FcBlock::<f64>::init(invariance::diff_transformer::AffineKind::Spatial, cfg.hidden, 2);
    let mut step0_correct = 0usize;
    let mut clean_correct = 0usize;
    for (img, lbl) in holdout.images.iter().zip(&holdout.labels) {
        let x = img.to_normalized_tensor();
        let tape = Tape::new();
        let clean_pred = cnn::argmax(f.weights.logits(&tape, &x).unwrap().data());
        let k = ControlVector::new([0.8, 0.3], [0.6, 0.9]).unwrap();
        let (logits, _, _, _) =
            itn_forward(&tape, &f.weights, &x, &k, &color0, &spatial0, false).unwrap();
        if clean_pred == *lbl as usize {
            clean_correct += 1;
        }
        if cnn::argmax(logits.data()) == *lbl as usize {
            step0_correct += 1;
        }
    }
    if step0_correct != clean_correct {
        println!("  step-0 transformed accuracy {} ≠ clean {}", step0_correct, clean_correct);
        ok = false;
    }

    let t0 = Instant::now();
    let (color, spatial, log) = itn::itn_train(&cfg, &f.weights, &f.train).expect("itn training");
    let itn_secs = t0.elapsed().as_secs_f64();
    if itn_secs > 1800.0 {
        println!("  run exceeded 30 minutes: {:.0}s", itn_secs);
        ok = false;
    }

    // (b) displacement loss decreases over training
    let n = log.len();
    let decile = n / 10;
    let disp = |l: &itn::StepLog| l.loss_color + l.loss_spatial;
    let head: f64 = log[..decile].iter().map(disp).sum::<f64>() / decile as f64;
    let tail: f64 = log[n - decile..].iter().map(disp).sum::<f64>() / decile as f64;
    if !(tail < head) {
        println!("  displacement loss did not decrease: head {} tail {}", head, tail);
        ok = false;
    }

    // (c) transformed accuracy holds at every control corner
    let mut worst_corner = 1.0f64;
    for a in [0.0, 0.5, 1.0] {
        for b in [0.0, 0.5, 1.0] {
            let k = ControlVector::new([a, a], [b, b]).unwrap();
            let mut correct = 0usize;
            for (img, lbl) in holdout.images.iter().zip(&holdout.labels) {
                let tape = Tape::new();
                let (logits, _, _, _) = itn_forward(
                    &tape,
                    &f.weights,
                    &img.to_normalized_tensor(),
                    &k,
                    &color,
                    &spatial,
                    false,
                )
                .unwrap();
                if cnn::argmax(logits.data()) == *lbl as usize {
                    correct += 1;
                }
            }
            let acc = correct as f64 / holdout.len() as f64;
            worst_corner = worst_corner.min(acc);
            if acc < acc_orig {
                println!("  corner k1=({a},{a}) k2=({b},{b}) accuracy {} below gate {}", acc, acc_orig);
                ok = false;
            }
        }
    }

    // (d) displacement grows with the control magnitude
    let fresh_color = sample_unit_vectors::<f64>(4, 256, 999).unwrap();
    let fresh_spatial = sample_unit_vectors::<f64>(3, 256, 998).unwrap();
    let mean_disp = |block: &FcBlock<f64>, k: [f64; 2], s: &Tensor<f64>, d: usize| -> f64 {
        let tape = Tape::new();
        let (m, _) = block.forward(&tape, k).unwrap();
        let mut mat = m.data().to_vec();
        mat.extend(invariance::diff_transformer::homogeneous_row::<f64>(d));
        let mut total = 0.0;
        for row in s.data().chunks(d) {
            let mut sq = 0.0;
            for r in 0..d {
                let ax: f64 = (0..d).map(|c| mat[r * d + c] * row[c]).sum();
                sq += (ax - row[r]) * (ax - row[r]);
            }
            total += sq.sqrt();
        }
        total / (s.len() / d) as f64
    };
    let color_low = mean_disp(&color, [0.0, 0.0], &fresh_color, 4);
    let color_high = mean_disp(&color, [1.0, 1.0], &fresh_color, 4);
    let spatial_low = mean_disp(&spatial, [0.0, 0.0], &fresh_spatial, 3);
    let spatial_high = mean_disp(&spatial, [1.0, 1.0], &fresh_spatial, 3);
    if !(color_high > color_low || spatial_high > spatial_low) {
        println!(
            "  displacement does not grow with k: color {}→{}, spatial {}→{}",
            color_low, color_high, spatial_low, spatial_high
        );
        ok = false;
    }
    let gate_ratio =
        log.iter().filter(|l| l.branch == Branch::Displacement).count() as f64 / n as f64;
    report(
        7,
        &format!(
            "itn {:.0}s: disp loss {:.2e}→{:.2e}, worst corner acc {:.3} ≥ gate {:.3}, \
             color disp {:.3}→{:.3} (disp-branch share {:.2})",
            itn_secs, head, tail, worst_corner, acc_orig, color_low, color_high, gate_ratio
        ),
        ok,
    );
}

#[test]
fn criterion_8_cli_determinism() {
    let f = &*FIXTURE;
    let bin = env!("CARGO_BIN_EXE_invariance");
    let run = |out_root: &std::path::Path| {
        let weights = out_root.join("weights.iltf");
        let steps = [
            vec![
                "train-cnn".to_string(),
                "--data".into(), f.data_dir.display().to_string(),
                "--epochs".into(), "1".into(),
                "--out".into(), weights.display().to_string(),
            ],
            vec![
                "sweep".to_string(),
                "--weights".into(), weights.display().to_string(),
                "--data".into(), f.data_dir.display().to_string(),
                "--class".into(), "1".into(),
                "--kind".into(), "brightness".into(),
                "--grid".into(), "0:0.6:4".into(),
                "--count".into(), "10".into(),
                "--out".into(), out_root.join("sweep").display().to_string(),
            ],
            vec![
                "itn-train".to_string(),
                "--weights".into(), weights.display().to_string(),
                "--data".into(), f.data_dir.display().to_string(),
                "--steps".into(), "10".into(),
                "--lr".into(), "1e-5".into(),
                "--batch".into(), "4".into(),
                "--seed".into(), "3".into(),
                "--acc-orig".into(), "0.5".into(),
                "--out".into(), out_root.join("itn").display().to_string(),
            ],
        ];
        for args in steps {
            let status = std::process::Command::new(bin)
                .args(&args)
                .status()
                .expect("spawn cli");
            assert!(status.success(), "cli step failed: {:?}", args);
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    run(&a);
    run(&b);
    let mut ok = true;
    for rel in [
        "weights.iltf",
        "weights.iltf.json",
        "sweep/sweep.csv",
        "sweep/sweep.json",
        "itn/blocks.iltf",
        "itn/train_log.csv",
    ] {
        let x = std::fs::read(a.join(rel)).expect(rel);
        let y = std::fs::read(b.join(rel)).expect(rel);
        if x != y {
            println!("  output differs between runs: {}", rel);
            ok = false;
        }
    }
    report(8, "repeated CLI runs produce byte-identical weights and CSV outputs", ok);
}

#[test]
fn identity_constants_still_identity() {
    // guards the constants the acceptance fixtures rely on
    assert_eq!(SPATIAL_IDENTITY, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert_eq!(
        COLOR_IDENTITY,
        [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
    );
}
