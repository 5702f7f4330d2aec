//! Acceptance gate: one pass/fail line per criterion, all criteria asserted
//! at the end. Run with `cargo test --test acceptance -- --nocapture` to see
//! the lines as they complete.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::{Complex32, Complex64};

use cohnet_core::coherence::estimate_coherence;
use cohnet_core::coherence::SlcPair;
use cohnet_core::dataset::{build_dataset, load_patches, PatchSample};
use cohnet_core::nn::{build_mlp, build_unet, Layer, Network, OutActivation, Tensor};
use cohnet_core::raster::{ComplexRaster, ScalarRaster};
use cohnet_core::rng::Rng;
use cohnet_core::rvog::{
    ambiguity_height, invert_height_sinc, rvog_volume_coherence, sinc_magnitude, InversionMode,
    RvogParams, DEFAULT_THETA, DEFAULT_TOL_M,
};
use cohnet_core::sim::SimConfig;
use cohnet_core::surrogate::{build_nsm_dataset, train_nsm, NsmHyper, NsmModel};
use cohnet_core::trainer::{
    cohnet_batch_step, cross_region_matrix, evaluate_model, ordering_benchmark, train_cohnet,
    train_direct, LossKind, TrainHyper, TrainedModel,
};

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, idx: usize, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        // write straight to the process stdout so the verdict lines show up
        // even under the harness's per-test output capture
        use std::io::Write;
        writeln!(std::io::stdout(), "criterion {idx:2} {name}: {verdict} ({detail})").ok();
        if !pass {
            self.failures.push(format!("{idx} {name}: {detail}"));
        }
    }
}

// --- criterion 1: physics fidelity -----------------------------------------

fn simpson(f: &impl Fn(f64) -> Complex64, a: f64, b: f64) -> Complex64 {
    let m = 0.5 * (a + b);
    (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
}

fn adaptive(f: &impl Fn(f64) -> Complex64, a: f64, b: f64, whole: Complex64, eps: f64, depth: u32) -> Complex64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, left, eps / 2.0, depth - 1) + adaptive(f, m, b, right, eps / 2.0, depth - 1)
}

// integrands scaled by exp(-p hv), which cancels in the ratio, so they stay
// O(1) under strong extinction
fn quadrature_gamma(hv: f64, sigma: f64, theta: f64, kz: f64) -> Complex64 {
    let p = 2.0 * sigma / theta.cos();
    let integral = |f: &dyn Fn(f64) -> Complex64| {
        let whole = simpson(&f, 0.0, hv);
        adaptive(&f, 0.0, hv, whole, 1e-13, 40)
    };
    let num = integral(&|z| Complex64::new(p * (z - hv), kz * z).exp());
    let den = integral(&|z| Complex64::new((p * (z - hv)).exp(), 0.0));
    num / den
}

fn criterion_1(gate: &mut Gate) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &kz in &[0.05, 0.1, 0.15] {
        let hv_max = ambiguity_height(kz) * 0.95;
        for i in 0..20 {
            let hv = 0.5 + (hv_max - 0.5) * i as f64 / 19.0;
            for j in 0..20 {
                let sigma = 2.0 * j as f64 / 19.0;
                let params = RvogParams::new(hv, sigma, 0.0, 0.0, DEFAULT_THETA, kz).unwrap();
                let err = (rvog_volume_coherence(&params) - quadrature_gamma(hv, sigma, DEFAULT_THETA, kz)).norm();
                worst = worst.max(err);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        1,
        "physics fidelity vs quadrature",
        worst <= 1e-8 && secs < 5.0,
        format!("worst abs err {worst:.2e}, {secs:.2} s"),
    );
}

fn criterion_2(gate: &mut Gate) {
    let start = Instant::now();
    let mut rng = Rng::new(7, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let kz = rng.uniform(0.05, 0.15);
        let hv = rng.uniform(0.0, 0.95 * ambiguity_height(kz));
        let gamma = sinc_magnitude(hv, kz).unwrap();
        let back = invert_height_sinc(gamma, kz, DEFAULT_TOL_M).unwrap();
        worst = worst.max((back - hv).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        2,
        "sinc inversion round trip",
        worst <= 1e-3 && secs < 1.0,
        format!("worst abs err {worst:.2e} m over 1000 draws, {secs:.2} s"),
    );
}

fn criterion_3(gate: &mut Gate) {
    let start = Instant::now();
    let (w, h) = (256usize, 256usize);
    let gamma_true = 0.7f64;
    let mut rng = Rng::new(21, 0);
    let mut s1 = Vec::with_capacity(w * h);
    let mut s2 = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let (a1, b1) = rng.normal_pair();
        let (a2, b2) = rng.normal_pair();
        let n1 = Complex64::new(a1, b1) / 2f64.sqrt();
        let n2 = Complex64::new(a2, b2) / 2f64.sqrt();
        let v2 = gamma_true * n1 + (1.0 - gamma_true * gamma_true).sqrt() * n2;
        s1.push(Complex32::new(n1.re as f32, n1.im as f32));
        s2.push(Complex32::new(v2.re as f32, v2.im as f32));
    }
    let r1 = ComplexRaster::new(w, h, s1.clone(), vec![true; w * h]).unwrap();
    let r2 = ComplexRaster::new(w, h, s2.clone(), vec![true; w * h]).unwrap();
    let pair = SlcPair::new(r1.clone(), r2.clone()).unwrap();
    let est = estimate_coherence(&pair, 7).unwrap();
    let mean_mag: f64 =
        est.data().iter().map(|c| f64::from(c.norm())).sum::<f64>() / (w * h) as f64;

    // phase equivariance: s2 -> s2 e^{i phi} rotates gamma by -phi
    let phi = 0.7f32;
    let rot = Complex32::from_polar(1.0, phi);
    let s2_rot: Vec<Complex32> = s2.iter().map(|&v| v * rot).collect();
    let pair_rot = SlcPair::new(
        r1.clone(),
        ComplexRaster::new(w, h, s2_rot, vec![true; w * h]).unwrap(),
    )
    .unwrap();
    let est_rot = estimate_coherence(&pair_rot, 7).unwrap();
    let back = Complex64::from_polar(1.0, f64::from(phi));
    let mut phase_err = 0.0f64;
    for i in 0..w * h {
        let a = Complex64::new(f64::from(est.data()[i].re), f64::from(est.data()[i].im));
        let b = Complex64::new(f64::from(est_rot.data()[i].re), f64::from(est_rot.data()[i].im));
        phase_err = phase_err.max((b * back - a).norm());
    }

    // magnitude invariance: s2 -> 2.5 s2 leaves gamma unchanged
    let s2_scaled: Vec<Complex32> = s2.iter().map(|&v| v * 2.5).collect();
    let pair_scaled = SlcPair::new(
        r1,
        ComplexRaster::new(w, h, s2_scaled, vec![true; w * h]).unwrap(),
    )
    .unwrap();
    let est_scaled = estimate_coherence(&pair_scaled, 7).unwrap();
    let mut mag_err = 0.0f64;
    for i in 0..w * h {
        mag_err = mag_err.max(f64::from((est_scaled.data()[i] - est.data()[i]).norm()));
    }
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        3,
        "coherence estimator",
        (0.65..=0.75).contains(&mean_mag) && phase_err <= 1e-6 && mag_err <= 1e-6 && secs < 5.0,
        format!("mean |g| {mean_mag:.4}, phase err {phase_err:.2e}, mag err {mag_err:.2e}, {secs:.2} s"),
    );
}

// --- criterion 4: autodiff -------------------------------------------------

fn nudge_biases(net: &mut Network) {
    // keep relu pre-activations off the exact kink where central
    // differences and subgradients disagree
    for p in net.params_mut() {
        if p.shape().len() == 1 {
            for (j, v) in p.data_mut().iter_mut().enumerate() {
                *v += 0.03 * (j as f64 + 1.0);
            }
        }
    }
}

/// Relative finite-difference error of the sum-of-squares objective over a
/// sampled subset of parameters.
fn fd_worst_rel(net: &Network, x: &Tensor) -> f64 {
    let loss = |net: &Network| -> f64 {
        let cache = net.forward(x).unwrap();
        cache.output().data().iter().map(|v| v * v).sum()
    };
    let cache = net.forward(x).unwrap();
    let grad_out =
        Tensor::new(cache.output().shape().to_vec(), cache.output().data().iter().map(|v| 2.0 * v).collect())
            .unwrap();
    let (pg, _) = net.backward(&cache, &grad_out).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for t in 0..pg.len() {
        let len = net.params()[t].data().len();
        for &j in &[0usize, len / 2, len - 1] {
            let orig = net.params()[t].data()[j];
            let mut plus = net.clone();
            plus.params_mut()[t].data_mut()[j] = orig + h;
            let mut minus = net.clone();
            minus.params_mut()[t].data_mut()[j] = orig - h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = pg[t].data()[j];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    worst
}

fn toy_patch(size: usize, seed: u64) -> PatchSample {
    let mut rng = Rng::new(seed, 0);
    let n = size * size;
    let mut heights = vec![0.0f32; n];
    let mut coh = vec![0.0f32; n];
    for i in 0..n {
        let h = rng.uniform(20.0, 40.0);
        heights[i] = h as f32;
        coh[i] = (1.0 - h / 80.0).clamp(0.05, 1.0) as f32;
    }
    PatchSample {
        coherence: ScalarRaster::new(size, size, coh, vec![true; n]).unwrap(),
        kz: ScalarRaster::filled(size, size, 0.1).unwrap(),
        reference: ScalarRaster::new(size, size, heights, vec![true; n]).unwrap(),
    }
}

fn criterion_4(gate: &mut Gate) {
    let start = Instant::now();
    // every layer type in one network
    let mut mixed = Network::new(vec![
        Layer::conv3x3(2, 3),
        Layer::ReLU,
        Layer::MaxPool2,
        Layer::conv3x3(3, 3),
        Layer::ReLU,
        Layer::UpsampleNearest2,
        Layer::SkipConcat(2),
        Layer::conv3x3(6, 2),
        Layer::Sigmoid,
    ]);
    mixed.init_weights(11);
    nudge_biases(&mut mixed);
    let x = Tensor::new(vec![2, 4, 4], (0..32).map(|i| ((i * 7 % 13) as f64) * 0.1 - 0.6).collect()).unwrap();
    let worst_mixed = fd_worst_rel(&mixed, &x);

    let mut mlp = build_mlp(3, &[6, 6], 2);
    mlp.init_weights(5);
    nudge_biases(&mut mlp);
    let xv = Tensor::new(vec![3], vec![0.4, -0.7, 1.1]).unwrap();
    let worst_dense = fd_worst_rel(&mlp, &xv);

    // composed pipeline through the frozen surrogate
    let nsm = {
        let ds = build_nsm_dataset(&[0.1], 30, InversionMode::Sinc, None).unwrap();
        let hyper = NsmHyper { epochs: 30, hidden: vec![8], ..Default::default() };
        train_nsm(&ds, &hyper, 3).unwrap().0
    };
    let sample = vec![toy_patch(8, 5)];
    let mut unet = build_unet(2, 2, 1, OutActivation::Sigmoid);
    unet.init_weights(7);
    nudge_biases(&mut unet);
    let (_, pg) = cohnet_batch_step(&unet, &nsm, &sample, LossKind::BatchRmse).unwrap();
    let h = 1e-5;
    let mut worst_pipeline = 0.0f64;
    for t in 0..pg.len() {
        let len = unet.params()[t].data().len();
        for &j in &[0usize, len / 2, len - 1] {
            let orig = unet.params()[t].data()[j];
            let mut plus = unet.clone();
            plus.params_mut()[t].data_mut()[j] = orig + h;
            let mut minus = unet.clone();
            minus.params_mut()[t].data_mut()[j] = orig - h;
            let (lp, _) = cohnet_batch_step(&plus, &nsm, &sample, LossKind::BatchRmse).unwrap();
            let (lm, _) = cohnet_batch_step(&minus, &nsm, &sample, LossKind::BatchRmse).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = pg[t].data()[j];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            worst_pipeline = worst_pipeline.max((fd - an).abs() / denom);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        4,
        "autodiff gradient checks",
        worst_mixed <= 1e-4 && worst_dense <= 1e-4 && worst_pipeline <= 1e-3 && secs < 30.0,
        format!(
            "layers {worst_mixed:.2e}, dense {worst_dense:.2e}, pipeline {worst_pipeline:.2e}, {secs:.2} s"
        ),
    );
}

fn criterion_5(gate: &mut Gate) -> NsmModel {
    let start = Instant::now();
    let ds = build_nsm_dataset(&[0.06, 0.09, 0.12], 200, InversionMode::Sinc, None).unwrap();
    let (model, report) = train_nsm(&ds, &NsmHyper::default(), 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        5,
        "surrogate fidelity",
        report.held_out_rmse <= 1.0 && secs < 120.0,
        format!("held-out rmse {:.3} m, train rmse {:.3} m, {secs:.1} s", report.held_out_rmse, report.train_rmse),
    );
    model
}

fn criterion_6(gate: &mut Gate, nsm: &NsmModel, dir: &Path) {
    let before = dir.join("nsm_before.cwt");
    nsm.save(&before).unwrap();
    let samples = vec![toy_patch(16, 2), toy_patch(16, 3)];
    let hyper = TrainHyper { epochs: 3, batch: 2, ..Default::default() };
    let (model, _) = train_cohnet(&samples, nsm, &hyper, 4).unwrap();
    let TrainedModel::Cohnet { nsm: embedded, .. } = &model else { unreachable!() };
    let after = dir.join("nsm_after.cwt");
    embedded.save(&after).unwrap();
    let identical = std::fs::read(&before).unwrap() == std::fs::read(&after).unwrap();
    gate.check(6, "surrogate freeze invariant", identical, "weight-file bytes compared".into());
}

fn criteria_7_and_8(gate: &mut Gate, dir: &Path) {
    let start = Instant::now();
    let mut config = SimConfig { seed: 0, ..SimConfig::default() };
    config.budget.gamma_snr = 0.9;
    config.budget.gamma_rg = 0.95;
    let data = dir.join("ordering_data");
    let result = ordering_benchmark(&config, 30, 300, &data).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ordered = result.raw_rmse > result.volcorr_rmse && result.volcorr_rmse > result.optimized_rmse;
    let improved = result.optimized_rmse <= 0.75 * result.raw_rmse;
    gate.check(
        7,
        "rmse ordering raw > corrected > optimized",
        ordered && improved && secs < 900.0,
        format!(
            "raw {:.2} m > corrected {:.2} m > optimized {:.2} m, {secs:.0} s",
            result.raw_rmse, result.volcorr_rmse, result.optimized_rmse
        ),
    );

    // criterion 8 reuses the same dataset and test split
    let manifest = cohnet_core::dataset::Manifest::read(&data.join("manifest.json")).unwrap();
    let entry = manifest.region("r").unwrap();
    let train_samples = load_patches(&data, &entry.train).unwrap();
    let hyper = TrainHyper { epochs: 30, ..Default::default() };
    let (direct, _) = train_direct(&train_samples, &hyper, config.seed).unwrap();
    let eval = evaluate_model(&direct, &data, &entry.test, &entry.test_meta).unwrap();
    let diff = (eval.report.rmse - result.optimized_rmse).abs();
    gate.check(
        8,
        "baseline parity",
        diff <= 3.0,
        format!("direct {:.2} m vs pipeline {:.2} m (diff {:.2} m)", eval.report.rmse, result.optimized_rmse, diff),
    );
}

fn hash_dir(dir: &Path) -> Vec<(String, u64)> {
    let mut entries: Vec<(String, u64)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let bytes = std::fs::read(e.path()).unwrap();
            // FNV-1a
            let mut h = 0xcbf29ce484222325u64;
            for b in bytes {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            (e.file_name().to_string_lossy().into_owned(), h)
        })
        .collect();
    entries.sort();
    entries
}

fn criterion_9(gate: &mut Gate, dir: &Path) {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_cohnet");
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, "width=64\nheight=64\ncorrelation_length=8\n").unwrap();
    let mut all_identical = true;
    let mut detail = Vec::new();
    for round in ["a", "b"] {
        let root = dir.join(format!("det_{round}"));
        std::fs::create_dir_all(&root).unwrap();
        for args in [
            vec!["--config", cfg.to_str().unwrap(), "simulate", "--seed", "3", "--out"],
            vec!["--config", cfg.to_str().unwrap(), "dataset", "--regions", "d0:5:33", "--out"],
        ] {
            let out = root.join(args[2]);
            let status = Command::new(bin)
                .args(&args)
                .arg(&out)
                .status()
                .unwrap();
            assert!(status.success(), "{args:?} failed");
        }
        let status = Command::new(bin)
            .args(["train-surrogate", "--grid-n", "60", "--epochs", "50", "--seed", "2", "--out"])
            .arg(root.join("nsm.cwt"))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for sub in ["simulate", "dataset"] {
        let a = hash_dir(&dir.join("det_a").join(sub));
        let b = hash_dir(&dir.join("det_b").join(sub));
        if a != b {
            all_identical = false;
            detail.push(format!("{sub} differs"));
        }
    }
    let na = std::fs::read(dir.join("det_a/nsm.cwt")).unwrap();
    let nb = std::fs::read(dir.join("det_b/nsm.cwt")).unwrap();
    if na != nb {
        all_identical = false;
        detail.push("surrogate weights differ".into());
    }
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        9,
        "seeded CLI runs are byte-identical",
        all_identical && secs < 60.0,
        if detail.is_empty() { format!("simulate/dataset/surrogate artifacts hashed, {secs:.1} s") } else { detail.join("; ") },
    );
}

fn criterion_10(gate: &mut Gate, nsm: &NsmModel, dir: &Path) {
    let start = Instant::now();
    let data = dir.join("regions");
    let specs: [(&str, u64, f64, (f64, f64)); 4] = [
        ("r0", 100, 27.0, (0.06, 0.07)),
        ("r1", 101, 31.0, (0.08, 0.09)),
        ("r2", 102, 35.0, (0.10, 0.11)),
        ("r3", 103, 39.0, (0.115, 0.125)),
    ];
    let mut configs = Vec::new();
    let mut names = Vec::new();
    for (name, seed, mean, kz) in specs {
        let mut c = SimConfig {
            seed,
            width: 128,
            height: 128,
            mean_height: mean,
            correlation_length: 12.0,
            kz_range: kz,
            ..SimConfig::default()
        };
        c.budget.gamma_snr = 0.9;
        c.budget.gamma_rg = 0.95;
        configs.push(c);
        names.push(name.to_string());
    }
    let manifest = build_dataset(&configs, &names, &data).unwrap();
    let hyper = TrainHyper { epochs: 40, ..Default::default() };
    let mut models = Vec::new();
    for name in &names {
        let entry = manifest.region(name).unwrap();
        let samples = load_patches(&data, &entry.train).unwrap();
        let (model, _) = train_cohnet(&samples, nsm, &hyper, 1).unwrap();
        models.push((name.clone(), model));
    }
    let mut pooled_samples = Vec::new();
    for name in &names {
        pooled_samples.extend(load_patches(&data, &manifest.region(name).unwrap().train).unwrap());
    }
    let (pooled, _) = train_cohnet(&pooled_samples, nsm, &hyper, 1).unwrap();
    models.push(("pooled".to_string(), pooled));

    let matrix = cross_region_matrix(&models, &manifest, &data).unwrap();
    let worst_cols: Vec<f64> = matrix
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let pooled_worst = worst_cols[4];
    let best_single = worst_cols[..4].iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    gate.check(
        10,
        "pooled model has smallest worst-column rmse",
        pooled_worst < best_single,
        format!("pooled worst {pooled_worst:.2} m vs best single-region worst {best_single:.2} m, {secs:.0} s"),
    );
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut gate = Gate { failures: Vec::new() };
    criterion_1(&mut gate);
    criterion_2(&mut gate);
    criterion_3(&mut gate);
    criterion_4(&mut gate);
    let nsm = criterion_5(&mut gate);
    criterion_6(&mut gate, &nsm, dir.path());
    criteria_7_and_8(&mut gate, dir.path());
    criterion_9(&mut gate, dir.path());
    criterion_10(&mut gate, &nsm, dir.path());
    assert!(gate.failures.is_empty(), "failed criteria:\n{}", gate.failures.join("\n"));
}
