//! Acceptance suite. Runs every criterion, prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any failed.
//!
//! Run with `cargo test --release -p subgrad-langevin-cli --test acceptance`.

use std::path::Path;
use std::time::Instant;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sgl_cli::config::{ImageSource, ImageSpec, ModelParams};
use sgl_cli::experiment::DENOISE_INEQUALITY;
use sgl_cli::presets::preset;
use sgl_cli::{execute, run_experiment, CurveKind, ExperimentConfig, ExperimentKind, RunReport, SamplerSpec};
use subgrad_langevin::linops::convolve2d_periodic;
use subgrad_langevin::metrics::{mean_error_bound_check, pinsker_check, w2_exact};
use subgrad_langevin::potentials::prox_gk_pd;
use subgrad_langevin::samplers::{GRAD_INEQUALITY, MYULA_INEQUALITY, PROX_STRONG_INEQUALITY};
use subgrad_langevin::{
    Algorithm, DataFidelity, DiscreteDistribution, GKind, GSpec, Image, Kernel, LinearOperator,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Suite {
    results: Vec<(usize, &'static str, Outcome, f64)>,
    /// Every (tv, kl) pair computed along the way, for the Pinsker check.
    pinsker_pairs: Vec<(String, f64, f64)>,
}

impl Suite {
    fn run(&mut self, id: usize, name: &'static str, f: impl FnOnce(&mut Self) -> Outcome) {
        let start = Instant::now();
        let o = f(self);
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id:>2} [{}] {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        self.results.push((id, name, o, secs));
    }

    fn collect_pairs(&mut self, report: &RunReport) {
        for s in &report.summary.samplers {
            for (metric_tv, metric_kl) in [("tv", "kl"), ("tv_running", "kl_running")] {
                let tv = report.curve(&s.label, metric_tv, CurveKind::Empirical);
                let kl = report.curve(&s.label, metric_kl, CurveKind::Empirical);
                for ((i, t), (j, k)) in tv.iter().zip(&kl) {
                    assert_eq!(i, j);
                    self.pinsker_pairs.push((format!("{}@{i}", s.label), *t, *k));
                }
            }
        }
    }
}

fn tvl2_model() -> ModelParams {
    ModelParams { sigma: Some(1.0), lambda: Some(5.0), y: Some([-1.0, 1.0]), ..Default::default() }
}

fn config(kind: ExperimentKind, model: ModelParams, samplers: Vec<SamplerSpec>, dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: "acceptance".into(),
        kind,
        model,
        samplers,
        grid: Default::default(),
        snapshots: None,
        x0: None,
        image: None,
        bounds: true,
        seed: 2024,
        output_dir: dir.to_path_buf(),
    }
}

fn run(c: &ExperimentConfig) -> RunReport {
    execute(c).unwrap_or_else(|e| panic!("{}: {e}", c.name))
}

/// Checks `empirical <= bound` at every iteration where both curves have a
/// value; returns (points compared, violations, worst ratio).
fn domination(report: &RunReport, label: &str, metric: &str) -> (usize, usize, f64) {
    let emp = report.curve(label, metric, CurveKind::Empirical);
    let bound = report.curve(label, metric, CurveKind::Bound);
    let mut compared = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for (k, b) in &bound {
        if let Some((_, e)) = emp.iter().find(|(i, _)| i == k) {
            compared += 1;
            violations += (e > b) as usize;
            worst = worst.max(e / b);
        }
    }
    (compared, violations, worst)
}

fn bound_check(report: &RunReport, labels: &[String], metric: &str) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for l in labels {
        let (n, v, worst) = domination(report, l, metric);
        pass &= n > 0 && v == 0;
        parts.push(format!("{l}: {v}/{n} violations, max emp/bound {worst:.3}"));
    }
    outcome(pass, parts.join("; "))
}

fn labels(report: &RunReport) -> Vec<String> {
    report.summary.samplers.iter().map(|s| s.label.clone()).collect()
}

fn criterion_1() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let s = [Algorithm::GradSub, Algorithm::ProxSub].map(|a| SamplerSpec::new(a, 0.1, 100_000, 0, 500));
    let mut c = config(ExperimentKind::Ar1Oracle, ModelParams::default(), s.to_vec(), tmp.path());
    c.bounds = false;
    let r = run(&c);
    let mut pass = true;
    let mut parts = Vec::new();
    for (s, oracle) in r.summary.samplers.iter().zip([1.0 / (1.0 - 0.05), 2.0 * 1.1f64.powi(2) / 2.1]) {
        let a = s.ar1.as_ref().unwrap();
        let err = (a.empirical_variance - oracle).abs() / oracle;
        pass &= err <= 0.02 && (a.oracle_variance - oracle).abs() < 1e-12;
        parts.push(format!("{}: {:.5} vs {:.5} ({:.2}%)", s.label, a.empirical_variance, oracle, 100.0 * err));
    }
    outcome(pass, parts.join("; "))
}

fn tvl2_report(dir: &Path) -> RunReport {
    let mut c = preset("tvl2-2d").unwrap();
    c.output_dir = dir.to_path_buf();
    assert_eq!(c.samplers.len(), 4);
    assert!(c.samplers.iter().all(|s| s.chains == 10_000 && s.iterations() == 20_000));
    run(&c)
}

fn criterion_4(suite: &mut Suite) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = preset("tvl1-2d").unwrap();
    c.output_dir = tmp.path().to_path_buf();
    let r = run(&c);
    suite.collect_pairs(&r);
    let general = r.summary.constants.as_ref().is_some_and(|k| k.m == 0.0);
    let mut o = bound_check(&r, &labels(&r), "kl_running");
    o.pass &= general;
    o
}

/// Equal simulated time `T = 4` at each step size; the coarse chains use sums
/// of the fine chain's increments, so all three runs share one noise path.
fn criterion_5_runs(dir: &Path) -> RunReport {
    let mut samplers = Vec::new();
    for a in [Algorithm::ProxSub, Algorithm::GradSub] {
        for (tau, factor) in [(1e-3, 100), (1e-4, 10), (1e-5, 1)] {
            let mut s = SamplerSpec::new(a, tau, 2_000, 0, (4.0 / tau).round() as usize);
            s.noise_coarsening = factor;
            samplers.push(s);
        }
    }
    let mut c = config(ExperimentKind::Sample2dTvl2, tvl2_model(), samplers, dir);
    c.snapshots = Some(vec![]);
    c.bounds = false;
    run(&c)
}

fn criterion_5(r: &RunReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in ["prox_sub", "grad_sub"] {
        let w: Vec<f64> = ["1e-3", "1e-4", "1e-5"]
            .iter()
            .map(|t| r.sampler(&format!("{alg}_tau{t}")).unwrap().ensemble.as_ref().unwrap().final_w2)
            .collect();
        pass &= w[0] > w[1] && w[1] > w[2];
        parts.push(format!("{alg}: {:.5} > {:.5} > {:.5}", w[0], w[1], w[2]));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6(r: &RunReport) -> Outcome {
    let (p, g) = ("prox_sub_tau1e-5", "grad_sub_tau1e-5");
    let between = w2_exact(r.final_distribution(p).unwrap(), r.final_distribution(g).unwrap()).unwrap();
    let wp = r.sampler(p).unwrap().ensemble.as_ref().unwrap().final_w2;
    let wg = r.sampler(g).unwrap().ensemble.as_ref().unwrap().final_w2;
    let limit = 0.5 * wp.max(wg);
    outcome(between <= limit, format!("W2(prox, grad) {between:.5} <= {limit:.5} (prox {wp:.5}, grad {wg:.5})"))
}

/// `argmin_z theta lambda |z2 - z1| + |z - x|^2 / 2`.
fn pairwise_shrinkage(lambda: f64, theta: f64, x: [f64; 2]) -> [f64; 2] {
    let s = lambda * theta;
    let d = x[1] - x[0];
    if d.abs() <= 2.0 * s {
        let m = 0.5 * (x[0] + x[1]);
        [m, m]
    } else {
        [x[0] + s * d.signum(), x[1] - s * d.signum()]
    }
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let k = LinearOperator::difference2d();
    let mut worst = 0.0f64;
    let mut count = 0;
    for theta in [1e-4, 1e-2, 1.0] {
        for _ in 0..1000 {
            let lambda = rng.random_range(0.1..10.0);
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let g = GSpec::new(GKind::ScaledAbs, lambda).unwrap();
            let z = prox_gk_pd(&g, &k, theta, &x, 1e-8, 1_000_000).unwrap();
            let want = pairwise_shrinkage(lambda, theta, x);
            worst = worst.max((z[0] - want[0]).abs().max((z[1] - want[1]).abs()));
            count += 1;
        }
    }
    outcome(worst <= 1e-6, format!("{count} inputs, max abs error {worst:.2e}"))
}

fn dense_conv(kernel: &Kernel, rows: usize, cols: usize) -> DMatrix<f64> {
    let n = rows * cols;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = Image::zeros(rows, cols);
        e.data_mut()[j] = 1.0;
        let col = convolve2d_periodic(&e, kernel).unwrap();
        for (i, v) in col.data().iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    a
}

fn criterion_8() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let (rows, cols) = (8, 8);
    let n = rows * cols;
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let size = [1, 3, 5][inst % 3];
        let kernel = if inst % 2 == 0 {
            Kernel::gaussian(size, rng.random_range(0.3..2.0)).unwrap()
        } else {
            Kernel::new(size, (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let sigma = rng.random_range(0.01..1.0);
        let tau = 10f64.powf(rng.random_range(-6.0..0.0));
        let y = Image::from_fn(rows, cols, |_, _| rng.random::<f64>());
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        let f = DataFidelity::conv_l2(y.clone(), sigma, kernel.clone()).unwrap();
        let mut got = vec![0.0; n];
        f.prox(tau, &x, &mut got).unwrap();

        let a = dense_conv(&kernel, rows, cols);
        let r = tau / (sigma * sigma);
        let lhs = DMatrix::identity(n, n) + r * a.transpose() * &a;
        let rhs = DVector::from_column_slice(&x) + r * a.transpose() * DVector::from_column_slice(y.data());
        let want = lhs.lu().solve(&rhs).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            worst = worst.max((g - w).abs());
        }
    }
    outcome(worst <= 1e-8, format!("100 instances, max abs error {worst:.2e}"))
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let samplers = vec![
        SamplerSpec::new(Algorithm::GradSub, 1e-6, 1, 200_000, 200_000),
        SamplerSpec::new(Algorithm::MhGradSub, 1e-5, 1, 1_000_000, 1_000_000),
    ];
    let model = ModelParams { sigma: Some(0.05), lambda: Some(30.0), ..Default::default() };
    let mut c = config(ExperimentKind::Denoise, model, samplers, tmp.path());
    c.image = Some(ImageSpec { truth: ImageSource::Phantom { rows: 8, cols: 8 }, float_csv: false });
    let r = run(&c);
    let a = &r.image("grad_sub_tau1e-6").unwrap().mean;
    let b = &r.image("mh_grad_sub_tau1e-5").unwrap().mean;
    let rms = (a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
    let acc = r.sampler("mh_grad_sub_tau1e-5").unwrap().acceptance_rate.unwrap();
    outcome(rms <= 0.01, format!("mean RMS difference {rms:.5} (MH acceptance {acc:.3})"))
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = preset("denoise-small").unwrap();
    c.output_dir = tmp.path().to_path_buf();
    c.samplers.retain(|s| matches!(s.algorithm, Algorithm::GradSub | Algorithm::ProxSub));
    let r = run(&c);
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &r.summary.samplers {
        let im = s.imaging.as_ref().unwrap();
        let ratio = im.edge_flat_ratio.unwrap();
        pass &= ratio >= 2.0;
        parts.push(format!(
            "{}: edge {:.3e} / flat {:.3e} = {ratio:.3}",
            s.label,
            im.edge_variance.unwrap(),
            im.flat_variance.unwrap()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn random_atoms(rng: &mut StdRng, n: usize, support: usize) -> Vec<[f64; 2]> {
    let points: Vec<[f64; 2]> =
        (0..support).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    // Every support point gets at least one atom.
    let mut atoms = points.clone();
    while atoms.len() < n {
        atoms.push(points[rng.random_range(0..support)]);
    }
    atoms
}

fn from_atoms(atoms: &[[f64; 2]]) -> DiscreteDistribution {
    let flat: Vec<f64> = atoms.iter().flatten().copied().collect();
    DiscreteDistribution::from_weights(2, flat, vec![1.0; atoms.len()]).unwrap()
}

/// Unit-mass atoms on both sides: optimal plans are permutations.
fn brute_force_w2(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = a.len();
    (0..n)
        .permutations(n)
        .map(|p| a.iter().zip(&p).map(|(x, &j)| (x[0] - b[j][0]).powi(2) + (x[1] - b[j][1]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / n as f64
}

fn criterion_11(suite: &mut Suite) -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let mut w2_err = 0.0f64;
    for _ in 0..300 {
        let n = rng.random_range(1..=6usize);
        let (sa, sb) = (rng.random_range(1..=n.min(4)), rng.random_range(1..=n.min(4)));
        let a = random_atoms(&mut rng, n, sa);
        let b = random_atoms(&mut rng, n, sb);
        let got = w2_exact(&from_atoms(&a), &from_atoms(&b)).unwrap();
        let want = brute_force_w2(&a, &b).sqrt();
        w2_err = w2_err.max((got - want).abs());
    }

    let pinsker_fail = suite.pinsker_pairs.iter().filter(|(_, tv, kl)| !pinsker_check(*tv, *kl)).count();

    let mut mean_fail = 0;
    for _ in 0..1000 {
        let (sa, sb) = (rng.random_range(1..=4usize), rng.random_range(1..=4usize));
        let pts = |rng: &mut StdRng, s: usize| -> Vec<f64> { (0..2 * s).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let wts = |rng: &mut StdRng, s: usize| -> Vec<f64> { (0..s).map(|_| rng.random_range(0.05..1.0)).collect() };
        let mu = DiscreteDistribution::from_weights(2, pts(&mut rng, sa), wts(&mut rng, sa)).unwrap();
        let nu = DiscreteDistribution::from_weights(2, pts(&mut rng, sb), wts(&mut rng, sb)).unwrap();
        let w = w2_exact(&mu, &nu).unwrap();
        mean_fail += !mean_error_bound_check(&mu, &nu, w) as usize;
    }
    let pass = w2_err <= 1e-10 && pinsker_fail == 0 && !suite.pinsker_pairs.is_empty() && mean_fail == 0;
    outcome(
        pass,
        format!(
            "W2 vs brute force max error {w2_err:.1e} (300 instances); Pinsker {pinsker_fail}/{} pairs fail; \
             mean-error bound {mean_fail}/1000 fail",
            suite.pinsker_pairs.len()
        ),
    )
}

fn rejected(c: &ExperimentConfig, inequality: &str) -> Result<String, String> {
    match run_experiment(c) {
        Ok(_) => Err(format!("{}: accepted", c.name)),
        Err(e) => {
            let msg = e.to_string();
            if !msg.contains(inequality) {
                Err(format!("{}: message lacks '{inequality}': {msg}", c.name))
            } else if c.output_dir.exists() {
                Err(format!("{}: output written before rejection", c.name))
            } else {
                Ok(format!("{}: '{inequality}'", c.name))
            }
        }
    }
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |n: &str| tmp.path().join(n);
    let denoise = |alg: Algorithm, name: &str| {
        let model = ModelParams { sigma: Some(0.05), lambda: Some(30.0), ..Default::default() };
        let mut s = SamplerSpec::new(alg, 0.003, 1, 10, 10);
        if alg == Algorithm::Myula {
            s = s.with_theta(1.0);
        }
        let mut c = config(ExperimentKind::Denoise, model, vec![s], &dir(name));
        c.image = Some(ImageSpec { truth: ImageSource::Phantom { rows: 8, cols: 8 }, float_csv: false });
        c.name = name.into();
        c
    };
    let two_d = |s: SamplerSpec, name: &str| {
        let mut c = config(ExperimentKind::Sample2dTvl2, tvl2_model(), vec![s], &dir(name));
        c.name = name.into();
        c
    };
    let cases = [
        (denoise(Algorithm::GradSub, "denoise-grad"), DENOISE_INEQUALITY),
        (denoise(Algorithm::ProxSub, "denoise-prox"), DENOISE_INEQUALITY),
        (denoise(Algorithm::Myula, "denoise-myula"), DENOISE_INEQUALITY),
        (two_d(SamplerSpec::new(Algorithm::Myula, 0.02, 10, 0, 10).with_theta(0.01), "myula"), MYULA_INEQUALITY),
        (two_d(SamplerSpec::new(Algorithm::ProxSub, 1.5, 10, 0, 10), "prox-strong"), PROX_STRONG_INEQUALITY),
        (two_d(SamplerSpec::new(Algorithm::GradSub, 1.5, 10, 0, 10), "grad"), GRAD_INEQUALITY),
    ];
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (c, inequality) in &cases {
        match rejected(c, inequality) {
            Ok(m) => ok.push(m),
            Err(m) => bad.push(m),
        }
    }
    let mut control = denoise(Algorithm::GradSub, "denoise-ok");
    control.samplers[0].tau = 0.0025;
    if let Err(e) = execute(&control) {
        bad.push(format!("tau = sigma^2 rejected: {e}"));
    }
    if bad.is_empty() {
        outcome(true, format!("{} configs rejected: {}", ok.len(), ok.join(", ")))
    } else {
        outcome(false, bad.join("; "))
    }
}

fn criterion_13() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let samplers = vec![
        SamplerSpec::new(Algorithm::GradSub, 1e-3, 2_000, 0, 2_000),
        SamplerSpec::new(Algorithm::ProxSub, 1e-3, 2_000, 0, 2_000),
        SamplerSpec::new(Algorithm::Myula, 1e-3, 2_000, 0, 2_000).with_theta(0.01),
    ];
    let mut c = config(ExperimentKind::Sample2dTvl2, tvl2_model(), samplers, tmp.path());
    c.snapshots = Some(vec![]);
    c.bounds = false;
    run_experiment(&c).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    let cost = |label: &str| -> f64 {
        summary["samplers"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| s["label"] == label)
            .and_then(|s| s["seconds_per_1000_iters"].as_f64())
            .unwrap()
    };
    let (g, p, m) = (cost("grad_sub_tau1e-3"), cost("prox_sub_tau1e-3"), cost("myula_tau1e-3"));
    outcome(
        m > g && m > p,
        format!("s per 1000 iters at 2000 chains: grad {g:.4}, prox {p:.4}, myula {m:.4}"),
    )
}

fn main() {
    let mut suite = Suite { results: Vec::new(), pinsker_pairs: Vec::new() };
    suite.run(1, "AR(1) stationary variance", |_| criterion_1());

    let tmp = tempfile::tempdir().unwrap();
    let tvl2 = tvl2_report(tmp.path());
    suite.collect_pairs(&tvl2);
    let tvl2_labels = labels(&tvl2);
    suite.run(2, "W2 bound domination, TV-L2 2D", |_| bound_check(&tvl2, &tvl2_labels, "w2_sq"));
    suite.run(3, "KL running-average bound domination, TV-L2 2D", |_| {
        bound_check(&tvl2, &tvl2_labels, "kl_running")
    });
    suite.run(4, "KL bound domination, TV-L1 2D", criterion_4);

    let mono = criterion_5_runs(tmp.path());
    suite.collect_pairs(&mono);
    suite.run(5, "bias decreases with tau", |_| criterion_5(&mono));
    suite.run(6, "prox_sub and grad_sub agree at tau = 1e-5", |_| criterion_6(&mono));
    suite.run(7, "inner solver vs pairwise shrinkage", |_| criterion_7());
    suite.run(8, "deconvolution prox vs dense solve", |_| criterion_8());
    suite.run(9, "8x8 posterior mean vs MH-corrected chain", |_| criterion_9());
    suite.run(10, "edge variance exceeds flat variance", |_| criterion_10());
    suite.run(11, "metric properties", criterion_11);
    suite.run(12, "validation gate", |_| criterion_12());
    suite.run(13, "prox-free samplers cheaper than MYULA", |_| criterion_13());

    let failed: Vec<usize> = suite.results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        suite.results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" (criteria {failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
