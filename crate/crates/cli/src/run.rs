//! Runs a prepared experiment and writes its result bundle.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use subgrad_langevin::bounds::{self, RegularityConstants, W2Variant};
use subgrad_langevin::estimation::{histogram, Grid2D};
use subgrad_langevin::metrics::{
    discretize_target, kl_discrete, mean_error_bound_check, pinsker_check, tv_discrete, w2_squared_exact,
    DiscretizedTarget,
};
use subgrad_langevin::samplers::{run_ensemble, EnsembleOptions, EnsembleOutput, RunningHistogramSpec, ScheduleKind};
use subgrad_langevin::{Algorithm, DiscreteDistribution, Image, MomentAccumulator};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::experiment::{all_caps, prepare, CapEntry, Prepared, PreparedSampler};
use crate::pgm::{write_image_csv, write_image_pgm};
use crate::synthetic::{edge_masks, masked_mean};

pub const W2: &str = "w2";
pub const W2_SQ: &str = "w2_sq";
pub const KL: &str = "kl";
pub const TV: &str = "tv";
pub const KL_RUNNING: &str = "kl_running";
pub const TV_RUNNING: &str = "tv_running";
pub const VARIANCE: &str = "variance";
pub const MEAN_RMSE_TRUTH: &str = "mean_rmse_truth";
pub const MEAN_VARIANCE: &str = "mean_variance";

/// Chebyshev radius of the constant window that makes a pixel "flat".
pub const FLAT_MARGIN: usize = 2;

pub const TV_NORMALIZATION: &str = "0.5 * sum_i |p_i - q_i|";
pub const KL_DIRECTION: &str = "KL(empirical | target)";
pub const SINGLE_CHAIN_NOTE: &str =
    "heuristic: moments from consecutive iterates of one chain; ergodicity of this sampler is not established";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Empirical,
    Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub iter: usize,
    pub sampler: String,
    pub metric: String,
    pub value: f64,
    pub curve_kind: CurveKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub bins: [usize; 2],
    pub refine: usize,
    pub bin_area: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetSummary {
    pub z: f64,
    pub log_z: f64,
    pub grid: GridSummary,
    pub tv_normalization: &'static str,
    pub kl_direction: &'static str,
    /// Squared W2 between the initial histogram and the target.
    pub initial_w2_sq: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EnsembleSummary {
    pub final_w2: f64,
    pub final_w2_sq: f64,
    pub final_kl: f64,
    pub final_tv: f64,
    pub final_running_kl: Option<f64>,
    pub clamped_final: u64,
    pub clamped_running: u64,
    pub pinsker_ok: bool,
    pub mean_error_bound_ok: bool,
    pub w2_bound_dominated: Option<bool>,
    pub kl_bound_dominated: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ar1Summary {
    pub empirical_variance: f64,
    pub oracle_variance: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImagingSummary {
    pub mean_rmse_truth: f64,
    pub mean_variance: f64,
    /// Variance images are written divided by this value.
    pub variance_scale: f64,
    pub edge_variance: Option<f64>,
    pub flat_variance: Option<f64>,
    pub edge_flat_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerSummary {
    pub label: String,
    pub algorithm: Algorithm,
    pub tau: f64,
    pub schedule: ScheduleKind,
    pub chains: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    pub noise_coarsening: usize,
    pub theta: Option<f64>,
    pub cap: Option<f64>,
    pub cap_inequality: &'static str,
    pub acceptance_rate: Option<f64>,
    pub seconds_per_1000_iters: f64,
    pub seconds_total: f64,
    pub single_chain_heuristic: Option<&'static str>,
    pub ensemble: Option<EnsembleSummary>,
    pub ar1: Option<Ar1Summary>,
    pub imaging: Option<ImagingSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub dimension: usize,
    pub constants: Option<RegularityConstants>,
    pub caps: Vec<CapEntry>,
    pub target: Option<TargetSummary>,
    pub samplers: Vec<SamplerSummary>,
}

#[derive(Debug, Clone)]
pub struct ImagingResult {
    pub label: String,
    pub mean: Image,
    pub variance: Image,
}

/// Everything a run produces; `write_outputs` turns it into files.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub curves: Vec<CurveRow>,
    pub target: Option<DiscretizedTarget>,
    /// Final-iterate histograms of the 2D experiments, by sampler label.
    pub final_distributions: Vec<(String, DiscreteDistribution)>,
    pub images: Vec<ImagingResult>,
    pub truth: Option<Image>,
    pub data: Option<Image>,
}

impl RunReport {
    pub fn sampler(&self, label: &str) -> Option<&SamplerSummary> {
        self.summary.samplers.iter().find(|s| s.label == label)
    }

    pub fn final_distribution(&self, label: &str) -> Option<&DiscreteDistribution> {
        self.final_distributions.iter().find(|(l, _)| l == label).map(|(_, d)| d)
    }

    pub fn image(&self, label: &str) -> Option<&ImagingResult> {
        self.images.iter().find(|r| r.label == label)
    }

    pub fn curve(&self, sampler: &str, metric: &str, kind: CurveKind) -> Vec<(usize, f64)> {
        self.curves
            .iter()
            .filter(|r| r.sampler == sampler && r.metric == metric && r.curve_kind == kind)
            .map(|r| (r.iter, r.value))
            .collect()
    }
}

/// Validates, runs and writes `config`'s result bundle to its output directory.
pub fn run_experiment(config: &ExperimentConfig) -> CliResult<RunReport> {
    let report = execute(config)?;
    write_outputs(config, &report)?;
    Ok(report)
}

/// Validates and runs `config` without touching the file system beyond
/// reading an input image.
pub fn execute(config: &ExperimentConfig) -> CliResult<RunReport> {
    let prepared = prepare(config)?;
    let caps = all_caps(config)?;
    let mut curves = Vec::new();
    let mut samplers = Vec::new();
    let mut final_distributions = Vec::new();
    let mut images = Vec::new();

    let target = match prepared.grid {
        Some(grid) => {
            let model = &prepared.model;
            Some(discretize_target(|p| model.eval_u(&p), &grid, config.grid.refine)?)
        }
        None => None,
    };
    let mut initial_w2_sq = None;

    for s in &prepared.samplers {
        log::info!("running {} ({} chains, {} iterations)", s.label, s.config.chains, s.config.iterations());
        let mut summary = sampler_summary(s);
        match prepared.kind {
            ExperimentKind::Sample2dTvl2 | ExperimentKind::Sample2dTvl1 => {
                let grid = prepared.grid.expect("2D experiments have a grid");
                let target = target.as_ref().expect("2D experiments have a target");
                let (ens, dist, w0) = run_2d(config, &prepared, s, grid, target, &mut curves, &mut summary)?;
                initial_w2_sq.get_or_insert(w0);
                summary.ensemble = Some(ens);
                final_distributions.push((s.label.clone(), dist));
            }
            ExperimentKind::Ar1Oracle => {
                summary.ar1 = Some(run_ar1(config, &prepared, s, &mut curves, &mut summary)?);
            }
            ExperimentKind::Denoise | ExperimentKind::Deconv => {
                let (img, result) = run_imaging(&prepared, s, &mut curves, &mut summary)?;
                summary.imaging = Some(img);
                images.push(result);
            }
        }
        samplers.push(summary);
    }

    let target_summary = target.as_ref().map(|t| {
        let g = &config.grid;
        TargetSummary {
            z: t.z,
            log_z: t.log_z,
            grid: GridSummary {
                x_range: g.x_range,
                y_range: g.y_range,
                bins: g.bins,
                refine: g.refine,
                bin_area: prepared.grid.map_or(f64::NAN, |g| g.bin_area()),
            },
            tv_normalization: TV_NORMALIZATION,
            kl_direction: KL_DIRECTION,
            initial_w2_sq: initial_w2_sq.unwrap_or(f64::NAN),
        }
    });
    let summary = Summary {
        experiment: config.name.clone(),
        kind: config.kind,
        seed: config.seed,
        dimension: prepared.model.dim(),
        constants: prepared.constants(),
        caps,
        target: target_summary,
        samplers,
    };
    Ok(RunReport {
        summary,
        curves,
        target,
        final_distributions,
        images,
        truth: prepared.truth,
        data: prepared.data,
    })
}

fn sampler_summary(s: &PreparedSampler) -> SamplerSummary {
    let single = s.config.chains == 1 && s.config.samples > 1 && !s.config.algorithm.is_metropolized();
    SamplerSummary {
        label: s.label.clone(),
        algorithm: s.config.algorithm,
        tau: s.spec.tau,
        schedule: s.config.schedule.kind(),
        chains: s.config.chains,
        burn_in: s.config.burn_in,
        samples: s.config.samples,
        seed: s.config.master_seed,
        noise_coarsening: s.config.noise_coarsening,
        theta: s.config.params.theta,
        cap: s.cap.cap.is_finite().then_some(s.cap.cap),
        cap_inequality: s.cap.inequality,
        acceptance_rate: None,
        seconds_per_1000_iters: 0.0,
        seconds_total: 0.0,
        single_chain_heuristic: single.then_some(SINGLE_CHAIN_NOTE),
        ensemble: None,
        ar1: None,
        imaging: None,
    }
}

fn record_timing(out: &EnsembleOutput, summary: &mut SamplerSummary) {
    summary.acceptance_rate = out.acceptance_rate();
    summary.seconds_per_1000_iters = out.seconds_per_1000_iters();
    summary.seconds_total = out.elapsed.as_secs_f64();
}

fn row(curves: &mut Vec<CurveRow>, iter: usize, sampler: &str, metric: &str, value: f64, kind: CurveKind) {
    curves.push(CurveRow { iter, sampler: sampler.to_string(), metric: metric.to_string(), value, curve_kind: kind });
}

fn w2_variant(algorithm: Algorithm) -> Option<W2Variant> {
    match algorithm {
        Algorithm::ProxSub => Some(W2Variant::Prox),
        Algorithm::GradSub => Some(W2Variant::Grad),
        _ => None,
    }
}

/// `W2^2` bound at each snapshot, when the sampler and model admit one.
fn w2_bound_values(c: &RegularityConstants, s: &PreparedSampler, iters: &[usize], w0_sq: f64) -> Option<Vec<f64>> {
    let variant = w2_variant(s.config.algorithm)?;
    if c.m <= 0.0 || s.config.burn_in > 0 {
        return None;
    }
    let schedule = &s.config.schedule;
    let result = match schedule.kind() {
        ScheduleKind::Constant => {
            iters.iter().map(|&k| bounds::w2_bound_strong(c, schedule.tau(1), k, w0_sq, variant)).collect()
        }
        _ => {
            let k_max = *iters.last()?;
            let taus: Vec<f64> = (1..=k_max + 1).map(|j| schedule.tau(j)).collect();
            bounds::w2_bound_varying_curve(c, &taus, k_max, w0_sq, variant)
                .map(|curve| iters.iter().map(|&k| curve[k]).collect())
        }
    };
    result.map_err(|e| log::warn!("{}: no W2 bound: {e}", s.label)).ok()
}

/// KL bound for the unit-weight running average after `n` iterations.
fn kl_bound_values(c: &RegularityConstants, s: &PreparedSampler, ns: &[usize], w0_sq: f64) -> Option<Vec<f64>> {
    let cfg = &s.config;
    if cfg.burn_in > 0 || cfg.schedule.kind() != ScheduleKind::Constant || !cfg.schedule.has_unit_weights() {
        return None;
    }
    let tau = cfg.schedule.tau(1);
    let strong = c.m > 0.0 && w2_variant(cfg.algorithm).is_some();
    let general = matches!(cfg.algorithm, Algorithm::ProxSub | Algorithm::GradSub | Algorithm::Sub);
    let result: subgrad_langevin::Result<Vec<f64>> = if strong {
        ns.iter().map(|&n| bounds::kl_bound_strong(c, tau, n, 0, w0_sq)).collect()
    } else if general {
        ns.iter().map(|&n| bounds::kl_bound_general(c, tau, n, 0, w0_sq)).collect()
    } else {
        return None;
    };
    result.map_err(|e| log::warn!("{}: no KL bound: {e}", s.label)).ok()
}

fn run_2d(
    config: &ExperimentConfig,
    prepared: &Prepared,
    s: &PreparedSampler,
    grid: Grid2D,
    target: &DiscretizedTarget,
    curves: &mut Vec<CurveRow>,
    summary: &mut SamplerSummary,
) -> CliResult<(EnsembleSummary, DiscreteDistribution, f64)> {
    let wrap = |e| CliError::sampler(&s.label, e);
    let iterations = s.config.iterations();
    let snaps = config.snapshot_iters(iterations);
    let burn_in = s.config.burn_in;
    let checkpoints: Vec<usize> = snaps.iter().filter(|&&k| k > burn_in).map(|&k| k - burn_in).collect();
    let options = EnsembleOptions {
        snapshot_iters: snaps.clone(),
        running_histogram: Some(RunningHistogramSpec { grid, checkpoints: checkpoints.clone() }),
        moments: false,
    };
    let out = run_ensemble(&prepared.model, &s.config, &prepared.x0, &options).map_err(wrap)?;
    record_timing(&out, summary);

    let t0 = Instant::now();
    let tgt = &target.distribution;
    let mut ens = EnsembleSummary { pinsker_ok: true, mean_error_bound_ok: true, ..Default::default() };
    let mut w2_sq_values = Vec::with_capacity(snaps.len());
    let mut last = None;
    for snap in &out.snapshots {
        let h = histogram(&snap.states, &grid)?;
        let w2_sq = w2_squared_exact(&h.distribution, tgt)?;
        let kl = kl_discrete(&h.distribution, tgt)?;
        let tv = tv_discrete(&h.distribution, tgt)?;
        ens.pinsker_ok &= pinsker_check(tv, kl);
        ens.mean_error_bound_ok &= mean_error_bound_check(&h.distribution, tgt, w2_sq.sqrt());
        for (metric, value) in [(W2, w2_sq.sqrt()), (W2_SQ, w2_sq), (KL, kl), (TV, tv)] {
            row(curves, snap.iter, &s.label, metric, value, CurveKind::Empirical);
        }
        w2_sq_values.push(w2_sq);
        (ens.final_w2, ens.final_w2_sq, ens.final_kl, ens.final_tv) = (w2_sq.sqrt(), w2_sq, kl, tv);
        ens.clamped_final = h.clamped;
        last = Some(h.distribution);
    }
    let w0_sq = w2_sq_values[0];

    let mut running_kl = Vec::with_capacity(out.running.len());
    for r in &out.running {
        let dist = DiscreteDistribution::on_grid(grid, r.weights.clone())?;
        let kl = kl_discrete(&dist, tgt)?;
        let tv = tv_discrete(&dist, tgt)?;
        ens.pinsker_ok &= pinsker_check(tv, kl);
        row(curves, burn_in + r.n, &s.label, KL_RUNNING, kl, CurveKind::Empirical);
        row(curves, burn_in + r.n, &s.label, TV_RUNNING, tv, CurveKind::Empirical);
        running_kl.push(kl);
        ens.clamped_running = r.clamped;
        ens.final_running_kl = Some(kl);
    }

    if config.bounds {
        if let Some(c) = prepared.constants() {
            if let Some(b) = w2_bound_values(&c, s, &snaps, w0_sq) {
                for (&k, &v) in snaps.iter().zip(&b) {
                    row(curves, k, &s.label, W2_SQ, v, CurveKind::Bound);
                }
                ens.w2_bound_dominated = Some(w2_sq_values.iter().zip(&b).all(|(e, v)| e <= v));
            }
            if let Some(b) = kl_bound_values(&c, s, &checkpoints, w0_sq) {
                for (&n, &v) in checkpoints.iter().zip(&b) {
                    row(curves, burn_in + n, &s.label, KL_RUNNING, v, CurveKind::Bound);
                }
                ens.kl_bound_dominated = Some(running_kl.iter().zip(&b).all(|(e, v)| e <= v));
            }
        }
    }
    log::info!("{}: metrics in {:.1}s", s.label, t0.elapsed().as_secs_f64());
    Ok((ens, last.expect("the initial snapshot is always recorded"), w0_sq))
}

/// Stationary variance of the scalar chain: `1/(1 - tau/2)` for the gradient
/// step, `2(1 + tau)^2/(2 + tau)` for the proximal step.
pub fn ar1_oracle_variance(algorithm: Algorithm, tau: f64) -> Option<f64> {
    match algorithm {
        Algorithm::GradSub => Some(1.0 / (1.0 - tau / 2.0)),
        Algorithm::ProxSub => Some(2.0 * (1.0 + tau).powi(2) / (2.0 + tau)),
        _ => None,
    }
}

fn pooled_variance(states: &[f64]) -> CliResult<f64> {
    let mut acc = MomentAccumulator::new(1);
    for v in states {
        acc.accumulate(std::slice::from_ref(v));
    }
    Ok(acc.finalize()?.1[0])
}

fn run_ar1(
    config: &ExperimentConfig,
    prepared: &Prepared,
    s: &PreparedSampler,
    curves: &mut Vec<CurveRow>,
    summary: &mut SamplerSummary,
) -> CliResult<Ar1Summary> {
    let iterations = s.config.iterations();
    let options = EnsembleOptions { snapshot_iters: config.snapshot_iters(iterations), ..Default::default() };
    let out = run_ensemble(&prepared.model, &s.config, &prepared.x0, &options)
        .map_err(|e| CliError::sampler(&s.label, e))?;
    record_timing(&out, summary);
    let mut empirical = f64::NAN;
    for snap in &out.snapshots {
        // both coordinates are independent copies of the scalar chain
        let v = if snap.iter == 0 { 0.0 } else { pooled_variance(&snap.states)? };
        row(curves, snap.iter, &s.label, VARIANCE, v, CurveKind::Empirical);
        empirical = v;
    }
    let oracle = ar1_oracle_variance(s.config.algorithm, s.spec.tau).expect("checked in prepare");
    Ok(Ar1Summary { empirical_variance: empirical, oracle_variance: oracle, relative_error: (empirical / oracle - 1.0).abs() })
}

fn run_imaging(
    prepared: &Prepared,
    s: &PreparedSampler,
    curves: &mut Vec<CurveRow>,
    summary: &mut SamplerSummary,
) -> CliResult<(ImagingSummary, ImagingResult)> {
    let options = EnsembleOptions { moments: true, ..Default::default() };
    let out = run_ensemble(&prepared.model, &s.config, &prepared.x0, &options)
        .map_err(|e| CliError::sampler(&s.label, e))?;
    record_timing(&out, summary);
    let acc = out.moments.as_ref().expect("moments were requested");
    let (mean, var) = acc.finalize().map_err(|e| CliError::sampler(&s.label, e))?;
    let data = prepared.data.as_ref().expect("imaging experiments have data");
    let (rows, cols) = (data.rows(), data.cols());
    let truth = prepared.truth.as_ref().expect("imaging experiments have a ground truth");
    let rmse = (mean.iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / mean.len() as f64).sqrt();
    let mean_var = var.iter().sum::<f64>() / var.len() as f64;
    let masks = edge_masks(truth, FLAT_MARGIN);
    let edge = masked_mean(&var, &masks.edge);
    let flat = masked_mean(&var, &masks.flat);
    let ratio = match (edge, flat) {
        (Some(e), Some(f)) if f > 0.0 => Some(e / f),
        _ => None,
    };
    let iter = s.config.iterations();
    row(curves, iter, &s.label, MEAN_RMSE_TRUTH, rmse, CurveKind::Empirical);
    row(curves, iter, &s.label, MEAN_VARIANCE, mean_var, CurveKind::Empirical);
    let scale = var.iter().fold(0.0f64, |a, &b| a.max(b));
    let img = ImagingSummary {
        mean_rmse_truth: rmse,
        mean_variance: mean_var,
        variance_scale: scale,
        edge_variance: edge,
        flat_variance: flat,
        edge_flat_ratio: ratio,
    };
    let result = ImagingResult {
        label: s.label.clone(),
        mean: Image::new(rows, cols, mean)?,
        variance: Image::new(rows, cols, var)?,
    };
    Ok((img, result))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_curves(path: &Path, curves: &[CurveRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in curves {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_image_pair(dir: &Path, stem: &str, image: &Image, float_csv: bool) -> CliResult<()> {
    write_image_pgm(&dir.join(format!("{stem}.pgm")), image)?;
    if float_csv {
        write_image_csv(&dir.join(format!("{stem}.csv")), image)?;
    }
    Ok(())
}

/// Writes `curves.csv`, `summary.json`, `config.json` and, for imaging runs,
/// the data, truth, mean and variance images.
pub fn write_outputs(config: &ExperimentConfig, report: &RunReport) -> CliResult<()> {
    let dir = &config.output_dir;
    create_dir(dir)?;
    write_curves(&dir.join("curves.csv"), &report.curves)?;
    let summary = serde_json::to_string_pretty(&report.summary)?;
    let path = dir.join("summary.json");
    fs::write(&path, summary).map_err(|e| CliError::io(&path, e))?;
    let path = dir.join("config.json");
    fs::write(&path, config.to_json()).map_err(|e| CliError::io(&path, e))?;

    let float_csv = config.image.as_ref().is_some_and(|i| i.float_csv);
    if let Some(t) = &report.truth {
        write_image_pair(dir, "truth", t, float_csv)?;
    }
    if let Some(y) = &report.data {
        write_image_pair(dir, "data", y, float_csv)?;
    }
    for r in &report.images {
        write_image_pair(dir, &format!("mean_{}", r.label), &r.mean, float_csv)?;
        let scale = r.variance.data().iter().fold(0.0f64, |a, &b| a.max(b));
        let scaled = if scale > 0.0 {
            Image::new(r.variance.rows(), r.variance.cols(), r.variance.data().iter().map(|v| v / scale).collect())?
        } else {
            r.variance.clone()
        };
        write_image_pgm(&dir.join(format!("variance_{}.pgm", r.label)), &scaled)?;
        if float_csv {
            write_image_csv(&dir.join(format!("variance_{}.csv", r.label)), &r.variance)?;
        }
    }
    Ok(())
}
