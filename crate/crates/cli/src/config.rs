//! JSON experiment configuration. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subgrad_langevin::bounds::Regularity;
use subgrad_langevin::samplers::{InnerSolver, ScheduleKind};
use subgrad_langevin::Algorithm;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// `||x - y||^2/(2 sigma^2) + lambda |x2 - x1|` on `R^2`.
    Sample2dTvl2,
    /// `||x - y||_1/b + lambda |x2 - x1|` on `R^2`.
    Sample2dTvl1,
    /// Anisotropic TV denoising of an image.
    Denoise,
    /// Anisotropic TV deconvolution with a Gaussian blur.
    Deconv,
    /// `F(x) = ||x||^2/2`, `G = 0`: chains are AR(1) processes.
    Ar1Oracle,
}

impl ExperimentKind {
    pub fn is_2d(self) -> bool {
        matches!(self, Self::Sample2dTvl2 | Self::Sample2dTvl1)
    }

    pub fn is_imaging(self) -> bool {
        matches!(self, Self::Denoise | Self::Deconv)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    /// Standard deviation of the Gaussian blur in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_std: Option<f64>,
}

pub const DEFAULT_KERNEL_STD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    #[default]
    Constant,
    /// `1/tau_j = 1/tau + (j - 1) m/2` with the model's strong convexity `m`.
    Decreasing,
}

impl From<ScheduleChoice> for ScheduleKind {
    fn from(c: ScheduleChoice) -> Self {
        match c {
            ScheduleChoice::Constant => ScheduleKind::Constant,
            ScheduleChoice::Decreasing => ScheduleKind::Decreasing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub algorithm: Algorithm,
    pub tau: f64,
    #[serde(default)]
    pub schedule: ScheduleChoice,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub burn_in: usize,
    /// Iterations after the burn-in.
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_max_iters: Option<usize>,
    #[serde(default = "one")]
    pub noise_coarsening: usize,
    /// Assumption on `F` that selects the step-size cap; defaults to
    /// `smooth_f` for deconvolution and to the strongest available otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption: Option<Regularity>,
    /// Seed offset added to the experiment seed; equal offsets share noise.
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn one() -> usize {
    1
}

impl SamplerSpec {
    pub fn new(algorithm: Algorithm, tau: f64, chains: usize, burn_in: usize, samples: usize) -> Self {
        Self {
            algorithm,
            tau,
            schedule: ScheduleChoice::Constant,
            chains,
            burn_in,
            samples,
            theta: None,
            inner_tol: None,
            inner_max_iters: None,
            noise_coarsening: 1,
            assumption: None,
            seed_offset: 0,
            label: None,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    /// `label` if set, otherwise `<algorithm>_tau<tau>`.
    pub fn display_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}_tau{:e}", self.algorithm, self.tau))
    }

    pub fn iterations(&self) -> usize {
        self.burn_in + self.samples
    }

    pub fn inner(&self) -> InnerSolver {
        let d = InnerSolver::default();
        InnerSolver { tol: self.inner_tol.unwrap_or(d.tol), max_iters: self.inner_max_iters.unwrap_or(d.max_iters) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub bins: [usize; 2],
    /// Quadrature points per bin and axis for the target masses.
    pub refine: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_range: [-4.0, 4.0], y_range: [-4.0, 4.0], bins: [50, 50], refine: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    Phantom { rows: usize, cols: usize },
    Pgm { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    /// Ground truth from which the observation is synthesized.
    pub truth: ImageSource,
    /// Also write full-precision CSV sidecars next to every PGM.
    #[serde(default)]
    pub float_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: ModelParams,
    pub samplers: Vec<SamplerSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    /// Iterations at which ensemble metrics are recorded; defaults to
    /// `DEFAULT_SNAPSHOT_POINTS` log-spaced points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<usize>>,
    /// Initial state of every chain; defaults to `y` (2D), the data (imaging)
    /// or the origin (AR(1)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageSpec>,
    /// Emit theoretical bound curves next to the empirical ones.
    #[serde(default = "yes")]
    pub bounds: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_SNAPSHOT_POINTS: usize = 40;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Snapshot iterations for a run of `iterations` iterations, always
    /// including 0 and the final iteration.
    pub fn snapshot_iters(&self, iterations: usize) -> Vec<usize> {
        let mut v = match &self.snapshots {
            Some(s) => s.iter().copied().filter(|&k| k <= iterations).collect(),
            None => log_spaced(iterations, DEFAULT_SNAPSHOT_POINTS),
        };
        v.push(0);
        v.push(iterations);
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// `0` plus about `points` integers spread logarithmically over `1..=max`.
pub fn log_spaced(max: usize, points: usize) -> Vec<usize> {
    let mut v = vec![0];
    if max == 0 {
        return v;
    }
    let steps = points.max(2) - 1;
    let top = (max as f64).ln();
    for i in 0..=steps {
        v.push(((top * i as f64 / steps as f64).exp().round() as usize).clamp(1, max));
    }
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t", "kind": "sample2d_tvl2",
        "model": {"sigma": 1.0, "lambda": 5.0, "y": [-1.0, 1.0]},
        "samplers": [{"algorithm": "prox_sub", "tau": 0.001, "chains": 10, "samples": 20}],
        "seed": 1, "output_dir": "out"
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.grid, GridSpec::default());
        assert!(c.bounds);
        let s = &c.samplers[0];
        assert_eq!((s.burn_in, s.noise_coarsening, s.schedule), (0, 1, ScheduleChoice::Constant));
        assert_eq!(s.display_label(), "prox_sub_tau1e-3");
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let top = MINIMAL.replace("\"seed\": 1", "\"seed\": 1, \"extra\": 2");
        assert!(ExperimentConfig::from_json(&top).is_err());
        let model = MINIMAL.replace("\"lambda\": 5.0", "\"lambda\": 5.0, \"mu\": 1");
        assert!(ExperimentConfig::from_json(&model).is_err());
        let sampler = MINIMAL.replace("\"samples\": 20", "\"samples\": 20, \"steps\": 3");
        assert!(ExperimentConfig::from_json(&sampler).is_err());
        let kind = MINIMAL.replace("sample2d_tvl2", "sample3d");
        assert!(ExperimentConfig::from_json(&kind).is_err());
    }

    #[test]
    fn image_source_forms() {
        let s: ImageSpec = serde_json::from_str(r#"{"truth": {"phantom": {"rows": 8, "cols": 4}}}"#).unwrap();
        assert_eq!(s.truth, ImageSource::Phantom { rows: 8, cols: 4 });
        let s: ImageSpec = serde_json::from_str(r#"{"truth": {"pgm": {"path": "a.pgm"}}, "float_csv": true}"#).unwrap();
        assert_eq!(s.truth, ImageSource::Pgm { path: "a.pgm".into() });
    }

    #[test]
    fn snapshot_schedule() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let v = c.snapshot_iters(20_000);
        assert_eq!((v[0], *v.last().unwrap()), (0, 20_000));
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(v.len() > 20);
        c.snapshots = Some(vec![5, 50, 500]);
        assert_eq!(c.snapshot_iters(100), vec![0, 5, 50, 100]);
        assert_eq!(c.snapshot_iters(0), vec![0]);
    }

    #[test]
    fn log_spacing_endpoints() {
        assert_eq!(log_spaced(0, 10), vec![0]);
        assert_eq!(log_spaced(1, 10), vec![0, 1]);
        let v = log_spaced(1000, 4);
        assert_eq!(v, vec![0, 1, 10, 100, 1000]);
    }
}
