//! Turns a parsed config into a model and validated sampler configs. Every
//! check happens here, before any chain is advanced.

use std::collections::HashSet;

use serde::Serialize;
use subgrad_langevin::bounds::{Regularity, RegularityConstants};
use subgrad_langevin::estimation::Grid2D;
use subgrad_langevin::samplers::{AlgorithmParams, StepCap, GRAD_INEQUALITY, MYULA_INEQUALITY};
use subgrad_langevin::{Algorithm, Error, Image, Kernel, Model, SamplerConfig, StepSchedule};

use crate::config::{ExperimentConfig, ExperimentKind, ImageSource, SamplerSpec, ScheduleChoice, DEFAULT_KERNEL_STD};
use crate::error::{CliError, CliResult};
use crate::pgm::read_image_pgm;
use crate::synthetic::{make_synthetic_data, phantom, SyntheticKind};

pub const DENOISE_INEQUALITY: &str = "tau <= sigma^2";
pub const DEFAULT_KERNEL_SIZE: usize = 5;

#[derive(Debug, Clone)]
pub struct PreparedSampler {
    pub spec: SamplerSpec,
    pub label: String,
    pub config: SamplerConfig,
    pub cap: StepCap,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub kind: ExperimentKind,
    pub model: Model,
    pub x0: Vec<f64>,
    pub grid: Option<Grid2D>,
    pub truth: Option<Image>,
    pub data: Option<Image>,
    pub samplers: Vec<PreparedSampler>,
}

impl Prepared {
    pub fn constants(&self) -> Option<RegularityConstants> {
        RegularityConstants::from_model(&self.model).ok()
    }
}

/// All step-size caps that apply to a model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapEntry {
    pub name: String,
    pub inequality: String,
    pub cap: Option<f64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(value: Option<f64>, name: &str, kind: ExperimentKind) -> CliResult<f64> {
    match value {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(invalid(format!("model.{name} must be positive, got {v}"))),
        None => Err(invalid(format!("model.{name} is required for {kind:?}"))),
    }
}

fn non_negative(value: Option<f64>, name: &str, kind: ExperimentKind) -> CliResult<f64> {
    match value {
        Some(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(invalid(format!("model.{name} must be >= 0, got {v}"))),
        None => Err(invalid(format!("model.{name} is required for {kind:?}"))),
    }
}

fn load_truth(config: &ExperimentConfig) -> CliResult<Image> {
    let spec = config.image.as_ref().ok_or_else(|| invalid("imaging experiments need an `image` section"))?;
    match &spec.truth {
        ImageSource::Phantom { rows, cols } => {
            if *rows < 2 || *cols < 2 {
                return Err(invalid(format!("phantom must be at least 2x2, got {rows}x{cols}")));
            }
            Ok(phantom(*rows, *cols))
        }
        ImageSource::Pgm { path } => read_image_pgm(path),
    }
}

fn deconv_kernel(config: &ExperimentConfig) -> CliResult<Kernel> {
    let size = config.model.kernel_size.unwrap_or(DEFAULT_KERNEL_SIZE);
    if size % 2 == 0 {
        return Err(invalid(format!("model.kernel_size must be odd, got {size}")));
    }
    let std = config.model.kernel_std.unwrap_or(DEFAULT_KERNEL_STD);
    Ok(Kernel::gaussian(size, std)?)
}

fn reject_params(config: &ExperimentConfig, names: &[(&str, bool)]) -> CliResult<()> {
    for (name, set) in names {
        if *set {
            return Err(invalid(format!("model.{name} does not apply to {:?}", config.kind)));
        }
    }
    Ok(())
}

fn build_model(config: &ExperimentConfig) -> CliResult<(Model, Vec<f64>, Option<Image>, Option<Image>)> {
    let p = &config.model;
    let kind = config.kind;
    let has_image = config.image.is_some();
    if kind.is_imaging() != has_image {
        return Err(invalid(if has_image {
            format!("`image` does not apply to {kind:?}")
        } else {
            format!("{kind:?} needs an `image` section")
        }));
    }
    match kind {
        ExperimentKind::Sample2dTvl2 | ExperimentKind::Sample2dTvl1 => {
            reject_params(config, &[("kernel_size", p.kernel_size.is_some()), ("kernel_std", p.kernel_std.is_some())])?;
            let y = p.y.ok_or_else(|| invalid(format!("model.y is required for {kind:?}")))?;
            let lambda = non_negative(p.lambda, "lambda", kind)?;
            let model = if kind == ExperimentKind::Sample2dTvl2 {
                reject_params(config, &[("b", p.b.is_some())])?;
                Model::tv_l2_2d(y, positive(p.sigma, "sigma", kind)?, lambda)?
            } else {
                reject_params(config, &[("sigma", p.sigma.is_some())])?;
                Model::tv_l1_2d(y, positive(p.b, "b", kind)?, lambda)?
            };
            Ok((model, y.to_vec(), None, None))
        }
        ExperimentKind::Ar1Oracle => {
            reject_params(
                config,
                &[
                    ("sigma", p.sigma.is_some()),
                    ("b", p.b.is_some()),
                    ("lambda", p.lambda.is_some()),
                    ("y", p.y.is_some()),
                    ("kernel_size", p.kernel_size.is_some()),
                    ("kernel_std", p.kernel_std.is_some()),
                ],
            )?;
            // two uncoupled copies of the scalar chain
            Ok((Model::tv_l2_2d([0.0, 0.0], 1.0, 0.0)?, vec![0.0, 0.0], None, None))
        }
        ExperimentKind::Denoise | ExperimentKind::Deconv => {
            reject_params(config, &[("b", p.b.is_some()), ("y", p.y.is_some())])?;
            let sigma = positive(p.sigma, "sigma", kind)?;
            let lambda = non_negative(p.lambda, "lambda", kind)?;
            let truth = load_truth(config)?;
            let (model, data) = if kind == ExperimentKind::Denoise {
                reject_params(
                    config,
                    &[("kernel_size", p.kernel_size.is_some()), ("kernel_std", p.kernel_std.is_some())],
                )?;
                let y = make_synthetic_data(SyntheticKind::Denoise, &truth, sigma, None, config.seed)?;
                (Model::tv_denoise(y.clone(), sigma, lambda)?, y)
            } else {
                let kernel = deconv_kernel(config)?;
                let y = make_synthetic_data(SyntheticKind::Deconv, &truth, sigma, Some(&kernel), config.seed)?;
                (Model::tv_deconv(y.clone(), sigma, kernel, lambda)?, y)
            };
            let x0 = data.data().to_vec();
            Ok((model, x0, Some(truth), Some(data)))
        }
    }
}

fn schedule(spec: &SamplerSpec, model: &Model) -> subgrad_langevin::Result<StepSchedule> {
    match spec.schedule {
        ScheduleChoice::Constant => StepSchedule::constant(spec.tau),
        ScheduleChoice::Decreasing => {
            let m = model.f.strong_convexity();
            if m <= 0.0 {
                return Err(Error::MissingConstant("strong convexity modulus m > 0 for a decreasing schedule"));
            }
            StepSchedule::decreasing(spec.tau, m)
        }
    }
}

fn prepare_sampler(config: &ExperimentConfig, model: &Model, spec: &SamplerSpec) -> CliResult<PreparedSampler> {
    let label = spec.display_label();
    let wrap = |e: Error| CliError::sampler(&label, e);
    if config.kind == ExperimentKind::Ar1Oracle && !matches!(spec.algorithm, Algorithm::ProxSub | Algorithm::GradSub) {
        return Err(invalid(format!("sampler {label}: ar1_oracle has closed forms for prox_sub and grad_sub only")));
    }
    if config.kind == ExperimentKind::Denoise && !spec.algorithm.is_metropolized() {
        let sigma = config.model.sigma.unwrap_or(f64::NAN);
        let cap = StepCap { cap: sigma * sigma, inequality: DENOISE_INEQUALITY };
        cap.check(spec.tau).map_err(wrap)?;
    }
    let regularity = spec.assumption.or((config.kind == ExperimentKind::Deconv).then_some(Regularity::SmoothF));
    let params = AlgorithmParams { theta: spec.theta, inner: spec.inner(), regularity };
    let sampler = SamplerConfig {
        algorithm: spec.algorithm,
        schedule: schedule(spec, model).map_err(wrap)?,
        burn_in: spec.burn_in,
        samples: spec.samples,
        chains: spec.chains,
        master_seed: config.seed.wrapping_add(spec.seed_offset),
        params,
        noise_coarsening: spec.noise_coarsening,
    };
    sampler.validate(model).map_err(wrap)?;
    let cap = sampler.step_cap(model).map_err(wrap)?;
    Ok(PreparedSampler { spec: spec.clone(), label, config: sampler, cap })
}

/// Validates `config` completely and builds everything a run needs.
pub fn prepare(config: &ExperimentConfig) -> CliResult<Prepared> {
    if config.samplers.is_empty() {
        return Err(invalid("at least one sampler is required"));
    }
    let mut labels = HashSet::new();
    for s in &config.samplers {
        let l = s.display_label();
        if l.is_empty() || l.contains(['/', '\\', ',']) {
            return Err(invalid(format!("sampler label {l:?} must be non-empty without '/', '\\' or ','")));
        }
        if !labels.insert(l.clone()) {
            return Err(invalid(format!("duplicate sampler label {l:?}")));
        }
    }
    let (model, default_x0, truth, data) = build_model(config)?;
    let x0 = match &config.x0 {
        Some(x) if x.len() != model.dim() => {
            return Err(invalid(format!("x0 has {} entries, model dimension is {}", x.len(), model.dim())))
        }
        Some(x) if x.iter().any(|v| !v.is_finite()) => return Err(invalid("x0 must be finite")),
        Some(x) => x.clone(),
        None => default_x0,
    };
    let grid = if config.kind.is_2d() {
        let g = &config.grid;
        if g.refine == 0 {
            return Err(invalid("grid.refine must be at least 1"));
        }
        Some(Grid2D::new(g.x_range, g.y_range, g.bins[0], g.bins[1])?)
    } else {
        None
    };
    let samplers = config.samplers.iter().map(|s| prepare_sampler(config, &model, s)).collect::<CliResult<_>>()?;
    Ok(Prepared { kind: config.kind, model, x0, grid, truth, data, samplers })
}

/// Every cap relevant to the configured model, whether or not a sampler uses it.
pub fn all_caps(config: &ExperimentConfig) -> CliResult<Vec<CapEntry>> {
    let (model, ..) = build_model(config)?;
    let entry = |name: &str, cap: &StepCap| CapEntry {
        name: name.to_string(),
        inequality: cap.inequality.to_string(),
        cap: cap.cap.is_finite().then_some(cap.cap),
    };
    let mut out = Vec::new();
    if config.kind != ExperimentKind::Deconv && model.f.strong_convexity() > 0.0 && model.f.lipschitz_grad().is_some() {
        out.push(entry("prox_sub", &subgrad_langevin::samplers::strong_convexity_cap(&model)?));
    } else {
        out.push(entry("prox_sub", &StepCap::NONE));
    }
    match model.f.lipschitz_grad() {
        Some(l) => {
            out.push(entry("grad_sub", &StepCap { cap: 1.0 / l, inequality: GRAD_INEQUALITY }));
            let mut thetas: Vec<f64> = config.samplers.iter().filter_map(|s| s.theta).collect();
            thetas.sort_by(f64::total_cmp);
            thetas.dedup();
            for theta in thetas {
                let cap = StepCap { cap: theta / (theta * l + 1.0), inequality: MYULA_INEQUALITY };
                out.push(entry(&format!("myula(theta={theta})"), &cap));
            }
        }
        None => out.push(CapEntry {
            name: "grad_sub".into(),
            inequality: "requires differentiable F".into(),
            cap: None,
        }),
    }
    if config.kind == ExperimentKind::Denoise {
        let s = config.model.sigma.unwrap_or(f64::NAN);
        out.push(entry("denoise", &StepCap { cap: s * s, inequality: DENOISE_INEQUALITY }));
    }
    for s in &config.samplers {
        let p = prepare_sampler(config, &model, s)?;
        out.push(entry(&format!("sampler {}", p.label), &p.cap));
    }
    Ok(out)
}
