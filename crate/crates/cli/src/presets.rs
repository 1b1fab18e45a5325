//! Ready-made experiment configs. Desk presets are scaled down to run in
//! minutes on a laptop; `-full` presets use the original experiment sizes.

use std::path::PathBuf;

use subgrad_langevin::Algorithm;

use crate::config::{ExperimentConfig, ExperimentKind, GridSpec, ImageSource, ImageSpec, ModelParams, SamplerSpec};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        let mut c = (self.build)();
        c.name = self.name.to_string();
        c.output_dir = PathBuf::from("results").join(self.name);
        c
    }
}

fn base(kind: ExperimentKind, model: ModelParams, samplers: Vec<SamplerSpec>) -> ExperimentConfig {
    ExperimentConfig {
        name: String::new(),
        kind,
        model,
        samplers,
        grid: GridSpec::default(),
        snapshots: None,
        x0: None,
        image: None,
        bounds: true,
        seed: 2024,
        output_dir: PathBuf::new(),
    }
}

fn tvl2_model() -> ModelParams {
    ModelParams { sigma: Some(1.0), lambda: Some(5.0), y: Some([-1.0, 1.0]), ..Default::default() }
}

fn tvl1_model() -> ModelParams {
    ModelParams { b: Some(1.0), lambda: Some(5.0), y: Some([-1.0, 1.0]), ..Default::default() }
}

fn pairs(algorithms: &[Algorithm], taus: &[f64], chains: usize, samples: usize) -> Vec<SamplerSpec> {
    taus.iter()
        .flat_map(|&tau| algorithms.iter().map(move |&a| SamplerSpec::new(a, tau, chains, 0, samples)))
        .collect()
}

fn tvl2_desk() -> ExperimentConfig {
    let s = pairs(&[Algorithm::ProxSub, Algorithm::GradSub], &[1e-3, 1e-4], 10_000, 20_000);
    base(ExperimentKind::Sample2dTvl2, tvl2_model(), s)
}

fn tvl2_full() -> ExperimentConfig {
    let s = pairs(&[Algorithm::ProxSub, Algorithm::GradSub], &[1e-3, 1e-4, 1e-5], 10_000, 100_000);
    base(ExperimentKind::Sample2dTvl2, tvl2_model(), s)
}

fn tvl1_desk() -> ExperimentConfig {
    let s = pairs(&[Algorithm::ProxSub, Algorithm::Sub], &[1e-3, 1e-4], 10_000, 20_000);
    base(ExperimentKind::Sample2dTvl1, tvl1_model(), s)
}

fn tvl1_full() -> ExperimentConfig {
    let s = pairs(&[Algorithm::ProxSub, Algorithm::Sub], &[1e-3, 1e-4, 1e-5], 10_000, 100_000);
    base(ExperimentKind::Sample2dTvl1, tvl1_model(), s)
}

fn compare(chains: usize, samples: usize, taus: &[f64]) -> ExperimentConfig {
    let mut s = Vec::new();
    for &tau in taus {
        s.push(SamplerSpec::new(Algorithm::ProxSub, tau, chains, 0, samples));
        s.push(SamplerSpec::new(Algorithm::Pmala, tau, chains, 0, samples));
        s.push(SamplerSpec::new(Algorithm::Myula, tau, chains, 0, samples).with_theta(0.01));
    }
    base(ExperimentKind::Sample2dTvl2, tvl2_model(), s)
}

fn compare_desk() -> ExperimentConfig {
    compare(1_000, 2_000, &[1e-3])
}

fn compare_full() -> ExperimentConfig {
    compare(10_000, 100_000, &[1e-3, 1e-4, 1e-5])
}

fn ar1() -> ExperimentConfig {
    let s = pairs(&[Algorithm::GradSub, Algorithm::ProxSub], &[0.1], 100_000, 500);
    let mut c = base(ExperimentKind::Ar1Oracle, ModelParams::default(), s);
    c.bounds = false;
    c
}

fn imaging(kind: ExperimentKind, model: ModelParams, size: usize, samplers: Vec<SamplerSpec>) -> ExperimentConfig {
    let mut c = base(kind, model, samplers);
    c.image = Some(ImageSpec { truth: ImageSource::Phantom { rows: size, cols: size }, float_csv: false });
    c
}

fn denoise_model() -> ModelParams {
    ModelParams { sigma: Some(0.05), lambda: Some(30.0), ..Default::default() }
}

fn deconv_model() -> ModelParams {
    ModelParams { sigma: Some(0.01), lambda: Some(20.0), kernel_size: Some(5), kernel_std: Some(1.0), ..Default::default() }
}

fn denoise_samplers(tau: f64, burn_in: usize, samples: usize) -> Vec<SamplerSpec> {
    vec![
        SamplerSpec::new(Algorithm::GradSub, tau, 1, burn_in, samples),
        SamplerSpec::new(Algorithm::ProxSub, tau, 1, burn_in, samples),
        SamplerSpec::new(Algorithm::Myula, tau, 1, burn_in, samples).with_theta(1e-4),
    ]
}

fn denoise_small() -> ExperimentConfig {
    imaging(ExperimentKind::Denoise, denoise_model(), 64, denoise_samplers(1e-5, 100_000, 10_000))
}

fn denoise_full() -> ExperimentConfig {
    imaging(ExperimentKind::Denoise, denoise_model(), 256, denoise_samplers(1e-5, 1_000_000, 100_000))
}

fn deconv_samplers(tau: f64, burn_in: usize, samples: usize, mh: (usize, usize)) -> Vec<SamplerSpec> {
    let mut s = denoise_samplers(tau, burn_in, samples);
    s.push(SamplerSpec::new(Algorithm::MhGradSub, tau, 1, mh.0, mh.1));
    s
}

fn deconv_small() -> ExperimentConfig {
    imaging(ExperimentKind::Deconv, deconv_model(), 64, deconv_samplers(1e-6, 100_000, 10_000, (300_000, 100_000)))
}

fn deconv_full() -> ExperimentConfig {
    let s = deconv_samplers(1e-6, 1_000_000, 500_000, (3_000_000, 1_000_000));
    imaging(ExperimentKind::Deconv, deconv_model(), 256, s)
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "tvl2-2d", description: "2D TV-L2, prox_sub and grad_sub, 1e4 chains x 2e4 iterations", build: tvl2_desk },
    Preset { name: "tvl2-2d-full", description: "2D TV-L2, three step sizes, 1e4 chains x 1e5 iterations", build: tvl2_full },
    Preset { name: "tvl1-2d", description: "2D TV-L1, prox_sub and sub, 1e4 chains x 2e4 iterations", build: tvl1_desk },
    Preset { name: "tvl1-2d-full", description: "2D TV-L1, three step sizes, 1e4 chains x 1e5 iterations", build: tvl1_full },
    Preset { name: "compare-2d", description: "2D TV-L2, prox_sub vs P-MALA vs MYULA, 1e3 chains x 2e3 iterations", build: compare_desk },
    Preset { name: "compare-2d-full", description: "2D TV-L2, prox_sub vs P-MALA vs MYULA, 1e4 chains x 1e5 iterations", build: compare_full },
    Preset { name: "ar1", description: "AR(1) oracle, tau = 0.1, 1e5 chains x 500 iterations", build: ar1 },
    Preset { name: "denoise-small", description: "64x64 phantom denoising, N = 1e5, k = 1e4", build: denoise_small },
    Preset { name: "denoise-full", description: "256x256 phantom denoising, N = 1e6, k = 1e5", build: denoise_full },
    Preset { name: "deconv-small", description: "64x64 phantom deconvolution, N = 1e5, k = 1e4", build: deconv_small },
    Preset { name: "deconv-full", description: "256x256 phantom deconvolution, N = 1e6, k = 5e5", build: deconv_full },
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS.iter().find(|p| p.name == name).map(Preset::config)
}
