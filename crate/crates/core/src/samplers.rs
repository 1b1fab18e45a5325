//! Langevin-type samplers for `pi ∝ exp(-F(x) - G(Kx))`, step schedules and
//! the ensemble runner.
//!
//! Step sizes are indexed from one: iteration `k = 0, 1, ...` maps `X_k` to
//! `X_{k+1}` using the pair `(tau_{k+1}, tau_{k+2})`, so the `F` step of one
//! iteration is the `G o K` step of the next.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, EpsParams, EpsVariant, Regularity, RegularityConstants};
use crate::error::{Error, Result};
use crate::estimation::{weights_admissible, Grid2D, MomentAccumulator};
use crate::potentials::{prox_fgk_pd_solve, prox_gk_pd_solve, Model, DEFAULT_INNER_MAX_ITERS, DEFAULT_INNER_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ProxSub,
    GradSub,
    Sub,
    Myula,
    Pmala,
    MhGradSub,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] =
        [Self::ProxSub, Self::GradSub, Self::Sub, Self::Myula, Self::Pmala, Self::MhGradSub];

    pub fn name(self) -> &'static str {
        match self {
            Self::ProxSub => "prox_sub",
            Self::GradSub => "grad_sub",
            Self::Sub => "sub",
            Self::Myula => "myula",
            Self::Pmala => "pmala",
            Self::MhGradSub => "mh_grad_sub",
        }
    }

    pub fn is_metropolized(self) -> bool {
        matches!(self, Self::Pmala | Self::MhGradSub)
    }

    /// Whether the kernel evaluates `grad F`.
    pub fn needs_smooth_f(self) -> bool {
        matches!(self, Self::GradSub | Self::Myula | Self::MhGradSub)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Decreasing,
    Explicit,
}

/// Step sizes `tau_1, tau_2, ...` and averaging weights `lambda_1, lambda_2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    kind: ScheduleKind,
    tau1: f64,
    m: f64,
    taus: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl StepSchedule {
    pub fn constant(tau: f64) -> Result<Self> {
        check_step(tau)?;
        Ok(Self { kind: ScheduleKind::Constant, tau1: tau, m: 0.0, taus: Vec::new(), weights: None })
    }

    /// `tau_{j+1} = tau_j / (1 + m tau_j / 2)`, i.e. `1/tau_j = 1/tau_1 + (j-1) m/2`.
    pub fn decreasing(tau1: f64, m: f64) -> Result<Self> {
        check_step(tau1)?;
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("decreasing schedule needs m >= 0, got {m}")));
        }
        Ok(Self { kind: ScheduleKind::Decreasing, tau1, m, taus: Vec::new(), weights: None })
    }

    /// `taus[j - 1]` is `tau_j`; iteration counts are limited by the list length.
    pub fn explicit(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::InvalidArgument("explicit schedule needs at least one step".into()));
        }
        for &t in &taus {
            check_step(t)?;
        }
        Ok(Self { kind: ScheduleKind::Explicit, tau1: taus[0], m: 0.0, taus, weights: None })
    }

    /// `weights[k - 1]` is `lambda_k`; unset weights default to one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// `tau_j` for `j >= 1`.
    pub fn tau(&self, j: usize) -> f64 {
        debug_assert!(j >= 1);
        match self.kind {
            ScheduleKind::Constant => self.tau1,
            ScheduleKind::Decreasing => 1.0 / (1.0 / self.tau1 + (j - 1) as f64 * self.m / 2.0),
            ScheduleKind::Explicit => self.taus[(j - 1).min(self.taus.len() - 1)],
        }
    }

    /// `lambda_k` for `k >= 1`.
    pub fn weight(&self, k: usize) -> f64 {
        match &self.weights {
            Some(w) if k >= 1 && k <= w.len() => w[k - 1],
            _ => 1.0,
        }
    }

    pub fn has_unit_weights(&self) -> bool {
        self.weights.as_ref().is_none_or(|w| w.iter().all(|&v| v == 1.0))
    }

    /// Largest step used over `iterations` iterations.
    pub fn max_tau(&self, iterations: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.tau1,
            ScheduleKind::Decreasing => self.tau1,
            ScheduleKind::Explicit => {
                self.taus[..(iterations + 1).min(self.taus.len())].iter().fold(0.0, |a, &b| a.max(b))
            }
        }
    }

    /// Checks that the schedule covers `iterations` iterations and that attached
    /// weights satisfy `lambda_{k+1}/tau_{k+2} <= lambda_k/tau_{k+1}`.
    pub fn validate(&self, iterations: usize) -> Result<()> {
        if self.kind == ScheduleKind::Explicit && self.taus.len() < iterations + 1 {
            return Err(Error::InvalidArgument(format!(
                "explicit schedule has {} steps but {iterations} iterations need {}",
                self.taus.len(),
                iterations + 1
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() < iterations {
                return Err(Error::InvalidArgument(format!("{} weights for {iterations} iterations", w.len())));
            }
        }
        if self.weights.is_some() {
            let n = iterations.max(1);
            // index 0 is a sentinel so that entry k holds lambda_k and tau_k
            let lambdas: Vec<f64> = (0..=n).map(|k| if k == 0 { f64::INFINITY } else { self.weight(k) }).collect();
            let taus: Vec<f64> = (0..=n + 1).map(|j| if j == 0 { 1.0 } else { self.tau(j) }).collect();
            if !weights_admissible(&lambdas, &taus) {
                return Err(Error::InvalidArgument(
                    "weights violate lambda_{k+1}/tau_{k+2} <= lambda_k/tau_{k+1}".into(),
                ));
            }
        }
        Ok(())
    }
}

fn check_step(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive and finite, got {tau}")))
    }
}

/// Source of the Gaussian increments and acceptance uniforms of one chain.
pub trait NoiseSource {
    /// Fills `out` with independent standard normal draws.
    fn fill_normal(&mut self, out: &mut [f64]);
    /// A uniform draw on `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

#[derive(Debug, Clone)]
pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// Stream `chain` of the generator seeded with `master_seed`.
    pub fn for_chain(master_seed: u64, chain: u64) -> Self {
        Self { rng: chain_rng(master_seed, chain) }
    }
}

impl NoiseSource for RngNoise {
    fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

/// Noise switched off: normals are zero and uniforms are zero, so
/// Metropolis steps accept every proposal of positive probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill_normal(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn uniform(&mut self) -> f64 {
        0.0
    }
}

/// Each normal is the normalized sum of `factor` draws of the inner source, so
/// a chain with step `factor * tau` follows the same Brownian path as a chain
/// with step `tau` fed by the inner source directly.
#[derive(Debug, Clone)]
pub struct CoarsenedNoise<N> {
    inner: N,
    factor: usize,
    buf: Vec<f64>,
}

impl<N: NoiseSource> CoarsenedNoise<N> {
    pub fn new(inner: N, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("coarsening factor must be at least 1".into()));
        }
        Ok(Self { inner, factor, buf: Vec::new() })
    }
}

impl<N: NoiseSource> NoiseSource for CoarsenedNoise<N> {
    fn fill_normal(&mut self, out: &mut [f64]) {
        if self.factor == 1 {
            return self.inner.fill_normal(out);
        }
        self.buf.resize(out.len(), 0.0);
        out.fill(0.0);
        for _ in 0..self.factor {
            self.inner.fill_normal(&mut self.buf);
            for (o, b) in out.iter_mut().zip(&self.buf) {
                *o += b;
            }
        }
        let scale = 1.0 / (self.factor as f64).sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
    }

    fn uniform(&mut self) -> f64 {
        self.inner.uniform()
    }
}

/// ChaCha8 seeded from `master_seed`, on the stream numbered `chain`.
pub fn chain_rng(master_seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain);
    rng
}

/// Inner primal-dual settings for MYULA and P-MALA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolver {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self { tol: DEFAULT_INNER_TOL, max_iters: DEFAULT_INNER_MAX_ITERS }
    }
}

/// Whether a Metropolis step accepted its proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub accepted: bool,
    pub log_alpha: f64,
}

/// One chain's scratch buffers; the step methods update `x` in place.
#[derive(Debug, Clone)]
pub struct Stepper<'m> {
    model: &'m Model,
    kx: Vec<f64>,
    sub: Vec<f64>,
    half: Vec<f64>,
    grad: Vec<f64>,
    noise: Vec<f64>,
    prop: Vec<f64>,
    aux: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m Model) -> Self {
        let d = model.dim();
        let r = model.k.range_dim();
        Self {
            model,
            kx: vec![0.0; r],
            sub: vec![0.0; d],
            half: vec![0.0; d],
            grad: vec![0.0; d],
            noise: vec![0.0; d],
            prop: vec![0.0; d],
            aux: vec![0.0; d],
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    /// `half = x - tau K* theta(Kx)`.
    fn subgradient_half_step(&mut self, x: &[f64], tau: f64) {
        self.model.subgrad_gk(x, &mut self.kx, &mut self.sub);
        for ((h, xi), s) in self.half.iter_mut().zip(x).zip(&self.sub) {
            *h = xi - tau * s;
        }
    }

    fn add_noise<N: NoiseSource>(&mut self, x: &mut [f64], tau: f64, noise: &mut N) {
        noise.fill_normal(&mut self.noise);
        let s = (2.0 * tau).sqrt();
        for (xi, b) in x.iter_mut().zip(&self.noise) {
            *xi += s * b;
        }
    }

    /// `X <- prox_{tau_next F}(X - tau K* theta(KX)) + sqrt(2 tau_next) B`.
    pub fn prox_sub<N: NoiseSource>(&mut self, x: &mut [f64], tau: f64, tau_next: f64, noise: &mut N) -> Result<()> {
        self.subgradient_half_step(x, tau);
        self.model.f.prox(tau_next, &self.half, x)?;
        self.add_noise(x, tau_next, noise);
        Ok(())
    }

    /// `H = X - tau K* theta(KX)`, `X <- H - tau_next grad F(H) + sqrt(2 tau_next) B`.
    pub fn grad_sub<N: NoiseSource>(&mut self, x: &mut [f64], tau: f64, tau_next: f64, noise: &mut N) -> Result<()> {
        self.subgradient_half_step(x, tau);
        self.model.f.grad(&self.half, &mut self.grad)?;
        for ((xi, h), g) in x.iter_mut().zip(&self.half).zip(&self.grad) {
            *xi = h - tau_next * g;
        }
        self.add_noise(x, tau_next, noise);
        Ok(())
    }

    /// `X <- X - tau (g_F + K* g_G) + sqrt(2 tau) B` with subgradients at `X`.
    pub fn sub<N: NoiseSource>(&mut self, x: &mut [f64], tau: f64, noise: &mut N) -> Result<()> {
        self.model.subgrad_gk(x, &mut self.kx, &mut self.sub);
        self.model.f.subgrad_select(x, &mut self.grad);
        for ((xi, s), g) in x.iter_mut().zip(&self.sub).zip(&self.grad) {
            *xi -= tau * (g + s);
        }
        self.add_noise(x, tau, noise);
        Ok(())
    }

    /// `X <- (1 - tau/theta) X - tau grad F(X) + (tau/theta) prox_{theta G o K}(X) + sqrt(2 tau) B`.
    pub fn myula<N: NoiseSource>(
        &mut self,
        x: &mut [f64],
        tau: f64,
        theta: f64,
        inner: InnerSolver,
        noise: &mut N,
    ) -> Result<()> {
        self.model.f.grad(x, &mut self.grad)?;
        let p = prox_gk_pd_solve(&self.model.g, &self.model.k, theta, x, inner.tol, inner.max_iters)?.point;
        let r = tau / theta;
        for ((xi, g), pi) in x.iter_mut().zip(&self.grad).zip(&p) {
            *xi = (1.0 - r) * *xi - tau * g + r * pi;
        }
        self.add_noise(x, tau, noise);
        Ok(())
    }

    /// Proposal `prox_{tau (F + G o K)}(X) + sqrt(2 tau) B` with a Metropolis-Hastings
    /// correction; `x` is left unchanged on rejection.
    pub fn pmala<N: NoiseSource>(&mut self, x: &mut [f64], tau: f64, inner: InnerSolver, noise: &mut N) -> Result<MhOutcome> {
        let mean_x = prox_fgk_pd_solve(self.model, tau, x, inner.tol, inner.max_iters)?.point;
        noise.fill_normal(&mut self.noise);
        let s = (2.0 * tau).sqrt();
        for ((p, m), b) in self.prop.iter_mut().zip(&mean_x).zip(&self.noise) {
            *p = m + s * b;
        }
        let mean_y = prox_fgk_pd_solve(self.model, tau, &self.prop, inner.tol, inner.max_iters)?.point;
        let log_alpha = mh_log_ratio(self.model, x, &self.prop, &mean_x, &mean_y, tau);
        Ok(self.accept(x, log_alpha, noise))
    }

    /// Grad-sub drift `D(x)` with a single step size, into `out`.
    fn drift(&mut self, x: &[f64], tau: f64, out: &mut [f64]) -> Result<()> {
        self.subgradient_half_step(x, tau);
        self.model.f.grad(&self.half, &mut self.grad)?;
        for ((o, h), g) in out.iter_mut().zip(&self.half).zip(&self.grad) {
            *o = h - tau * g;
        }
        Ok(())
    }

    /// Proposal `N(D(X), 2 tau I)` with a Metropolis-Hastings correction.
    pub fn mh_grad_sub<N: NoiseSource>(&mut self, x: &mut [f64], tau: f64, noise: &mut N) -> Result<MhOutcome> {
        let mut mean_x = std::mem::take(&mut self.aux);
        self.drift(x, tau, &mut mean_x)?;
        noise.fill_normal(&mut self.noise);
        let s = (2.0 * tau).sqrt();
        for ((p, m), b) in self.prop.iter_mut().zip(&mean_x).zip(&self.noise) {
            *p = m + s * b;
        }
        let prop = std::mem::take(&mut self.prop);
        let mut mean_y = vec![0.0; x.len()];
        let res = self.drift(&prop, tau, &mut mean_y);
        self.prop = prop;
        res?;
        let log_alpha = mh_log_ratio(self.model, x, &self.prop, &mean_x, &mean_y, tau);
        self.aux = mean_x;
        Ok(self.accept(x, log_alpha, noise))
    }

    fn accept<N: NoiseSource>(&mut self, x: &mut [f64], log_alpha: f64, noise: &mut N) -> MhOutcome {
        let u = noise.uniform();
        let accepted = u.ln() < log_alpha || log_alpha >= 0.0;
        if accepted {
            x.copy_from_slice(&self.prop);
        }
        MhOutcome { accepted, log_alpha }
    }

    /// One iteration `k` (0-based) of `algorithm`, returning the Metropolis
    /// outcome for the corrected samplers.
    pub fn step<N: NoiseSource>(
        &mut self,
        algorithm: Algorithm,
        x: &mut [f64],
        schedule: &StepSchedule,
        k: usize,
        params: &AlgorithmParams,
        noise: &mut N,
    ) -> Result<Option<MhOutcome>> {
        let tau = schedule.tau(k + 1);
        match algorithm {
            Algorithm::ProxSub => self.prox_sub(x, tau, schedule.tau(k + 2), noise).map(|_| None),
            Algorithm::GradSub => self.grad_sub(x, tau, schedule.tau(k + 2), noise).map(|_| None),
            Algorithm::Sub => self.sub(x, tau, noise).map(|_| None),
            Algorithm::Myula => {
                let theta = params.theta.ok_or(Error::MissingConstant("MYULA theta"))?;
                self.myula(x, tau, theta, params.inner, noise).map(|_| None)
            }
            Algorithm::Pmala => self.pmala(x, tau, params.inner, noise).map(Some),
            Algorithm::MhGradSub => self.mh_grad_sub(x, tau, noise).map(Some),
        }
    }
}

/// `log [pi(y) q(x|y)] - log [pi(x) q(y|x)]` for Gaussian proposals
/// `q(a|b) = N(a; mean(b), 2 tau I)`.
pub fn mh_log_ratio(model: &Model, x: &[f64], y: &[f64], mean_x: &[f64], mean_y: &[f64], tau: f64) -> f64 {
    let log_q = |a: &[f64], m: &[f64]| -> f64 {
        -a.iter().zip(m).map(|(ai, mi)| (ai - mi) * (ai - mi)).sum::<f64>() / (4.0 * tau)
    };
    (model.eval_u(x) - model.eval_u(y)) + (log_q(x, mean_y) - log_q(y, mean_x))
}

pub fn prox_sub_step<N: NoiseSource>(model: &Model, x: &[f64], tau: f64, tau_next: f64, noise: &mut N) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    Stepper::new(model).prox_sub(&mut out, tau, tau_next, noise)?;
    Ok(out)
}

pub fn grad_sub_step<N: NoiseSource>(model: &Model, x: &[f64], tau: f64, tau_next: f64, noise: &mut N) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    Stepper::new(model).grad_sub(&mut out, tau, tau_next, noise)?;
    Ok(out)
}

pub fn sub_step<N: NoiseSource>(model: &Model, x: &[f64], tau: f64, noise: &mut N) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    Stepper::new(model).sub(&mut out, tau, noise)?;
    Ok(out)
}

pub fn myula_step<N: NoiseSource>(
    model: &Model,
    x: &[f64],
    tau: f64,
    theta: f64,
    noise: &mut N,
    inner: InnerSolver,
) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    Stepper::new(model).myula(&mut out, tau, theta, inner, noise)?;
    Ok(out)
}

pub fn pmala_step<N: NoiseSource>(
    model: &Model,
    x: &[f64],
    tau: f64,
    noise: &mut N,
    inner: InnerSolver,
) -> Result<(Vec<f64>, bool)> {
    let mut out = x.to_vec();
    let o = Stepper::new(model).pmala(&mut out, tau, inner, noise)?;
    Ok((out, o.accepted))
}

pub fn mh_grad_sub_step<N: NoiseSource>(model: &Model, x: &[f64], tau: f64, noise: &mut N) -> Result<(Vec<f64>, bool)> {
    let mut out = x.to_vec();
    let o = Stepper::new(model).mh_grad_sub(&mut out, tau, noise)?;
    Ok((out, o.accepted))
}

/// A step-size cap with the inequality it comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCap {
    pub cap: f64,
    pub inequality: &'static str,
}

impl StepCap {
    pub const NONE: StepCap = StepCap { cap: f64::INFINITY, inequality: "none" };

    pub fn check(&self, tau: f64) -> Result<()> {
        if tau > self.cap * (1.0 + 1e-12) {
            Err(Error::StepSizeCap { tau, cap: self.cap, inequality: self.inequality })
        } else {
            Ok(())
        }
    }
}

pub const PROX_STRONG_INEQUALITY: &str = "tau <= m/(2 L_gradF^2 - m^2)";
pub const GRAD_INEQUALITY: &str = "tau <= 1/L_gradF";
pub const MYULA_INEQUALITY: &str = "tau <= theta/(theta L_gradF + 1)";

/// The binding step-size cap of `algorithm` on `model` under the strongest
/// assumption the model satisfies.
pub fn step_size_cap(model: &Model, algorithm: Algorithm, theta: Option<f64>) -> Result<StepCap> {
    step_size_cap_under(model, algorithm, theta, RegularityConstants::from_model(model)?.regularity)
}

/// The binding step-size cap of `algorithm` when the analysis assumes
/// `regularity`.
///
/// Prox-sub is capped only under the strongly convex assumption; Sub and the
/// Metropolis-corrected samplers are uncapped.
pub fn step_size_cap_under(
    model: &Model,
    algorithm: Algorithm,
    theta: Option<f64>,
    regularity: Regularity,
) -> Result<StepCap> {
    let l = model.f.lipschitz_grad();
    match algorithm {
        Algorithm::ProxSub => {
            if regularity == Regularity::StronglyConvexF {
                strong_convexity_cap(model)
            } else {
                Ok(StepCap::NONE)
            }
        }
        Algorithm::GradSub => {
            let l = l.ok_or(Error::NotSmooth(model.f.name()))?;
            Ok(StepCap { cap: 1.0 / l, inequality: GRAD_INEQUALITY })
        }
        Algorithm::Myula => {
            let l = l.ok_or(Error::NotSmooth(model.f.name()))?;
            let theta = theta.ok_or(Error::MissingConstant("MYULA theta"))?;
            if !(theta > 0.0) {
                return Err(Error::InvalidArgument(format!("MYULA theta must be positive, got {theta}")));
            }
            Ok(StepCap { cap: theta / (theta * l + 1.0), inequality: MYULA_INEQUALITY })
        }
        Algorithm::Sub | Algorithm::Pmala => Ok(StepCap::NONE),
        Algorithm::MhGradSub => {
            l.ok_or(Error::NotSmooth(model.f.name()))?;
            Ok(StepCap::NONE)
        }
    }
}

/// `m / (2 L^2 - m^2)`; an error when `F` is not strongly convex.
pub fn strong_convexity_cap(model: &Model) -> Result<StepCap> {
    let c = RegularityConstants::from_model(model)?;
    Ok(StepCap { cap: c.prox_strong_cap()?, inequality: PROX_STRONG_INEQUALITY })
}

/// `(tau_eps, n_eps)` for the model's constants.
pub fn select_eps_params(eps: f64, model: &Model, variant: EpsVariant, w0_sq: f64) -> Result<EpsParams> {
    bounds::select_eps_params(&RegularityConstants::from_model(model)?, eps, variant, w0_sq)
}

/// Per-algorithm settings beyond the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub theta: Option<f64>,
    #[serde(default)]
    pub inner: InnerSolver,
    /// Assumption on `F` that selects the step-size cap; `None` uses the
    /// strongest one the model satisfies.
    #[serde(default)]
    pub regularity: Option<Regularity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub burn_in: usize,
    pub samples: usize,
    pub chains: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub params: AlgorithmParams,
    /// Each Gaussian increment is built from this many finer draws, coupling
    /// runs whose step sizes differ by this factor. One means plain draws.
    #[serde(default = "one")]
    pub noise_coarsening: usize,
}

fn one() -> usize {
    1
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm, schedule: StepSchedule, burn_in: usize, samples: usize, chains: usize, seed: u64) -> Self {
        Self {
            algorithm,
            schedule,
            burn_in,
            samples,
            chains,
            master_seed: seed,
            params: AlgorithmParams::default(),
            noise_coarsening: 1,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.params.theta = Some(theta);
        self
    }

    pub fn with_inner(mut self, inner: InnerSolver) -> Self {
        self.params.inner = inner;
        self
    }

    pub fn with_noise_coarsening(mut self, factor: usize) -> Self {
        self.noise_coarsening = factor;
        self
    }

    pub fn iterations(&self) -> usize {
        self.burn_in + self.samples
    }

    /// The step-size cap under the configured assumption.
    pub fn step_cap(&self, model: &Model) -> Result<StepCap> {
        let regularity = match self.params.regularity {
            Some(r) => {
                RegularityConstants::from_model(model)?.with_regularity(r)?;
                r
            }
            None => RegularityConstants::from_model(model)?.regularity,
        };
        step_size_cap_under(model, self.algorithm, self.params.theta, regularity)
    }

    /// Every precondition of the sampler, including its step-size cap.
    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidArgument("need at least one chain".into()));
        }
        if self.noise_coarsening == 0 {
            return Err(Error::InvalidArgument("noise coarsening must be at least 1".into()));
        }
        if self.algorithm.needs_smooth_f() && !model.f.is_smooth() {
            return Err(Error::NotSmooth(model.f.name()));
        }
        let iterations = self.iterations();
        self.schedule.validate(iterations)?;
        // the F step of the last iteration uses tau_{iterations + 1}
        let cap = self.step_cap(model)?;
        cap.check(self.schedule.max_tau(iterations + 1))?;
        if !(self.params.inner.tol > 0.0) {
            return Err(Error::InvalidArgument("inner tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Running average of the iterate laws on a grid: after `n` post-burn-in
/// iterations, `sum_{k=N+1}^{N+n} lambda_k (bin counts of X_k over chains)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningHistogramSpec {
    pub grid: Grid2D,
    /// Values of `n` at which the running mixture is recorded.
    pub checkpoints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningHistogram {
    pub n: usize,
    pub weights: Vec<f64>,
    pub clamped: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    /// Iterations after which all chain states are recorded (0 = initial state).
    pub snapshot_iters: Vec<usize>,
    pub running_histogram: Option<RunningHistogramSpec>,
    /// Stream post-burn-in samples of every chain into a moment accumulator.
    pub moments: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iter: usize,
    /// Chain-major states, `chains * dim` values.
    pub states: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub snapshots: Vec<Snapshot>,
    pub running: Vec<RunningHistogram>,
    pub moments: Option<MomentAccumulator>,
    pub proposals: u64,
    pub accepted: u64,
    pub iterations: usize,
    pub chains: usize,
    pub elapsed: Duration,
}

impl EnsembleOutput {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accepted as f64 / self.proposals as f64)
    }

    /// Wall-clock seconds per 1000 iterations of the whole ensemble.
    pub fn seconds_per_1000_iters(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.elapsed.as_secs_f64() * 1000.0 / self.iterations as f64
        }
    }

    pub fn snapshot(&self, iter: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.iter == iter)
    }
}

/// Chains are split into at most this many fixed blocks, independent of the
/// thread count, so results do not depend on scheduling.
pub const MAX_CHAIN_BLOCKS: usize = 16;

enum ChainNoise {
    Plain(RngNoise),
    Coarse(CoarsenedNoise<RngNoise>),
}

impl NoiseSource for ChainNoise {
    fn fill_normal(&mut self, out: &mut [f64]) {
        match self {
            Self::Plain(n) => n.fill_normal(out),
            Self::Coarse(n) => n.fill_normal(out),
        }
    }

    fn uniform(&mut self) -> f64 {
        match self {
            Self::Plain(n) => n.uniform(),
            Self::Coarse(n) => n.uniform(),
        }
    }
}

struct BlockOutput {
    snapshots: Vec<Vec<f64>>,
    running: Vec<RunningHistogram>,
    moments: Option<MomentAccumulator>,
    proposals: u64,
    accepted: u64,
}

/// Runs `config.chains` independent chains from `x0` for `burn_in + samples`
/// iterations. Chain `c` draws from stream `c` of the master seed.
pub fn run_ensemble(model: &Model, config: &SamplerConfig, x0: &[f64], options: &EnsembleOptions) -> Result<EnsembleOutput> {
    config.validate(model)?;
    if x0.len() != model.dim() {
        return Err(Error::Shape(format!("initial state has dimension {}, model {}", x0.len(), model.dim())));
    }
    let iterations = config.iterations();
    if options.snapshot_iters.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("snapshot iterations must be strictly increasing".into()));
    }
    if options.snapshot_iters.last().is_some_and(|&s| s > iterations) {
        return Err(Error::InvalidArgument(format!("snapshot beyond the last iteration {iterations}")));
    }
    if let Some(spec) = &options.running_histogram {
        if model.dim() != 2 {
            return Err(Error::Shape("running histograms need a 2D model".into()));
        }
        if spec.checkpoints.windows(2).any(|w| w[0] >= w[1])
            || spec.checkpoints.first() == Some(&0)
            || spec.checkpoints.last().is_some_and(|&n| n > config.samples)
        {
            return Err(Error::InvalidArgument(format!(
                "histogram checkpoints must be increasing within 1..={}",
                config.samples
            )));
        }
    }

    let start = Instant::now();
    let blocks = config.chains.min(MAX_CHAIN_BLOCKS);
    let ranges: Vec<(usize, usize)> = (0..blocks)
        .map(|b| (b * config.chains / blocks, (b + 1) * config.chains / blocks))
        .collect();
    let outputs: Vec<Result<BlockOutput>> =
        ranges.par_iter().map(|&(lo, hi)| run_block(model, config, x0, options, lo, hi)).collect();
    let elapsed = start.elapsed();

    let d = model.dim();
    let mut snapshots: Vec<Snapshot> = options
        .snapshot_iters
        .iter()
        .map(|&iter| Snapshot { iter, states: Vec::with_capacity(config.chains * d) })
        .collect();
    let mut running: Vec<RunningHistogram> = options
        .running_histogram
        .as_ref()
        .map(|spec| {
            spec.checkpoints
                .iter()
                .map(|&n| RunningHistogram { n, weights: vec![0.0; spec.grid.num_bins()], clamped: 0 })
                .collect()
        })
        .unwrap_or_default();
    let mut moments = options.moments.then(|| MomentAccumulator::new(d));
    let (mut proposals, mut accepted) = (0, 0);
    for out in outputs {
        let out = out?;
        for (s, part) in snapshots.iter_mut().zip(out.snapshots) {
            s.states.extend(part);
        }
        for (r, part) in running.iter_mut().zip(out.running) {
            r.weights.iter_mut().zip(&part.weights).for_each(|(a, b)| *a += b);
            r.clamped += part.clamped;
        }
        if let (Some(m), Some(part)) = (moments.as_mut(), out.moments.as_ref()) {
            m.merge(part)?;
        }
        proposals += out.proposals;
        accepted += out.accepted;
    }
    Ok(EnsembleOutput { snapshots, running, moments, proposals, accepted, iterations, chains: config.chains, elapsed })
}

fn run_block(
    model: &Model,
    config: &SamplerConfig,
    x0: &[f64],
    options: &EnsembleOptions,
    lo: usize,
    hi: usize,
) -> Result<BlockOutput> {
    let d = model.dim();
    let n_chains = hi - lo;
    let mut states: Vec<f64> = x0.iter().copied().cycle().take(n_chains * d).collect();
    let mut noises: Vec<ChainNoise> = (lo..hi)
        .map(|c| {
            let base = RngNoise::for_chain(config.master_seed, c as u64);
            if config.noise_coarsening == 1 {
                Ok(ChainNoise::Plain(base))
            } else {
                CoarsenedNoise::new(base, config.noise_coarsening).map(ChainNoise::Coarse)
            }
        })
        .collect::<Result<_>>()?;
    let mut stepper = Stepper::new(model);
    let mut snapshots = Vec::with_capacity(options.snapshot_iters.len());
    let mut next_snapshot = 0;
    let take_snapshot = |iter: usize, states: &[f64], snaps: &mut Vec<Vec<f64>>, next: &mut usize| {
        if options.snapshot_iters.get(*next) == Some(&iter) {
            snaps.push(states.to_vec());
            *next += 1;
        }
    };
    take_snapshot(0, &states, &mut snapshots, &mut next_snapshot);

    let spec = options.running_histogram.as_ref();
    let mut hist_weights = spec.map(|s| vec![0.0; s.grid.num_bins()]);
    let mut hist_clamped = 0u64;
    let mut next_checkpoint = 0;
    let mut running = Vec::new();
    let mut moments = options.moments.then(|| MomentAccumulator::new(d));
    let (mut proposals, mut accepted) = (0u64, 0u64);

    for k in 0..config.iterations() {
        for (c, noise) in noises.iter_mut().enumerate() {
            let x = &mut states[c * d..(c + 1) * d];
            if let Some(o) = stepper.step(config.algorithm, x, &config.schedule, k, &config.params, noise)? {
                proposals += 1;
                accepted += o.accepted as u64;
            }
        }
        let iter = k + 1;
        take_snapshot(iter, &states, &mut snapshots, &mut next_snapshot);
        if iter > config.burn_in {
            if let (Some(spec), Some(w)) = (spec, hist_weights.as_mut()) {
                let lambda = config.schedule.weight(iter);
                for x in states.chunks_exact(2) {
                    let (idx, clamped) = spec.grid.locate([x[0], x[1]]);
                    w[idx] += lambda;
                    hist_clamped += clamped as u64;
                }
                let n = iter - config.burn_in;
                if spec.checkpoints.get(next_checkpoint) == Some(&n) {
                    running.push(RunningHistogram { n, weights: w.clone(), clamped: hist_clamped });
                    next_checkpoint += 1;
                }
            }
            if let Some(m) = moments.as_mut() {
                for x in states.chunks_exact(d) {
                    m.accumulate(x);
                }
            }
        }
    }
    Ok(BlockOutput { snapshots, running, moments, proposals, accepted })
}
