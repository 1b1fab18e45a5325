//! Potentials `U(x) = F(x) + G(Kx)`.
//!
//! `F` is one of three data terms: a shifted quadratic, a blurred quadratic
//! (periodic deconvolution), or a shifted `l1` norm. `G` is always
//! `lambda * ||.||_1`, composed with either the 2D difference or the
//! anisotropic image gradient.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{Fft2, Image, Kernel, LinearOperator, OperatorKind};

/// Default stopping tolerance (max-norm change between primal iterates).
pub const DEFAULT_INNER_TOL: f64 = 1e-4;
pub const DEFAULT_INNER_MAX_ITERS: usize = 10_000;

/// Fraction of `1/||K||` used for both primal-dual step sizes.
const PD_STEP_FRACTION: f64 = 0.95;

/// `F(x) = ||x - y||^2 / (2 sigma^2)`.
#[derive(Debug, Clone)]
pub struct L2Shift {
    pub y: Vec<f64>,
    pub sigma: f64,
}

/// `F(x) = ||k * x - y||^2 / (2 sigma^2)` with periodic convolution.
#[derive(Debug, Clone)]
pub struct ConvL2 {
    pub y: Image,
    pub sigma: f64,
    blur: LinearOperator,
    fft: Fft2,
    khat: Vec<Complex64>,
    yhat: Vec<Complex64>,
}

impl ConvL2 {
    pub fn new(y: Image, sigma: f64, kernel: Kernel) -> Result<Self> {
        check_positive("sigma", sigma)?;
        let (rows, cols) = (y.rows(), y.cols());
        let blur = LinearOperator::conv2d(rows, cols, kernel.clone())?;
        let fft = Fft2::new(rows, cols);
        let mut khat: Vec<Complex64> =
            kernel.padded(rows, cols).data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut khat);
        let mut yhat: Vec<Complex64> = y.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut yhat);
        Ok(Self { y, sigma, blur, fft, khat, yhat })
    }

    pub fn blur(&self) -> &LinearOperator {
        &self.blur
    }

    pub fn kernel(&self) -> &Kernel {
        match self.blur.kind() {
            OperatorKind::Conv2d { kernel, .. } => kernel,
            _ => unreachable!("blur is always a convolution"),
        }
    }

    /// `min |k_hat|^2 / sigma^2`; zero when the kernel spectrum vanishes somewhere.
    pub fn strong_convexity(&self) -> f64 {
        let min = self.khat.iter().map(|c| c.norm_sqr()).fold(f64::INFINITY, f64::min);
        min / (self.sigma * self.sigma)
    }
}

/// `F(x) = ||x - y||_1 / b`.
#[derive(Debug, Clone)]
pub struct L1Shift {
    pub y: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub enum DataFidelity {
    L2Shift(L2Shift),
    ConvL2(ConvL2),
    L1(L1Shift),
}

impl DataFidelity {
    pub fn l2_shift(y: Vec<f64>, sigma: f64) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self::L2Shift(L2Shift { y, sigma }))
    }

    pub fn conv_l2(y: Image, sigma: f64, kernel: Kernel) -> Result<Self> {
        Ok(Self::ConvL2(ConvL2::new(y, sigma, kernel)?))
    }

    pub fn l1(y: Vec<f64>, b: f64) -> Result<Self> {
        check_positive("b", b)?;
        Ok(Self::L1(L1Shift { y, b }))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::L2Shift(_) => "l2_shift",
            Self::ConvL2(_) => "conv_l2",
            Self::L1(_) => "l1",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::L2Shift(f) => f.y.len(),
            Self::ConvL2(f) => f.y.len(),
            Self::L1(f) => f.y.len(),
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Self::L2Shift(f) => &f.y,
            Self::ConvL2(f) => f.y.data(),
            Self::L1(f) => &f.y,
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::L1(_))
    }

    /// Lipschitz constant of `grad F`, if `F` is differentiable.
    pub fn lipschitz_grad(&self) -> Option<f64> {
        match self {
            Self::L2Shift(f) => Some(1.0 / (f.sigma * f.sigma)),
            Self::ConvL2(f) => Some(f.blur.norm_sq_bound() / (f.sigma * f.sigma)),
            Self::L1(_) => None,
        }
    }

    /// Strong convexity modulus `m` (zero for the `l1` term).
    pub fn strong_convexity(&self) -> f64 {
        match self {
            Self::L2Shift(f) => 1.0 / (f.sigma * f.sigma),
            Self::ConvL2(f) => f.strong_convexity(),
            Self::L1(_) => 0.0,
        }
    }

    /// Lipschitz constant of `F` itself (only the `l1` term is globally Lipschitz).
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Self::L1(f) => Some((f.y.len() as f64).sqrt() / f.b),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::L2Shift(f) => {
                let s2 = f.sigma * f.sigma;
                x.iter().zip(&f.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * s2)
            }
            Self::ConvL2(f) => {
                let kx = f.blur.apply_vec(x);
                let s2 = f.sigma * f.sigma;
                kx.iter().zip(f.y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * s2)
            }
            Self::L1(f) => x.iter().zip(&f.y).map(|(a, b)| (a - b).abs()).sum::<f64>() / f.b,
        }
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Self::L2Shift(f) => {
                let inv = 1.0 / (f.sigma * f.sigma);
                for ((o, a), b) in out.iter_mut().zip(x).zip(&f.y) {
                    *o = (a - b) * inv;
                }
                Ok(())
            }
            Self::ConvL2(f) => {
                let mut r = f.blur.apply_vec(x);
                let inv = 1.0 / (f.sigma * f.sigma);
                for (ri, yi) in r.iter_mut().zip(f.y.data()) {
                    *ri = (*ri - yi) * inv;
                }
                f.blur.adjoint(&r, out);
                Ok(())
            }
            Self::L1(_) => Err(Error::NotSmooth("l1")),
        }
    }

    /// A subgradient of `F`: the gradient when smooth, `sign(x - y)/b` with
    /// `0` at ties for the `l1` term.
    pub fn subgrad_select(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::L1(f) => {
                let inv = 1.0 / f.b;
                for ((o, a), b) in out.iter_mut().zip(x).zip(&f.y) {
                    *o = sign0(a - b) * inv;
                }
            }
            _ => self.grad(x, out).expect("smooth data term has a gradient"),
        }
    }

    /// `out = prox_{tau F}(x)`, exact for all three data terms.
    pub fn prox(&self, tau: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("prox step must be positive, got {tau}")));
        }
        match self {
            Self::L2Shift(f) => {
                let r = tau / (f.sigma * f.sigma);
                let denom = 1.0 + r;
                for ((o, a), b) in out.iter_mut().zip(x).zip(&f.y) {
                    *o = (a + r * b) / denom;
                }
                Ok(())
            }
            Self::ConvL2(f) => {
                let r = tau / (f.sigma * f.sigma);
                let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                f.fft.forward(&mut buf);
                let mut min_abs = f64::INFINITY;
                for ((b, k), yh) in buf.iter_mut().zip(&f.khat).zip(&f.yhat) {
                    let denom = 1.0 + r * k.norm_sqr();
                    min_abs = min_abs.min(denom.abs());
                    *b = (*b + r * k.conj() * yh) / denom;
                }
                if min_abs < 1e-14 {
                    return Err(Error::SingularDenominator { min_abs });
                }
                f.fft.inverse(&mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o = b.re;
                }
                Ok(())
            }
            Self::L1(f) => {
                let t = tau / f.b;
                for ((o, a), b) in out.iter_mut().zip(x).zip(&f.y) {
                    let r = a - b;
                    *o = b + sign0(r) * (r.abs() - t).max(0.0);
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    /// `G(p) = lambda |p|` on `R`.
    ScaledAbs,
    /// `G(p) = lambda ||p||_1` on the gradient pair field.
    AnisoTvL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GSpec {
    pub kind: GKind,
    pub weight: f64,
}

impl GSpec {
    pub fn new(kind: GKind, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::InvalidArgument(format!("G weight must be >= 0, got {weight}")));
        }
        Ok(Self { kind, weight })
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        self.weight * p.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `lambda * sign(p)` with the selection `0` at `p = 0`.
    pub fn subgrad_select(&self, p: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(p) {
            *o = self.weight * sign0(*v);
        }
    }

    /// Lipschitz constant w.r.t. the 2-norm on a codomain of dimension `range_dim`.
    pub fn lipschitz(&self, range_dim: usize) -> f64 {
        match self.kind {
            GKind::ScaledAbs => self.weight,
            GKind::AnisoTvL1 => self.weight * (range_dim as f64).sqrt(),
        }
    }

    /// Projection onto `[-lambda, lambda]`, the prox of the conjugate.
    fn project_dual(&self, q: &mut [f64]) {
        let l = self.weight;
        q.iter_mut().for_each(|v| *v = v.clamp(-l, l));
    }
}

/// A target `pi ∝ exp(-F(x) - G(Kx))`.
#[derive(Debug, Clone)]
pub struct Model {
    pub f: DataFidelity,
    pub g: GSpec,
    pub k: LinearOperator,
}

impl Model {
    pub fn new(f: DataFidelity, g: GSpec, k: LinearOperator) -> Result<Self> {
        if f.dim() != k.domain_dim() {
            return Err(Error::Shape(format!(
                "data term has dimension {} but K acts on dimension {}",
                f.dim(),
                k.domain_dim()
            )));
        }
        match (g.kind, k.kind()) {
            (GKind::ScaledAbs, OperatorKind::Difference2d) | (GKind::AnisoTvL1, OperatorKind::Grad2d { .. }) => {}
            (kind, _) => {
                return Err(Error::InvalidArgument(format!("G kind {kind:?} does not match operator {}", k.name())))
            }
        }
        if let DataFidelity::ConvL2(c) = &f {
            if let OperatorKind::Grad2d { rows, cols } = k.kind() {
                if (c.y.rows(), c.y.cols()) != (*rows, *cols) {
                    return Err(Error::Shape("blurred data and gradient grid differ".into()));
                }
            }
        }
        Ok(Self { f, g, k })
    }

    /// 2D `l2` model: `||x - y||^2/(2 sigma^2) + lambda |x2 - x1|`.
    pub fn tv_l2_2d(y: [f64; 2], sigma: f64, lambda: f64) -> Result<Self> {
        Self::new(
            DataFidelity::l2_shift(y.to_vec(), sigma)?,
            GSpec::new(GKind::ScaledAbs, lambda)?,
            LinearOperator::difference2d(),
        )
    }

    /// 2D `l1` model: `||x - y||_1 / b + lambda |x2 - x1|`.
    pub fn tv_l1_2d(y: [f64; 2], b: f64, lambda: f64) -> Result<Self> {
        Self::new(
            DataFidelity::l1(y.to_vec(), b)?,
            GSpec::new(GKind::ScaledAbs, lambda)?,
            LinearOperator::difference2d(),
        )
    }

    pub fn tv_denoise(y: Image, sigma: f64, lambda: f64) -> Result<Self> {
        let k = LinearOperator::grad2d(y.rows(), y.cols())?;
        Self::new(DataFidelity::l2_shift(y.into_data(), sigma)?, GSpec::new(GKind::AnisoTvL1, lambda)?, k)
    }

    pub fn tv_deconv(y: Image, sigma: f64, kernel: Kernel, lambda: f64) -> Result<Self> {
        let k = LinearOperator::grad2d(y.rows(), y.cols())?;
        Self::new(DataFidelity::conv_l2(y, sigma, kernel)?, GSpec::new(GKind::AnisoTvL1, lambda)?, k)
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn eval_u(&self, x: &[f64]) -> f64 {
        self.f.value(x) + self.g.value(&self.k.apply_vec(x))
    }

    pub fn grad_f(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.f.grad(x, &mut out)?;
        Ok(out)
    }

    pub fn prox_f(&self, tau: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.f.prox(tau, x, &mut out)?;
        Ok(out)
    }

    /// `K* theta(Kx)`, the subgradient of `G o K` used by the samplers.
    pub fn subgrad_gk(&self, x: &[f64], kx: &mut [f64], out: &mut [f64]) {
        self.k.apply(x, kx);
        let q = kx;
        for v in q.iter_mut() {
            *v = self.g.weight * sign0(*v);
        }
        self.k.adjoint(q, out);
    }

    pub fn lipschitz_g(&self) -> f64 {
        self.g.lipschitz(self.k.range_dim())
    }
}

pub fn subgrad_g_select(g: &GSpec, p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    g.subgrad_select(p, &mut out);
    out
}

#[derive(Debug, Clone)]
pub struct PdSolution {
    pub point: Vec<f64>,
    pub iterations: usize,
}

/// Chambolle-Pock on `min_z h(z) + G(Kz)` where `prox_h(v, s, out)` evaluates
/// `prox_{s h}(v)`. Starts from `z = x0`, `p = 0`.
fn primal_dual<P>(g: &GSpec, k: &LinearOperator, x0: &[f64], tol: f64, max_iters: usize, mut prox_h: P) -> Result<PdSolution>
where
    P: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("primal-dual tolerance must be positive".into()));
    }
    let step = PD_STEP_FRACTION / k.norm_sq_bound().sqrt();
    let (d, r) = (k.domain_dim(), k.range_dim());
    let mut z = x0.to_vec();
    let mut z_bar = z.clone();
    let mut z_next = vec![0.0; d];
    let mut p = vec![0.0; r];
    let mut kz = vec![0.0; r];
    let mut ktp = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iters {
        k.apply(&z_bar, &mut kz);
        for (pi, ki) in p.iter_mut().zip(&kz) {
            *pi += step * ki;
        }
        g.project_dual(&mut p);
        k.adjoint(&p, &mut ktp);
        for ((vi, zi), ai) in v.iter_mut().zip(&z).zip(&ktp) {
            *vi = zi - step * ai;
        }
        prox_h(&v, step, &mut z_next)?;
        last_change = 0.0;
        for i in 0..d {
            last_change = last_change.max((z_next[i] - z[i]).abs());
            z_bar[i] = 2.0 * z_next[i] - z[i];
        }
        std::mem::swap(&mut z, &mut z_next);
        if last_change < tol {
            return Ok(PdSolution { point: z, iterations: it });
        }
    }
    Err(Error::NotConverged { iterations: max_iters, last_change, last_iterate: z })
}

/// Approximate `prox_{theta (G o K)}(x)`.
pub fn prox_gk_pd(g: &GSpec, k: &LinearOperator, theta: f64, x: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    prox_gk_pd_solve(g, k, theta, x, tol, max_iters).map(|s| s.point)
}

pub fn prox_gk_pd_solve(g: &GSpec, k: &LinearOperator, theta: f64, x: &[f64], tol: f64, max_iters: usize) -> Result<PdSolution> {
    check_positive("theta", theta)?;
    if x.len() != k.domain_dim() {
        return Err(Error::Shape(format!("point has dimension {}, K expects {}", x.len(), k.domain_dim())));
    }
    // prox of s * ||z - x||^2 / (2 theta)
    primal_dual(g, k, x, tol, max_iters, |v, s, out| {
        let r = s / theta;
        for ((o, vi), xi) in out.iter_mut().zip(v).zip(x) {
            *o = (vi + r * xi) / (1.0 + r);
        }
        Ok(())
    })
}

/// Approximate `prox_{tau (F + G o K)}(x)`; the quadratic coupling is folded
/// into a single exact prox of `F` with step `(1/tau + 1/s)^{-1}`.
pub fn prox_fgk_pd(model: &Model, tau: f64, x: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    prox_fgk_pd_solve(model, tau, x, tol, max_iters).map(|s| s.point)
}

pub fn prox_fgk_pd_solve(model: &Model, tau: f64, x: &[f64], tol: f64, max_iters: usize) -> Result<PdSolution> {
    check_positive("tau", tau)?;
    let mut w = vec![0.0; x.len()];
    primal_dual(&model.g, &model.k, x, tol, max_iters, |v, s, out| {
        let r = 1.0 / (1.0 / tau + 1.0 / s);
        for ((wi, xi), vi) in w.iter_mut().zip(x).zip(v) {
            *wi = r * (xi / tau + vi / s);
        }
        model.f.prox(r, &w, out)
    })
}

/// Moreau envelope `min_z ||z - x||^2/(2 theta) + G(Kz)` evaluated at the
/// primal-dual prox.
pub fn moreau_value(g: &GSpec, k: &LinearOperator, theta: f64, x: &[f64], tol: f64, max_iters: usize) -> Result<f64> {
    let z = prox_gk_pd(g, k, theta, x, tol, max_iters)?;
    let dist: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(dist / (2.0 * theta) + g.value(&k.apply_vec(&z)))
}

/// `(x - prox_{theta (G o K)}(x)) / theta`.
pub fn moreau_grad(g: &GSpec, k: &LinearOperator, theta: f64, x: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let z = prox_gk_pd(g, k, theta, x, tol, max_iters)?;
    Ok(x.iter().zip(&z).map(|(a, b)| (a - b) / theta).collect())
}

/// Closed-form `prox_{theta lambda |x2 - x1|}` on `R^2`.
pub fn prox_scaled_abs_difference(lambda: f64, theta: f64, x: [f64; 2]) -> [f64; 2] {
    let d = x[1] - x[0];
    let s = sign0(d) * (theta * lambda).min(d.abs() / 2.0);
    [x[0] + s, x[1] - s]
}

#[inline]
pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Squared Euclidean distance.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
