//! Closed-form convergence bounds in KL and squared W2, and the parameter
//! choices `(tau_eps, n_eps)` that drive them below a tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::OperatorKind;
use crate::potentials::Model;

/// Which smoothness assumption on `F` the bounds use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    LipschitzF,
    SmoothF,
    StronglyConvexF,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Variant {
    Prox,
    Grad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub d: usize,
    pub l_f: Option<f64>,
    pub l_grad_f: Option<f64>,
    pub m: f64,
    pub l_g: f64,
    pub norm_k_sq: f64,
    pub regularity: Regularity,
    /// Set for imaging models, where `L_G` grows with the number of pixels.
    pub loose: bool,
}

impl RegularityConstants {
    pub fn new(
        d: usize,
        l_f: Option<f64>,
        l_grad_f: Option<f64>,
        m: f64,
        l_g: f64,
        norm_k_sq: f64,
        regularity: Regularity,
    ) -> Result<Self> {
        let finite = |v: f64| v.is_finite() && v >= 0.0;
        if d == 0
            || !finite(m)
            || !finite(l_g)
            || !finite(norm_k_sq)
            || l_f.is_some_and(|v| !finite(v))
            || l_grad_f.is_some_and(|v| !finite(v))
        {
            return Err(Error::InvalidArgument("regularity constants must be finite and non-negative".into()));
        }
        if let Some(l) = l_grad_f {
            if m > l * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!("strong convexity {m} exceeds gradient Lipschitz {l}")));
            }
        }
        match regularity {
            Regularity::LipschitzF if l_f.is_none() => return Err(Error::MissingConstant("L_F")),
            Regularity::SmoothF | Regularity::StronglyConvexF if l_grad_f.is_none() => {
                return Err(Error::MissingConstant("L_grad_F"))
            }
            _ => {}
        }
        Ok(Self { d, l_f, l_grad_f, m, l_g, norm_k_sq, regularity, loose: false })
    }

    /// Constants of a model; the strongest assumption it satisfies is selected.
    pub fn from_model(model: &Model) -> Result<Self> {
        let m = model.f.strong_convexity();
        let regularity = match (model.f.lipschitz_grad(), m > 0.0) {
            (Some(_), true) => Regularity::StronglyConvexF,
            (Some(_), false) => Regularity::SmoothF,
            (None, _) => Regularity::LipschitzF,
        };
        let mut c = Self::new(
            model.dim(),
            model.f.lipschitz(),
            model.f.lipschitz_grad(),
            m,
            model.lipschitz_g(),
            model.k.norm_sq_bound(),
            regularity,
        )?;
        c.loose = matches!(model.k.kind(), OperatorKind::Grad2d { .. });
        Ok(c)
    }

    pub fn with_regularity(mut self, regularity: Regularity) -> Result<Self> {
        self.regularity = regularity;
        Self::new(self.d, self.l_f, self.l_grad_f, self.m, self.l_g, self.norm_k_sq, regularity)
            .map(|c| Self { loose: self.loose, ..c })
    }

    fn lg_k_sq(&self) -> f64 {
        self.l_g * self.l_g * self.norm_k_sq
    }

    fn l_grad(&self) -> Result<f64> {
        self.l_grad_f.ok_or(Error::MissingConstant("L_grad_F"))
    }

    fn strong_m(&self) -> Result<f64> {
        if self.m > 0.0 {
            Ok(self.m)
        } else {
            Err(Error::MissingConstant("strong convexity modulus m > 0"))
        }
    }

    /// `m / (2 L^2 - m^2)`, the step cap of the strongly convex prox analysis.
    pub fn prox_strong_cap(&self) -> Result<f64> {
        let (m, l) = (self.strong_m()?, self.l_grad()?);
        Ok(m / (2.0 * l * l - m * m))
    }

    /// `1 / L`, the step cap of the gradient-step analysis.
    pub fn grad_cap(&self) -> Result<f64> {
        Ok(1.0 / self.l_grad()?)
    }

    fn check_cap(&self, tau: f64, variant: W2Variant) -> Result<()> {
        check_tau(tau)?;
        let (cap, inequality) = match variant {
            W2Variant::Prox => (self.prox_strong_cap()?, "tau <= m/(2 L_gradF^2 - m^2)"),
            W2Variant::Grad => (self.grad_cap()?, "tau <= 1/L_gradF"),
        };
        if tau > cap * (1.0 + 1e-12) {
            return Err(Error::StepSizeCap { tau, cap, inequality });
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")))
    }
}

/// `L_F sqrt(2 d tau)` for Lipschitz `F`, `tau L_gradF d` for smooth `F`.
pub fn phi(c: &RegularityConstants, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be non-negative, got {tau}")));
    }
    let d = c.d as f64;
    match c.regularity {
        Regularity::LipschitzF => Ok(c.l_f.ok_or(Error::MissingConstant("L_F"))? * (2.0 * d * tau).sqrt()),
        Regularity::SmoothF | Regularity::StronglyConvexF => Ok(tau * c.l_grad()? * d),
    }
}

/// `W0^2/(2 n tau) + phi(tau) + tau L_G^2 ||K||^2 / 2` for the running average
/// of iterates `N+1..N+n` with unit weights; `w0_sq` is the squared distance
/// after the burn-in.
pub fn kl_bound_general(c: &RegularityConstants, tau: f64, n: usize, _burn_in: usize, w0_sq: f64) -> Result<f64> {
    check_tau(tau)?;
    check_n(n)?;
    Ok(w0_sq / (2.0 * n as f64 * tau) + phi(c, tau)? + 0.5 * tau * c.lg_k_sq())
}

/// `(1 - m tau/2) W0^2/(2 n tau) + tau (L_gradF d + L_G^2 ||K||^2 / 2)`.
///
/// The prox step cap is enforced whenever `m > 0`; with `m = 0` this is the
/// smooth case of [`kl_bound_general`].
pub fn kl_bound_strong(c: &RegularityConstants, tau: f64, n: usize, _burn_in: usize, w0_sq: f64) -> Result<f64> {
    check_tau(tau)?;
    check_n(n)?;
    if c.m > 0.0 {
        c.check_cap(tau, W2Variant::Prox)?;
    }
    let l = c.l_grad()?;
    Ok((1.0 - c.m * tau / 2.0) * w0_sq / (2.0 * n as f64 * tau) + tau * (l * c.d as f64 + 0.5 * c.lg_k_sq()))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("bound needs n >= 1".into()))
    } else {
        Ok(())
    }
}

fn contraction(c: &RegularityConstants, tau: f64, variant: W2Variant) -> f64 {
    match variant {
        W2Variant::Prox => 1.0 - c.m * tau / 2.0,
        W2Variant::Grad => 1.0 - c.m * tau,
    }
}

fn w2_bias_constant(c: &RegularityConstants) -> Result<f64> {
    Ok(2.0 * c.l_grad()? * c.d as f64 + c.lg_k_sq())
}

/// Constant-step bound `r^k W0^2 + (2 L_gradF d + L_G^2 ||K||^2) s tau / m` with
/// `(r, s) = (1 - m tau/2, 2)` for the prox variant and `(1 - m tau, 1)` for the
/// gradient variant.
pub fn w2_bound_strong(c: &RegularityConstants, tau: f64, k: usize, w0_sq: f64, variant: W2Variant) -> Result<f64> {
    c.check_cap(tau, variant)?;
    let m = c.strong_m()?;
    let r = contraction(c, tau, variant);
    let scale = match variant {
        W2Variant::Prox => 2.0,
        W2Variant::Grad => 1.0,
    };
    Ok(r.powi(k as i32) * w0_sq + w2_bias_constant(c)? * scale * tau / m)
}

/// Product/sum bound for a varying schedule; `taus[j - 1]` is `tau_j`, so the
/// bound after `k` iterations reads `tau_2..tau_{k+1}`.
pub fn w2_bound_varying(c: &RegularityConstants, taus: &[f64], k: usize, w0_sq: f64, variant: W2Variant) -> Result<f64> {
    if taus.len() < k + 1 {
        return Err(Error::InvalidArgument(format!("bound after {k} iterations needs {} step sizes", k + 1)));
    }
    c.strong_m()?;
    for &t in &taus[..=k] {
        c.check_cap(t, variant)?;
    }
    let bias = w2_bias_constant(c)?;
    // running recursion b_j = r_j b_{j-1} + C tau_j^2, b_1 = W0^2
    let mut b = w0_sq;
    for &t in &taus[1..=k] {
        b = contraction(c, t, variant) * b + bias * t * t;
    }
    Ok(b)
}

/// Full curve of [`w2_bound_varying`] for `k = 0..=k_max` in one pass.
pub fn w2_bound_varying_curve(
    c: &RegularityConstants,
    taus: &[f64],
    k_max: usize,
    w0_sq: f64,
    variant: W2Variant,
) -> Result<Vec<f64>> {
    if taus.len() < k_max + 1 {
        return Err(Error::InvalidArgument(format!("curve up to {k_max} needs {} step sizes", k_max + 1)));
    }
    c.strong_m()?;
    for &t in &taus[..=k_max] {
        c.check_cap(t, variant)?;
    }
    let bias = w2_bias_constant(c)?;
    let mut out = Vec::with_capacity(k_max + 1);
    let mut b = w0_sq;
    out.push(b);
    for &t in &taus[1..=k_max] {
        b = contraction(c, t, variant) * b + bias * t * t;
        out.push(b);
    }
    Ok(out)
}

/// Which guarantee `select_eps_params` targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsVariant {
    /// KL of the running average under the general assumptions
    /// (Lipschitz or smooth `F` according to the constants' tag).
    WeakKl,
    /// KL of the running average for strongly convex `F`.
    StrongKl,
    /// W2 of the Prox-sub iterate for strongly convex `F`.
    ProxW2,
    /// W2 of the Grad-sub iterate for strongly convex `F`.
    GradW2,
}

/// Fraction of the step-size cap used for `tau_eps`.
pub const EPS_TAU_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsParams {
    pub tau_cap: f64,
    pub tau: f64,
    pub n: u64,
}

/// Step size `tau_eps` (a fixed fraction of the strict cap) and the smallest
/// iteration count `n_eps` meeting the accuracy `eps`.
pub fn select_eps_params(c: &RegularityConstants, eps: f64, variant: EpsVariant, w0_sq: f64) -> Result<EpsParams> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if !(w0_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!("initial distance must be non-negative, got {w0_sq}")));
    }
    let d = c.d as f64;
    let a = c.lg_k_sq();
    let tau_cap = match variant {
        EpsVariant::WeakKl => match c.regularity {
            Regularity::LipschitzF => {
                // L_F sqrt(2 d tau) + a tau / 2 = eps / 2, solved for s = sqrt(tau)
                let b = c.l_f.ok_or(Error::MissingConstant("L_F"))? * (2.0 * d).sqrt();
                let s = if a > 0.0 { (-b + (b * b + a * eps).sqrt()) / a } else { eps / (2.0 * b) };
                s * s
            }
            Regularity::SmoothF | Regularity::StronglyConvexF => eps / (2.0 * (c.l_grad()? * d + 0.5 * a)),
        },
        EpsVariant::StrongKl => (eps / (2.0 * (c.l_grad()? * d + 0.5 * a))).min(c.prox_strong_cap()?),
        EpsVariant::ProxW2 => (c.strong_m()? * eps / (4.0 * w2_bias_constant(c)?)).min(c.prox_strong_cap()?),
        EpsVariant::GradW2 => (c.strong_m()? * eps / (2.0 * w2_bias_constant(c)?)).min(c.grad_cap()?),
    };
    let tau = EPS_TAU_FRACTION * tau_cap;
    let threshold = match variant {
        EpsVariant::WeakKl => w0_sq / (eps * tau),
        EpsVariant::StrongKl => (1.0 - c.m * tau / 2.0) * w0_sq / (eps * tau),
        EpsVariant::ProxW2 | EpsVariant::GradW2 => {
            let r = match variant {
                EpsVariant::ProxW2 => 1.0 - c.m * tau / 2.0,
                _ => 1.0 - c.m * tau,
            };
            if w0_sq == 0.0 {
                0.0
            } else {
                (eps / (2.0 * w0_sq)).ln() / r.ln()
            }
        }
    };
    Ok(EpsParams { tau_cap, tau, n: smallest_integer_above(threshold) })
}

/// Smallest integer `n >= 1` with `n > x`.
fn smallest_integer_above(x: f64) -> u64 {
    if !(x >= 1.0) {
        1
    } else {
        x.floor() as u64 + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tvl2() -> RegularityConstants {
        // sigma = 1, lambda = 5, ||K||^2 = 2
        RegularityConstants::new(2, None, Some(1.0), 1.0, 5.0, 2.0, Regularity::StronglyConvexF).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn phi_examples() {
        let lip = RegularityConstants::new(2, Some(2f64.sqrt()), None, 0.0, 5.0, 2.0, Regularity::LipschitzF).unwrap();
        assert!(close(phi(&lip, 1e-4).unwrap(), 0.028284271247461905, 1e-12));
        let smooth = tvl2().with_regularity(Regularity::SmoothF).unwrap();
        assert!(close(phi(&smooth, 1e-4).unwrap(), 2e-4, 1e-12));
        assert_eq!(phi(&smooth, 0.0).unwrap(), 0.0);
        let no_lf = tvl2().with_regularity(Regularity::LipschitzF);
        assert!(matches!(no_lf, Err(Error::MissingConstant(_))));
    }

    #[test]
    fn kl_general_examples() {
        let c = tvl2().with_regularity(Regularity::SmoothF).unwrap();
        assert!(close(kl_bound_general(&c, 1e-3, 10_000, 0, 1.0).unwrap(), 0.077, 1e-12));
        let bias = phi(&c, 1e-3).unwrap() + 0.5 * 1e-3 * 50.0;
        assert!(close(kl_bound_general(&c, 1e-3, 7, 0, 0.0).unwrap(), bias, 1e-12));
        assert!(close(kl_bound_general(&c, 1e-3, usize::MAX, 0, 1.0).unwrap(), bias, 1e-9));
    }

    #[test]
    fn kl_strong_examples() {
        let c = tvl2();
        assert!(close(kl_bound_strong(&c, 1e-4, 100_000, 0, 1.0).unwrap(), 0.0526975, 1e-9));
        let flat = RegularityConstants { m: 0.0, ..c }.with_regularity(Regularity::SmoothF).unwrap();
        for &(tau, n) in &[(1e-3, 10usize), (0.5, 3), (2.0, 100)] {
            assert!(close(
                kl_bound_strong(&flat, tau, n, 0, 0.7).unwrap(),
                kl_bound_general(&flat, tau, n, 0, 0.7).unwrap(),
                1e-12
            ));
        }
        assert!(matches!(kl_bound_strong(&c, 1.5, 10, 0, 1.0), Err(Error::StepSizeCap { .. })));
    }

    #[test]
    fn w2_strong_examples() {
        let c = tvl2();
        let k0 = w2_bound_strong(&c, 1e-3, 0, 0.8, W2Variant::Grad).unwrap();
        assert!(close(k0, 0.8 + 54.0 * 1e-3, 1e-12));
        assert!(close(w2_bound_strong(&c, 1e-5, 1_000_000_000, 0.0, W2Variant::Grad).unwrap(), 5.4e-4, 1e-12));
        let one = w2_bound_strong(&c, 1e-3, 1, 1.0, W2Variant::Prox).unwrap();
        assert!(close(one - 108.0 * 1e-3, 0.9995, 1e-12));
        assert!(matches!(w2_bound_strong(&c, 1.01, 1, 1.0, W2Variant::Grad), Err(Error::StepSizeCap { .. })));
    }

    #[test]
    fn varying_with_constant_steps_is_the_geometric_sum() {
        let c = tvl2();
        let tau = 1e-3;
        for variant in [W2Variant::Prox, W2Variant::Grad] {
            let taus = vec![tau; 5001];
            for &k in &[0usize, 1, 10, 1000, 5000] {
                let v = w2_bound_varying(&c, &taus, k, 0.9, variant).unwrap();
                let (r, s) = match variant {
                    W2Variant::Prox => (1.0 - tau / 2.0, 2.0),
                    W2Variant::Grad => (1.0 - tau, 1.0),
                };
                let rk = r.powi(k as i32);
                let geometric = rk * 0.9 + 54.0 * s * tau * (1.0 - rk);
                assert!(close(v, geometric, 1e-12), "{variant:?} k={k}: {v} vs {geometric}");
                let strong = w2_bound_strong(&c, tau, k, 0.9, variant).unwrap();
                // the constant-step form drops the factor (1 - r^k) on the bias term
                assert!(v <= strong * (1.0 + 1e-15));
                assert!(close(strong - v, 54.0 * s * tau * rk, 1e-9) || k == 0);
            }
            assert_eq!(w2_bound_varying(&c, &taus, 0, 0.9, variant).unwrap(), 0.9);
        }
        // in the limit both coincide
        let taus = vec![tau; 200_001];
        let v = w2_bound_varying(&c, &taus, 200_000, 0.9, W2Variant::Prox).unwrap();
        let s = w2_bound_strong(&c, tau, 200_000, 0.9, W2Variant::Prox).unwrap();
        assert!(close(v, s, 1e-12));
    }

    #[test]
    fn varying_decreasing_schedule_vanishes() {
        let c = tvl2();
        let mut taus = vec![0.5];
        for _ in 0..1_000_000 {
            let t = *taus.last().unwrap();
            taus.push(t / (1.0 + c.m * t / 2.0));
        }
        let curve = w2_bound_varying_curve(&c, &taus, 1_000_000, 1.0, W2Variant::Prox).unwrap();
        let tail = &curve[10_000..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
        assert!(curve[1_000_000] < 5e-3 && curve[1_000_000] < 0.2 * curve[100_000], "{}", curve[1_000_000]);
        assert!(close(curve[777], w2_bound_varying(&c, &taus, 777, 1.0, W2Variant::Prox).unwrap(), 1e-14));
    }

    #[test]
    fn bound_orderings() {
        let c = tvl2();
        let smooth = c.with_regularity(Regularity::SmoothF).unwrap();
        for &tau in &[1e-4, 1e-3, 0.1, 0.9] {
            for &n in &[1usize, 10, 1000] {
                assert!(kl_bound_strong(&c, tau, n, 0, 1.3).unwrap() <= kl_bound_general(&smooth, tau, n, 0, 1.3).unwrap());
                let g = w2_bound_strong(&c, tau, n, 1.3, W2Variant::Grad).unwrap();
                let p = w2_bound_strong(&c, tau, n, 1.3, W2Variant::Prox).unwrap();
                assert!(g <= p);
                assert!(w2_bound_strong(&c, tau, n + 1, 1.3, W2Variant::Prox).unwrap() <= p);
                assert!(kl_bound_strong(&c, tau, n + 1, 0, 1.3).unwrap() <= kl_bound_strong(&c, tau, n, 0, 1.3).unwrap());
                assert!(w2_bound_strong(&c, tau, n, 2.0, W2Variant::Prox).unwrap() >= p);
            }
        }
    }

    #[test]
    fn eps_examples() {
        let c = tvl2();
        let p = select_eps_params(&c, 0.1, EpsVariant::ProxW2, 1.0).unwrap();
        assert!(close(p.tau_cap, 0.1 / 4.0 / 54.0, 1e-12));
        assert!(close(p.tau, 0.9 * 0.1 / 4.0 / 54.0, 1e-12));
        assert!((p.tau - 4.17e-4).abs() < 1e-6);
        let expected = ((0.1f64 / 2.0).ln() / (1.0 - p.tau / 2.0).ln()).floor() as u64 + 1;
        assert_eq!(p.n, expected);

        for variant in [EpsVariant::WeakKl, EpsVariant::StrongKl, EpsVariant::ProxW2, EpsVariant::GradW2] {
            assert_eq!(select_eps_params(&c, 1e9, variant, 1.0).unwrap().n, 1);
            assert_eq!(select_eps_params(&c, 0.1, variant, 0.0).unwrap().n, 1);
        }
    }

    #[test]
    fn eps_params_meet_their_bounds() {
        let c = tvl2();
        let lip = RegularityConstants::new(2, Some(2f64.sqrt()), None, 0.0, 5.0, 2.0, Regularity::LipschitzF).unwrap();
        for &eps in &[1.0, 0.1, 0.01] {
            let w0 = 1.7;
            let p = select_eps_params(&c, eps, EpsVariant::ProxW2, w0).unwrap();
            assert!(w2_bound_strong(&c, p.tau, p.n as usize, w0, W2Variant::Prox).unwrap() < eps);
            let p = select_eps_params(&c, eps, EpsVariant::GradW2, w0).unwrap();
            assert!(w2_bound_strong(&c, p.tau, p.n as usize, w0, W2Variant::Grad).unwrap() < eps);
            let p = select_eps_params(&c, eps, EpsVariant::StrongKl, w0).unwrap();
            assert!(kl_bound_strong(&c, p.tau, p.n as usize, 0, w0).unwrap() < eps);
            let p = select_eps_params(&lip, eps, EpsVariant::WeakKl, w0).unwrap();
            assert!(phi(&lip, p.tau_cap).unwrap() + 0.5 * p.tau_cap * 50.0 - eps / 2.0 < 1e-12);
            assert!(kl_bound_general(&lip, p.tau, p.n as usize, 0, w0).unwrap() < eps);
            let smooth = c.with_regularity(Regularity::SmoothF).unwrap();
            let p = select_eps_params(&smooth, eps, EpsVariant::WeakKl, w0).unwrap();
            assert!(kl_bound_general(&smooth, p.tau, p.n as usize, 0, w0).unwrap() < eps);
        }
        assert!(matches!(select_eps_params(&lip, 0.1, EpsVariant::ProxW2, 1.0), Err(Error::MissingConstant(_))));
    }

    #[test]
    fn caps_from_models() {
        let c = RegularityConstants::from_model(&Model::tv_l2_2d([-1.0, 1.0], 1.0, 5.0).unwrap()).unwrap();
        assert_eq!(c.regularity, Regularity::StronglyConvexF);
        assert!(close(c.prox_strong_cap().unwrap(), 1.0, 1e-12));
        assert!(close(c.grad_cap().unwrap(), 1.0, 1e-12));
        assert!(close(c.lg_k_sq(), 50.0, 1e-12));
        assert!(!c.loose);

        let l1 = RegularityConstants::from_model(&Model::tv_l1_2d([-1.0, 1.0], 1.0, 5.0).unwrap()).unwrap();
        assert_eq!(l1.regularity, Regularity::LipschitzF);
        assert!(close(l1.l_f.unwrap(), 2f64.sqrt(), 1e-12));

        let img = crate::linops::Image::filled(4, 4, 0.5);
        let den = RegularityConstants::from_model(&Model::tv_denoise(img, 0.05, 30.0).unwrap()).unwrap();
        assert!(den.loose);
        assert!(close(den.grad_cap().unwrap(), 0.0025, 1e-12));
        assert!(close(den.prox_strong_cap().unwrap(), 0.0025, 1e-12));
    }
}
