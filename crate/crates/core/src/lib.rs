//! Langevin sampling for non-smooth potentials `U(x) = F(x) + G(Kx)`.
//!
//! The two main samplers avoid the proximal map of `G o K` entirely: they take
//! a subgradient step on `G o K` followed by either an exact proximal step
//! (`prox_sub`) or an explicit gradient step (`grad_sub`) on `F`, then add
//! Gaussian noise. MYULA, P-MALA, a plain subgradient sampler and a
//! Metropolis-corrected `grad_sub` chain are included for comparison.
//!
//! Supporting modules cover the linear operators, histogram and moment
//! estimation, divergences between discrete distributions (exact `W2`, KL,
//! TV) and the closed-form convergence-bound curves.

pub mod bounds;
pub mod error;
pub mod estimation;
pub mod linops;
pub mod metrics;
pub mod potentials;
pub mod samplers;

pub use error::{Error, Result};
pub use estimation::{DiscreteDistribution, Grid2D, MomentAccumulator};
pub use linops::{Image, Kernel, LinearOperator, PairField, Vec2};
pub use potentials::{DataFidelity, GKind, GSpec, Model};
pub use samplers::{Algorithm, SamplerConfig, StepSchedule};
