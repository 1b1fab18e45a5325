//! Histograms, weighted mixtures of iterate laws and mergeable moment
//! accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of clamped samples above which `histogram` logs a warning.
pub const CLAMP_WARN_FRACTION: f64 = 1e-3;

/// Uniform 2D binning of `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub bins_x: usize,
    pub bins_y: usize,
}

impl Grid2D {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], bins_x: usize, bins_y: usize) -> Result<Self> {
        if !(x_range[0] < x_range[1]) || !(y_range[0] < y_range[1]) {
            return Err(Error::InvalidArgument("grid ranges must satisfy min < max".into()));
        }
        if bins_x == 0 || bins_y == 0 {
            return Err(Error::InvalidArgument("grid needs at least one bin per axis".into()));
        }
        Ok(Self { x_min: x_range[0], x_max: x_range[1], y_min: y_range[0], y_max: y_range[1], bins_x, bins_y })
    }

    /// 50 x 50 bins over `[-4, 4]^2`.
    pub fn default_2d() -> Self {
        Self::new([-4.0, 4.0], [-4.0, 4.0], 50, 50).expect("valid default grid")
    }

    pub fn num_bins(&self) -> usize {
        self.bins_x * self.bins_y
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.bins_x as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.bins_y as f64
    }

    pub fn bin_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Flat bin index `ix * bins_y + iy`; out-of-range points are clamped to
    /// the boundary bins and flagged.
    #[inline]
    pub fn locate(&self, p: [f64; 2]) -> (usize, bool) {
        let (ix, cx) = axis_bin(p[0], self.x_min, self.dx(), self.bins_x);
        let (iy, cy) = axis_bin(p[1], self.y_min, self.dy(), self.bins_y);
        (ix * self.bins_y + iy, cx || cy)
    }

    pub fn center(&self, index: usize) -> [f64; 2] {
        let (ix, iy) = (index / self.bins_y, index % self.bins_y);
        [self.x_min + (ix as f64 + 0.5) * self.dx(), self.y_min + (iy as f64 + 0.5) * self.dy()]
    }

    /// Bin centers in flat-index order, as a flat `[x, y, x, y, ...]` vector.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_bins()).flat_map(|i| self.center(i)).collect()
    }
}

#[inline]
fn axis_bin(v: f64, min: f64, width: f64, bins: usize) -> (usize, bool) {
    let t = ((v - min) / width).floor();
    if t < 0.0 || t.is_nan() {
        (0, true)
    } else if t >= bins as f64 {
        (bins - 1, true)
    } else {
        (t as usize, false)
    }
}

/// Probability masses on a finite support of points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    dim: usize,
    points: Vec<f64>,
    masses: Vec<f64>,
    grid: Option<Grid2D>,
}

impl DiscreteDistribution {
    /// `masses` must be non-negative and sum to one within `1e-12`.
    pub fn new(dim: usize, points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * masses.len() {
            return Err(Error::Shape(format!(
                "{} support values do not match {} masses in dimension {dim}",
                points.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Unnormalized(total));
        }
        Ok(Self { dim, points, masses, grid: None })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument(format!("weights must have positive finite total, got {total}")));
        }
        Self::new(dim, points, weights.into_iter().map(|w| w / total).collect())
    }

    /// Distribution on the centers of `grid` from per-bin weights.
    pub fn on_grid(grid: Grid2D, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.num_bins() {
            return Err(Error::Shape(format!("grid has {} bins, got {} weights", grid.num_bins(), weights.len())));
        }
        let mut d = Self::from_weights(2, grid.centers(), weights)?;
        d.grid = Some(grid);
        Ok(d)
    }

    pub fn point_mass(point: &[f64]) -> Self {
        Self { dim: point.len(), points: point.to_vec(), masses: vec![1.0], grid: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn grid(&self) -> Option<&Grid2D> {
        self.grid.as_ref()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (i, &m) in self.masses.iter().enumerate() {
            for (acc, v) in mean.iter_mut().zip(self.point(i)) {
                *acc += m * v;
            }
        }
        mean
    }

    /// True when both live on the same support (same grid, or identical points).
    pub fn same_support(&self, other: &Self) -> bool {
        match (&self.grid, &other.grid) {
            (Some(a), Some(b)) => a == b,
            _ => self.dim == other.dim && self.points == other.points,
        }
    }
}

/// Integer bin counts over a [`Grid2D`], additive across chains and iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct BinCounts {
    grid: Grid2D,
    counts: Vec<u64>,
    total: u64,
    clamped: u64,
}

impl BinCounts {
    pub fn new(grid: Grid2D) -> Self {
        Self { grid, counts: vec![0; grid.num_bins()], total: 0, clamped: 0 }
    }

    #[inline]
    pub fn add(&mut self, p: [f64; 2]) {
        let (idx, clamped) = self.grid.locate(p);
        self.counts[idx] += 1;
        self.total += 1;
        self.clamped += clamped as u64;
    }

    /// Adds every point of a flat `[x, y, x, y, ...]` slice.
    pub fn add_all(&mut self, samples: &[f64]) {
        for p in samples.chunks_exact(2) {
            self.add([p[0], p[1]]);
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self.clamped += other.clamped;
        Ok(())
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    pub fn to_distribution(&self) -> Result<DiscreteDistribution> {
        if self.total == 0 {
            return Err(Error::InvalidArgument("histogram of zero samples".into()));
        }
        DiscreteDistribution::on_grid(self.grid, self.counts.iter().map(|&c| c as f64).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Histogram {
    pub distribution: DiscreteDistribution,
    pub clamped: u64,
}

/// Normalized histogram of 2D samples given as a flat `[x, y, ...]` slice.
pub fn histogram(samples: &[f64], grid: &Grid2D) -> Result<Histogram> {
    if samples.len() < 2 || samples.len() % 2 != 0 {
        return Err(Error::InvalidArgument("histogram needs at least one 2D sample".into()));
    }
    let mut counts = BinCounts::new(*grid);
    counts.add_all(samples);
    let n = counts.total();
    if counts.clamped() as f64 > CLAMP_WARN_FRACTION * n as f64 {
        log::warn!("{} of {} samples fell outside the histogram grid and were clamped", counts.clamped(), n);
    }
    Ok(Histogram { distribution: counts.to_distribution()?, clamped: counts.clamped() })
}

/// Weighted average `sum_{k=N+1}^{N+n} lambda_k mu_k / Lambda` where
/// `distributions[k]` is the law of iterate `k` and `weights[k]` its weight.
pub fn mixture_average(
    distributions: &[DiscreteDistribution],
    weights: &[f64],
    burn_in: usize,
    n: usize,
) -> Result<DiscreteDistribution> {
    if n == 0 {
        return Err(Error::InvalidArgument("mixture needs n >= 1".into()));
    }
    let end = burn_in + n;
    if distributions.len() <= end || weights.len() <= end {
        return Err(Error::InvalidArgument(format!(
            "mixture over iterates {}..={end} needs {} laws and weights",
            burn_in + 1,
            end + 1
        )));
    }
    let range = burn_in + 1..=end;
    let first = &distributions[burn_in + 1];
    if distributions[range.clone()].iter().any(|d| !d.same_support(first)) {
        return Err(Error::GridMismatch);
    }
    let w = &weights[range.clone()];
    if w.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mixture weights must not all be zero".into()));
    }
    let mut masses = vec![0.0; first.len()];
    for (d, &lam) in distributions[range].iter().zip(w) {
        for (acc, m) in masses.iter_mut().zip(d.masses()) {
            *acc += lam * m;
        }
    }
    let mut out = DiscreteDistribution::from_weights(first.dim(), first.points().to_vec(), masses)?;
    out.grid = first.grid;
    Ok(out)
}

/// Checks `lambda_{k+1} / tau_{k+2} <= lambda_k / tau_{k+1}` for every `k` where
/// both sides are defined; `taus[j]` is `tau_j` and `weights[k]` is `lambda_k`.
pub fn weights_admissible(weights: &[f64], taus: &[f64]) -> bool {
    (0..weights.len().saturating_sub(1))
        .filter(|&k| k + 2 < taus.len())
        .all(|k| weights[k + 1] / taus[k + 2] <= weights[k] / taus[k + 1] * (1.0 + 1e-12))
}

/// Single-pass per-coordinate mean and variance (Welford), mergeable with
/// Chan's parallel update.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn accumulate(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((mu, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *mu;
            *mu += delta / n;
            *m2 += delta * (x - *mu);
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Shape("accumulators of different dimension".into()));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `(mean, unbiased variance)`; needs at least two samples.
    pub fn finalize(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.count < 2 {
            return Err(Error::VarianceUndefined(self.count));
        }
        let denom = (self.count - 1) as f64;
        Ok((self.mean.clone(), self.m2.iter().map(|v| (v / denom).max(0.0)).collect()))
    }
}
