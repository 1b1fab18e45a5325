//! Vector and image containers and the linear operators `K` (and the blur `A`)
//! used by the models.
//!
//! Every operator works on flat row-major slices so the samplers can run on
//! preallocated buffers. [`Image`] and [`PairField`] are thin typed wrappers
//! around those slices.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x1: f64,
    pub x2: f64,
}

impl Vec2 {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Row-major `rows x cols` real image; pixel `(i, j)` lives at `i * cols + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} image needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "image must be non-empty");
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                img.data[i * cols + j] = f(i, j);
            }
        }
        img
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// The two difference planes produced by [`apply_grad2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairField {
    rows: usize,
    cols: usize,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

impl PairField {
    pub fn new(rows: usize, cols: usize, p1: Vec<f64>, p2: Vec<f64>) -> Result<Self> {
        if p1.len() != rows * cols || p2.len() != rows * cols {
            return Err(Error::Shape(format!("pair field planes must both be {rows}x{cols}")));
        }
        Ok(Self { rows, cols, p1, p2 })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, p1: vec![0.0; rows * cols], p2: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Planes concatenated as `[p1, p2]`, the layout the flat operators use.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.p1.len());
        out.extend_from_slice(&self.p1);
        out.extend_from_slice(&self.p2);
        out
    }

    pub fn from_flat(rows: usize, cols: usize, flat: &[f64]) -> Result<Self> {
        let n = rows * cols;
        if flat.len() != 2 * n {
            return Err(Error::Shape(format!("expected {} values, got {}", 2 * n, flat.len())));
        }
        Self::new(rows, cols, flat[..n].to_vec(), flat[n..].to_vec())
    }
}

/// Odd-sized square convolution kernel, centered at its middle entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::Shape(format!(
                "{size}x{size} kernel needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        let c = size / 2;
        if let Some(v) = w.get_mut(c * size + c) {
            *v = 1.0;
        }
        Self::new(size, w)
    }

    /// Sampled Gaussian normalized to sum to one.
    pub fn gaussian(size: usize, std: f64) -> Result<Self> {
        if std <= 0.0 {
            return Err(Error::InvalidArgument("gaussian kernel std must be positive".into()));
        }
        let c = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for a in 0..size {
            for b in 0..size {
                let (da, db) = (a as f64 - c, b as f64 - c);
                w.push((-(da * da + db * db) / (2.0 * std * std)).exp());
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn center(&self) -> isize {
        (self.size / 2) as isize
    }

    /// Kernel embedded in a `rows x cols` image with its center at pixel (0, 0),
    /// wrapped periodically.
    pub fn padded(&self, rows: usize, cols: usize) -> Image {
        let mut out = Image::zeros(rows, cols);
        let c = self.center();
        for a in 0..self.size {
            for b in 0..self.size {
                let i = (a as isize - c).rem_euclid(rows as isize) as usize;
                let j = (b as isize - c).rem_euclid(cols as isize) as usize;
                out.data[i * cols + j] += self.weights[a * self.size + b];
            }
        }
        out
    }
}

/// Kinds of linear operator used in the models.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `R^2 -> R`, `x -> x2 - x1`.
    Difference2d,
    /// Forward differences `R^{n x m} -> R^{2 x n x m}` with zero last row/column.
    Grad2d { rows: usize, cols: usize },
    /// Periodic convolution `R^{n x m} -> R^{n x m}`.
    Conv2d { rows: usize, cols: usize, kernel: Kernel },
}

/// A linear operator together with a certified upper bound on `||K||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    kind: OperatorKind,
    norm_sq_bound: f64,
}

impl LinearOperator {
    pub fn difference2d() -> Self {
        Self { kind: OperatorKind::Difference2d, norm_sq_bound: 2.0 }
    }

    /// The squared norm is the sum of the top eigenvalues of the two
    /// path-graph Laplacians: `2 + 2 cos(pi / n)` per axis of length `n >= 2`.
    pub fn grad2d(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("grad2d needs a non-empty grid".into()));
        }
        let axis = |n: usize| if n < 2 { 0.0 } else { 2.0 + 2.0 * (std::f64::consts::PI / n as f64).cos() };
        // Rounded up by a relative 1e-12 so the bound stays an upper bound.
        let norm_sq = (axis(rows) + axis(cols)) * (1.0 + 1e-12);
        Ok(Self { kind: OperatorKind::Grad2d { rows, cols }, norm_sq_bound: norm_sq })
    }

    /// For circular convolution `||A||^2 = max |k_hat|^2` over the DFT bins.
    pub fn conv2d(rows: usize, cols: usize, kernel: Kernel) -> Result<Self> {
        if kernel.size() > rows.min(cols) {
            return Err(Error::Shape(format!(
                "kernel size {} exceeds image {rows}x{cols}",
                kernel.size()
            )));
        }
        let khat = dft2(&kernel.padded(rows, cols));
        let norm_sq = khat.data.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max) * (1.0 + 1e-12);
        Ok(Self { kind: OperatorKind::Conv2d { rows, cols, kernel }, norm_sq_bound: norm_sq })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn norm_sq_bound(&self) -> f64 {
        self.norm_sq_bound
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            OperatorKind::Difference2d => "difference2d",
            OperatorKind::Grad2d { .. } => "grad2d",
            OperatorKind::Conv2d { .. } => "conv2d",
        }
    }

    pub fn domain_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Difference2d => 2,
            OperatorKind::Grad2d { rows, cols } | OperatorKind::Conv2d { rows, cols, .. } => rows * cols,
        }
    }

    pub fn range_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Difference2d => 1,
            OperatorKind::Grad2d { rows, cols } => 2 * rows * cols,
            OperatorKind::Conv2d { rows, cols, .. } => rows * cols,
        }
    }

    /// `out = K x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.domain_dim());
        debug_assert_eq!(out.len(), self.range_dim());
        match &self.kind {
            OperatorKind::Difference2d => out[0] = x[1] - x[0],
            OperatorKind::Grad2d { rows, cols } => grad2d_flat(*rows, *cols, x, out),
            OperatorKind::Conv2d { rows, cols, kernel } => conv_flat(*rows, *cols, kernel, x, out, false),
        }
    }

    /// `out = K* p`.
    pub fn adjoint(&self, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.range_dim());
        debug_assert_eq!(out.len(), self.domain_dim());
        match &self.kind {
            OperatorKind::Difference2d => {
                out[0] = -p[0];
                out[1] = p[0];
            }
            OperatorKind::Grad2d { rows, cols } => grad2d_adjoint_flat(*rows, *cols, p, out),
            OperatorKind::Conv2d { rows, cols, kernel } => conv_flat(*rows, *cols, kernel, p, out, true),
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.range_dim()];
        self.apply(x, &mut out);
        out
    }

    pub fn adjoint_vec(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.domain_dim()];
        self.adjoint(p, &mut out);
        out
    }
}

pub fn apply_difference(x: Vec2) -> f64 {
    x.x2 - x.x1
}

pub fn adjoint_difference(s: f64) -> Vec2 {
    Vec2::new(-s, s)
}

pub fn apply_grad2d(x: &Image) -> PairField {
    let (rows, cols) = (x.rows, x.cols);
    let mut flat = vec![0.0; 2 * rows * cols];
    grad2d_flat(rows, cols, &x.data, &mut flat);
    PairField::from_flat(rows, cols, &flat).expect("shape is consistent by construction")
}

pub fn adjoint_grad2d(p: &PairField) -> Image {
    let (rows, cols) = (p.rows, p.cols);
    let mut out = vec![0.0; rows * cols];
    grad2d_adjoint_flat(rows, cols, &p.to_flat(), &mut out);
    Image { rows, cols, data: out }
}

fn grad2d_flat(rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    let n = rows * cols;
    let (p1, p2) = out.split_at_mut(n);
    for i in 0..rows {
        let row = i * cols;
        for j in 0..cols {
            let idx = row + j;
            p1[idx] = if i + 1 < rows { x[idx + cols] - x[idx] } else { 0.0 };
            p2[idx] = if j + 1 < cols { x[idx + 1] - x[idx] } else { 0.0 };
        }
    }
}

/// Negative discrete divergence.
fn grad2d_adjoint_flat(rows: usize, cols: usize, p: &[f64], out: &mut [f64]) {
    let n = rows * cols;
    let (p1, p2) = p.split_at(n);
    for i in 0..rows {
        let row = i * cols;
        for j in 0..cols {
            let idx = row + j;
            let mut v = 0.0;
            if i > 0 {
                v += p1[idx - cols];
            }
            if i + 1 < rows {
                v -= p1[idx];
            }
            if j > 0 {
                v += p2[idx - 1];
            }
            if j + 1 < cols {
                v -= p2[idx];
            }
            out[idx] = v;
        }
    }
}

/// Periodic convolution (`adjoint == false`) or correlation (`adjoint == true`).
fn conv_flat(rows: usize, cols: usize, kernel: &Kernel, x: &[f64], out: &mut [f64], adjoint: bool) {
    let s = kernel.size;
    let c = kernel.center();
    let (r, cl) = (rows as isize, cols as isize);
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for a in 0..s {
                let da = a as isize - c;
                let si = if adjoint { i as isize + da } else { i as isize - da }.rem_euclid(r) as usize;
                let krow = &kernel.weights[a * s..(a + 1) * s];
                for (b, &w) in krow.iter().enumerate() {
                    let db = b as isize - c;
                    let sj = if adjoint { j as isize + db } else { j as isize - db }.rem_euclid(cl) as usize;
                    acc += w * x[si * cols + sj];
                }
            }
            out[i * cols + j] = acc;
        }
    }
}

pub fn convolve2d_periodic(x: &Image, kernel: &Kernel) -> Result<Image> {
    if kernel.size() > x.rows.min(x.cols) {
        return Err(Error::Shape(format!(
            "kernel size {} exceeds image {}x{}",
            kernel.size(),
            x.rows,
            x.cols
        )));
    }
    let mut out = vec![0.0; x.len()];
    conv_flat(x.rows, x.cols, kernel, &x.data, &mut out, false);
    Image::new(x.rows, x.cols, out)
}

/// Complex `rows x cols` array in row-major order (DFT coefficients).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }
}

/// Reusable 2-D FFT plans. Forward is unnormalized, inverse carries `1/(nm)`.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.rows * self.cols);
        let (row_plan, col_plan) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        // rows are contiguous
        row_plan.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for j in 0..self.cols {
            for i in 0..self.rows {
                column[i] = buf[i * self.cols + j];
            }
            col_plan.process(&mut column);
            for i in 0..self.rows {
                buf[i * self.cols + j] = column[i];
            }
        }
    }
}

pub fn dft2(x: &Image) -> ComplexImage {
    let fft = Fft2::new(x.rows, x.cols);
    let mut data: Vec<Complex64> = x.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut data);
    ComplexImage { rows: x.rows, cols: x.cols, data }
}

/// Inverse DFT; the imaginary part is discarded.
pub fn idft2(spectrum: &ComplexImage) -> Image {
    let fft = Fft2::new(spectrum.rows, spectrum.cols);
    let mut data = spectrum.data.clone();
    fft.inverse(&mut data);
    Image {
        rows: spectrum.rows,
        cols: spectrum.cols,
        data: data.into_iter().map(|c| c.re).collect(),
    }
}

/// Estimates the largest eigenvalue of `K* K` by power iteration from a fixed
/// pseudo-random start vector.
pub fn power_iteration_norm_sq(op: &LinearOperator, iters: usize, tol: f64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one iteration".into()));
    }
    let d = op.domain_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_4b0b);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut kv = vec![0.0; op.range_dim()];
    let mut w = vec![0.0; d];
    let mut estimate = 0.0;
    let mut relative_change = f64::INFINITY;
    for _ in 0..iters {
        op.apply(&v, &mut kv);
        op.adjoint(&kv, &mut w);
        // Rayleigh quotient <v, K*K v> with ||v|| = 1
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        relative_change = if next != 0.0 { ((next - estimate) / next).abs() } else { 0.0 };
        estimate = next;
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        std::mem::swap(&mut v, &mut w);
        if relative_change < tol {
            return Ok(estimate);
        }
    }
    Err(Error::PowerIteration { iterations: iters, estimate, relative_change })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    norm
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
