//! Ground-truth phantoms and noisy observations.

use serde::{Deserialize, Serialize};
use subgrad_langevin::linops::convolve2d_periodic;
use subgrad_langevin::samplers::{NoiseSource, RngNoise};
use subgrad_langevin::{Image, Kernel};

use crate::error::{CliError, CliResult};

/// RNG stream for observation noise, disjoint from the chain streams.
pub const DATA_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Denoise,
    Deconv,
}

/// `y = u + sigma n` or `y = k * u + sigma n` with periodic convolution.
pub fn make_synthetic_data(
    kind: SyntheticKind,
    truth: &Image,
    sigma: f64,
    kernel: Option<&Kernel>,
    seed: u64,
) -> CliResult<Image> {
    if !(sigma >= 0.0) {
        return Err(CliError::Config(format!("noise level must be >= 0, got {sigma}")));
    }
    let mut y = match kind {
        SyntheticKind::Denoise => truth.clone(),
        SyntheticKind::Deconv => {
            let k = kernel.ok_or_else(|| CliError::Config("deconvolution data needs a kernel".into()))?;
            convolve2d_periodic(truth, k)?
        }
    };
    let mut noise = vec![0.0; y.len()];
    RngNoise::for_chain(seed, DATA_STREAM).fill_normal(&mut noise);
    for (v, n) in y.data_mut().iter_mut().zip(&noise) {
        *v += sigma * n;
    }
    Ok(y)
}

/// Piecewise-constant test image in `[0, 1]`: a background, a rectangle, a
/// disc and a small bright square.
pub fn phantom(rows: usize, cols: usize) -> Image {
    let (h, w) = (rows as f64, cols as f64);
    Image::from_fn(rows, cols, |i, j| {
        let (y, x) = ((i as f64 + 0.5) / h, (j as f64 + 0.5) / w);
        let in_rect = (0.12..0.55).contains(&y) && (0.1..0.45).contains(&x);
        let in_disc = (y - 0.62).powi(2) + (x - 0.66).powi(2) < 0.22f64.powi(2);
        let in_square = (0.72..0.88).contains(&y) && (0.14..0.3).contains(&x);
        if in_square {
            0.95
        } else if in_disc {
            0.55
        } else if in_rect {
            0.8
        } else {
            0.15
        }
    })
}

/// Pixel classes of a piecewise-constant image.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMasks {
    /// Pixels with a 4-neighbour of a different value.
    pub edge: Vec<bool>,
    /// Pixels whose whole `(2 margin + 1)^2` window lies inside the image and is constant.
    pub flat: Vec<bool>,
}

pub fn edge_masks(truth: &Image, margin: usize) -> EdgeMasks {
    let (rows, cols) = (truth.rows(), truth.cols());
    let differs = |i: usize, j: usize, a: usize, b: usize| (truth.get(i, j) - truth.get(a, b)).abs() > 1e-12;
    let mut edge = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            edge[i * cols + j] = (i > 0 && differs(i, j, i - 1, j))
                || (i + 1 < rows && differs(i, j, i + 1, j))
                || (j > 0 && differs(i, j, i, j - 1))
                || (j + 1 < cols && differs(i, j, i, j + 1));
        }
    }
    let mut flat = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let inside = i >= margin && j >= margin && i + margin < rows && j + margin < cols;
            flat[i * cols + j] = inside
                && (i - margin..=i + margin).all(|a| (j - margin..=j + margin).all(|b| !differs(i, j, a, b)));
        }
    }
    EdgeMasks { edge, flat }
}

/// Mean of `values` over the pixels selected by `mask`.
pub fn masked_mean(values: &[f64], mask: &[bool]) -> Option<f64> {
    let (sum, n) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_denoise_is_identity() {
        let u = phantom(16, 16);
        assert_eq!(make_synthetic_data(SyntheticKind::Denoise, &u, 0.0, None, 3).unwrap(), u);
    }

    #[test]
    fn zero_noise_delta_deconv_is_identity() {
        let u = phantom(16, 12);
        let k = Kernel::delta(5).unwrap();
        let y = make_synthetic_data(SyntheticKind::Deconv, &u, 0.0, Some(&k), 3).unwrap();
        for (a, b) in y.data().iter().zip(u.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_level_matches_sigma() {
        let u = phantom(64, 64);
        let sigma = 0.05;
        let y = make_synthetic_data(SyntheticKind::Denoise, &u, sigma, None, 11).unwrap();
        let r: Vec<f64> = y.data().iter().zip(u.data()).map(|(a, b)| a - b).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn deterministic_for_seed() {
        let u = phantom(8, 8);
        let a = make_synthetic_data(SyntheticKind::Denoise, &u, 0.1, None, 5).unwrap();
        let b = make_synthetic_data(SyntheticKind::Denoise, &u, 0.1, None, 5).unwrap();
        let c = make_synthetic_data(SyntheticKind::Denoise, &u, 0.1, None, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn deconv_without_kernel_fails() {
        assert!(make_synthetic_data(SyntheticKind::Deconv, &phantom(4, 4), 0.0, None, 1).is_err());
        assert!(make_synthetic_data(SyntheticKind::Denoise, &phantom(4, 4), -1.0, None, 1).is_err());
    }

    #[test]
    fn phantom_is_piecewise_constant_in_unit_range() {
        let u = phantom(64, 64);
        let mut levels: Vec<f64> = u.data().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert_eq!(levels, vec![0.15, 0.55, 0.8, 0.95]);
    }

    #[test]
    fn masks_split_edges_and_interior() {
        let u = Image::from_fn(6, 6, |_, j| if j < 3 { 0.0 } else { 1.0 });
        let m = edge_masks(&u, 1);
        for i in 0..6 {
            assert_eq!(&m.edge[i * 6..i * 6 + 6], &[false, false, true, true, false, false]);
            let flat = if i == 0 || i == 5 { [false; 6] } else { [false, true, false, false, true, false] };
            assert_eq!(&m.flat[i * 6..i * 6 + 6], &flat);
        }
        assert_eq!(masked_mean(&[1.0, 2.0, 3.0], &[true, false, true]), Some(2.0));
        assert_eq!(masked_mean(&[1.0], &[false]), None);
    }
}
