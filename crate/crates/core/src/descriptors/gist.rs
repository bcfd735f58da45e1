//! Gist: grid-pooled magnitudes of a frequency-domain Gabor filter bank.
//!
//! The transfer functions follow the Oliva–Torralba construction: filter `j`
//! of a scale with `o` orientations peaks at radial frequency
//! `0.3 / 1.85^scale` cycles per pixel and orientation `π·j/o`, with Gaussian
//! fall-off in radial frequency and angle.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{require_square, DescriptorError, DescriptorId, FeatureVector, Result};
use crate::dataset::ImagePlane;

/// Fraction of each image side tapered by the raised-cosine window.
const WINDOW_TAPER: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaborBankConfig {
    /// Orientation count for each scale, finest scale first.
    pub orientations_per_scale: Vec<usize>,
    /// Cells per side of the spatial pooling grid.
    pub grid: usize,
}

impl Default for GaborBankConfig {
    fn default() -> Self {
        Self {
            orientations_per_scale: vec![8, 8, 8, 8],
            grid: 4,
        }
    }
}

impl GaborBankConfig {
    pub fn scales(&self) -> usize {
        self.orientations_per_scale.len()
    }

    pub fn filters(&self) -> usize {
        self.orientations_per_scale.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.filters() * self.grid * self.grid
    }

    fn validate(&self) -> Result<()> {
        if self.filters() == 0 || self.orientations_per_scale.contains(&0) {
            return Err(DescriptorError::InvalidConfig("gist filter bank is empty".into()));
        }
        if self.grid == 0 {
            return Err(DescriptorError::InvalidConfig("gist grid must be >= 1".into()));
        }
        Ok(())
    }

    /// `(scale, orientation index, orientation count)` for each filter in bank order.
    pub fn filter_layout(&self) -> Vec<(usize, usize, usize)> {
        self.orientations_per_scale
            .iter()
            .enumerate()
            .flat_map(|(s, &o)| (0..o).map(move |j| (s, j, o)))
            .collect()
    }
}

/// Precomputed transfer functions and FFT plans for one image side.
#[derive(Clone)]
pub struct GaborBank {
    config: GaborBankConfig,
    side: usize,
    transfers: Vec<Vec<f64>>,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GaborBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaborBank")
            .field("config", &self.config)
            .field("side", &self.side)
            .finish_non_exhaustive()
    }
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    if a < -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn taper(i: usize, n: usize) -> f64 {
    let width = (n as f64 * WINDOW_TAPER).max(1.0);
    let d = (i as f64 + 0.5).min(n as f64 - i as f64 - 0.5);
    if d >= width {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * d / width).cos()
    }
}

impl GaborBank {
    pub fn new(config: &GaborBankConfig, side: usize) -> Result<Self> {
        config.validate()?;
        if !side.is_power_of_two() || side < 2 {
            return Err(DescriptorError::NotPowerOfTwo(side));
        }
        if side < config.grid {
            return Err(DescriptorError::TooSmall {
                side,
                reason: format!("gist grid of {} cells", config.grid),
            });
        }
        let n = side;
        let transfers = config
            .filter_layout()
            .into_iter()
            .map(|(s, j, o)| {
                let (fr0, theta, angular) = Self::params(s, j, o);
                let mut g = vec![0.0; n * n];
                for ky in 0..n {
                    let fy = signed_frequency(ky, n);
                    for kx in 0..n {
                        let fx = signed_frequency(kx, n);
                        let fr = (fx * fx + fy * fy).sqrt() / n as f64;
                        let tr = wrap_angle(fy.atan2(fx) + theta);
                        g[ky * n + kx] = (-10.0 * 0.35 * (fr / fr0 - 1.0).powi(2)
                            - 2.0 * angular * std::f64::consts::PI * tr * tr)
                            .exp();
                    }
                }
                g
            })
            .collect();
        let window = (0..n * n).map(|i| taper(i / n, n) * taper(i % n, n)).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            config: config.clone(),
            side,
            transfers,
            window,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    /// (peak radial frequency in cycles/pixel, orientation offset θ, angular sharpness).
    fn params(scale: usize, j: usize, orientations: usize) -> (f64, f64, f64) {
        let fr0 = 0.3 / 1.85f64.powi(scale as i32);
        let angular = 16.0 * (orientations * orientations) as f64 / (32.0 * 32.0);
        let theta = std::f64::consts::PI * j as f64 / orientations as f64;
        (fr0, theta, angular)
    }

    /// Frequency `(f_x, f_y)` in cycles per image at which filter `index` peaks.
    pub fn peak_frequency(&self, index: usize) -> (f64, f64) {
        let (s, j, o) = self.config.filter_layout()[index];
        let (fr0, theta, _) = Self::params(s, j, o);
        let r = fr0 * self.side as f64;
        (r * (-theta).cos(), r * (-theta).sin())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn config(&self) -> &GaborBankConfig {
        &self.config
    }

    pub fn transfer(&self, index: usize) -> &[f64] {
        &self.transfers[index]
    }

    fn fft2(&self, data: &mut [Complex<f64>], inverse: bool) {
        let n = self.side;
        let plan = if inverse { &self.inverse } else { &self.forward };
        plan.process(data);
        transpose(data, n);
        plan.process(data);
        transpose(data, n);
        if inverse {
            let scale = 1.0 / (n * n) as f64;
            data.iter_mut().for_each(|c| *c *= scale);
        }
    }

    /// Mean response magnitude of every filter over every grid cell,
    /// filter-major then cells row-major.
    pub fn apply(&self, image: &ImagePlane) -> Result<FeatureVector> {
        let side = require_square(image)?;
        if side != self.side {
            return Err(DescriptorError::InvalidConfig(format!(
                "gabor bank built for side {}, image has side {side}",
                self.side
            )));
        }
        let n = side;
        let luma = image.luma();
        let mean = luma.iter().sum::<f64>() / (n * n) as f64;
        let mut spectrum: Vec<Complex<f64>> = luma
            .iter()
            .zip(&self.window)
            .map(|(&v, &w)| Complex::new((v - mean) * w, 0.0))
            .collect();
        self.fft2(&mut spectrum, false);
        let grid = self.config.grid;
        let mut values = Vec::with_capacity(self.config.dim());
        let mut response = vec![Complex::new(0.0, 0.0); n * n];
        for g in &self.transfers {
            for ((r, s), &h) in response.iter_mut().zip(&spectrum).zip(g) {
                *r = s * h;
            }
            self.fft2(&mut response, true);
            for cy in 0..grid {
                let (y0, y1) = (cy * n / grid, (cy + 1) * n / grid);
                for cx in 0..grid {
                    let (x0, x1) = (cx * n / grid, (cx + 1) * n / grid);
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        sum += response[y * n + x0..y * n + x1].iter().map(|c| c.norm()).sum::<f64>();
                    }
                    values.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        Ok(FeatureVector::new(DescriptorId::Gist, values))
    }
}

fn transpose(data: &mut [Complex<f64>], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// One-shot gist evaluation; builds the filter bank for the image side.
pub fn gist(image: &ImagePlane, config: &GaborBankConfig) -> Result<FeatureVector> {
    let side = require_square(image)?;
    GaborBank::new(config, side)?.apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grating(n: usize, fx: f64, fy: f64) -> ImagePlane {
        let luma = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64, (i % n) as f64);
                0.5 + 0.5 * (2.0 * std::f64::consts::PI * (fx * x + fy * y) / n as f64).cos()
            })
            .collect();
        ImagePlane::from_luma(n, luma).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_gist() {
        let img = ImagePlane::from_luma(64, vec![0.0; 64 * 64]).unwrap();
        let fv = gist(&img, &GaborBankConfig::default()).unwrap();
        assert_eq!(fv.dim(), 512);
        assert!(fv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transfer_peaks_at_reported_frequency() {
        let bank = GaborBank::new(&GaborBankConfig::default(), 128).unwrap();
        let n = 128usize;
        for idx in [0, 3, 10, 21] {
            let (fx, fy) = bank.peak_frequency(idx);
            let kx = (fx.round() as i64).rem_euclid(n as i64) as usize;
            let ky = (fy.round() as i64).rem_euclid(n as i64) as usize;
            let g = bank.transfer(idx);
            let peak = g[ky * n + kx];
            assert!(peak > 0.9, "filter {idx} peak value {peak}");
            // opposite half-plane gets almost nothing
            let okx = (n - kx) % n;
            let oky = (n - ky) % n;
            assert!(g[oky * n + okx] < 1e-3);
        }
    }

    #[test]
    fn matched_orientation_dominates_grating_response() {
        let n = 128;
        let cfg = GaborBankConfig::default();
        let bank = GaborBank::new(&cfg, n).unwrap();
        let cells = cfg.grid * cfg.grid;
        let scale = 1;
        let first = cfg.orientations_per_scale[..scale].iter().sum::<usize>();
        let orients = cfg.orientations_per_scale[scale];
        for j in 0..orients {
            let (fx, fy) = bank.peak_frequency(first + j);
            let fv = bank.apply(&grating(n, fx.round(), fy.round())).unwrap();
            let mean = |f: usize| fv.values[f * cells..(f + 1) * cells].iter().sum::<f64>() / cells as f64;
            let matched = mean(first + j);
            for other in (0..orients).filter(|&o| o != j) {
                assert!(matched > mean(first + other), "orientation {j} vs {other}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = ImagePlane::from_luma(48, vec![0.0; 48 * 48]).unwrap();
        assert!(matches!(gist(&img, &GaborBankConfig::default()), Err(DescriptorError::NotPowerOfTwo(48))));
        let empty = GaborBankConfig { orientations_per_scale: vec![], grid: 4 };
        let img = ImagePlane::from_luma(32, vec![0.0; 32 * 32]).unwrap();
        assert!(gist(&img, &empty).is_err());
    }
}
