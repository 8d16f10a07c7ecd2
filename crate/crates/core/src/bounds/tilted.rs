use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::field::PiecewiseField;
use crate::rng;
use crate::waterfill::{is_active, WaterfillSolution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveMode {
    pub region: usize,
    pub mode: usize,
    pub lambda: f64,
}

/// Distortion-tilted information density restricted to the active modes:
/// ȷ = Σ_A [½ ln(λ/θ*) + ½(Y²/λ − 1)], Y ~ N(0, λ) independent.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedDensityModel {
    pub theta_star: f64,
    pub active_modes: Vec<ActiveMode>,
    /// Σ_A ½ ln(λ/θ*) in nats.
    pub constant_part: f64,
}

impl TiltedDensityModel {
    pub fn from_spectra(spectra: &[Vec<f64>], theta_star: f64) -> Self {
        let mut active_modes = Vec::new();
        for (r, s) in spectra.iter().enumerate() {
            for (i, &l) in s.iter().enumerate() {
                if is_active(l, theta_star) {
                    active_modes.push(ActiveMode { region: r, mode: i, lambda: l });
                }
            }
        }
        let constant_part = crate::numeric::compensated_sum(
            active_modes.iter().map(|m| 0.5 * (m.lambda / theta_star).ln()),
        );
        TiltedDensityModel { theta_star, active_modes, constant_part }
    }

    pub fn new(field: &PiecewiseField, solution: &WaterfillSolution) -> Self {
        let spectra: Vec<Vec<f64>> = field.regions.iter().map(|r| r.spectrum.clone()).collect();
        Self::from_spectra(&spectra, solution.theta_star)
    }

    /// ȷ evaluated at given decorrelated coordinates (one per active mode).
    pub fn value_at(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.active_modes.len());
        self.constant_part
            + self
                .active_modes
                .iter()
                .zip(y)
                .map(|(m, &y)| 0.5 * (y * y / m.lambda - 1.0))
                .sum::<f64>()
    }

    /// Draws ȷ mode by mode.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut s = 0.0;
        for _ in &self.active_modes {
            let z: f64 = StandardNormal.sample(rng);
            s += 0.5 * (z * z - 1.0);
        }
        self.constant_part + s
    }

    /// Same law as [`sample`](Self::sample) via ½(χ²_|A| − |A|).
    pub fn sample_chi2<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.active_modes.len();
        if a == 0 {
            return self.constant_part;
        }
        let chi = ChiSquared::new(a as f64).expect("positive degrees of freedom");
        self.constant_part + 0.5 * (chi.sample(rng) - a as f64)
    }

    /// `count` draws, reproducible for a given seed regardless of thread count.
    pub fn draws(&self, count: usize, seed: u64, per_mode: bool) -> Vec<f64> {
        let tag = rng::tag(if per_mode { "tilted-per-mode" } else { "tilted-chi2" });
        let chunks: Vec<Vec<f64>> = rng::blocks(count)
            .into_par_iter()
            .map(|(b, len)| {
                let mut r = rng::stream(seed, tag, b);
                (0..len)
                    .map(|_| if per_mode { self.sample(&mut r) } else { self.sample_chi2(&mut r) })
                    .collect()
            })
            .collect();
        chunks.concat()
    }
}

/// One draw of the tilted information density.
pub fn tilted_density_sample<R: Rng + ?Sized>(model: &TiltedDensityModel, rng: &mut R) -> f64 {
    model.sample(rng)
}
