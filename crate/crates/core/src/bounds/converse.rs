use crate::error::{Error, Result};
use crate::field::PiecewiseField;
use crate::waterfill::solve_water_level;

use super::TiltedDensityModel;

/// Which γ values the converse maximizes over.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaPolicy {
    /// {½ ln n} ∪ {0.5, 1, 2, 4, 8}.
    Default,
    Fixed(Vec<f64>),
}

impl GammaPolicy {
    pub fn gammas(&self, n: usize) -> Vec<f64> {
        match self {
            GammaPolicy::Default => {
                let mut g = vec![0.5 * (n as f64).ln(), 0.5, 1.0, 2.0, 4.0, 8.0];
                g.retain(|x| *x > 0.0);
                g
            }
            GammaPolicy::Fixed(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversePoint {
    pub log_m: f64,
    /// Lower bound on the excess-distortion probability, in [0,1].
    pub bound: f64,
    /// Maximizing γ.
    pub gamma: f64,
    pub se: f64,
}

/// Empirical tail law of ȷ: sorted draws.
#[derive(Debug, Clone)]
pub struct TailSample {
    sorted: Vec<f64>,
}

impl TailSample {
    pub fn new(mut draws: Vec<f64>) -> Self {
        draws.sort_by(|a, b| a.total_cmp(b));
        TailSample { sorted: draws }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of draws ≥ x.
    pub fn tail(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v < x);
        (self.sorted.len() - below) as f64 / self.sorted.len() as f64
    }

    pub fn bound(&self, log_m: f64, gammas: &[f64]) -> ConversePoint {
        let n = self.len() as f64;
        let mut best = ConversePoint { log_m, bound: 0.0, gamma: gammas.first().copied().unwrap_or(0.0), se: 0.0 };
        let mut best_raw = f64::NEG_INFINITY;
        for &g in gammas {
            let p = self.tail(log_m + g);
            let raw = p - (-g).exp();
            if raw > best_raw {
                best_raw = raw;
                best = ConversePoint { log_m, bound: raw.clamp(0.0, 1.0), gamma: g, se: (p * (1.0 - p) / n).sqrt() };
            }
        }
        best
    }

    /// Smallest log M at which the bound is ≤ ε: max over γ of the
    /// (1 − ε − e^{−γ}) empirical quantile minus γ.
    pub fn min_log_m(&self, epsilon: f64, gammas: &[f64]) -> f64 {
        let n = self.sorted.len();
        let mut best = f64::NEG_INFINITY;
        for &g in gammas {
            let allowed = epsilon + (-g).exp();
            if allowed >= 1.0 {
                continue;
            }
            let c = (allowed * n as f64).floor() as usize;
            if c >= n {
                continue;
            }
            best = best.max(self.sorted[n - c - 1] - g);
        }
        best
    }
}

/// Lower bounds on the excess-distortion probability for each log M.
pub fn converse_bound(
    field: &PiecewiseField,
    d: f64,
    log_m_grid: &[f64],
    policy: &GammaPolicy,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<ConversePoint>> {
    if mc_samples < 10_000 {
        return Err(Error::Config(format!("converse needs at least 10^4 samples, got {mc_samples}")));
    }
    let sol = solve_water_level(field, d)?;
    let model = TiltedDensityModel::new(field, &sol);
    let tail = TailSample::new(model.draws(mc_samples, seed, false));
    let gammas = policy.gammas(field.n());
    Ok(log_m_grid.iter().map(|&l| tail.bound(l, &gammas)).collect())
}
