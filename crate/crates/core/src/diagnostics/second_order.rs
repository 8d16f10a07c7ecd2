//! Empirical mean field, circular autocovariance via the mean periodogram,
//! radial profile and the stationarity/isotropy flags.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::distortion::FieldArray;
use crate::error::{Error, Result};
use crate::fft;
use crate::numeric::compensated_sum;
use crate::sampler::SampleBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialBin {
    pub l: usize,
    pub c_bar: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Assessment {
    pub statistic: f64,
    pub threshold: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondOrderConfig {
    pub stationarity_threshold: f64,
    pub isotropy_threshold: f64,
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        SecondOrderConfig { stationarity_threshold: 0.1, isotropy_threshold: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderReport {
    pub mean_field: FieldArray,
    /// Ĉ(h) on the lattice torus, indexed like the lattice (lag h ↦ h mod dims).
    pub autocov: Vec<f64>,
    pub radial_profile: Vec<RadialBin>,
    pub stationarity: Assessment,
    pub isotropy: Assessment,
}

impl SecondOrderReport {
    /// Ĉ at an integer lag, wrapped onto the torus.
    pub fn at(&self, lag: &[i64]) -> f64 {
        let dims = self.mean_field.lattice.dims();
        let co: Vec<usize> = lag.iter().zip(dims).map(|(&h, &d)| h.rem_euclid(d as i64) as usize).collect();
        self.autocov[fft::ravel(&co, dims)]
    }
}

/// Mean-field and circular autocovariance normalized by 1/n and 1/T.
pub fn mean_and_autocov(batch: &SampleBatch) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = batch.len();
    if t < 2 {
        return Err(Error::Size(format!("second-order estimation needs T >= 2, got {t}")));
    }
    let lattice = batch.lattice();
    let dims = lattice.dims().to_vec();
    let n = lattice.n();
    let mean: Vec<f64> =
        (0..n).map(|s| compensated_sum(batch.fields.iter().map(|f| f.values[s])) / t as f64).collect();
    let power = batch
        .fields
        .par_iter()
        .map(|f| {
            let mut c: Vec<Complex64> =
                f.values.iter().zip(&mean).map(|(v, m)| Complex64::new(v - m, 0.0)).collect();
            fft::forward(&mut c, &dims);
            c.into_iter().map(|z| z.norm_sqr()).collect::<Vec<f64>>()
        })
        .reduce(
            || vec![0.0; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let mut c: Vec<Complex64> = power.iter().map(|&p| Complex64::new(p / (t * n) as f64, 0.0)).collect();
    fft::inverse(&mut c, &dims);
    Ok((mean, c.into_iter().map(|z| z.re).collect()))
}

fn min_image(co: &[usize], dims: &[usize]) -> Vec<i64> {
    co.iter()
        .zip(dims)
        .map(|(&c, &d)| if 2 * c <= d { c as i64 } else { c as i64 - d as i64 })
        .collect()
}

/// C̄(l) over annuli ‖h‖ ∈ [l, l+1) of minimum-image lags.
pub fn radial_profile(autocov: &[f64], dims: &[usize]) -> Vec<RadialBin> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let mut co = vec![0; dims.len()];
    for (i, &c) in autocov.iter().enumerate() {
        fft::unravel(i, dims, &mut co);
        let h = min_image(&co, dims);
        let r = (h.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt();
        let l = r.floor() as usize;
        if sums.len() <= l {
            sums.resize(l + 1, (0.0, 0));
        }
        sums[l].0 += c;
        sums[l].1 += 1;
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, (_, k))| *k > 0)
        .map(|(l, (s, k))| RadialBin { l, c_bar: s / k as f64, count: k })
        .collect()
}

fn directions(ndim: usize) -> Vec<Vec<i64>> {
    if ndim == 2 {
        vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, -1]]
    } else {
        vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 1]]
    }
}

pub fn empirical_second_order(batch: &SampleBatch, cfg: &SecondOrderConfig) -> Result<SecondOrderReport> {
    let (mean, autocov) = mean_and_autocov(batch)?;
    let lattice = batch.lattice().clone();
    let dims = lattice.dims().to_vec();
    let t = batch.len() as f64;
    let radial = radial_profile(&autocov, &dims);
    let c0 = autocov[0];

    // spatial spread of μ̂ beyond the sampling noise Ĉ(0)/(T−1) it carries
    let n = mean.len() as f64;
    let mbar = compensated_sum(mean.iter().copied()) / n;
    let spread = compensated_sum(mean.iter().map(|m| (m - mbar) * (m - mbar))) / n;
    let excess = (spread - c0 / (t - 1.0)).max(0.0);
    let pooled = (c0 * t / (t - 1.0)).max(0.0);
    let stat = if pooled > 0.0 {
        (excess / pooled).sqrt()
    } else if excess > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let stationarity =
        Assessment { statistic: stat, threshold: cfg.stationarity_threshold, consistent: stat <= cfg.stationarity_threshold };

    let mut dev: f64 = 0.0;
    for dir in directions(dims.len()) {
        let reach = dims
            .iter()
            .zip(&dir)
            .filter(|(_, &s)| s != 0)
            .map(|(&d, _)| d / 2)
            .min()
            .unwrap_or(0);
        let norm = (dir.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt();
        for m in 1..=reach as i64 {
            let lag: Vec<i64> = dir.iter().map(|&s| s * m).collect();
            let co: Vec<usize> = lag.iter().zip(&dims).map(|(&h, &d)| h.rem_euclid(d as i64) as usize).collect();
            let c = autocov[fft::ravel(&co, &dims)];
            let l = (m as f64 * norm).floor() as usize;
            if let Some(b) = radial.iter().find(|b| b.l == l) {
                dev = dev.max((c - b.c_bar).abs());
            }
        }
    }
    let iso = if c0 > 0.0 { dev / c0 } else { 0.0 };
    let isotropy = Assessment { statistic: iso, threshold: cfg.isotropy_threshold, consistent: iso <= cfg.isotropy_threshold };

    Ok(SecondOrderReport {
        mean_field: FieldArray { lattice, values: mean },
        autocov,
        radial_profile: radial,
        stationarity,
        isotropy,
    })
}

pub const RADIAL_CSV_HEADER: &str = "l,C_bar,count";

pub fn radial_profile_csv(bins: &[RadialBin]) -> String {
    let mut s = String::from(RADIAL_CSV_HEADER);
    s.push('\n');
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.l, b.c_bar, b.count));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Lattice;

    #[test]
    fn constant_batch() {
        let l = Lattice::new(vec![6, 5]).unwrap();
        let b = SampleBatch::new(vec![FieldArray::constant(l.clone(), 3.5); 4], 0).unwrap();
        let r = empirical_second_order(&b, &SecondOrderConfig::default()).unwrap();
        assert!(r.mean_field.values.iter().all(|&m| m == 3.5));
        assert!(r.autocov.iter().all(|&c| c.abs() < 1e-15));
        assert!(r.stationarity.consistent && r.isotropy.consistent);
    }

    #[test]
    fn single_realization_is_rejected() {
        let l = Lattice::new(vec![4, 4]).unwrap();
        let b = SampleBatch::new(vec![FieldArray::constant(l, 1.0)], 0).unwrap();
        assert!(matches!(empirical_second_order(&b, &SecondOrderConfig::default()), Err(Error::Size(_))));
    }

    #[test]
    fn radial_bins_partition_lags() {
        let dims = [7, 6];
        let bins = radial_profile(&vec![1.0; 42], &dims);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 42);
        assert_eq!(bins[0], RadialBin { l: 0, c_bar: 1.0, count: 1 });
        // ‖h‖ ∈ [1,2): the four axis neighbours and the four diagonals
        assert_eq!(bins[1].count, 8);
    }

    #[test]
    fn lag_zero_is_mean_site_variance() {
        let l = Lattice::new(vec![3, 4]).unwrap();
        let fields: Vec<FieldArray> = (0..5)
            .map(|t| FieldArray::new(l.clone(), (0..12).map(|s| ((s * 7 + t * 3) % 5) as f64).collect()).unwrap())
            .collect();
        let b = SampleBatch::new(fields, 0).unwrap();
        let (mean, c) = mean_and_autocov(&b).unwrap();
        let mut v = 0.0;
        for s in 0..12 {
            for f in &b.fields {
                v += (f.values[s] - mean[s]).powi(2);
            }
        }
        v /= 60.0;
        assert!((c[0] - v).abs() <= 1e-9 * v);
    }
}
