//! Reverse water-filling across regions, dispersion, and the second-order
//! approximation of the minimal codebook size.

use rayon::prelude::*;
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::field::PiecewiseField;
use crate::numeric::compensated_sum;

/// Relative distance to an eigenvalue below which the water level counts as a kink.
pub const KINK_TOL: f64 = 1e-9;
const MAX_ITER: usize = 200;

/// Q(y) = ½ erfc(y/√2).
pub fn q_function(y: f64) -> f64 {
    0.5 * erfc(y / std::f64::consts::SQRT_2)
}

fn normal_pdf(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Q⁻¹(ε), accurate to |Q(y) − ε| ≤ 1e-12.
pub fn q_inverse(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} not in (0,1)")));
    }
    if epsilon == 0.5 {
        return Ok(0.0);
    }
    let mut y = std::f64::consts::SQRT_2 * erfc_inv(2.0 * epsilon);
    for _ in 0..8 {
        let step = (q_function(y) - epsilon) / normal_pdf(y);
        if !step.is_finite() {
            break;
        }
        y += step;
        if step.abs() < 1e-15 * y.abs().max(1.0) {
            break;
        }
    }
    Ok(y)
}

fn check_level(spectrum: &[f64], theta: f64) -> Result<()> {
    if spectrum.is_empty() {
        return Err(Error::Domain("empty spectrum".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("water level {theta} must be positive")));
    }
    Ok(())
}

/// D_r(θ) = (1/n_r) Σ min(λ, θ).
pub fn region_distortion_at_level(spectrum: &[f64], theta: f64) -> Result<f64> {
    check_level(spectrum, theta)?;
    Ok(compensated_sum(spectrum.iter().map(|&l| l.min(theta))) / spectrum.len() as f64)
}

/// R_r(θ) = (1/2n_r) Σ [ln(λ/θ)]⁺ in nats per site.
pub fn region_rate_at_level(spectrum: &[f64], theta: f64) -> Result<f64> {
    check_level(spectrum, theta)?;
    let s = compensated_sum(spectrum.iter().filter(|&&l| l > theta).map(|&l| (l / theta).ln()));
    Ok(0.5 * s / spectrum.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// The water level sits on an eigenvalue; that mode is counted inactive.
    SpectralKink { region: usize, mode: usize, lambda: f64 },
    /// No active modes, so the dispersion term vanishes.
    ZeroDispersion,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::SpectralKink { region, mode, lambda } => {
                write!(f, "spectral kink: water level equals eigenvalue {lambda} (region {region}, mode {mode})")
            }
            Warning::ZeroDispersion => write!(f, "no active modes; dispersion term set to 0"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionAllocation {
    pub weight: f64,
    /// D_r(θ*).
    pub distortion: f64,
    /// R_r(θ*) in nats per site.
    pub rate: f64,
    pub active_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillSolution {
    pub theta_star: f64,
    pub per_region: Vec<RegionAllocation>,
    /// Nats per site.
    pub rate_pw: f64,
    pub dispersion: f64,
    pub total_d: f64,
    pub warnings: Vec<Warning>,
}

impl WaterfillSolution {
    pub fn has_kink(&self) -> bool {
        self.warnings.iter().any(|w| matches!(w, Warning::SpectralKink { .. }))
    }

    pub fn rate_bits(&self) -> f64 {
        self.rate_pw / std::f64::consts::LN_2
    }

    pub fn active_count(&self) -> usize {
        self.per_region.iter().map(|r| r.active_count).sum()
    }
}

/// λ counts as active when it exceeds θ by more than the kink tolerance.
pub fn is_active(lambda: f64, theta: f64) -> bool {
    lambda > theta && (lambda - theta) > KINK_TOL * lambda
}

/// Σ w_r mean(λ_r): the largest meaningful distortion.
pub fn max_distortion(spectra: &[Vec<f64>], weights: &[f64]) -> f64 {
    compensated_sum(
        spectra
            .iter()
            .zip(weights)
            .map(|(s, w)| w * compensated_sum(s.iter().copied()) / s.len() as f64),
    )
}

fn total_distortion(spectra: &[Vec<f64>], weights: &[f64], theta: f64) -> f64 {
    compensated_sum(spectra.iter().zip(weights).map(|(s, w)| {
        w * compensated_sum(s.iter().map(|&l| l.min(theta))) / s.len() as f64
    }))
}

/// Water level for explicit spectra and weights.
pub fn solve_spectra(spectra: &[Vec<f64>], weights: &[f64], d: f64) -> Result<WaterfillSolution> {
    if spectra.is_empty() || spectra.len() != weights.len() {
        return Err(Error::Domain("need one weight per nonempty spectrum".into()));
    }
    if spectra.iter().any(|s| s.is_empty()) {
        return Err(Error::Domain("empty spectrum".into()));
    }
    let dmax = max_distortion(spectra, weights);
    if !(d > 0.0 && d < dmax) {
        return Err(Error::DistortionOutOfRange { d, max: dmax });
    }
    let lmax = spectra.iter().flatten().copied().fold(0.0, f64::max);
    let minpos = spectra.iter().flatten().copied().filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min);
    let mut lo = (minpos * 1e-6).min(d);
    let mut hi = lmax;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total_distortion(spectra, weights, mid) < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    // F is linear between eigenvalues: solve it exactly on the final segment
    let (mut fixed, mut slope) = (0.0, 0.0);
    for (s, w) in spectra.iter().zip(weights) {
        let n = s.len() as f64;
        for &l in s {
            if l <= theta {
                fixed += w * l / n;
            } else {
                slope += w / n;
            }
        }
    }
    if slope > 0.0 {
        let exact = (d - fixed) / slope;
        if exact >= lo && exact <= hi {
            let err_exact = (total_distortion(spectra, weights, exact) - d).abs();
            let err_mid = (total_distortion(spectra, weights, theta) - d).abs();
            if err_exact <= err_mid {
                theta = exact;
            }
        }
    }
    let mut warnings = Vec::new();
    let mut per_region = Vec::with_capacity(spectra.len());
    for (r, (s, &w)) in spectra.iter().zip(weights).enumerate() {
        let mut active = 0;
        for (i, &l) in s.iter().enumerate() {
            if l > 0.0 && (theta - l).abs() <= KINK_TOL * l {
                warnings.push(Warning::SpectralKink { region: r, mode: i, lambda: l });
            }
            if is_active(l, theta) {
                active += 1;
            }
        }
        per_region.push(RegionAllocation {
            weight: w,
            distortion: region_distortion_at_level(s, theta)?,
            rate: region_rate_at_level(s, theta)?,
            active_count: active,
        });
    }
    let rate_pw = compensated_sum(per_region.iter().map(|r| r.weight * r.rate));
    let total_d = compensated_sum(per_region.iter().map(|r| r.weight * r.distortion));
    let dispersion = 0.5 * per_region.iter().map(|r| r.active_count).sum::<usize>() as f64;
    Ok(WaterfillSolution { theta_star: theta, per_region, rate_pw, dispersion, total_d, warnings })
}

pub fn solve_water_level(field: &PiecewiseField, d: f64) -> Result<WaterfillSolution> {
    let spectra: Vec<Vec<f64>> = field.regions.iter().map(|r| r.spectrum.clone()).collect();
    solve_spectra(&spectra, &field.weights(), d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispersion {
    pub total: f64,
    pub per_region: Vec<f64>,
    pub warnings: Vec<Warning>,
}

/// V = ½ Σ_r #{i: λ_{r,i} > θ*}, with per-region contributions.
pub fn dispersion(field: &PiecewiseField, solution: &WaterfillSolution) -> Dispersion {
    let per_region: Vec<f64> = field
        .regions
        .iter()
        .map(|r| 0.5 * r.spectrum.iter().filter(|&&l| is_active(l, solution.theta_star)).count() as f64)
        .collect();
    let mut warnings: Vec<Warning> =
        solution.warnings.iter().filter(|w| matches!(w, Warning::SpectralKink { .. })).cloned().collect();
    let total = per_region.iter().sum();
    if total == 0.0 {
        warnings.push(Warning::ZeroDispersion);
    }
    Dispersion { total, per_region, warnings }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrder {
    /// n R_pw + √V Q⁻¹(ε) in nats.
    pub log_m: f64,
    pub rate_nats: f64,
    pub rate_bits: f64,
    pub warnings: Vec<Warning>,
}

/// Second-order approximation from an existing solution on `n` sites.
pub fn second_order_from(n: usize, solution: &WaterfillSolution, epsilon: f64) -> Result<SecondOrder> {
    let q = q_inverse(epsilon)?;
    let mut warnings = solution.warnings.clone();
    let corr = if solution.dispersion > 0.0 {
        solution.dispersion.sqrt() * q
    } else {
        warnings.push(Warning::ZeroDispersion);
        0.0
    };
    let log_m = n as f64 * solution.rate_pw + corr;
    let rate_nats = log_m / n as f64;
    Ok(SecondOrder { log_m, rate_nats, rate_bits: rate_nats / std::f64::consts::LN_2, warnings })
}

pub fn second_order_rate(field: &PiecewiseField, d: f64, epsilon: f64) -> Result<SecondOrder> {
    q_inverse(epsilon)?;
    let sol = solve_water_level(field, d)?;
    second_order_from(field.n(), &sol, epsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointStatus {
    Ok,
    Kink,
    Infeasible(String),
}

impl std::fmt::Display for PointStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PointStatus::Ok => write!(f, "ok"),
            PointStatus::Kink => write!(f, "spectral_kink"),
            PointStatus::Infeasible(r) => write!(f, "infeasible: {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub d: f64,
    pub theta_star: Option<f64>,
    pub rate_nats: Option<f64>,
    pub rate_bits: Option<f64>,
    pub dispersion: Option<f64>,
    pub second_order_bits: Option<f64>,
    pub status: PointStatus,
}

/// Evaluate the rate-distortion curve on a grid; points keep the grid order.
pub fn rd_curve(field: &PiecewiseField, d_grid: &[f64], epsilon: f64) -> Result<Vec<RdPoint>> {
    q_inverse(epsilon)?;
    let spectra: Vec<Vec<f64>> = field.regions.iter().map(|r| r.spectrum.clone()).collect();
    let weights = field.weights();
    let n = field.n();
    Ok(d_grid
        .par_iter()
        .map(|&d| match solve_spectra(&spectra, &weights, d) {
            Ok(sol) => {
                let so = second_order_from(n, &sol, epsilon).ok();
                RdPoint {
                    d,
                    theta_star: Some(sol.theta_star),
                    rate_nats: Some(sol.rate_pw),
                    rate_bits: Some(sol.rate_bits()),
                    dispersion: Some(sol.dispersion),
                    second_order_bits: so.map(|s| s.rate_bits),
                    status: if sol.has_kink() { PointStatus::Kink } else { PointStatus::Ok },
                }
            }
            Err(e) => RdPoint {
                d,
                theta_star: None,
                rate_nats: None,
                rate_bits: None,
                dispersion: None,
                second_order_bits: None,
                status: PointStatus::Infeasible(e.to_string()),
            },
        })
        .collect())
}

pub const RD_CSV_HEADER: &str =
    "D,theta_star,rate_nats_per_site,rate_bits_per_site,dispersion,second_order_rate_bits_per_site,status";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rd_curve_csv(points: &[RdPoint]) -> String {
    let mut out = String::from(RD_CSV_HEADER);
    out.push('\n');
    for p in points {
        let status = p.status.to_string().replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.d,
            opt(p.theta_star),
            opt(p.rate_nats),
            opt(p.rate_bits),
            opt(p.dispersion),
            opt(p.second_order_bits),
            status
        ));
    }
    out
}
