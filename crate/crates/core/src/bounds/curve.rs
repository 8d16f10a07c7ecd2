use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::field::{Lattice, Partition, PiecewiseField};
use crate::rng;
use crate::waterfill::{second_order_from, solve_water_level, q_inverse};

use super::{AchievabilitySimulator, GammaPolicy, McConfig, Regime, TailSample, TiltedDensityModel};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub mc: McConfig,
    pub gamma: GammaPolicy,
    /// Stop the codebook-size search once the bracket is this narrow.
    pub tol_bits: f64,
    /// Skip the Monte Carlo bounds.
    pub approx_only: bool,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig { mc: McConfig::default(), gamma: GammaPolicy::Default, tol_bits: 0.005, approx_only: false }
    }
}

/// Rates in bits per site at one lattice size.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub n: usize,
    pub rate_conv: f64,
    pub rate_ach: f64,
    pub rate_approx: f64,
    pub rate_pw: f64,
    pub se_conv: f64,
    pub se_ach: f64,
    pub epsilon: f64,
    pub d: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub inner_samples: usize,
    pub regimes: Vec<Regime>,
}

/// Codebook sizes per region for a total of `total` nats: proportional to
/// `shares`, each rounded up to an integer size.
pub fn split_log_m(shares: &[f64], total: f64) -> Vec<f64> {
    shares
        .iter()
        .map(|&s| {
            let x = s * total;
            if x < 700.0 {
                (x.exp() - 1e-9).ceil().max(1.0).ln()
            } else {
                x
            }
        })
        .collect()
}

/// Smallest `x` in `[lo, ..)` with `f(x) ≤ target`, to within `tol`.
/// `f` must be nonincreasing. Returns `None` if no such point is found.
fn search(f: &dyn Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    lo = lo.max(0.0);
    while f(lo) <= target {
        if lo <= 0.0 {
            return Some(0.0);
        }
        hi = lo;
        lo = if lo < 1.0 { 0.0 } else { lo * 0.5 };
    }
    let mut k = 0;
    while f(hi) > target {
        let w = (hi - lo).max(1.0);
        lo = hi;
        hi += 2.0 * w;
        k += 1;
        if k > 60 {
            return None;
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Converse, achievability and second-order rates for one field.
pub fn bound_point(field: &PiecewiseField, d: f64, epsilon: f64, config: &BoundConfig) -> Result<BoundPoint> {
    q_inverse(epsilon)?;
    let n = field.n();
    let nl = n as f64 * LN_2;
    let sol = solve_water_level(field, d)?;
    let approx = second_order_from(n, &sol, epsilon)?;
    let seed = rng::derive(config.mc.seed, n as u64);
    let mut pt = BoundPoint {
        n,
        rate_conv: f64::NAN,
        rate_ach: f64::NAN,
        rate_approx: approx.rate_bits,
        rate_pw: sol.rate_bits(),
        se_conv: f64::NAN,
        se_ach: f64::NAN,
        epsilon,
        d,
        seed: config.mc.seed,
        mc_samples: config.mc.mc_samples,
        inner_samples: config.mc.inner_samples,
        regimes: Vec::new(),
    };
    if config.approx_only {
        return Ok(pt);
    }
    let mc = config.mc.mc_samples;
    if mc < 10_000 {
        return Err(Error::Config(format!("converse needs at least 10^4 samples, got {mc}")));
    }

    let model = TiltedDensityModel::new(field, &sol);
    let tail = TailSample::new(model.draws(mc, rng::derive(seed, 1), false));
    let gammas = config.gamma.gammas(n);
    let l_conv = tail.min_log_m(epsilon, &gammas);
    let se_p = (epsilon * (1.0 - epsilon) / mc as f64).sqrt();
    let up = tail.min_log_m((epsilon - se_p).max(f64::MIN_POSITIVE), &gammas);
    let down = tail.min_log_m((epsilon + se_p).min(1.0 - f64::EPSILON), &gammas);
    pt.rate_conv = l_conv / nl;
    pt.se_conv = 0.5 * (up - down) / nl;

    let spectra: Vec<Vec<f64>> = field.regions.iter().map(|r| r.spectrum.clone()).collect();
    let alloc: Vec<f64> = sol.per_region.iter().map(|r| r.distortion).collect();
    let mc_cfg = McConfig { seed: rng::derive(seed, 2), ..config.mc };
    let sim = AchievabilitySimulator::new(&spectra, sol.theta_star, &alloc, mc_cfg)?;
    let sizes = field.partition.sizes();
    let weights: Vec<f64> = sol.per_region.iter().zip(&sizes).map(|(r, &s)| s as f64 * r.rate).collect();
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let f = |l: f64| sim.evaluate(&split_log_m(&shares, l)).bound;
    let start_hi = n as f64 * sol.rate_pw + (sol.dispersion.sqrt() * q_inverse(epsilon)?).abs() + 2.0 * (n as f64).ln() + 10.0;
    let lo0 = if l_conv.is_finite() { l_conv } else { 0.0 };
    let hi0 = start_hi.max(lo0 + 1.0);
    let l_ach = search(&f, epsilon, lo0, hi0, config.tol_bits * nl)
        .ok_or_else(|| Error::Config("achievability search did not reach the target probability".into()))?;
    let log_m = split_log_m(&shares, l_ach);
    let est = sim.evaluate(&log_m);
    pt.rate_ach = log_m.iter().sum::<f64>() / nl;
    pt.regimes = est.per_region.iter().map(|r| r.regime).collect();
    let fine = 1e-4 * config.tol_bits * nl;
    let se = est.se.max(1e-12);
    let a = search(&f, (epsilon - se).max(0.0), lo0, hi0, fine);
    let b = search(&f, (epsilon + se).min(1.0), lo0, hi0, fine);
    pt.se_ach = match (a, b) {
        (Some(a), Some(b)) => 0.5 * (a - b).abs() / nl,
        _ => f64::NAN,
    };
    Ok(pt)
}

/// Bound points over a family of fields with fixed region proportions.
pub fn bound_curve(fields: &[PiecewiseField], d: f64, epsilon: f64, config: &BoundConfig) -> Result<Vec<BoundPoint>> {
    if let Some(first) = fields.first() {
        let w0 = first.weights();
        for f in fields {
            let w = f.weights();
            if w.len() != w0.len() || w.iter().zip(&w0).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(Error::Config("field family must keep region weights fixed".into()));
            }
        }
    }
    fields.iter().map(|f| bound_point(f, d, epsilon, config)).collect()
}

/// Blow up every lattice side by `factor`; each site inherits the label and
/// law of the coarse site it maps to.
pub fn scale_field(base: &PiecewiseField, factor: usize) -> Result<PiecewiseField> {
    let lattice: Lattice = base.lattice.scaled(factor)?;
    let labels = (0..lattice.n())
        .map(|i| {
            let c: Vec<usize> = lattice.coords(i).into_iter().map(|x| x / factor).collect();
            base.partition.labels[base.lattice.index(&c)]
        })
        .collect();
    let partition = Partition::new(&lattice, labels, base.partition.region_count)?;
    PiecewiseField::build(lattice, partition, base.specs(), base.options())
}

pub const BOUND_CSV_HEADER: &str = "n,rate_conv_bits,rate_ach_bits,rate_approx_bits,se_conv,se_ach,epsilon,D,seed";

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

pub fn bound_curve_csv(points: &[BoundPoint]) -> String {
    let mut out = String::from(BOUND_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.n,
            num(p.rate_conv),
            num(p.rate_ach),
            num(p.rate_approx),
            num(p.se_conv),
            num(p.se_ach),
            p.epsilon,
            p.d,
            p.seed
        ));
    }
    out
}
