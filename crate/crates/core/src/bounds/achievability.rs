use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::PiecewiseField;
use crate::numeric::{compensated_sum, log_sum_exp};
use crate::rng;
use crate::waterfill::{is_active, solve_water_level};

/// Relative tolerance for treating two eigenvalues as one mode group.
const GROUP_TOL: f64 = 1e-12;
const NO_HIT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallEstimate {
    pub p: f64,
    pub se: f64,
    pub log_p: f64,
}

impl BallEstimate {
    fn exact(hit: bool) -> Self {
        if hit {
            BallEstimate { p: 1.0, se: 0.0, log_p: 0.0 }
        } else {
            BallEstimate { p: 0.0, se: 0.0, log_p: f64::NEG_INFINITY }
        }
    }
}

/// Active modes sharing one eigenvalue: reproduction variance `s`, `m` modes,
/// and δ = Σ y²/s for the current source draw.
#[derive(Debug, Clone, Copy)]
struct Tilted {
    s: f64,
    m: usize,
    delta: f64,
}

/// Cumulant generating function of S = Σ_g s_g·NCχ²(m_g, δ_g) and its
/// first two derivatives.
fn cgf(groups: &[Tilted], t: f64) -> (f64, f64, f64) {
    let (mut k, mut k1, mut k2) = (0.0, 0.0, 0.0);
    for g in groups {
        let m = g.m as f64;
        let a = 1.0 - 2.0 * t * g.s;
        k += -0.5 * m * a.ln() + g.delta * g.s * t / a;
        k1 += m * g.s / a + g.delta * g.s / (a * a);
        k2 += 2.0 * m * g.s * g.s / (a * a) + 4.0 * g.delta * g.s * g.s / (a * a * a);
    }
    (k, k1, k2)
}

/// t ≤ 0 with K'(t) = c, or 0 when the ball already holds the mean.
fn saddlepoint(groups: &[Tilted], c: f64) -> f64 {
    if cgf(groups, 0.0).1 <= c {
        return 0.0;
    }
    let smax = groups.iter().map(|g| g.s).fold(0.0, f64::max);
    let mut lo = -1.0 / smax;
    while cgf(groups, lo).1 > c && lo > -1e300 {
        lo *= 2.0;
    }
    let mut hi = 0.0;
    let mut t = lo;
    for _ in 0..300 {
        let (_, k1, k2) = cgf(groups, t);
        if (k1 - c).abs() <= 1e-13 * c {
            break;
        }
        if k1 > c {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - (k1 - c) / k2;
        t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * lo.abs() {
            break;
        }
    }
    t
}

fn chi(dof: usize) -> Option<ChiSquared<f64>> {
    (dof > 0).then(|| ChiSquared::new(dof as f64).expect("positive dof"))
}

/// (Z + √δ)² + χ²_{m−1}: a noncentral χ² with m degrees of freedom.
#[inline]
fn nc_chi2<R: Rng + ?Sized>(rng: &mut R, sqrt_delta: f64, rest: &Option<ChiSquared<f64>>) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let u = z + sqrt_delta;
    u * u + rest.as_ref().map_or(0.0, |c| c.sample(rng))
}

/// Pr{S ≤ c} by importance sampling under the exponentially tilted law
/// at the saddlepoint, computed in the log domain.
fn ball_core<R: Rng + ?Sized>(
    groups: &[Tilted],
    rest: &[Option<ChiSquared<f64>>],
    c: f64,
    inner: usize,
    rng: &mut R,
) -> BallEstimate {
    if groups.is_empty() {
        return BallEstimate::exact(c >= 0.0);
    }
    if c <= 0.0 {
        return BallEstimate::exact(false);
    }
    let t = saddlepoint(groups, c);
    let (k, _, _) = cgf(groups, t);
    let tilted: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| {
            let a = 1.0 - 2.0 * t * g.s;
            (g.s / a, (g.delta / a).sqrt())
        })
        .collect();
    let mut lw = Vec::with_capacity(inner);
    for _ in 0..inner {
        let mut s = 0.0;
        for ((scale, sd), ch) in tilted.iter().zip(rest) {
            s += scale * nc_chi2(rng, *sd, ch);
        }
        if s <= c {
            lw.push(k - t * s);
        }
    }
    let n = inner as f64;
    let log_p = log_sum_exp(&lw) - n.ln();
    if lw.is_empty() {
        return BallEstimate { p: 0.0, se: 0.0, log_p };
    }
    let mx = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - mx).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let ss = compensated_sum(w.iter().map(|x| (x - mean) * (x - mean))) + (n - w.len() as f64) * mean * mean;
    let se = mx.exp() * (ss / (n - 1.0) / n).sqrt();
    BallEstimate { p: log_p.exp().min(1.0), se, log_p: log_p.min(0.0) }
}

fn group_indices(values: &[f64], idx: &[usize]) -> Vec<Vec<usize>> {
    let mut sorted = idx.to_vec();
    sorted.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in sorted {
        match out.last_mut() {
            Some(g) if (values[g[0]] - values[i]).abs() <= GROUP_TOL * values[g[0]].abs() => g.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Probability that a reproduction drawn from N(0, max(λ−θ*, 0)) per mode
/// lands within mean squared distance `d_r` of the decorrelated source `y`.
pub fn ball_probability<R: Rng + ?Sized>(
    y: &[f64],
    spectrum: &[f64],
    theta_star: f64,
    d_r: f64,
    inner_samples: usize,
    rng: &mut R,
) -> Result<BallEstimate> {
    if inner_samples < 100 {
        return Err(Error::Config(format!("inner_samples must be at least 100, got {inner_samples}")));
    }
    if y.len() != spectrum.len() || y.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} coordinates for {} modes", y.len(), spectrum.len())));
    }
    let n_r = y.len() as f64;
    let on: Vec<bool> = spectrum.iter().map(|&l| is_active(l, theta_star)).collect();
    let active: Vec<usize> = (0..y.len()).filter(|&i| on[i]).collect();
    let inactive_energy = compensated_sum((0..y.len()).filter(|&i| !on[i]).map(|i| y[i] * y[i]));
    let c = n_r * d_r - inactive_energy;
    let groups: Vec<Tilted> = group_indices(spectrum, &active)
        .into_iter()
        .map(|g| {
            let s = spectrum[g[0]] - theta_star;
            Tilted { s, m: g.len(), delta: g.iter().map(|&i| y[i] * y[i]).sum::<f64>() / s }
        })
        .collect();
    let rest: Vec<_> = groups.iter().map(|g| chi(g.m - 1)).collect();
    Ok(ball_core(&groups, &rest, c, inner_samples, rng))
}

/// Monte Carlo budgets and seed shared by the bound estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub mc_samples: usize,
    pub inner_samples: usize,
    /// Codebook sizes up to this value are simulated codeword by codeword.
    pub exact_limit: u64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { mc_samples: 100_000, inner_samples: 1_000, exact_limit: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Direct random-codebook simulation: unbiased.
    Exact,
    /// (1 − p̂)^M with an importance-sampled p̂.
    PlugIn,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Exact => "exact",
            Regime::PlugIn => "plug_in",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionFailure {
    /// E[(1 − P(ball))^{M_r}].
    pub q: f64,
    pub se: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AchievabilityEstimate {
    pub bound: f64,
    pub se: f64,
    pub per_region: Vec<RegionFailure>,
}

#[derive(Debug, Clone, Copy)]
struct Group {
    lambda: f64,
    s: f64,
    m: usize,
}

struct RegionSim {
    budget: f64,
    active: Vec<Group>,
    inactive: Vec<Group>,
    outer_active: Vec<ChiSquared<f64>>,
    outer_inactive: Vec<ChiSquared<f64>>,
    rest: Vec<Option<ChiSquared<f64>>>,
}

impl RegionSim {
    fn new(spectrum: &[f64], theta: f64, d_r: f64) -> Self {
        let all: Vec<usize> = (0..spectrum.len()).collect();
        let mut active = Vec::new();
        let mut inactive = Vec::new();
        for g in group_indices(spectrum, &all) {
            let lambda = spectrum[g[0]];
            if is_active(lambda, theta) {
                active.push(Group { lambda, s: lambda - theta, m: g.len() });
            } else if lambda > 0.0 {
                inactive.push(Group { lambda, s: 0.0, m: g.len() });
            }
        }
        let outer = |v: &[Group]| v.iter().map(|g| ChiSquared::new(g.m as f64).unwrap()).collect();
        RegionSim {
            budget: spectrum.len() as f64 * d_r,
            outer_active: outer(&active),
            outer_inactive: outer(&inactive),
            rest: active.iter().map(|g| chi(g.m - 1)).collect(),
            active,
            inactive,
        }
    }

    /// Source draw through its sufficient statistics: remaining budget
    /// c = n_r D_r − Σ_inactive y², and per-group δ = Σ y²/s.
    fn outer<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<Tilted>) {
        let mut c = self.budget;
        for (g, ch) in self.inactive.iter().zip(&self.outer_inactive) {
            c -= g.lambda * ch.sample(rng);
        }
        let groups = self
            .active
            .iter()
            .zip(&self.outer_active)
            .map(|(g, ch)| Tilted { s: g.s, m: g.m, delta: g.lambda * ch.sample(rng) / g.s })
            .collect();
        (c, groups)
    }

    fn per_outer<T: Send>(
        &self,
        outer: usize,
        seed: u64,
        region: usize,
        f: impl Fn(u64, f64, &[Tilted]) -> T + Sync,
    ) -> Vec<T> {
        let tag = rng::tag("ach-outer");
        let chunks: Vec<Vec<T>> = rng::blocks(outer)
            .into_par_iter()
            .map(|(b, len)| {
                let mut r = rng::stream2(seed, tag, b, region as u64);
                (0..len)
                    .map(|i| {
                        let (c, g) = self.outer(&mut r);
                        f(b * rng::BLOCK as u64 + i as u64, c, &g)
                    })
                    .collect()
            })
            .collect();
        chunks.into_iter().flatten().collect()
    }

    fn log_p_table(&self, cfg: &McConfig, region: usize) -> Vec<f64> {
        let tag = rng::tag("ach-inner");
        self.per_outer(cfg.mc_samples, cfg.seed, region, |j, c, g| {
            let mut r = rng::stream2(cfg.seed, tag, j, region as u64);
            ball_core(g, &self.rest, c, cfg.inner_samples, &mut r).log_p
        })
    }

    /// Index of the first codeword inside the ball, or `NO_HIT` within `limit`.
    fn first_hit_table(&self, cfg: &McConfig, region: usize) -> Vec<u32> {
        let tag = rng::tag("ach-codebook");
        let limit = cfg.exact_limit.min(u32::MAX as u64 - 1) as u32;
        self.per_outer(cfg.mc_samples, cfg.seed, region, |j, c, g| {
            if g.is_empty() {
                return if c >= 0.0 { 1 } else { NO_HIT };
            }
            if c <= 0.0 {
                return NO_HIT;
            }
            let mut r = rng::stream2(cfg.seed, tag, j, region as u64);
            let sd: Vec<f64> = g.iter().map(|x| x.delta.sqrt()).collect();
            for k in 1..=limit {
                let mut s = 0.0;
                for ((x, d), ch) in g.iter().zip(&sd).zip(&self.rest) {
                    s += x.s * nc_chi2(&mut r, *d, ch);
                    if s > c {
                        break;
                    }
                }
                if s <= c {
                    return k;
                }
            }
            NO_HIT
        })
    }
}

/// Caches per-draw ball statistics so the bound can be re-evaluated for many
/// codebook sizes with common random numbers.
pub struct AchievabilitySimulator {
    sims: Vec<RegionSim>,
    config: McConfig,
    log_p: Vec<OnceLock<Vec<f64>>>,
    hits: Vec<OnceLock<Vec<u32>>>,
}

fn mean_se(x: impl Iterator<Item = f64>, n: usize) -> (f64, f64) {
    let v: Vec<f64> = x.collect();
    let (m, var) = crate::numeric::mean_var(&v);
    (m, (var / n as f64).sqrt())
}

impl AchievabilitySimulator {
    /// Reproduction law from water level `theta`; ball radii from `allocation`.
    pub fn new(spectra: &[Vec<f64>], theta: f64, allocation: &[f64], config: McConfig) -> Result<Self> {
        if spectra.len() != allocation.len() {
            return Err(Error::Config("one distortion per region required".into()));
        }
        if config.inner_samples < 100 {
            return Err(Error::Config(format!(
                "inner_samples must be at least 100, got {}",
                config.inner_samples
            )));
        }
        if config.mc_samples < 2 {
            return Err(Error::Config("mc_samples must be at least 2".into()));
        }
        let k = spectra.len();
        Ok(AchievabilitySimulator {
            sims: spectra.iter().zip(allocation).map(|(s, &d)| RegionSim::new(s, theta, d)).collect(),
            config,
            log_p: (0..k).map(|_| OnceLock::new()).collect(),
            hits: (0..k).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn regime(&self, log_m: f64) -> Regime {
        if log_m <= (self.config.exact_limit as f64).ln() + 1e-12 {
            Regime::Exact
        } else {
            Regime::PlugIn
        }
    }

    pub fn region_failure(&self, region: usize, log_m: f64) -> RegionFailure {
        let n = self.config.mc_samples;
        match self.regime(log_m) {
            Regime::Exact => {
                let hits = self.hits[region].get_or_init(|| self.sims[region].first_hit_table(&self.config, region));
                let m = log_m.exp().round().max(1.0) as u64;
                let miss = hits.iter().filter(|&&h| h == NO_HIT || h as u64 > m).count();
                let q = miss as f64 / n as f64;
                RegionFailure { q, se: (q * (1.0 - q) / n as f64).sqrt(), regime: Regime::Exact }
            }
            Regime::PlugIn => {
                let lp = self.log_p[region].get_or_init(|| self.sims[region].log_p_table(&self.config, region));
                let (q, se) = mean_se(lp.iter().map(|&l| plug_in(l, log_m)), n);
                RegionFailure { q, se, regime: Regime::PlugIn }
            }
        }
    }

    /// 1 − Π_r (1 − q_r) with a delta-method standard error.
    pub fn evaluate(&self, log_m: &[f64]) -> AchievabilityEstimate {
        let per_region: Vec<RegionFailure> =
            log_m.iter().enumerate().map(|(r, &l)| self.region_failure(r, l)).collect();
        let survive: Vec<f64> = per_region.iter().map(|f| 1.0 - f.q).collect();
        let prod: f64 = survive.iter().product();
        let mut var = 0.0;
        for (r, f) in per_region.iter().enumerate() {
            let others: f64 = survive.iter().enumerate().filter(|(s, _)| *s != r).map(|(_, v)| v).product();
            var += (others * f.se).powi(2);
        }
        AchievabilityEstimate { bound: (1.0 - prod).clamp(0.0, 1.0), se: var.sqrt(), per_region }
    }
}

/// (1 − p)^M with p = e^{log_p}, M = e^{log_m}.
fn plug_in(log_p: f64, log_m: f64) -> f64 {
    if log_p == f64::NEG_INFINITY {
        return 1.0;
    }
    let p = log_p.exp();
    if p >= 1.0 {
        return 0.0;
    }
    // ln(−ln(1 − p)), kept in the log domain when p underflows
    let lnl = if log_p < -30.0 { log_p + 0.5 * p } else { (-(-p).ln_1p()).ln() };
    (-(lnl + log_m).exp()).exp()
}

/// Monte Carlo estimate of the random-coding upper bound on the
/// excess-distortion probability for per-region codebooks of size e^{log_m[r]}.
pub fn achievability_bound(
    field: &PiecewiseField,
    d: f64,
    allocation: &[f64],
    log_m: &[f64],
    config: McConfig,
) -> Result<AchievabilityEstimate> {
    let w = field.weights();
    if allocation.len() != w.len() || log_m.len() != w.len() {
        return Err(Error::Config("one distortion and one codebook size per region required".into()));
    }
    let used = compensated_sum(w.iter().zip(allocation).map(|(w, d)| w * d));
    if used > d * (1.0 + 1e-12) || allocation.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Budget(format!("Σ w_r D_r = {used} > D = {d}")));
    }
    if log_m.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::Config("codebook sizes must be at least 1".into()));
    }
    let sol = solve_water_level(field, d)?;
    let spectra: Vec<Vec<f64>> = field.regions.iter().map(|r| r.spectrum.clone()).collect();
    let sim = AchievabilitySimulator::new(&spectra, sol.theta_star, allocation, config)?;
    Ok(sim.evaluate(log_m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_ball() {
        let mut r = rng::stream(5, 1, 0);
        let e = ball_probability(&[0.0], &[1.0], 0.5, 0.5, 100_000, &mut r).unwrap();
        assert!((e.p - 0.682_689_492).abs() < 3.0 * e.se, "{e:?}");
    }

    #[test]
    fn ball_edge_cases() {
        let mut r = rng::stream(5, 1, 0);
        assert!(matches!(ball_probability(&[0.0], &[1.0], 0.5, 0.5, 10, &mut r), Err(Error::Config(_))));
        let e = ball_probability(&[0.3, 0.1], &[1.0, 1.0], 2.0, 1.0, 100, &mut r).unwrap();
        assert_eq!(e.p, 1.0);
        let e = ball_probability(&[3.0, 0.1], &[1.0, 1.0], 2.0, 1.0, 100, &mut r).unwrap();
        assert_eq!(e.p, 0.0);
        let e = ball_probability(&[0.3], &[1.0], 0.5, 0.0, 100, &mut r).unwrap();
        assert_eq!(e.p, 0.0);
    }

    #[test]
    fn tilted_estimate_of_rare_ball() {
        // 40 modes, small ball: compare against plain MC at a milder radius and
        // the tilted estimator at the same radius
        let spec = vec![1.0; 40];
        let y = vec![0.5; 40];
        let mut r = rng::stream(11, 2, 0);
        let tilt = ball_probability(&y, &spec, 0.5, 0.45, 200_000, &mut r).unwrap();
        let groups = [Tilted { s: 0.5, m: 40, delta: 40.0 * 0.25 / 0.5 }];
        let rest = [chi(39)];
        let mut hits = 0usize;
        let n = 2_000_000;
        for _ in 0..n {
            if 0.5 * nc_chi2(&mut r, groups[0].delta.sqrt(), &rest[0]) <= 40.0 * 0.45 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((tilt.p - p).abs() < 4.0 * (se * se + tilt.se * tilt.se).sqrt(), "{tilt:?} vs {p}");
    }

    #[test]
    fn plug_in_limits() {
        assert_eq!(plug_in(f64::NEG_INFINITY, 5.0), 1.0);
        assert_eq!(plug_in(0.0, 1.0), 0.0);
        assert!((plug_in(0.5f64.ln(), 2f64.ln()) - 0.25).abs() < 1e-15);
        assert!((plug_in(-1000.0, 1000.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn certain_ball_has_no_failure() {
        let cfg = McConfig { mc_samples: 1000, inner_samples: 100, ..Default::default() };
        let sim = AchievabilitySimulator::new(&[vec![0.0; 4]], 1.0, &[0.1], cfg).unwrap();
        let e = sim.evaluate(&[0.0]);
        assert_eq!(e.bound, 0.0);
    }

    #[test]
    fn monotone_in_codebook_size() {
        let cfg = McConfig { mc_samples: 4000, inner_samples: 200, exact_limit: 50, seed: 3 };
        let sim = AchievabilitySimulator::new(&[vec![2.0, 1.0, 1.0]], 0.5, &[0.5], cfg).unwrap();
        for range in [0..13, 14..40] {
            let mut prev = 1.0;
            for k in range {
                let l = k as f64 * 0.3;
                let f = sim.region_failure(0, l);
                assert_eq!(f.regime == Regime::Exact, l <= 50f64.ln());
                assert!(f.q <= prev + 1e-12);
                prev = f.q;
            }
        }
    }
}
