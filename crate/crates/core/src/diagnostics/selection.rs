//! Maximum-likelihood fits of candidate models and AIC/BIC ranking with
//! n_eff = T.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{region_groups, torus_covariance, torus_spectrum, Block, CovarianceKernel, Partition};
use crate::numeric::compensated_sum;
use crate::sampler::SampleBatch;

/// (AIC, BIC) = (−2 log L + 2q, −2 log L + q ln n_eff).
pub fn information_criteria(log_l: f64, q: usize, n_eff: f64) -> (f64, f64) {
    let q = q as f64;
    (-2.0 * log_l + 2.0 * q, -2.0 * log_l + q * n_eff.ln())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    /// One exponential-kernel Gaussian field per region, each region split
    /// into independent torus blocks by the optional tile grid.
    PiecewiseGrf { partition: Partition, tile: Option<usize> },
    /// The single-region special case of [`Candidate::PiecewiseGrf`].
    GlobalGrf { tile: Option<usize> },
    /// Independent stationary 1-d processes along the last axis.
    Grp1d,
    IidGaussian,
    Laplace,
    Poisson,
}

impl Candidate {
    pub fn model_id(&self) -> String {
        match self {
            Candidate::PiecewiseGrf { partition, .. } => format!("piecewise_grf_k{}", partition.region_count),
            Candidate::GlobalGrf { .. } => "global_grf".into(),
            Candidate::Grp1d => "grp_1d".into(),
            Candidate::IidGaussian => "iid_gaussian".into(),
            Candidate::Laplace => "iid_laplace".into(),
            Candidate::Poisson => "iid_poisson".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScore {
    pub model_id: String,
    pub q: usize,
    #[serde(rename = "log_L")]
    pub log_l: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_eff: usize,
    /// Fitted parameters, for reporting.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excluded {
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub scores: Vec<ModelScore>,
    pub excluded: Vec<Excluded>,
    pub aic_ranking: Vec<String>,
    pub bic_ranking: Vec<String>,
}

impl SelectionReport {
    pub fn score(&self, model_id: &str) -> Option<&ModelScore> {
        self.scores.iter().find(|s| s.model_id == model_id)
    }
}

/// Sufficient statistics of one torus block pooled over realizations.
struct BlockStats {
    shape: Vec<usize>,
    len: usize,
    /// Σ_t |Y_t(k)|² with the k = 0 entry unused.
    periodogram: Vec<f64>,
    /// Block mean per realization.
    means: Vec<f64>,
}

fn block_stats(batch: &SampleBatch, block: &Block) -> BlockStats {
    let sites = block.sites(batch.lattice());
    let len = sites.len();
    let mut periodogram = vec![0.0; len];
    let mut means = Vec::with_capacity(batch.len());
    for f in &batch.fields {
        let x: Vec<f64> = sites.iter().map(|&s| f.values[s]).collect();
        means.push(compensated_sum(x.iter().copied()) / len as f64);
        let c = fft::forward_real(&x, &block.shape);
        for (p, z) in periodogram.iter_mut().zip(c) {
            *p += z.norm_sqr();
        }
    }
    BlockStats { shape: block.shape.clone(), len, periodogram, means }
}

/// Profile log-likelihood of one region under a unit-variance exponential
/// kernel with length scale `ell` (0 = white); returns (log L, mean, variance).
fn region_profile(stats: &[BlockStats], t: usize, ell: f64) -> Result<(f64, f64, f64)> {
    let kernel = if ell > 0.0 { CovarianceKernel::exponential(1.0, ell) } else { CovarianceKernel::white(1.0) };
    let mut spectra: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    let mut idx = Vec::with_capacity(stats.len());
    for b in stats {
        let i = match spectra.iter().position(|(s, _)| *s == b.shape) {
            Some(i) => i,
            None => {
                let spec = torus_spectrum(&torus_covariance(&kernel, &b.shape)?, &b.shape);
                if spec.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::NotPsd { value: spec.iter().copied().fold(f64::INFINITY, f64::min), tol: 0.0 });
                }
                spectra.push((b.shape.clone(), spec));
                spectra.len() - 1
            }
        };
        idx.push(i);
    }
    // GLS mean: only the constant mode carries it
    let (mut num, mut den) = (0.0, 0.0);
    for (b, &i) in stats.iter().zip(&idx) {
        let w = b.len as f64 / spectra[i].1[0];
        num += w * b.means.iter().sum::<f64>();
        den += w * t as f64;
    }
    let mean = num / den;
    let mut quad = 0.0;
    let mut logdet = 0.0;
    let mut total = 0usize;
    for (b, &i) in stats.iter().zip(&idx) {
        let lam = &spectra[i].1;
        let nb = b.len as f64;
        for k in 1..b.len {
            quad += b.periodogram[k] / (nb * lam[k]);
        }
        quad += b.means.iter().map(|m| nb * (m - mean) * (m - mean)).sum::<f64>() / lam[0];
        logdet += t as f64 * lam.iter().map(|l| l.ln()).sum::<f64>();
        total += t * b.len;
    }
    let nt = total as f64;
    let var = quad / nt;
    if !(var > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let ll = -0.5 * nt * ((2.0 * std::f64::consts::PI * var).ln() + 1.0) - 0.5 * logdet;
    Ok((ll, mean, var))
}

const GRID: usize = 24;
const GOLDEN_ITERS: usize = 40;

/// Maximize the profile likelihood over ℓ ∈ {0} ∪ [ℓ_lo, ℓ_hi].
fn fit_region(stats: &[BlockStats], t: usize) -> Result<(f64, [f64; 3])> {
    let side = stats.iter().flat_map(|b| b.shape.iter().copied()).max().unwrap_or(1) as f64;
    let (lo, hi) = (0.05f64.ln(), (side / 2.0).max(1.0).ln());
    let eval = |u: f64| region_profile(stats, t, u.exp()).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
    let (white, m0, v0) = region_profile(stats, t, 0.0)?;
    let mut best = (white, 0.0, m0, v0);
    let us: Vec<f64> = (0..GRID).map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64).collect();
    let vals: Vec<f64> = us.iter().map(|&u| eval(u)).collect();
    let (bi, &bv) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    if bv > best.0 {
        let (mut a, mut b) = (us[bi.saturating_sub(1)], us[(bi + 1).min(GRID - 1)]);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..GOLDEN_ITERS {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = eval(d);
            }
        }
        let mut u = us[bi];
        let mut uv = bv;
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx > uv {
                u = x;
                uv = fx;
            }
        }
        let (ll, m, v) = region_profile(stats, t, u.exp())?;
        if ll > best.0 {
            best = (ll, u.exp(), m, v);
        }
    }
    Ok((best.0, [best.2, best.3, best.1]))
}

fn grf_score(batch: &SampleBatch, layout: Vec<Vec<Block>>) -> Result<(f64, usize, Vec<f64>)> {
    let t = batch.len();
    let fits: Vec<Result<(f64, [f64; 3])>> = layout
        .par_iter()
        .map(|blocks| {
            let stats: Vec<BlockStats> = blocks.iter().map(|b| block_stats(batch, b)).collect();
            fit_region(&stats, t)
        })
        .collect();
    let mut ll = 0.0;
    let mut params = Vec::new();
    for f in fits {
        let (l, p) = f?;
        ll += l;
        params.extend(p);
    }
    Ok((ll, 3 * layout.len(), params))
}

fn piecewise_layout(batch: &SampleBatch, partition: &Partition, tile: Option<usize>) -> Result<Vec<Vec<Block>>> {
    let lattice = batch.lattice();
    if partition.labels.len() != lattice.n() {
        return Err(Error::ShapeMismatch("partition does not match the batch lattice".into()));
    }
    let groups = region_groups(lattice, partition, tile);
    groups
        .into_iter()
        .map(|g| {
            g.into_iter()
                .map(|grp| {
                    if grp.is_rectangular() {
                        Ok(grp.bbox)
                    } else {
                        Err(Error::Shape("region is not a union of rectangular blocks under this tiling".into()))
                    }
                })
                .collect()
        })
        .collect()
}

fn rows_layout(batch: &SampleBatch) -> Vec<Vec<Block>> {
    let dims = batch.lattice().dims();
    let d = dims.len();
    let lines: usize = dims[..d - 1].iter().product();
    let mut co = vec![0; d - 1];
    let blocks = (0..lines)
        .map(|i| {
            fft::unravel(i, &dims[..d - 1], &mut co);
            let mut origin = co.clone();
            origin.push(0);
            let mut shape = vec![1; d - 1];
            shape.push(dims[d - 1]);
            Block { origin, shape }
        })
        .collect();
    vec![blocks]
}

fn all_values(batch: &SampleBatch) -> Vec<f64> {
    batch.fields.iter().flat_map(|f| f.values.iter().copied()).collect()
}

fn iid_gaussian(x: &[f64]) -> Result<(f64, usize, Vec<f64>)> {
    let n = x.len() as f64;
    let m = compensated_sum(x.iter().copied()) / n;
    let v = compensated_sum(x.iter().map(|v| (v - m) * (v - m))) / n;
    if !(v > 0.0) {
        return Err(Error::DegenerateSample);
    }
    Ok((-0.5 * n * ((2.0 * std::f64::consts::PI * v).ln() + 1.0), 2, vec![m, v]))
}

fn laplace(x: &[f64]) -> Result<(f64, usize, Vec<f64>)> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    let med = if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) };
    let b = compensated_sum(x.iter().map(|v| (v - med).abs())) / k as f64;
    if !(b > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let n = k as f64;
    Ok((-n * (2.0 * b).ln() - n, 2, vec![med, b]))
}

fn ln_factorial(k: f64) -> f64 {
    statrs::function::gamma::ln_gamma(k + 1.0)
}

fn poisson(x: &[f64]) -> Result<(f64, usize, Vec<f64>)> {
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
        return Err(Error::Domain(format!("not count data (value {v})")));
    }
    let n = x.len() as f64;
    let lam = compensated_sum(x.iter().copied()) / n;
    let ll = if lam == 0.0 {
        0.0
    } else {
        compensated_sum(x.iter().map(|&k| k * lam.ln() - lam - ln_factorial(k)))
    };
    Ok((ll, 1, vec![lam]))
}

fn score_one(batch: &SampleBatch, c: &Candidate) -> Result<(f64, usize, Vec<f64>)> {
    match c {
        Candidate::PiecewiseGrf { partition, tile } => grf_score(batch, piecewise_layout(batch, partition, *tile)?),
        Candidate::GlobalGrf { tile } => {
            grf_score(batch, piecewise_layout(batch, &Partition::single(batch.lattice()), *tile)?)
        }
        Candidate::Grp1d => grf_score(batch, rows_layout(batch)),
        Candidate::IidGaussian => iid_gaussian(&all_values(batch)),
        Candidate::Laplace => laplace(&all_values(batch)),
        Candidate::Poisson => poisson(&all_values(batch)),
    }
}

/// Fit each candidate, score with n_eff = T, and rank ascending by AIC and BIC.
/// Candidates that cannot be fitted are reported in `excluded`.
pub fn model_selection(batch: &SampleBatch, candidates: &[Candidate]) -> Result<SelectionReport> {
    let t = batch.len();
    if t < 2 {
        return Err(Error::Size(format!("model selection needs T >= 2, got {t}")));
    }
    let results: Vec<Result<(f64, usize, Vec<f64>)>> = candidates.par_iter().map(|c| score_one(batch, c)).collect();
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for (c, r) in candidates.iter().zip(results) {
        match r {
            Ok((log_l, q, params)) => {
                let (aic, bic) = information_criteria(log_l, q, t as f64);
                scores.push(ModelScore { model_id: c.model_id(), q, log_l, aic, bic, n_eff: t, params });
            }
            Err(e) => excluded.push(Excluded { model_id: c.model_id(), reason: e.to_string() }),
        }
    }
    let rank = |key: fn(&ModelScore) -> f64| {
        let mut v: Vec<&ModelScore> = scores.iter().collect();
        v.sort_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| a.model_id.cmp(&b.model_id)));
        v.into_iter().map(|s| s.model_id.clone()).collect::<Vec<_>>()
    };
    let aic_ranking = rank(|s| s.aic);
    let bic_ranking = rank(|s| s.bic);
    Ok(SelectionReport { scores, excluded, aic_ranking, bic_ranking })
}
