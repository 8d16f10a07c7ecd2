//! Sparse random linear probes and the probe-based Gaussianity decision.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::fdr::benjamini_hochberg;
use super::shapiro::shapiro_wilk;
use crate::error::{Error, Result};
use crate::field::Lattice;
use crate::rng;
use crate::sampler::SampleBatch;

pub const DEFAULT_SUPPORT: usize = 64;

/// Fixed sparse weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub sites: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Probe {
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.sites.iter().zip(&self.weights).map(|(&s, w)| w * values[s]).sum()
    }
}

/// `j` probes, each on `support` distinct sites (default min(64, n)) with
/// weights ±1/√support.
pub fn make_probes(lattice: &Lattice, j: usize, support: Option<usize>, seed: u64) -> Result<Vec<Probe>> {
    let n = lattice.n();
    let s = support.unwrap_or(DEFAULT_SUPPORT.min(n));
    if j == 0 {
        return Err(Error::Config("need at least one probe".into()));
    }
    if s > n {
        return Err(Error::Config(format!("probe support {s} exceeds lattice size {n}")));
    }
    if s < 2 {
        return Err(Error::Config(format!("probe support must be at least 2, got {s}")));
    }
    let tag = rng::tag("probe");
    let w = 1.0 / (s as f64).sqrt();
    Ok((0..j)
        .map(|i| {
            let mut r = rng::stream(seed, tag, i as u64);
            let mut sites = sample(&mut r, n, s).into_vec();
            sites.sort_unstable();
            let weights = sites.iter().map(|_| if r.random::<bool>() { w } else { -w }).collect();
            Probe { sites, weights }
        })
        .collect())
}

/// y_{t,j} indexed as `[j][t]`.
pub fn apply_probes(batch: &SampleBatch, probes: &[Probe]) -> Result<Vec<Vec<f64>>> {
    let n = batch.lattice().n();
    for p in probes {
        if p.sites.len() != p.weights.len() || p.sites.iter().any(|&s| s >= n) {
            return Err(Error::Config("probe addresses sites outside the lattice".into()));
        }
    }
    Ok(probes
        .par_iter()
        .map(|p| batch.fields.iter().map(|f| p.apply(&f.values)).collect())
        .collect())
}

pub fn random_probes(
    batch: &SampleBatch,
    j: usize,
    support: Option<usize>,
    seed: u64,
) -> Result<(Vec<Probe>, Vec<Vec<f64>>)> {
    let probes = make_probes(batch.lattice(), j, support, seed)?;
    let y = apply_probes(batch, &probes)?;
    Ok((probes, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    GaussianConsistent,
    GaussianRejected,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::GaussianConsistent => "gaussian_consistent",
            Decision::GaussianRejected => "gaussian_rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub probes: usize,
    pub support: Option<usize>,
    pub alpha: f64,
    pub delta: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { probes: 200, support: None, alpha: 0.05, delta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    #[serde(rename = "J")]
    pub j: usize,
    /// Raw p-values of the probes that were tested, in probe order.
    pub p_values: Vec<f64>,
    pub p_bh: Vec<f64>,
    pub pi_hat: f64,
    pub alpha: f64,
    pub delta: f64,
    pub decision: Decision,
    /// Probes skipped because their responses had zero variance.
    pub excluded: Vec<usize>,
}

/// Shapiro–Wilk per probe, BH across probes, then π̂ against δ.
pub fn decide_from_responses(responses: &[Vec<f64>], alpha: f64, delta: f64) -> Result<ProbeReport> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!("delta {delta} outside [0,1]")));
    }
    let tests: Vec<Result<(f64, f64)>> = responses.par_iter().map(|y| shapiro_wilk(y)).collect();
    let mut p_values = Vec::new();
    let mut excluded = Vec::new();
    for (i, t) in tests.into_iter().enumerate() {
        match t {
            Ok((_, p)) => p_values.push(p),
            Err(Error::DegenerateSample) => excluded.push(i),
            Err(e) => return Err(e),
        }
    }
    if p_values.is_empty() {
        return Err(Error::DegenerateSample);
    }
    let bh = benjamini_hochberg(&p_values, alpha)?;
    let rejections = bh.rejected.iter().filter(|&&r| r).count();
    let pi_hat = rejections as f64 / p_values.len() as f64;
    let decision = if pi_hat > delta { Decision::GaussianRejected } else { Decision::GaussianConsistent };
    Ok(ProbeReport {
        j: responses.len(),
        p_values,
        p_bh: bh.adjusted,
        pi_hat,
        alpha,
        delta,
        decision,
        excluded,
    })
}

pub fn gaussianity_decision(batch: &SampleBatch, cfg: &ProbeConfig, seed: u64) -> Result<ProbeReport> {
    if batch.len() < 3 {
        return Err(Error::Size(format!("probe tests need T >= 3 realizations, got {}", batch.len())));
    }
    let (_, y) = random_probes(batch, cfg.probes, cfg.support, seed)?;
    decide_from_responses(&y, cfg.alpha, cfg.delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::FieldArray;

    fn batch(t: usize, f: impl Fn(usize, usize) -> f64) -> SampleBatch {
        let l = Lattice::new(vec![4, 5]).unwrap();
        let fields = (0..t)
            .map(|ti| FieldArray::new(l.clone(), (0..20).map(|s| f(ti, s)).collect()).unwrap())
            .collect();
        SampleBatch::new(fields, 0).unwrap()
    }

    #[test]
    fn single_site_probe_reads_the_site() {
        let b = batch(4, |t, s| (t * 100 + s) as f64);
        let p = Probe { sites: vec![7], weights: vec![1.0] };
        let y = apply_probes(&b, &[p]).unwrap();
        assert_eq!(y[0], vec![7.0, 107.0, 207.0, 307.0]);
    }

    #[test]
    fn probes_are_deterministic() {
        let l = Lattice::new(vec![16, 16]).unwrap();
        let a = make_probes(&l, 10, None, 3).unwrap();
        let b = make_probes(&l, 10, None, 3).unwrap();
        let c = make_probes(&l, 10, None, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for p in &a {
            assert_eq!(p.sites.len(), 64);
            let mut s = p.sites.clone();
            s.dedup();
            assert_eq!(s.len(), 64);
            assert!(p.weights.iter().all(|w| (w.abs() - 0.125).abs() < 1e-15));
        }
    }

    #[test]
    fn support_bounds() {
        let l = Lattice::new(vec![4, 4]).unwrap();
        assert_eq!(make_probes(&l, 1, None, 0).unwrap()[0].sites.len(), 16);
        assert!(matches!(make_probes(&l, 1, Some(17), 0), Err(Error::Config(_))));
        assert!(matches!(make_probes(&l, 1, Some(1), 0), Err(Error::Config(_))));
    }

    #[test]
    fn short_batch_rejected() {
        let b = batch(2, |t, s| (t + s) as f64);
        assert!(matches!(gaussianity_decision(&b, &ProbeConfig::default(), 0), Err(Error::Size(_))));
    }

    #[test]
    fn degenerate_probes_are_excluded() {
        let r = decide_from_responses(&[vec![1.0; 10], vec![0.3, -1.2, 0.5, 2.0, -0.1, 0.9, -0.7, 0.2]], 0.05, 0.05)
            .unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert_eq!(r.p_values.len(), 1);
        assert_eq!(r.decision, Decision::GaussianConsistent);
        assert_eq!(r.pi_hat, 0.0);
    }
}
