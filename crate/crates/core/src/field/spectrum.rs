use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::{CovarianceKernel, Lattice, SiteGroup};
use crate::error::{Error, Result};
use crate::fft;

pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Relative eigenvalue clamp tolerance.
pub(crate) const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectrumMethod {
    /// Eigenvalues of the covariance matrix of the site set.
    Dense,
    /// DFT of the kernel on the torus of a rectangular block.
    Bccb,
}

impl SpectrumMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpectrumMethod::Dense => "dense",
            SpectrumMethod::Bccb => "bccb",
        }
    }
}

impl std::str::FromStr for SpectrumMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SpectrumMethod::Dense),
            "bccb" => Ok(SpectrumMethod::Bccb),
            _ => Err(Error::Config(format!("unknown spectrum method {s:?}"))),
        }
    }
}

/// Entry (i,j) = Γ(s_i − s_j).
pub fn build_covariance_matrix(kernel: &CovarianceKernel, sites: &[Vec<i64>]) -> Result<DMatrix<f64>> {
    if sites.is_empty() {
        return Err(Error::Shape("empty site set".into()));
    }
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    let mut lag = vec![0i64; sites[0].len()];
    for i in 0..n {
        for j in 0..=i {
            for (a, l) in lag.iter_mut().enumerate() {
                *l = sites[i][a] - sites[j][a];
            }
            let v = kernel.eval(&lag)?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Periodized kernel on a torus: c(h) = Σ_m Γ(h + m∘shape).
///
/// Its DFT samples the spectral density of Γ, so it is PSD whenever Γ is.
pub fn torus_covariance(kernel: &CovarianceKernel, shape: &[usize]) -> Result<Vec<f64>> {
    let d = shape.len();
    let reach = match kernel.reach(d) {
        Some(r) => r,
        None => {
            // without compact support every image lag is needed
            let mut lag = vec![0i64; d];
            lag[0] = shape[0] as i64;
            while kernel.eval(&lag).is_ok() {
                lag[0] += shape[0] as i64;
            }
            return Err(Error::MissingLag { lag });
        }
    };
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    let mut co = vec![0usize; d];
    let mut offsets: Vec<Vec<i64>> = vec![Vec::new(); d];
    let mut lag = vec![0i64; d];
    for (idx, o) in out.iter_mut().enumerate() {
        fft::unravel(idx, shape, &mut co);
        for a in 0..d {
            let l = shape[a] as i64;
            let h = co[a] as i64;
            let lo = (-reach[a] - h).div_euclid(l) - 1;
            let hi = (reach[a] - h).div_euclid(l) + 1;
            offsets[a].clear();
            offsets[a].extend((lo..=hi).map(|m| h + m * l).filter(|x| x.abs() <= reach[a]));
        }
        if offsets.iter().any(|v| v.is_empty()) {
            continue;
        }
        let counts: Vec<usize> = offsets.iter().map(|v| v.len()).collect();
        let total: usize = counts.iter().product();
        let mut sum = 0.0;
        let mut ci = vec![0usize; d];
        for t in 0..total {
            fft::unravel(t, &counts, &mut ci);
            for a in 0..d {
                lag[a] = offsets[a][ci[a]];
            }
            sum += kernel.eval(&lag)?;
        }
        *o = sum;
    }
    Ok(out)
}

/// Kernel on a torus using the minimum-image lag, as in classical circulant
/// embedding on a padded domain.
pub fn embedding_covariance(kernel: &CovarianceKernel, shape: &[usize]) -> Result<Vec<f64>> {
    let d = shape.len();
    let n: usize = shape.iter().product();
    let mut co = vec![0usize; d];
    let mut lag = vec![0i64; d];
    (0..n)
        .map(|idx| {
            fft::unravel(idx, shape, &mut co);
            for a in 0..d {
                let h = co[a] as i64;
                let l = shape[a] as i64;
                lag[a] = if 2 * h > l { h - l } else { h };
            }
            kernel.eval(&lag)
        })
        .collect()
}

/// Real DFT of a symmetric torus covariance, in frequency order (unsorted, unclamped).
pub fn torus_spectrum(cov: &[f64], shape: &[usize]) -> Vec<f64> {
    fft::forward_real(cov, shape).into_iter().map(|c| c.re).collect()
}

pub(crate) fn clamp(mut vals: Vec<f64>, variance: f64) -> Result<Vec<f64>> {
    let tol = CLAMP_TOL * variance;
    for v in vals.iter_mut() {
        if *v < 0.0 {
            if *v < -tol {
                return Err(Error::NotPsd { value: *v, tol: -tol });
            }
            *v = 0.0;
        }
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Eigen-spectrum of a region given as explicit coordinates.
///
/// `bccb` requires the sites to fill a rectangle exactly.
pub fn region_spectrum(
    kernel: &CovarianceKernel,
    sites: &[Vec<usize>],
    method: SpectrumMethod,
    dense_cap: usize,
) -> Result<Vec<f64>> {
    if sites.is_empty() {
        return Err(Error::Shape("empty site set".into()));
    }
    kernel.check()?;
    match method {
        SpectrumMethod::Dense => {
            if sites.len() > dense_cap {
                return Err(Error::CapExceeded { n: sites.len(), cap: dense_cap });
            }
            let s: Vec<Vec<i64>> =
                sites.iter().map(|c| c.iter().map(|&x| x as i64).collect()).collect();
            dense_eigenvalues(kernel, &s)
        }
        SpectrumMethod::Bccb => {
            let d = sites[0].len();
            let lo: Vec<usize> = (0..d).map(|a| sites.iter().map(|c| c[a]).min().unwrap()).collect();
            let hi: Vec<usize> = (0..d).map(|a| sites.iter().map(|c| c[a]).max().unwrap()).collect();
            let shape: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| h + 1 - l).collect();
            let mut seen = vec![false; shape.iter().product()];
            for c in sites {
                let rel: Vec<usize> = c.iter().zip(&lo).map(|(x, l)| x - l).collect();
                let i = fft::ravel(&rel, &shape);
                if seen[i] {
                    return Err(Error::Shape("duplicate site".into()));
                }
                seen[i] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Shape("bccb spectrum needs a full rectangular tile".into()));
            }
            block_bccb(kernel, &shape)
        }
    }
}

fn dense_eigenvalues(kernel: &CovarianceKernel, sites: &[Vec<i64>]) -> Result<Vec<f64>> {
    let m = build_covariance_matrix(kernel, sites)?;
    let eig = SymmetricEigen::new(m).eigenvalues;
    clamp(eig.iter().copied().collect(), kernel.variance())
}

fn block_bccb(kernel: &CovarianceKernel, shape: &[usize]) -> Result<Vec<f64>> {
    let c = torus_covariance(kernel, shape)?;
    clamp(torus_spectrum(&c, shape), kernel.variance())
}

/// Spectrum of a region split into groups, concatenated and sorted.
/// Rectangular groups of equal shape share one computation.
pub(crate) fn groups_spectrum(
    kernel: &CovarianceKernel,
    lattice: &Lattice,
    groups: &[SiteGroup],
    method: SpectrumMethod,
    dense_cap: usize,
) -> Result<Vec<f64>> {
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    let mut irregular: Vec<usize> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        if g.is_rectangular() {
            if !shapes.contains(&g.bbox.shape) {
                shapes.push(g.bbox.shape.clone());
            }
        } else if method == SpectrumMethod::Bccb {
            return Err(Error::Shape(format!(
                "bccb spectrum needs rectangular blocks; block at {:?} is not",
                g.bbox.origin
            )));
        } else {
            irregular.push(i);
        }
    }
    let per_shape: Vec<Result<Vec<f64>>> = shapes
        .par_iter()
        .map(|shape| match method {
            SpectrumMethod::Bccb => block_bccb(kernel, shape),
            SpectrumMethod::Dense => {
                let n: usize = shape.iter().product();
                if n > dense_cap {
                    return Err(Error::CapExceeded { n, cap: dense_cap });
                }
                let mut co = vec![0; shape.len()];
                let sites: Vec<Vec<i64>> = (0..n)
                    .map(|i| {
                        fft::unravel(i, shape, &mut co);
                        co.iter().map(|&x| x as i64).collect()
                    })
                    .collect();
                dense_eigenvalues(kernel, &sites)
            }
        })
        .collect();
    let mut cache: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    for (s, r) in shapes.into_iter().zip(per_shape) {
        cache.insert(s, r?);
    }
    let irregular_spectra: Vec<Result<Vec<f64>>> = irregular
        .par_iter()
        .map(|&i| {
            let g = &groups[i];
            if g.sites.len() > dense_cap {
                return Err(Error::CapExceeded { n: g.sites.len(), cap: dense_cap });
            }
            let sites: Vec<Vec<i64>> = g
                .sites
                .iter()
                .map(|&s| lattice.coords(s).into_iter().map(|x| x as i64).collect())
                .collect();
            dense_eigenvalues(kernel, &sites)
        })
        .collect();
    let mut out = Vec::new();
    for g in groups.iter().filter(|g| g.is_rectangular()) {
        out.extend_from_slice(&cache[&g.bbox.shape]);
    }
    for s in irregular_spectra {
        out.extend(s?);
    }
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}
