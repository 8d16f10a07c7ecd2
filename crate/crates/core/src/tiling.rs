//! Tile grids, tile descriptors, k-means clustering of tiles into regions,
//! and pooled per-region model estimation.

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::diagnostics::information_criteria;
use crate::error::{Error, Result};
use crate::fft;
use crate::field::{Block, CovarianceKernel, LagTable, Lattice, Partition, PiecewiseField, RegionSpec, SpectrumOptions};
use crate::numeric::compensated_sum;
use crate::rng;
use crate::sampler::SampleBatch;

/// How sites beyond the last full tile are labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginPolicy {
    /// Take the label of the nearest tile (nearest tile centroid).
    NearestTile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub k: usize,
    pub lattice: Lattice,
    /// Full tiles per axis.
    pub counts: Vec<usize>,
    pub tiles: Vec<Block>,
    pub margin: MarginPolicy,
}

impl TileGrid {
    pub fn n_tau(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile_len(&self) -> usize {
        self.k.pow(self.lattice.ndim() as u32)
    }

    /// Index of the tile whose label a site takes. Clamping the per-axis tile
    /// index picks the tile with the nearest centroid.
    pub fn tile_of(&self, site: usize) -> usize {
        let co = self.lattice.coords(site);
        let t: Vec<usize> = co.iter().zip(&self.counts).map(|(&c, &n)| (c / self.k).min(n - 1)).collect();
        fft::ravel(&t, &self.counts)
    }

    pub fn margin_sites(&self) -> usize {
        self.lattice.n() - self.n_tau() * self.tile_len()
    }

    /// Per-site labels from per-tile labels.
    pub fn partition(&self, tile_labels: &[usize], region_count: usize) -> Result<Partition> {
        if tile_labels.len() != self.n_tau() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} tiles", tile_labels.len(), self.n_tau())));
        }
        let labels = (0..self.lattice.n()).map(|s| tile_labels[self.tile_of(s)]).collect();
        Partition::new(&self.lattice, labels, region_count)
    }
}

pub fn tile_partition(lattice: &Lattice, k: usize) -> Result<TileGrid> {
    let min = *lattice.dims().iter().min().unwrap();
    if k < 2 || k > min {
        return Err(Error::Config(format!("tile side {k} must lie in [2, {min}]")));
    }
    let counts: Vec<usize> = lattice.dims().iter().map(|d| d / k).collect();
    let total: usize = counts.iter().product();
    let mut co = vec![0; counts.len()];
    let tiles = (0..total)
        .map(|i| {
            fft::unravel(i, &counts, &mut co);
            Block { origin: co.iter().map(|c| c * k).collect(), shape: vec![k; counts.len()] }
        })
        .collect();
    Ok(TileGrid { k, lattice: lattice.clone(), counts, tiles, margin: MarginPolicy::NearestTile })
}

/// Per-tile spectral statistics pooled over realizations.
#[derive(Debug, Clone)]
struct TileStats {
    /// Σ_t |DFT x_t(f)|²; the f = 0 entry is unused.
    power: Vec<f64>,
    /// Tile mean per realization.
    means: Vec<f64>,
}

fn tile_stats(batch: &SampleBatch, grid: &TileGrid) -> Vec<TileStats> {
    let shape = vec![grid.k; grid.lattice.ndim()];
    let len = grid.tile_len();
    grid.tiles
        .par_iter()
        .map(|b| {
            let sites = b.sites(&grid.lattice);
            let mut power = vec![0.0; len];
            let mut means = Vec::with_capacity(batch.len());
            for f in &batch.fields {
                let x: Vec<f64> = sites.iter().map(|&s| f.values[s]).collect();
                means.push(compensated_sum(x.iter().copied()) / len as f64);
                for (p, z) in power.iter_mut().zip(fft::forward_real(&x, &shape)) {
                    *p += z.norm_sqr();
                }
            }
            power[0] = 0.0;
            TileStats { power, means }
        })
        .collect()
}

/// Mean periodogram / tile size of a set of tiles centered at `mean`, i.e.
/// the DFT of their pooled circular autocovariance.
fn pooled_spectrum(stats: &[&TileStats], mean: f64, len: usize) -> Vec<f64> {
    let t = stats[0].means.len();
    let norm = (stats.len() * t * len) as f64;
    let mut s = vec![0.0; len];
    for st in stats {
        for (a, b) in s.iter_mut().zip(&st.power).skip(1) {
            *a += b;
        }
        s[0] += st.means.iter().map(|m| (len as f64 * (m - mean)).powi(2)).sum::<f64>();
    }
    s.iter().map(|v| v / norm).collect()
}

fn pooled_mean(stats: &[&TileStats]) -> f64 {
    let t = stats[0].means.len();
    compensated_sum(stats.iter().flat_map(|s| s.means.iter().copied())) / (stats.len() * t) as f64
}

fn circular_autocov(spectrum: &[f64], shape: &[usize]) -> Vec<f64> {
    let mut c: Vec<Complex64> = spectrum.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::inverse(&mut c, shape);
    c.into_iter().map(|z| z.re).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TileDescriptor {
    pub tile_id: usize,
    pub mean: f64,
    pub variance: f64,
    /// Variance-normalized circular autocovariance at axis lags 1 and 2,
    /// averaged over axes.
    pub autocov_features: [f64; 2],
}

impl TileDescriptor {
    fn vector(&self) -> [f64; 4] {
        [self.mean, self.variance.max(1e-300).ln(), self.autocov_features[0], self.autocov_features[1]]
    }
}

fn describe(id: usize, st: &TileStats, k: usize, ndim: usize) -> TileDescriptor {
    let shape = vec![k; ndim];
    let len = k.pow(ndim as u32);
    let mean = pooled_mean(&[st]);
    let c = circular_autocov(&pooled_spectrum(&[st], mean, len), &shape);
    let variance = c[0].max(0.0);
    let mut feats = [0.0; 2];
    if variance > 0.0 {
        for (lag, f) in feats.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..ndim {
                let mut co = vec![0; ndim];
                co[a] = (lag + 1) % k;
                acc += c[fft::ravel(&co, &shape)];
            }
            *f = acc / (ndim as f64 * variance);
        }
    }
    TileDescriptor { tile_id: id, mean, variance, autocov_features: feats }
}

pub fn tile_descriptors(batch: &SampleBatch, grid: &TileGrid) -> Result<Vec<TileDescriptor>> {
    check_batch(batch, grid)?;
    let stats = tile_stats(batch, grid);
    let d = grid.lattice.ndim();
    Ok(stats.par_iter().enumerate().map(|(i, s)| describe(i, s, grid.k, d)).collect())
}

fn check_batch(batch: &SampleBatch, grid: &TileGrid) -> Result<()> {
    if batch.lattice() != &grid.lattice {
        return Err(Error::ShapeMismatch("batch and tile grid lattices differ".into()));
    }
    Ok(())
}

/// Number of distinct spectral values of a real field on a k^d torus,
/// counting f and −f once.
fn spectral_dof(k: usize, ndim: usize) -> usize {
    let len = k.pow(ndim as u32);
    let self_conj = if k % 2 == 0 { 1 << ndim } else { 1 };
    (len + self_conj) / 2
}

/// Gaussian log-likelihood of a set of tiles under their own pooled mean and
/// circulant covariance.
fn region_loglik(stats: &[&TileStats], len: usize) -> f64 {
    let mean = pooled_mean(stats);
    let spec = pooled_spectrum(stats, mean, len);
    let scale = spec.iter().sum::<f64>() / len as f64;
    let floor = (scale * 1e-12).max(1e-300);
    let t = stats[0].means.len();
    let mut ll = 0.0;
    for (f, &lam) in spec.iter().enumerate() {
        let lam = lam.max(floor);
        let p: f64 = if f == 0 {
            stats.iter().flat_map(|s| s.means.iter()).map(|m| (len as f64 * (m - mean)).powi(2)).sum()
        } else {
            stats.iter().map(|s| s.power[f]).sum()
        };
        ll += -0.5 * (stats.len() * t) as f64 * (2.0 * std::f64::consts::PI * lam).ln() - 0.5 * p / (len as f64 * lam);
    }
    ll
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KScore {
    #[serde(rename = "K")]
    pub k: usize,
    pub inertia: f64,
    pub log_l: f64,
    pub q: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    /// 0-based tile labels, numbered by first appearance.
    pub labels: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub trace: Vec<KScore>,
    /// K values skipped because there were fewer distinct descriptors.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterConfig {
    pub k_range: Vec<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { k_range: (1..=6).collect(), restarts: 10, max_iter: 100, seed: 0 }
    }
}

/// Z-scores per column. The two autocovariance columns are strongly
/// correlated, so together they get the weight of one column.
fn standardize(desc: &[TileDescriptor]) -> Vec<[f64; 4]> {
    const WEIGHT: [f64; 4] = [1.0, 1.0, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
    let raw: Vec<[f64; 4]> = desc.iter().map(|d| d.vector()).collect();
    let n = raw.len() as f64;
    let mut out = raw.clone();
    for c in 0..4 {
        let m = raw.iter().map(|r| r[c]).sum::<f64>() / n;
        let sd = (raw.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n).sqrt();
        for (o, r) in out.iter_mut().zip(&raw) {
            o[c] = if sd > 1e-12 * m.abs().max(1.0) { WEIGHT[c] * (r[c] - m) / sd } else { 0.0 };
        }
    }
    out
}

fn dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64; 4], centers: &[[f64; 4]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// One k-means++ initialized Lloyd run; returns (inertia, labels).
fn kmeans_run<R: Rng>(pts: &[[f64; 4]], k: usize, max_iter: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let n = pts.len();
    let mut centers = vec![pts[rng.random_range(0..n)]];
    while centers.len() < k {
        let d: Vec<f64> = pts.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(pts[pick]);
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(pts) {
            let (c, _) = nearest(p, &centers);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![[0.0; 4]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(pts) {
            counts[l] += 1;
            for c in 0..4 {
                sums[l][c] += p[c];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&pts[a], &centers[labels[a]]).total_cmp(&dist2(&pts[b], &centers[labels[b]]))
                    })
                    .unwrap();
                centers[j] = pts[far];
                labels[far] = j;
                changed = true;
            } else {
                for c in 0..4 {
                    centers[j][c] = sums[j][c] / counts[j] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = labels.iter().zip(pts).map(|(&l, p)| dist2(p, &centers[l])).sum();
    (inertia, labels)
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map: Vec<Option<usize>> = Vec::new();
    let mut next = 0;
    let out = labels
        .iter()
        .map(|&l| {
            if map.len() <= l {
                map.resize(l + 1, None);
            }
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (out, next)
}

fn distinct_points(pts: &[[f64; 4]]) -> usize {
    let mut keys: Vec<[u64; 4]> = pts.iter().map(|p| p.map(|v| v.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Log-likelihood and parameter count of the piecewise tile model induced by
/// `labels`.
fn labeled_loglik(stats: &[TileStats], labels: &[usize], count: usize, len: usize, k: usize, ndim: usize) -> (f64, usize) {
    let mut ll = 0.0;
    for r in 0..count {
        let members: Vec<&TileStats> = stats.iter().zip(labels).filter(|(_, &l)| l == r).map(|(s, _)| s).collect();
        if !members.is_empty() {
            ll += region_loglik(&members, len);
        }
    }
    (ll, count * (1 + spectral_dof(k, ndim)))
}

/// k-means over standardized descriptors for each K, scored by BIC of the
/// induced piecewise Gaussian tile model with n_eff = T.
pub fn cluster_tiles(
    batch: &SampleBatch,
    grid: &TileGrid,
    descriptors: &[TileDescriptor],
    cfg: &ClusterConfig,
) -> Result<Clustering> {
    check_batch(batch, grid)?;
    if cfg.k_range.is_empty() || cfg.k_range.contains(&0) {
        return Err(Error::Config("K range must contain positive values".into()));
    }
    if descriptors.len() != grid.n_tau() {
        return Err(Error::ShapeMismatch("one descriptor per tile is required".into()));
    }
    let kmax = *cfg.k_range.iter().max().unwrap();
    if grid.n_tau() < kmax {
        return Err(Error::Size(format!("{} tiles cannot form {kmax} regions", grid.n_tau())));
    }
    let stats = tile_stats(batch, grid);
    let pts = standardize(descriptors);
    let distinct = distinct_points(&pts);
    let t = batch.len() as f64;
    let len = grid.tile_len();
    let ndim = grid.lattice.ndim();
    let mut ks = cfg.k_range.clone();
    ks.sort_unstable();
    ks.dedup();
    let tag = rng::tag("kmeans");
    let mut trace = Vec::new();
    let mut skipped = Vec::new();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for &k in &ks {
        if k > distinct {
            skipped.push(k);
            continue;
        }
        let runs: Vec<(f64, Vec<usize>)> = (0..cfg.restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let mut g = rng::stream2(cfg.seed, tag, r as u64, k as u64);
                kmeans_run(&pts, k, cfg.max_iter, &mut g)
            })
            .collect();
        // restarts are compared by the model likelihood, not by inertia
        let (inertia, labels, count, log_l, q) = runs
            .into_iter()
            .map(|(inertia, labels)| {
                let (labels, count) = relabel(&labels);
                let (log_l, q) = labeled_loglik(&stats, &labels, count, len, grid.k, ndim);
                (inertia, labels, count, log_l, q)
            })
            .fold(None, |best: Option<(f64, Vec<usize>, usize, f64, usize)>, c| match best {
                Some(b) if b.3 >= c.3 => Some(b),
                _ => Some(c),
            })
            .unwrap();
        let (_, bic) = information_criteria(log_l, q, t);
        trace.push(KScore { k, inertia, log_l, q, bic });
        if best.as_ref().is_none_or(|b| bic < b.0) {
            best = Some((bic, count, labels));
        }
    }
    let (_, k, labels) = best.ok_or_else(|| Error::Size("no admissible K in range".into()))?;
    Ok(Clustering { labels, k, trace, skipped })
}

/// Tabulated kernel whose periodization onto the k^d torus has the given
/// spectrum. The table is the linear autocorrelation of the symmetric
/// square-root filter of the spectrum, so its Fourier transform is |A(ω)|²
/// and every torus or site subset sees a PSD covariance, including the
/// shorter margin cells. Filter taps at ±k/2 are split between both images.
fn kernel_from_spectrum(spec: &[f64], k: usize, ndim: usize) -> Result<CovarianceKernel> {
    let shape = vec![k; ndim];
    let mut root: Vec<Complex64> = spec.iter().map(|&v| Complex64::new(v.max(0.0).sqrt(), 0.0)).collect();
    fft::inverse(&mut root, &shape);
    let half = k / 2;
    let pad = 2 * k + 2;
    let padded = vec![pad; ndim];
    let mut buf = vec![Complex64::new(0.0, 0.0); pad.pow(ndim as u32)];
    let mut co = vec![0; ndim];
    let mut img = vec![0; ndim];
    for (i, a) in root.iter().enumerate() {
        fft::unravel(i, &shape, &mut co);
        let images: Vec<Vec<i64>> = co
            .iter()
            .map(|&x| {
                let x = x as i64;
                if k % 2 == 0 && x == half as i64 {
                    vec![x, -x]
                } else if 2 * x > k as i64 {
                    vec![x - k as i64]
                } else {
                    vec![x]
                }
            })
            .collect();
        let counts: Vec<usize> = images.iter().map(Vec::len).collect();
        let total: usize = counts.iter().product();
        let mut ci = vec![0; ndim];
        for t in 0..total {
            fft::unravel(t, &counts, &mut ci);
            for d in 0..ndim {
                img[d] = images[d][ci[d]].rem_euclid(pad as i64) as usize;
            }
            buf[fft::ravel(&img, &padded)] += a.re / total as f64;
        }
    }
    fft::forward(&mut buf, &padded);
    for v in buf.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft::inverse(&mut buf, &padded);
    let reach = 2 * half;
    let side = 2 * reach + 1;
    let mut table = LagTable::new(vec![reach; ndim], true);
    for i in 0..side.pow(ndim as u32) {
        fft::unravel(i, &vec![side; ndim], &mut co);
        let lag: Vec<i64> = co.iter().map(|&x| x as i64 - reach as i64).collect();
        let mut at = |sign: i64| {
            for d in 0..ndim {
                img[d] = (sign * lag[d]).rem_euclid(pad as i64) as usize;
            }
            buf[fft::ravel(&img, &padded)].re
        };
        table.set(&lag, 0.5 * (at(1) + at(-1)))?;
    }
    Ok(CovarianceKernel::Tabulated(table))
}

/// Pool the tiles of each label into (m_r, Γ_r) and build the piecewise
/// model on the tile layout.
pub fn fit_region_models(
    batch: &SampleBatch,
    grid: &TileGrid,
    labels: &[usize],
    region_count: usize,
) -> Result<PiecewiseField> {
    check_batch(batch, grid)?;
    if labels.len() != grid.n_tau() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} tiles", labels.len(), grid.n_tau())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= region_count) {
        return Err(Error::Label(l));
    }
    let stats = tile_stats(batch, grid);
    let len = grid.tile_len();
    let ndim = grid.lattice.ndim();
    let mut specs = Vec::with_capacity(region_count);
    for r in 0..region_count {
        let members: Vec<&TileStats> = stats.iter().zip(labels).filter(|(_, &l)| l == r).map(|(s, _)| s).collect();
        if members.is_empty() {
            return Err(Error::Label(r));
        }
        let mean = pooled_mean(&members);
        // PSD projection: negative pooled spectral values are clamped to zero
        let spec = pooled_spectrum(&members, mean, len);
        specs.push(RegionSpec { mean, kernel: kernel_from_spectrum(&spec, grid.k, ndim)? });
    }
    let partition = grid.partition(labels, region_count)?;
    PiecewiseField::build(grid.lattice.clone(), partition, specs, SpectrumOptions::bccb().tiled(grid.k))
}

/// Binary PGM of a partition; 3-d lattices are stacked slice by slice.
pub fn label_map_pgm(lattice: &Lattice, partition: &Partition) -> Vec<u8> {
    let dims = lattice.dims();
    let width = dims[dims.len() - 1];
    let height = lattice.n() / width;
    let step = 255 / partition.region_count.saturating_sub(1).max(1);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(partition.labels.iter().map(|&l| (l.min(255) * step).min(255) as u8));
    out
}
