//! Lattices, partitions, covariance kernels and the piecewise homogeneous
//! Gaussian field model.

mod kernel;
mod spectrum;
mod validate;

pub use kernel::{CovarianceKernel, LagTable};
pub use spectrum::{
    build_covariance_matrix, embedding_covariance, region_spectrum, torus_covariance,
    torus_spectrum, SpectrumMethod, DEFAULT_DENSE_CAP,
};
pub use validate::{validate_field, ValidationReport, Violation};

use crate::error::{Error, Result};
use crate::fft;

/// Marker for a site that belongs to no region.
pub const UNLABELED: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    dims: Vec<usize>,
}

impl Lattice {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::Lattice(format!("need 2 or 3 dimensions, got {}", dims.len())));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Lattice("every side length must be positive".into()));
        }
        Ok(Lattice { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn n(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.ndim()];
        fft::unravel(idx, &self.dims, &mut c);
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        fft::ravel(coords, &self.dims)
    }

    /// Same lattice with every side multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Result<Self> {
        Lattice::new(self.dims.iter().map(|d| d * factor).collect())
    }
}

/// Region labels per site, 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub region_count: usize,
}

impl Partition {
    /// Checked constructor: every site labeled, every region nonempty.
    pub fn new(lattice: &Lattice, labels: Vec<usize>, region_count: usize) -> Result<Self> {
        let p = Partition { labels, region_count };
        if let Some(msg) = p.problems(lattice).into_iter().next() {
            return Err(Error::Partition(msg));
        }
        Ok(p)
    }

    pub fn single(lattice: &Lattice) -> Self {
        Partition { labels: vec![0; lattice.n()], region_count: 1 }
    }

    /// Labels derived from a per-site function.
    pub fn from_fn(
        lattice: &Lattice,
        region_count: usize,
        f: impl Fn(&[usize]) -> usize,
    ) -> Result<Self> {
        let labels = (0..lattice.n()).map(|i| f(&lattice.coords(i))).collect();
        Partition::new(lattice, labels, region_count)
    }

    pub(crate) fn problems(&self, lattice: &Lattice) -> Vec<String> {
        let mut out = Vec::new();
        if self.labels.len() != lattice.n() {
            out.push(format!(
                "label count {} differs from site count {}",
                self.labels.len(),
                lattice.n()
            ));
            return out;
        }
        if self.region_count == 0 {
            out.push("region count is zero".into());
            return out;
        }
        if let Some(i) = self.labels.iter().position(|&l| l == UNLABELED) {
            out.push(format!("partition does not cover lattice (site {i} unlabeled)"));
        }
        if let Some(i) = self.labels.iter().position(|&l| l != UNLABELED && l >= self.region_count) {
            out.push(format!("site {i} has label {} >= K={}", self.labels[i], self.region_count));
        }
        for (r, &s) in self.sizes().iter().enumerate() {
            if s == 0 {
                out.push(format!("region {r} is empty"));
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.region_count];
        for &l in &self.labels {
            if l < self.region_count {
                s[l] += 1;
            }
        }
        s
    }

    /// w_r = n_r / n.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.labels.len() as f64;
        self.sizes().iter().map(|&s| s as f64 / n).collect()
    }

    pub fn sites(&self, region: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == region).collect()
    }
}

/// Axis-aligned box of lattice sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub origin: Vec<usize>,
    pub shape: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat lattice indices of the block in its own row-major order.
    pub fn sites(&self, lattice: &Lattice) -> Vec<usize> {
        let mut co = vec![0; self.shape.len()];
        (0..self.len())
            .map(|i| {
                fft::unravel(i, &self.shape, &mut co);
                for (c, o) in co.iter_mut().zip(&self.origin) {
                    *c += o;
                }
                lattice.index(&co)
            })
            .collect()
    }

    pub fn bounding(lattice: &Lattice, sites: &[usize]) -> Block {
        let d = lattice.ndim();
        let mut lo = vec![usize::MAX; d];
        let mut hi = vec![0; d];
        for &s in sites {
            for (a, c) in lattice.coords(s).into_iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        let shape = lo.iter().zip(&hi).map(|(l, h)| h + 1 - l).collect();
        Block { origin: lo, shape }
    }
}

/// A set of sites of one region treated as a unit for spectra and sampling:
/// the whole region, or its intersection with one cell of the tile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGroup {
    /// Flat indices in row-major order.
    pub sites: Vec<usize>,
    pub bbox: Block,
}

impl SiteGroup {
    pub fn is_rectangular(&self) -> bool {
        self.sites.len() == self.bbox.len()
    }
}

/// Group each region's sites, either as a whole or split by a `tile`-sided grid.
/// Grid cells along each axis are `[0,k), [k,2k), ...`, the last one possibly
/// shorter than `k`.
pub fn region_groups(
    lattice: &Lattice,
    partition: &Partition,
    tile: Option<usize>,
) -> Vec<Vec<SiteGroup>> {
    let k = partition.region_count;
    let mut out: Vec<Vec<SiteGroup>> = vec![Vec::new(); k];
    match tile {
        None => {
            for (r, groups) in out.iter_mut().enumerate() {
                let sites = partition.sites(r);
                if !sites.is_empty() {
                    let bbox = Block::bounding(lattice, &sites);
                    groups.push(SiteGroup { sites, bbox });
                }
            }
        }
        Some(t) => {
            let t = t.max(1);
            let dims = lattice.dims();
            let cells: Vec<usize> = dims.iter().map(|d| d.div_ceil(t)).collect();
            let ncell: usize = cells.iter().product();
            let mut co = vec![0; dims.len()];
            for c in 0..ncell {
                fft::unravel(c, &cells, &mut co);
                let origin: Vec<usize> = co.iter().map(|x| x * t).collect();
                let shape: Vec<usize> =
                    origin.iter().zip(dims).map(|(o, d)| t.min(d - o)).collect();
                let cell = Block { origin, shape };
                let mut per: Vec<Vec<usize>> = vec![Vec::new(); k];
                let mut sites = cell.sites(lattice);
                sites.sort_unstable();
                for s in sites {
                    let l = partition.labels[s];
                    if l < k {
                        per[l].push(s);
                    }
                }
                for (r, sites) in per.into_iter().enumerate() {
                    if !sites.is_empty() {
                        let bbox = Block::bounding(lattice, &sites);
                        out[r].push(SiteGroup { sites, bbox });
                    }
                }
            }
        }
    }
    out
}

/// One region's stationary Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    pub mean: f64,
    pub kernel: CovarianceKernel,
    /// Eigenvalues, nonincreasing and nonnegative.
    pub spectrum: Vec<f64>,
    pub spectrum_method: SpectrumMethod,
}

/// Mean and kernel of a region before spectra are computed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub mean: f64,
    pub kernel: CovarianceKernel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub method: SpectrumMethod,
    /// Treat each cell of a `tile`-sided grid as an independent block.
    pub tile: Option<usize>,
    pub dense_cap: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions { method: SpectrumMethod::Bccb, tile: None, dense_cap: DEFAULT_DENSE_CAP }
    }
}

impl SpectrumOptions {
    pub fn bccb() -> Self {
        Self::default()
    }

    pub fn dense() -> Self {
        SpectrumOptions { method: SpectrumMethod::Dense, ..Self::default() }
    }

    pub fn tiled(mut self, k: usize) -> Self {
        self.tile = Some(k);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseField {
    pub lattice: Lattice,
    pub partition: Partition,
    pub regions: Vec<RegionModel>,
    pub tile: Option<usize>,
}

impl PiecewiseField {
    pub fn build(
        lattice: Lattice,
        partition: Partition,
        specs: Vec<RegionSpec>,
        opts: SpectrumOptions,
    ) -> Result<Self> {
        if let Some(msg) = partition.problems(&lattice).into_iter().next() {
            return Err(Error::Partition(msg));
        }
        if specs.len() != partition.region_count {
            return Err(Error::Partition(format!(
                "{} region models for {} regions",
                specs.len(),
                partition.region_count
            )));
        }
        if let Some(0 | 1) = opts.tile {
            return Err(Error::Config("tile side must be at least 2".into()));
        }
        let groups = region_groups(&lattice, &partition, opts.tile);
        let mut regions = Vec::with_capacity(specs.len());
        for (spec, g) in specs.into_iter().zip(&groups) {
            spec.kernel.check()?;
            if !spec.mean.is_finite() {
                return Err(Error::Kernel("mean must be finite".into()));
            }
            let spectrum = spectrum::groups_spectrum(&spec.kernel, &lattice, g, opts.method, opts.dense_cap)?;
            regions.push(RegionModel {
                mean: spec.mean,
                kernel: spec.kernel,
                spectrum,
                spectrum_method: opts.method,
            });
        }
        Ok(PiecewiseField { lattice, partition, regions, tile: opts.tile })
    }

    /// Single homogeneous region covering the lattice.
    pub fn homogeneous(
        lattice: Lattice,
        mean: f64,
        kernel: CovarianceKernel,
        opts: SpectrumOptions,
    ) -> Result<Self> {
        let p = Partition::single(&lattice);
        Self::build(lattice, p, vec![RegionSpec { mean, kernel }], opts)
    }

    pub fn n(&self) -> usize {
        self.lattice.n()
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.partition.weights()
    }

    pub fn groups(&self) -> Vec<Vec<SiteGroup>> {
        region_groups(&self.lattice, &self.partition, self.tile)
    }

    pub fn specs(&self) -> Vec<RegionSpec> {
        self.regions
            .iter()
            .map(|r| RegionSpec { mean: r.mean, kernel: r.kernel.clone() })
            .collect()
    }

    pub fn options(&self) -> SpectrumOptions {
        SpectrumOptions {
            method: self.regions.first().map_or(SpectrumMethod::Bccb, |r| r.spectrum_method),
            tile: self.tile,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}
