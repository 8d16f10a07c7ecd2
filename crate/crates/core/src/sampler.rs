//! Synthetic realizations of piecewise homogeneous Gaussian fields by FFT
//! sampling on tori.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::distortion::FieldArray;
use crate::error::{Error, Result};
use crate::fft;
use crate::field::{
    embedding_covariance, torus_covariance, torus_spectrum, CovarianceKernel, PiecewiseField, RegionModel,
    SpectrumMethod,
};
use crate::rng;

/// Realizations sharing one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub fields: Vec<FieldArray>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn new(fields: Vec<FieldArray>, seed: u64) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::Size("a batch needs at least one realization".into()))?;
        if fields.iter().any(|f| f.lattice != first.lattice) {
            return Err(Error::ShapeMismatch("realizations on different lattices".into()));
        }
        Ok(SampleBatch { fields, seed })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn lattice(&self) -> &crate::field::Lattice {
        &self.fields[0].lattice
    }
}

/// Square-root spectrum of a kernel on the sampling torus, ready for synthesis.
#[derive(Debug, Clone)]
struct Embedding {
    shape: Vec<usize>,
    torus: Vec<usize>,
    amp: Vec<f64>,
}

impl Embedding {
    /// `padding == 1`: periodized kernel on the block torus, which reproduces
    /// the torus law used by bccb spectra. `padding ≥ 2`: classical circulant
    /// embedding of the minimum-image kernel on a padded torus.
    fn new(kernel: &CovarianceKernel, shape: &[usize], padding: usize) -> Result<Self> {
        if padding == 0 {
            return Err(Error::Config("padding factor must be at least 1".into()));
        }
        let torus: Vec<usize> = shape.iter().map(|&s| if s == 1 { 1 } else { s * padding }).collect();
        let cov = if padding == 1 {
            torus_covariance(kernel, &torus)?
        } else {
            embedding_covariance(kernel, &torus)?
        };
        let spec = torus_spectrum(&cov, &torus);
        let n = spec.len() as f64;
        let tol = 1e-9 * kernel.variance();
        let min = spec.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(Error::Embedding { min });
        }
        let amp = spec.iter().map(|&s| (s.max(0.0) / n).sqrt()).collect();
        Ok(Embedding { shape: shape.to_vec(), torus, amp })
    }

    /// Zero-mean block sample in row-major order of `shape`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w: Vec<Complex64> = self
            .amp
            .iter()
            .map(|&a| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(a * re, a * im)
            })
            .collect();
        fft::forward(&mut w, &self.torus);
        let n: usize = self.shape.iter().product();
        if self.torus == self.shape {
            return w.into_iter().map(|c| c.re).collect();
        }
        let mut co = vec![0; self.shape.len()];
        (0..n)
            .map(|i| {
                fft::unravel(i, &self.shape, &mut co);
                w[fft::ravel(&co, &self.torus)].re
            })
            .collect()
    }
}

pub fn default_padding(method: SpectrumMethod) -> usize {
    match method {
        SpectrumMethod::Bccb => 1,
        SpectrumMethod::Dense => 2,
    }
}

/// One stationary block of `tile_shape` with mean m_r and the region's kernel.
pub fn sample_region<R: Rng + ?Sized>(
    model: &RegionModel,
    tile_shape: &[usize],
    padding: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let e = Embedding::new(&model.kernel, tile_shape, padding)?;
    Ok(e.draw(rng).into_iter().map(|v| v + model.mean).collect())
}

/// `t` independent realizations. Each region is sampled independently per
/// site group (whole region or tile cell) on the torus of the group's
/// bounding box, then masked to the group's sites.
pub fn sample_field(field: &PiecewiseField, t: usize, seed: u64, padding: Option<usize>) -> Result<SampleBatch> {
    if t == 0 {
        return Err(Error::Size("need at least one realization".into()));
    }
    let groups = field.groups();
    let mut emb: Vec<HashMap<Vec<usize>, Embedding>> = Vec::with_capacity(groups.len());
    for (model, g) in field.regions.iter().zip(&groups) {
        let pad = padding.unwrap_or_else(|| default_padding(model.spectrum_method));
        let mut m = HashMap::new();
        for grp in g {
            if !m.contains_key(&grp.bbox.shape) {
                m.insert(grp.bbox.shape.clone(), Embedding::new(&model.kernel, &grp.bbox.shape, pad)?);
            }
        }
        emb.push(m);
    }
    let tag = rng::tag("sample-field");
    let lattice = field.lattice.clone();
    let fields: Vec<FieldArray> = (0..t)
        .into_par_iter()
        .map(|ti| {
            let mut values = vec![0.0; lattice.n()];
            for (r, (model, g)) in field.regions.iter().zip(&groups).enumerate() {
                let mut rg = rng::stream2(seed, tag, ti as u64, r as u64);
                for grp in g {
                    let block = emb[r][&grp.bbox.shape].draw(&mut rg);
                    let bsites = grp.bbox.sites(&lattice);
                    let mut lookup: HashMap<usize, usize> = HashMap::new();
                    if !grp.is_rectangular() {
                        lookup = bsites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
                    }
                    if grp.is_rectangular() {
                        for (&s, v) in bsites.iter().zip(&block) {
                            values[s] = v + model.mean;
                        }
                    } else {
                        for &s in &grp.sites {
                            values[s] = block[lookup[&s]] + model.mean;
                        }
                    }
                }
            }
            FieldArray { lattice: lattice.clone(), values }
        })
        .collect();
    Ok(SampleBatch { fields, seed })
}
