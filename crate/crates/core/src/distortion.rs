//! Quadratic distortion at site, region and field level.

use crate::error::{Error, Result};
use crate::field::{Lattice, Partition};
use crate::numeric::CompensatedSum;

/// One realization: row-major values on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldArray {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl FieldArray {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} sites",
                values.len(),
                lattice.n()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field values must be finite".into()));
        }
        Ok(FieldArray { lattice, values })
    }

    pub fn constant(lattice: Lattice, c: f64) -> Self {
        let values = vec![c; lattice.n()];
        FieldArray { lattice, values }
    }
}

pub fn per_site_distortion(a: f64, b: f64) -> f64 {
    (a - b) * (a - b)
}

fn same_shape(x: &FieldArray, y: &FieldArray) -> Result<()> {
    if x.lattice != y.lattice || x.values.len() != y.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.lattice.dims(),
            y.lattice.dims()
        )));
    }
    Ok(())
}

/// (1/n) Σ_s (x(s) − x̂(s))².
pub fn global_distortion(x: &FieldArray, xhat: &FieldArray) -> Result<f64> {
    same_shape(x, xhat)?;
    let mut s = CompensatedSum::new();
    for (a, b) in x.values.iter().zip(&xhat.values) {
        s.add(per_site_distortion(*a, *b));
    }
    Ok(s.value() / x.values.len() as f64)
}

/// Per-region mean squared error d_r.
pub fn regionwise_distortion(x: &FieldArray, xhat: &FieldArray, partition: &Partition) -> Result<Vec<f64>> {
    same_shape(x, xhat)?;
    if partition.labels.len() != x.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} sites",
            partition.labels.len(),
            x.values.len()
        )));
    }
    let k = partition.region_count;
    let mut sums = vec![CompensatedSum::new(); k];
    let mut counts = vec![0usize; k];
    for ((a, b), &l) in x.values.iter().zip(&xhat.values).zip(&partition.labels) {
        if l >= k {
            return Err(Error::Partition(format!("label {l} outside 0..{k}")));
        }
        sums[l].add(per_site_distortion(*a, *b));
        counts[l] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s.value() / c as f64 })
        .collect())
}
