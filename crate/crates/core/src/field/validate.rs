use super::spectrum::{torus_covariance, torus_spectrum, CLAMP_TOL};
use super::{region_groups, CovarianceKernel, PiecewiseField, SpectrumMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: String,
    pub location: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, invariant: impl Into<String>, location: impl Into<String>) {
        self.violations.push(Violation { invariant: invariant.into(), location: location.into() });
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.invariant.contains(needle))
    }
}

/// Check every structural invariant of a field model without failing fast.
pub fn validate_field(field: &PiecewiseField) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let lat = &field.lattice;
    let d = lat.dims();
    if !(2..=3).contains(&d.len()) || d.iter().any(|&x| x == 0) {
        rep.push("lattice needs 2 or 3 positive side lengths", "lattice");
        return rep;
    }
    let part = &field.partition;
    let problems = part.problems(lat);
    for p in &problems {
        let inv = if p.starts_with("partition does not cover") {
            "partition does not cover lattice".to_string()
        } else {
            p.clone()
        };
        rep.push(inv, format!("partition: {p}"));
    }
    let wsum: f64 = part.weights().iter().sum();
    if problems.is_empty() && (wsum - 1.0).abs() > 1e-12 {
        rep.push("weights do not sum to one", format!("sum = {wsum}"));
    }
    if field.regions.len() != part.region_count {
        rep.push(
            "region model count differs from K",
            format!("{} models, K = {}", field.regions.len(), part.region_count),
        );
    }
    let labels_ok = part.labels.len() == lat.n();
    let groups = if labels_ok {
        region_groups(lat, part, field.tile)
    } else {
        Vec::new()
    };
    let sizes = part.sizes();
    for (r, model) in field.regions.iter().enumerate() {
        let loc = |what: &str| format!("region {r}: {what}");
        if let Err(e) = model.kernel.check() {
            rep.push("kernel is malformed", loc(&e.to_string()));
            continue;
        }
        let var = model.kernel.variance();
        let zero = vec![0i64; lat.ndim()];
        match model.kernel.eval(&zero) {
            Ok(v) if (v - var).abs() <= 1e-12 * var.abs() => {}
            _ => rep.push("kernel value at lag 0 differs from its variance", loc("lag 0")),
        }
        if let CovarianceKernel::Tabulated(t) = &model.kernel {
            for (lag, v) in t.entries() {
                let neg: Vec<i64> = lag.iter().map(|x| -x).collect();
                if t.get(&neg) != Some(v) {
                    rep.push("kernel is not symmetric", loc(&format!("lag {lag:?}")));
                    break;
                }
            }
        }
        if let Some(g) = groups.get(r) {
            let mut shapes: Vec<Vec<usize>> = g.iter().map(|x| x.bbox.shape.clone()).collect();
            shapes.sort();
            shapes.dedup();
            for shape in shapes {
                match torus_covariance(&model.kernel, &shape) {
                    Ok(c) => {
                        let min = torus_spectrum(&c, &shape).into_iter().fold(f64::INFINITY, f64::min);
                        if min < -CLAMP_TOL * var {
                            rep.push(
                                "NotPSD: kernel spectrum negative on the region torus",
                                loc(&format!("torus {shape:?}, min DFT value {min:.6}")),
                            );
                        }
                    }
                    Err(e) => rep.push("kernel cannot be evaluated on the region torus", loc(&e.to_string())),
                }
            }
        }
        let s = &model.spectrum;
        if let Some(&nr) = sizes.get(r) {
            if s.len() != nr {
                rep.push("spectrum length differs from region size", loc(&format!("{} vs {nr}", s.len())));
                continue;
            }
        }
        if s.windows(2).any(|w| w[0] < w[1]) {
            rep.push("spectrum is not nonincreasing", loc("spectrum"));
        }
        if s.iter().any(|&x| !(x >= 0.0)) {
            rep.push("spectrum has negative or non-finite eigenvalues", loc("spectrum"));
        }
        if let Some(g) = groups.get(r) {
            let trace: Option<f64> = match model.spectrum_method {
                SpectrumMethod::Dense => Some(var * s.len() as f64),
                SpectrumMethod::Bccb => g
                    .iter()
                    .map(|x| torus_covariance(&model.kernel, &x.bbox.shape).ok().map(|c| c[0] * x.sites.len() as f64))
                    .sum(),
            };
            let tol = match model.spectrum_method {
                SpectrumMethod::Dense => 1e-8,
                SpectrumMethod::Bccb => 1e-6,
            };
            if let Some(tr) = trace {
                let sum: f64 = s.iter().sum();
                if (sum - tr).abs() > tol * tr.abs().max(f64::MIN_POSITIVE) {
                    rep.push("eigenvalue sum differs from covariance trace", loc(&format!("{sum} vs {tr}")));
                }
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::*;

    #[test]
    fn white_field_is_valid() {
        let l = Lattice::new(vec![4, 4]).unwrap();
        let f = PiecewiseField::homogeneous(l, 0.0, CovarianceKernel::white(1.0), SpectrumOptions::bccb()).unwrap();
        assert!(validate_field(&f).is_valid());
    }

    #[test]
    fn gap_reported() {
        let l = Lattice::new(vec![2, 2]).unwrap();
        let mut f = PiecewiseField::homogeneous(l, 0.0, CovarianceKernel::white(1.0), SpectrumOptions::dense()).unwrap();
        f.partition.labels[3] = UNLABELED;
        let rep = validate_field(&f);
        assert!(rep.contains("partition does not cover lattice"));
    }

    #[test]
    fn negative_torus_dft_reported() {
        let l = Lattice::new(vec![4, 1]).unwrap();
        let t = LagTable::from_entries(&[(vec![0, 0], 1.0), (vec![1, 0], 0.9), (vec![2, 0], 0.0)], 2, true).unwrap();
        let f = PiecewiseField {
            partition: Partition::single(&l),
            lattice: l,
            regions: vec![RegionModel {
                mean: 0.0,
                kernel: CovarianceKernel::Tabulated(t),
                spectrum: vec![],
                spectrum_method: SpectrumMethod::Bccb,
            }],
            tile: None,
        };
        let rep = validate_field(&f);
        assert!(rep.contains("NotPSD"));
        assert!(rep.violations.iter().any(|v| v.location.contains("-0.8")));
    }
}
