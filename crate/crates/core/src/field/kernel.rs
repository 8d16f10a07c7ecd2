use crate::error::{Error, Result};

/// Stationary covariance kernel Γ(h) on the integer lattice.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceKernel {
    White { variance: f64 },
    /// Γ(h) = σ² exp(−‖h‖₂/ℓ)
    Exponential { variance: f64, length_scale: f64 },
    /// Γ(h) = σ² exp(−‖h‖₂²/(2ℓ²))
    SquaredExponential { variance: f64, length_scale: f64 },
    Tabulated(LagTable),
}

/// ln(1e18): parametric kernels are treated as zero beyond the lag where
/// they fall below 1e-18 of their variance.
const TAIL: f64 = 41.446_531_673_892_82;

impl CovarianceKernel {
    pub fn white(variance: f64) -> Self {
        CovarianceKernel::White { variance }
    }

    pub fn exponential(variance: f64, length_scale: f64) -> Self {
        CovarianceKernel::Exponential { variance, length_scale }
    }

    pub fn squared_exponential(variance: f64, length_scale: f64) -> Self {
        CovarianceKernel::SquaredExponential { variance, length_scale }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CovarianceKernel::White { .. } => "white",
            CovarianceKernel::Exponential { .. } => "exponential",
            CovarianceKernel::SquaredExponential { .. } => "squared_exponential",
            CovarianceKernel::Tabulated(_) => "tabulated",
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Kernel(m.to_string()));
        match self {
            CovarianceKernel::White { variance } => {
                if !(variance.is_finite() && *variance >= 0.0) {
                    return bad("variance must be finite and nonnegative");
                }
            }
            CovarianceKernel::Exponential { variance, length_scale }
            | CovarianceKernel::SquaredExponential { variance, length_scale } => {
                if !(variance.is_finite() && *variance >= 0.0) {
                    return bad("variance must be finite and nonnegative");
                }
                if !(length_scale.is_finite() && *length_scale > 0.0) {
                    return bad("length_scale must be positive");
                }
            }
            CovarianceKernel::Tabulated(t) => {
                if t.get(&vec![0; t.ndim()]).is_none() {
                    return bad("table has no value at lag 0");
                }
                if t.values.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("table values must be finite");
                }
            }
        }
        Ok(())
    }

    /// Γ(0).
    pub fn variance(&self) -> f64 {
        match self {
            CovarianceKernel::White { variance }
            | CovarianceKernel::Exponential { variance, .. }
            | CovarianceKernel::SquaredExponential { variance, .. } => *variance,
            CovarianceKernel::Tabulated(t) => t.get(&vec![0; t.ndim()]).unwrap_or(f64::NAN),
        }
    }

    pub fn eval(&self, lag: &[i64]) -> Result<f64> {
        let r2 = || lag.iter().map(|&h| (h * h) as f64).sum::<f64>();
        Ok(match self {
            CovarianceKernel::White { variance } => {
                if lag.iter().all(|&h| h == 0) {
                    *variance
                } else {
                    0.0
                }
            }
            CovarianceKernel::Exponential { variance, length_scale } => {
                variance * (-r2().sqrt() / length_scale).exp()
            }
            CovarianceKernel::SquaredExponential { variance, length_scale } => {
                variance * (-r2() / (2.0 * length_scale * length_scale)).exp()
            }
            CovarianceKernel::Tabulated(t) => t.eval(lag)?,
        })
    }

    /// Per-axis lag bound outside which Γ is zero (or negligible), if any.
    pub(crate) fn reach(&self, ndim: usize) -> Option<Vec<i64>> {
        match self {
            CovarianceKernel::White { .. } => Some(vec![0; ndim]),
            CovarianceKernel::Exponential { length_scale, .. } => {
                Some(vec![(TAIL * length_scale).ceil() as i64; ndim])
            }
            CovarianceKernel::SquaredExponential { length_scale, .. } => {
                Some(vec![((2.0 * TAIL).sqrt() * length_scale).ceil() as i64; ndim])
            }
            CovarianceKernel::Tabulated(t) => {
                if t.compact_support {
                    Some(t.half.iter().map(|&h| h as i64).collect())
                } else {
                    None
                }
            }
        }
    }
}

/// Covariance values on a box of lags `[-half_a, half_a]` per axis.
///
/// Absent entries are unknown. Lags outside the box are zero only when
/// `compact_support` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct LagTable {
    half: Vec<usize>,
    values: Vec<Option<f64>>,
    pub compact_support: bool,
}

impl LagTable {
    pub fn new(half: Vec<usize>, compact_support: bool) -> Self {
        let len = half.iter().map(|h| 2 * h + 1).product();
        LagTable { half, values: vec![None; len], compact_support }
    }

    /// Build from `(lag, value)` entries. Each entry also fills its mirror
    /// lag; contradicting mirror values are rejected.
    pub fn from_entries(
        entries: &[(Vec<i64>, f64)],
        ndim: usize,
        compact_support: bool,
    ) -> Result<Self> {
        let mut half = vec![0usize; ndim];
        for (lag, _) in entries {
            if lag.len() != ndim {
                return Err(Error::Kernel(format!("lag {lag:?} has wrong dimension")));
            }
            for (h, &l) in half.iter_mut().zip(lag) {
                *h = (*h).max(l.unsigned_abs() as usize);
            }
        }
        let mut t = LagTable::new(half, compact_support);
        for (lag, v) in entries {
            t.set(lag, *v)?;
        }
        Ok(t)
    }

    pub fn ndim(&self) -> usize {
        self.half.len()
    }

    pub fn half_extent(&self) -> &[usize] {
        &self.half
    }

    fn index(&self, lag: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for (&l, &h) in lag.iter().zip(&self.half) {
            if l.unsigned_abs() as usize > h {
                return None;
            }
            idx = idx * (2 * h + 1) + (l + h as i64) as usize;
        }
        Some(idx)
    }

    pub fn set(&mut self, lag: &[i64], value: f64) -> Result<()> {
        let neg: Vec<i64> = lag.iter().map(|l| -l).collect();
        let (i, j) = match (self.index(lag), self.index(&neg)) {
            (Some(i), Some(j)) => (i, j),
            _ => return Err(Error::Kernel(format!("lag {lag:?} outside table"))),
        };
        for k in [i, j] {
            if let Some(old) = self.values[k] {
                if (old - value).abs() > 1e-12 * old.abs().max(value.abs()).max(1e-300) {
                    return Err(Error::Kernel(format!("asymmetric table at lag {lag:?}")));
                }
            }
            self.values[k] = Some(value);
        }
        Ok(())
    }

    pub fn get(&self, lag: &[i64]) -> Option<f64> {
        self.index(lag).and_then(|i| self.values[i])
    }

    pub fn eval(&self, lag: &[i64]) -> Result<f64> {
        match self.index(lag) {
            Some(i) => self.values[i].ok_or_else(|| Error::MissingLag { lag: lag.to_vec() }),
            None if self.compact_support => Ok(0.0),
            None => Err(Error::MissingLag { lag: lag.to_vec() }),
        }
    }

    /// All present `(lag, value)` pairs in row-major lag order.
    pub fn entries(&self) -> Vec<(Vec<i64>, f64)> {
        let dims: Vec<usize> = self.half.iter().map(|h| 2 * h + 1).collect();
        let mut co = vec![0usize; dims.len()];
        let mut out = Vec::new();
        for (i, v) in self.values.iter().enumerate() {
            if let Some(v) = v {
                crate::fft::unravel(i, &dims, &mut co);
                let lag = co.iter().zip(&self.half).map(|(&c, &h)| c as i64 - h as i64).collect();
                out.push((lag, *v));
            }
        }
        out
    }
}
