//! Benjamini–Hochberg step-up adjustment.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BhOutcome {
    /// Adjusted p-values in the input order.
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// p̃_(k) = min_{j≥k} m·p_(j)/j, clamped to 1.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Result<BhOutcome> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("p-value {p} outside [0,1]")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0,1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut run = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        run = run.min(m as f64 * p_values[i] / (rank + 1) as f64);
        adjusted[i] = run.min(1.0);
    }
    let rejected = adjusted.iter().map(|&p| p <= alpha).collect();
    Ok(BhOutcome { adjusted, rejected })
}
