//! Shapiro–Wilk W test with Royston's coefficient and p-value approximations
//! (algorithm AS R94, uncensored case).

use crate::error::{Error, Result};
use crate::waterfill::{q_function, q_inverse};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];
const SMALL: f64 = 1e-19;

pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 5000;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn norm_quantile(p: f64) -> f64 {
    // Φ⁻¹(p) = −Q⁻¹(p); p is always inside (0, 1) here
    -q_inverse(p).unwrap_or(0.0)
}

/// Half of the antisymmetric weight vector, largest weight first.
fn coefficients(n: usize) -> Vec<f64> {
    let nn2 = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> = (1..=nn2).map(|i| norm_quantile((i as f64 - 0.375) / an25)).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; nn2];
    let (start, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        a[1] = a2;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    a[0] = a1;
    for i in start..nn2 {
        a[i] = -m[i] / fac;
    }
    a
}

/// W statistic and its p-value.
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64)> {
    let n = sample.len();
    if !(MIN_LEN..=MAX_LEN).contains(&n) {
        return Err(Error::Size(format!("Shapiro-Wilk needs {MIN_LEN}..={MAX_LEN} values, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("sample contains non-finite values".into()));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    let scale = x[0].abs().max(x[n - 1].abs());
    if range <= 4.0 * f64::EPSILON * scale || range < SMALL {
        return Err(Error::DegenerateSample);
    }
    let a = coefficients(n);
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, &xi) in xs.iter().enumerate() {
        let j = n - 1 - i;
        let c = match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[i],
            std::cmp::Ordering::Greater => a[j],
            std::cmp::Ordering::Equal => 0.0,
        };
        let d = xi - mean;
        ssa += c * c;
        ssx += d * d;
        sax += c * d;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = ((ssassx - sax) * (ssassx + sax) / (ssa * ssx)).max(0.0);
    let w = 1.0 - w1;

    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        let p = (pi6 * (w.sqrt().asin() - stqr)).max(0.0);
        return Ok((w, p.min(1.0)));
    }
    let y = w1.ln();
    let an = n as f64;
    let p = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            SMALL
        } else {
            let y = -(gamma - y).ln();
            let m = poly(&C3, an);
            let s = poly(&C4, an).exp();
            q_function((y - m) / s)
        }
    } else {
        let xx = an.ln();
        let m = poly(&C5, xx);
        let s = poly(&C6, xx).exp();
        q_function((y - m) / s)
    };
    Ok((w, p))
}
