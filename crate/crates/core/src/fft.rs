//! Multidimensional complex FFT over row-major arrays, done one axis at a time.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn transform(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let n: usize = dims.iter().product();
    assert_eq!(data.len(), n);
    let mut planner = FftPlanner::<f64>::new();
    let mut line = Vec::new();
    for axis in 0..dims.len() {
        let len = dims[axis];
        if len == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        let stride: usize = dims[axis + 1..].iter().product();
        let outer = n / (len * stride);
        line.resize(len, Complex64::new(0.0, 0.0));
        for o in 0..outer {
            for s in 0..stride {
                let base = o * len * stride + s;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
    }
}

/// Unnormalized forward DFT.
pub fn forward(data: &mut [Complex64], dims: &[usize]) {
    transform(data, dims, false);
}

/// Inverse DFT including the 1/n factor.
pub fn inverse(data: &mut [Complex64], dims: &[usize]) {
    transform(data, dims, true);
    let scale = 1.0 / data.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

pub fn forward_real(data: &[f64], dims: &[usize]) -> Vec<Complex64> {
    let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    forward(&mut c, dims);
    c
}

/// Decompose a flat row-major index into coordinates.
pub fn unravel(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        out[a] = idx % dims[a];
        idx /= dims[a];
    }
}

pub fn ravel(coords: &[usize], dims: &[usize]) -> usize {
    coords.iter().zip(dims).fold(0, |acc, (&c, &d)| acc * d + c)
}
