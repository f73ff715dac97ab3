//! Periodic 1-D deconvolution benchmark.
//!
//! Blur kernel Ψ(x) ∝ (x+a)²(x−a)² supported on [−a, a] with a = 0.235,
//! discretized on n uniform subintervals of the unit circle and normalized
//! so every circulant row sums to exactly 1. Truth is the 1-periodic
//! sin(2πx) + cos(2πx).

use nalgebra::{DMatrix, DVector};
use std::f64::consts::TAU;

use super::{identity_alpha, noise_sigma, noise_vector, GeneratedProblem, PriorSpec, ProblemSpec};
use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::problem::InverseProblem;
use crate::problems::priors::make_identity_prior;
use crate::pto::PtoMap;

pub const KERNEL_HALF_WIDTH: f64 = 0.235;

/// First row of the normalized circulant blur matrix.
pub fn kernel_row(n: usize) -> DVector<f64> {
    let h = 1.0 / n as f64;
    let a = KERNEL_HALF_WIDTH;
    let mut row = DVector::zeros(n);
    for j in 0..n {
        // Signed circular distance between grid points 0 and j.
        let mut x = j as f64 * h;
        if x > 0.5 {
            x -= 1.0;
        }
        if x.abs() <= a {
            let t = (x + a) * (x - a);
            row[j] = t * t;
        }
    }
    let s: f64 = row.iter().sum();
    row / s
}

pub fn make_deconv1d(spec: &ProblemSpec) -> Result<GeneratedProblem> {
    let n = spec.n;
    if n < 8 {
        return Err(Error::InvalidParameter("deconv1d needs n >= 8".into()));
    }
    let row = kernel_row(n);
    // Circulant: A[i][j] = row[(j - i) mod n]; symmetric since the kernel is
    // even, but built index-wise regardless.
    let a = DMatrix::from_fn(n, n, |i, j| row[(j + n - i) % n]);

    let truth = DVector::from_fn(n, |i, _| {
        let x = i as f64 / n as f64;
        (TAU * x).sin() + (TAU * x).cos()
    });
    finish_linear(spec, a, truth)
}

/// Shared tail for dense linear benchmarks with scaled-identity priors.
pub(crate) fn finish_linear(
    spec: &ProblemSpec,
    a: DMatrix<f64>,
    truth: DVector<f64>,
) -> Result<GeneratedProblem> {
    let k = a.nrows();
    let n = a.ncols();
    let clean = &a * &truth;
    let sigma = noise_sigma(&clean, spec.noise_frac);
    let d = clean + noise_vector(k, sigma, spec.data_seed);
    let noise_cov = Covariance::scaled_identity(k, sigma * sigma)?;
    let prior = match spec.prior {
        PriorSpec::ScaledIdentity { alpha_scale } => {
            make_identity_prior(n, identity_alpha(alpha_scale, sigma))?
        }
        PriorSpec::BiLaplacian {
            delta,
            gamma,
            theta1,
            theta2,
            angle,
        } => {
            let g = (n as f64).sqrt().round() as usize;
            if g * g != n {
                return Err(Error::InvalidParameter(
                    "bilaplacian prior needs a square grid".into(),
                ));
            }
            super::priors::make_bilaplacian_prior(
                g,
                g,
                delta,
                gamma,
                super::priors::rotated_tensor(theta1, theta2, angle),
            )?
        }
    };
    let problem = InverseProblem::new(
        PtoMap::from_dense(a),
        d,
        DVector::zeros(n),
        noise_cov,
        prior,
    )?;
    Ok(GeneratedProblem {
        problem,
        truth,
        spec: spec.clone(),
        sigma_noise: sigma,
    })
}
