//! The inverse problem model: data, prior, noise model and the negative log
//! posterior (cost) with its gradient.

use nalgebra::DVector;

use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::pto::PtoMap;

#[derive(Clone)]
pub struct InverseProblem {
    pub pto: PtoMap,
    /// Observation vector d (length k).
    pub data: DVector<f64>,
    /// Prior mean u0 (length n).
    pub prior_mean: DVector<f64>,
    /// Noise covariance L (k x k).
    pub noise_cov: Covariance,
    /// Prior covariance Gamma (n x n).
    pub prior_cov: Covariance,
}

impl InverseProblem {
    pub fn new(
        pto: PtoMap,
        data: DVector<f64>,
        prior_mean: DVector<f64>,
        noise_cov: Covariance,
        prior_cov: Covariance,
    ) -> Result<Self> {
        let p = Self {
            pto,
            data,
            prior_mean,
            noise_cov,
            prior_cov,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.pto.input_dim(), self.pto.output_dim());
        for (len, expected) in [
            (self.data.len(), k),
            (self.prior_mean.len(), n),
            (self.noise_cov.dim(), k),
            (self.prior_cov.dim(), n),
        ] {
            if len != expected {
                return Err(Error::DimensionMismatch { expected, got: len });
            }
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        self.pto.input_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.pto.output_dim()
    }

    /// J(u) = 1/2 |d - F(u)|^2_{L^-1} + 1/2 |u - u0|^2_{Gamma^-1}
    pub fn cost(&self, u: &DVector<f64>) -> Result<f64> {
        let r = &self.data - self.pto.forward(u)?;
        let dv = u - &self.prior_mean;
        let misfit = 0.5 * r.dot(&self.noise_cov.apply_inverse(&r)?);
        let reg = 0.5 * dv.dot(&self.prior_cov.apply_inverse(&dv)?);
        Ok(misfit + reg)
    }

    /// grad J(u) = dF(u)^T L^{-1} (F(u) - d) + Gamma^{-1} (u - u0)
    pub fn gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.pto.forward(u)? - &self.data;
        let misfit_grad = self.pto.vjp(u, &self.noise_cov.apply_inverse(&r)?)?;
        let reg_grad = self.prior_cov.apply_inverse(&(u - &self.prior_mean))?;
        Ok(misfit_grad + reg_grad)
    }
}

/// Flags carried on a [`SolveResult`]; a non-converged randomized sub-problem
/// is reported here rather than as an error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveFlags {
    pub not_converged: bool,
    pub rank_deficient_prior: bool,
    /// Inner solves skipped under `skip_failed`.
    pub skipped_samples: usize,
}

impl SolveFlags {
    pub fn is_clean(&self) -> bool {
        !self.not_converged && !self.rank_deficient_prior && self.skipped_samples == 0
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.not_converged {
            parts.push("not_converged".to_string());
        }
        if self.rank_deficient_prior {
            parts.push("rank_deficient_prior".to_string());
        }
        if self.skipped_samples > 0 {
            parts.push(format!("skipped={}", self.skipped_samples));
        }
        if parts.is_empty() {
            "ok".to_string()
        } else {
            parts.join("|")
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub estimate: DVector<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Samples per randomized variable (N).
    pub sample_count: usize,
    /// Outer samples (M) for nested variants; equals `sample_count` otherwise.
    pub outer_sample_count: usize,
    pub wall_time_ms: f64,
    pub seed: u64,
    pub flags: SolveFlags,
    /// Per-sample solutions, when the solver was asked to keep them.
    pub samples: Option<Vec<DVector<f64>>>,
}

impl SolveResult {
    pub fn check_finite(&self) -> Result<()> {
        if self.estimate.iter().any(|x| !x.is_finite()) {
            return Err(Error::NanEncountered("solve result estimate"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Covariance;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scalar_problem() -> InverseProblem {
        // A = 1, L = 1, Gamma = 1, d = 2, u0 = 0
        InverseProblem::new(
            PtoMap::from_dense(DMatrix::from_element(1, 1, 1.0)),
            DVector::from_element(1, 2.0),
            DVector::zeros(1),
            Covariance::identity(1),
            Covariance::identity(1),
        )
        .unwrap()
    }

    #[test]
    fn cost_zero_at_perfect_fit() {
        let mut p = scalar_problem();
        p.data = DVector::zeros(1);
        assert_eq!(p.cost(&DVector::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn cost_scalar_example() {
        let p = scalar_problem();
        // u = 1: 1/2 (2-1)^2 + 1/2 (1-0)^2 = 1
        assert_relative_eq!(p.cost(&DVector::from_element(1, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn cost_matches_straight_line_reevaluation() {
        let mut rng = StdRng::seed_from_u64(42);
        let n = 5;
        let k = 5;
        let a = DMatrix::from_fn(k, n, |_, _| rng.gen::<f64>() - 0.5);
        let b = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() - 0.5);
        let l = &b * b.transpose() + DMatrix::identity(k, k);
        let c = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let g = &c * c.transpose() + DMatrix::identity(n, n);
        let d = DVector::from_fn(k, |_, _| rng.gen::<f64>());
        let u0 = DVector::from_fn(n, |_, _| rng.gen::<f64>());
        let u = DVector::from_fn(n, |_, _| rng.gen::<f64>());

        let p = InverseProblem::new(
            PtoMap::from_dense(a.clone()),
            d.clone(),
            u0.clone(),
            Covariance::dense(l.clone()).unwrap(),
            Covariance::dense(g.clone()).unwrap(),
        )
        .unwrap();

        // Independent straight-line evaluation with explicit inverses.
        let r = &d - &a * &u;
        let dv = &u - &u0;
        let expected = 0.5 * r.dot(&(l.clone().try_inverse().unwrap() * &r))
            + 0.5 * dv.dot(&(g.clone().try_inverse().unwrap() * &dv));
        assert_relative_eq!(p.cost(&u).unwrap(), expected, max_relative = 1e-12);

        // Gradient against the dense closed form.
        let grad = p.gradient(&u).unwrap();
        let expected_grad = a.tr_mul(&(l.try_inverse().unwrap() * (&a * &u - &d)))
            + g.try_inverse().unwrap() * &dv;
        assert_relative_eq!(grad, expected_grad, max_relative = 1e-12);
    }

    #[test]
    fn gradient_zero_at_prior_mean_with_perfect_data() {
        let mut p = scalar_problem();
        p.data = DVector::zeros(1);
        let g = p.gradient(&DVector::zeros(1)).unwrap();
        assert_eq!(g, DVector::zeros(1));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = scalar_problem();
        assert!(matches!(
            p.cost(&DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_covariance_is_reported() {
        let mut p = scalar_problem();
        p.noise_cov = Covariance::scaled_identity(1, 0.0).unwrap();
        assert!(matches!(
            p.cost(&DVector::zeros(1)),
            Err(Error::SingularCovariance)
        ));
    }
}
