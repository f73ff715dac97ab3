//! Conjugate gradients for symmetric positive (semi)definite operator actions.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// Final residual norm relative to ‖b‖.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solve H x = b with CG, H given as a matvec action. Stops when the
/// (recurred) residual satisfies ‖r‖ ≤ tol·‖b‖, or at `max_iter` with the
/// best iterate seen so far, `converged = false`.
///
/// NaN in the iteration is treated as evidence of a non-SPD operator and
/// returned as an error.
pub fn cg_solve<F>(apply_h: F, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = b.len();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: DVector::zeros(n),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }

    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();

    let mut best = x.clone();
    let mut best_res = rs.sqrt();

    for iter in 0..max_iter {
        let res = rs.sqrt();
        if res < best_res {
            best_res = res;
            best.copy_from(&x);
        }
        if res <= tol * b_norm {
            return Ok(CgOutcome {
                solution: x,
                iterations: iter,
                relative_residual: res / b_norm,
                converged: true,
            });
        }

        let hp = apply_h(&p)?;
        let php = p.dot(&hp);
        if !php.is_finite() {
            return Err(Error::NanEncountered("cg curvature p'Hp"));
        }
        if php <= 0.0 {
            // Semidefinite operator: the search direction has hit the null
            // space. Return the best iterate; the caller decides whether
            // that's acceptable.
            return Ok(CgOutcome {
                solution: best,
                iterations: iter,
                relative_residual: best_res / b_norm,
                converged: best_res <= tol * b_norm,
            });
        }
        let alpha = rs / php;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &hp, 1.0);
        let rs_new = r.norm_squared();
        if !rs_new.is_finite() {
            return Err(Error::NanEncountered("cg residual"));
        }
        p = &r + (rs_new / rs) * p;
        rs = rs_new;
    }

    let res = rs.sqrt();
    if res < best_res {
        best_res = res;
        best = x;
    }
    Ok(CgOutcome {
        solution: best,
        iterations: max_iter,
        relative_residual: best_res / b_norm,
        converged: best_res <= tol * b_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let out = cg_solve(|v| Ok(v.clone()), &b, 1e-12, 10).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 1);
        assert_relative_eq!(out.solution, b, max_relative = 1e-12);
    }

    #[test]
    fn diagonal_solve() {
        let d = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DVector::from_element(3, 1.0);
        let out = cg_solve(|v| Ok(v.component_mul(&d)), &b, 1e-12, 50).unwrap();
        let expected = DVector::from_vec(vec![1.0, 0.5, 1.0 / 3.0]);
        assert!(out.converged);
        assert_relative_eq!(out.solution, expected, max_relative = 1e-10);
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 20;
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let h = &m * m.transpose() + DMatrix::identity(n, n);
        let b = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
        let out = cg_solve(|v| Ok(&h * v), &b, 1e-12, 200).unwrap();
        let expected = h.clone().cholesky().unwrap().solve(&b);
        assert!(out.converged);
        assert_relative_eq!(out.solution, expected, max_relative = 1e-8);
    }

    #[test]
    fn iteration_cap_returns_best_iterate_flagged() {
        let mut rng = StdRng::seed_from_u64(8);
        let n = 30;
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 1e-6;
        let b = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
        let out = cg_solve(|v| Ok(&h * v), &b, 1e-14, 2).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.solution.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn nan_is_reported() {
        let b = DVector::from_element(2, 1.0);
        let res = cg_solve(|_| Ok(DVector::from_element(2, f64::NAN)), &b, 1e-10, 5);
        assert!(matches!(res, Err(Error::NanEncountered(_))));
    }
}
