//! Deterministic MAP solvers and the generalized-quadratic engine the
//! randomized methods are built on.
//!
//! Every method in this crate reduces to minimizing
//!
//! ```text
//!   Q(u) = 1/2 (F(u) - d)' W (F(u) - d) - e'(F(u) - d) + 1/2 (u - m)' R (u - m)
//! ```
//!
//! for some misfit weight W, prior weight R, effective data d, effective
//! prior mean m and optional linear tilt e. Linear maps go through normal
//! equations (dense Cholesky when practical, CG otherwise); nonlinear maps
//! go through Gauss-Newton with Armijo backtracking.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::cg::cg_solve;
use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::problem::{InverseProblem, SolveFlags, SolveResult};
use crate::pto::PtoMap;
use crate::randomize::SketchEnsemble;

/// Largest dimension for which dense weight / normal-equation matrices are
/// materialized.
pub const DENSE_LIMIT: usize = 2048;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative residual tolerance for linear CG solves.
    pub cg_tol: f64,
    pub max_cg: usize,
    /// Gradient-reduction tolerance for the nonlinear solver.
    pub grad_tol_rel: f64,
    pub grad_tol_abs: f64,
    pub max_newton: usize,
    pub max_backtracks: usize,
    /// Drop randomized inner solves that fail instead of flagging the whole
    /// result.
    pub skip_failed: bool,
    /// Retain per-sample solutions on the result.
    pub keep_samples: bool,
    /// Cap on total inner solves for nested variants.
    pub inner_solve_budget: usize,
    /// Skip the dense normal-equation path; used when CG's early stopping is
    /// itself the regularizer (rank-deficient sketched priors).
    pub force_cg: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-8,
            max_cg: 500,
            grad_tol_rel: 1e-6,
            grad_tol_abs: 1e-12,
            max_newton: 100,
            max_backtracks: 40,
            skip_failed: false,
            keep_samples: false,
            inner_solve_budget: 200_000,
            force_cg: false,
        }
    }
}

/// A symmetric positive semidefinite weight: an exact precision/covariance
/// inverse, a sample second moment, or an explicit matrix.
#[derive(Clone)]
pub enum Weight<'a> {
    /// W = C⁻¹ for a covariance operator C.
    CovInv(&'a Covariance),
    /// W = EEᵀ for a scaled sketch ensemble.
    Ensemble(&'a SketchEnsemble),
    Dense(&'a DMatrix<f64>),
}

impl Weight<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Weight::CovInv(c) => c.dim(),
            Weight::Ensemble(e) => e.dim(),
            Weight::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Weight::CovInv(c) => c.apply_inverse(v),
            Weight::Ensemble(e) => e.apply_second_moment(v),
            Weight::Dense(m) => Ok(*m * v),
        }
    }

    /// Materialize W; `None` when the dimension exceeds [`DENSE_LIMIT`].
    pub fn to_dense(&self) -> Result<Option<DMatrix<f64>>> {
        if self.dim() > DENSE_LIMIT {
            return Ok(None);
        }
        match self {
            Weight::CovInv(c) => c.inverse_to_dense().map(Some),
            Weight::Ensemble(e) => e.second_moment_dense().map(Some),
            Weight::Dense(m) => Ok(Some((*m).clone())),
        }
    }

    /// AᵀWA without forming W when W is a sample second moment.
    fn gram(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Weight::CovInv(c) => {
                let wa = c.apply_inverse_mat(a)?;
                Ok(a.tr_mul(&wa))
            }
            Weight::Ensemble(e) => {
                let b = e.columns().tr_mul(a);
                Ok(b.tr_mul(&b))
            }
            Weight::Dense(m) => Ok(a.tr_mul(&(*m * a))),
        }
    }
}

/// One generalized-quadratic problem instance (see module docs).
pub struct QuadProblem<'a> {
    pub map: &'a PtoMap,
    pub d_eff: DVector<f64>,
    pub w: Weight<'a>,
    /// Linear tilt; gradient contribution is ∇Fᵀ(W r − e).
    pub e: Option<DVector<f64>>,
    pub m_eff: DVector<f64>,
    pub r: Weight<'a>,
}

#[derive(Debug, Clone)]
pub struct QuadOutcome {
    pub u: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub objective: f64,
}

impl QuadProblem<'_> {
    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.map.forward(u)? - &self.d_eff)
    }

    pub fn cost(&self, u: &DVector<f64>) -> Result<f64> {
        let r = self.residual(u)?;
        let dv = u - &self.m_eff;
        let mut c = 0.5 * r.dot(&self.w.apply(&r)?) + 0.5 * dv.dot(&self.r.apply(&dv)?);
        if let Some(e) = &self.e {
            c -= e.dot(&r);
        }
        Ok(c)
    }

    pub fn gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.residual(u)?;
        let mut wr = self.w.apply(&r)?;
        if let Some(e) = &self.e {
            wr -= e;
        }
        let dv = u - &self.m_eff;
        Ok(self.map.vjp(u, &wr)? + self.r.apply(&dv)?)
    }
}

/// Minimize a [`QuadProblem`]. Non-convergence is reported through
/// `converged`, not as an error, so randomized callers can flag and continue.
pub fn solve_quadratic(qp: &QuadProblem, opts: &SolverOptions) -> Result<QuadOutcome> {
    if qp.map.is_linear() {
        solve_quadratic_linear(qp, opts)
    } else {
        gauss_newton(qp, opts, qp.m_eff.clone())
    }
}

fn solve_quadratic_linear(qp: &QuadProblem, opts: &SolverOptions) -> Result<QuadOutcome> {
    let n = qp.map.input_dim();
    // rhs = Aᵀ(W d + e) + R m
    let mut wd = qp.w.apply(&qp.d_eff)?;
    if let Some(e) = &qp.e {
        wd += e;
    }
    let lin_pt = DVector::zeros(n);
    let rhs = qp.map.vjp(&lin_pt, &wd)? + qp.r.apply(&qp.m_eff)?;

    if let Some(a) = qp.map.dense() {
        if n <= DENSE_LIMIT && !opts.force_cg {
            if let (Some(_), Some(rd)) = (qp.w.to_dense()?, qp.r.to_dense()?) {
                let h = qp.w.gram(a)? + rd;
                if let Some(chol) = h.clone().cholesky() {
                    let u = chol.solve(&rhs);
                    let g = qp.gradient(&u)?;
                    return Ok(QuadOutcome {
                        objective: qp.cost(&u)?,
                        gradient_norm: g.norm(),
                        u,
                        iterations: 1,
                        converged: true,
                    });
                }
                // Semidefinite system (rank-deficient sketched prior):
                // fall through to CG, which regularizes implicitly.
            }
        }
    }

    let apply_h = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let av = qp.map.jvp(&lin_pt, v)?;
        Ok(qp.map.vjp(&lin_pt, &qp.w.apply(&av)?)? + qp.r.apply(v)?)
    };
    let out = cg_solve(apply_h, &rhs, opts.cg_tol, opts.max_cg)?;
    let g = qp.gradient(&out.solution)?;
    Ok(QuadOutcome {
        objective: qp.cost(&out.solution)?,
        gradient_norm: g.norm(),
        u: out.solution,
        iterations: out.iterations,
        converged: out.converged,
    })
}

fn gauss_newton(qp: &QuadProblem, opts: &SolverOptions, u_init: DVector<f64>) -> Result<QuadOutcome> {
    let mut u = u_init;
    let mut cost = qp.cost(&u)?;
    let mut grad = qp.gradient(&u)?;
    let g0 = grad.norm();
    let tol = opts.grad_tol_abs + opts.grad_tol_rel * g0;

    let mut iter = 0;
    while iter < opts.max_newton {
        if grad.norm() <= tol {
            return Ok(QuadOutcome {
                objective: cost,
                gradient_norm: grad.norm(),
                u,
                iterations: iter,
                converged: true,
            });
        }
        // Gauss-Newton model Hessian: ∇Fᵀ W ∇F + R at the current iterate.
        let apply_h = |v: &DVector<f64>| -> Result<DVector<f64>> {
            let jv = qp.map.jvp(&u, v)?;
            Ok(qp.map.vjp(&u, &qp.w.apply(&jv)?)? + qp.r.apply(v)?)
        };
        let neg_grad = -&grad;
        let step = cg_solve(apply_h, &neg_grad, opts.cg_tol.max(1e-10), opts.max_cg)?.solution;

        // Armijo backtracking, c = 1e-4, halving.
        let slope = grad.dot(&step);
        let dir = if slope < 0.0 { step } else { -&grad };
        let slope = grad.dot(&dir);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let cand = &u + alpha * &dir;
            let c = qp.cost(&cand)?;
            if c.is_finite() && c <= cost + 1e-4 * alpha * slope {
                u = cand;
                cost = c;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearchFailed(opts.max_backtracks));
        }
        grad = qp.gradient(&u)?;
        iter += 1;
    }

    let gn = grad.norm();
    Ok(QuadOutcome {
        objective: cost,
        gradient_norm: gn,
        u,
        iterations: iter,
        converged: gn <= tol,
    })
}

fn result_from_outcome(out: QuadOutcome, start: Instant, seed: u64) -> SolveResult {
    SolveResult {
        objective_value: out.objective,
        iterations: out.iterations,
        final_gradient_norm: out.gradient_norm,
        estimate: out.u,
        sample_count: 0,
        outer_sample_count: 0,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed,
        flags: SolveFlags {
            not_converged: !out.converged,
            ..SolveFlags::default()
        },
        samples: None,
    }
}

/// u1 = (AᵀL⁻¹A + Γ⁻¹)⁻¹ (AᵀL⁻¹d + Γ⁻¹u0)
pub fn map_solve_linear_form1(p: &InverseProblem) -> Result<SolveResult> {
    map_solve_linear_form1_opts(p, &SolverOptions::default())
}

pub fn map_solve_linear_form1_opts(p: &InverseProblem, opts: &SolverOptions) -> Result<SolveResult> {
    if !p.pto.is_linear() {
        return Err(Error::NotLinear);
    }
    let start = Instant::now();
    let qp = QuadProblem {
        map: &p.pto,
        d_eff: p.data.clone(),
        w: Weight::CovInv(&p.noise_cov),
        e: None,
        m_eff: p.prior_mean.clone(),
        r: Weight::CovInv(&p.prior_cov),
    };
    let out = solve_quadratic(&qp, opts)?;
    if !out.converged {
        return Err(Error::SolverDiverged {
            iterations: out.iterations,
            residual: out.gradient_norm,
        });
    }
    Ok(result_from_outcome(out, start, 0))
}

/// u2 = u0 + ΓAᵀ(L + AΓAᵀ)⁻¹(d − Au0); the observation-space system is
/// built with k applications of the covariance and solved densely.
pub fn map_solve_linear_form2(p: &InverseProblem) -> Result<SolveResult> {
    if !p.pto.is_linear() {
        return Err(Error::NotLinear);
    }
    let start = Instant::now();
    let n = p.param_dim();
    let k = p.obs_dim();
    let lin_pt = DVector::zeros(n);

    // G = A Γ Aᵀ column by column, plus L.
    let mut s = p.noise_cov.to_dense();
    let mut gat = DMatrix::zeros(n, k); // Γ Aᵀ
    for j in 0..k {
        let mut ej = DVector::zeros(k);
        ej[j] = 1.0;
        let atej = p.pto.vjp(&lin_pt, &ej)?;
        let gcol = p.prior_cov.apply(&atej)?;
        gat.set_column(j, &gcol);
        let agcol = p.pto.jvp(&lin_pt, &gcol)?;
        s.column_mut(j).axpy(1.0, &agcol, 1.0);
    }
    let innovation = &p.data - p.pto.forward(&p.prior_mean)?;
    let y = match s.clone().cholesky() {
        Some(chol) => chol.solve(&innovation),
        None => s
            .lu()
            .solve(&innovation)
            .ok_or(Error::SingularGain)?,
    };
    let u = &p.prior_mean + &gat * y;
    let gnorm = p.gradient(&u)?.norm();
    let obj = p.cost(&u)?;
    Ok(SolveResult {
        estimate: u,
        objective_value: obj,
        iterations: 1,
        final_gradient_norm: gnorm,
        sample_count: 0,
        outer_sample_count: 0,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: 0,
        flags: SolveFlags::default(),
        samples: None,
    })
}

/// Inexact Gauss-Newton with Armijo backtracking on the posterior cost.
pub fn map_solve_nonlinear(p: &InverseProblem, opts: &SolverOptions) -> Result<SolveResult> {
    map_solve_nonlinear_from(p, opts, p.prior_mean.clone())
}

pub fn map_solve_nonlinear_from(
    p: &InverseProblem,
    opts: &SolverOptions,
    u_init: DVector<f64>,
) -> Result<SolveResult> {
    let start = Instant::now();
    let qp = QuadProblem {
        map: &p.pto,
        d_eff: p.data.clone(),
        w: Weight::CovInv(&p.noise_cov),
        e: None,
        m_eff: p.prior_mean.clone(),
        r: Weight::CovInv(&p.prior_cov),
    };
    let out = gauss_newton(&qp, opts, u_init)?;
    Ok(result_from_outcome(out, start, 0))
}

/// Reference MAP solution for a problem: closed form when linear, Gauss-
/// Newton otherwise.
pub fn map_solve(p: &InverseProblem, opts: &SolverOptions) -> Result<SolveResult> {
    if p.pto.is_linear() {
        map_solve_linear_form1_opts(p, opts)
    } else {
        map_solve_nonlinear(p, opts)
    }
}
