//! The randomized solution methods.
//!
//! Each method takes an [`InverseProblem`] plus a [`RandomizationPlan`] and
//! reduces to one or more generalized-quadratic solves (see `map_solvers`):
//!
//! - `RMAP`: average of per-sample solves with perturbed data and prior mean.
//! - `RMA`: one solve with the misfit weighted by a sketched noise precision.
//! - `RMA_RMAP_*`: joint, per-column, and nested combinations of the two.
//! - `RS_U1`: one solve with a sketched prior precision.
//! - `RS`: right sketch of the forward map through a sampled prior covariance.
//! - `ENKF`: single-step ensemble Kalman update sharing one right-sketch gain.
//! - `ALL`: every variable randomized at once.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::map_solvers::{
    map_solve, solve_quadratic, QuadProblem, SolverOptions, Weight, DENSE_LIMIT,
};
use crate::problem::{InverseProblem, SolveFlags, SolveResult};
use crate::randomize::{
    draw_perturbations, draw_sketch, PerturbationEnsemble, RandomizationPlan, SketchEnsemble,
    TargetMoment, VariableTag,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodId {
    Map,
    Rmap,
    Rma,
    RmaRmapJoint,
    RmaRmapV1,
    RmaRmapV2,
    RsU1,
    Rs,
    Enkf,
    All,
}

impl MethodId {
    pub fn name(self) -> &'static str {
        match self {
            MethodId::Map => "MAP",
            MethodId::Rmap => "RMAP",
            MethodId::Rma => "RMA",
            MethodId::RmaRmapJoint => "RMA_RMAP_JOINT",
            MethodId::RmaRmapV1 => "RMA_RMAP_V1",
            MethodId::RmaRmapV2 => "RMA_RMAP_V2",
            MethodId::RsU1 => "RS_U1",
            MethodId::Rs => "RS",
            MethodId::Enkf => "ENKF",
            MethodId::All => "ALL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAP" => Ok(MethodId::Map),
            "RMAP" => Ok(MethodId::Rmap),
            "RMA" => Ok(MethodId::Rma),
            "RMA_RMAP" | "RMA_RMAP_JOINT" => Ok(MethodId::RmaRmapJoint),
            "RMA_RMAP_V1" => Ok(MethodId::RmaRmapV1),
            "RMA_RMAP_V2" => Ok(MethodId::RmaRmapV2),
            "RS_U1" => Ok(MethodId::RsU1),
            "RS" => Ok(MethodId::Rs),
            "ENKF" => Ok(MethodId::Enkf),
            "ALL" => Ok(MethodId::All),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }

    pub fn all_randomized() -> [MethodId; 9] {
        [
            MethodId::Rmap,
            MethodId::Rma,
            MethodId::RmaRmapJoint,
            MethodId::RmaRmapV1,
            MethodId::RmaRmapV2,
            MethodId::RsU1,
            MethodId::Rs,
            MethodId::Enkf,
            MethodId::All,
        ]
    }

    /// The canonical randomization flags for this method.
    pub fn default_plan(self, plan: RandomizationPlan) -> RandomizationPlan {
        match self {
            MethodId::Map => plan,
            MethodId::Rmap => plan.with_sigma().with_delta(),
            MethodId::Rma => plan.with_eps(),
            MethodId::RmaRmapJoint | MethodId::RmaRmapV1 | MethodId::RmaRmapV2 => {
                plan.with_sigma().with_eps().with_delta()
            }
            MethodId::RsU1 => plan.with_lambda(),
            MethodId::Rs => plan.with_omega(),
            MethodId::Enkf => plan.with_sigma().with_delta().with_omega(),
            MethodId::All => plan.with_sigma().with_eps().with_delta().with_lambda(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmaRmapVariant {
    Joint,
    V1,
    V2,
}

/// ‖u − ref‖/‖ref‖ in percent.
pub fn relative_error(u: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
    let rn = reference.norm();
    if rn == 0.0 {
        return Err(Error::InvalidParameter(
            "relative error needs a nonzero reference".into(),
        ));
    }
    Ok(100.0 * (u - reference).norm() / rn)
}

/// Dispatch on method id.
pub fn solve_method(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
    id: MethodId,
) -> Result<SolveResult> {
    match id {
        MethodId::Map => map_solve(p, opts),
        MethodId::Rmap => solve_rmap(p, plan, opts),
        MethodId::Rma => solve_rma(p, plan, opts),
        MethodId::RmaRmapJoint => solve_rma_rmap(p, plan, opts, RmaRmapVariant::Joint),
        MethodId::RmaRmapV1 => solve_rma_rmap(p, plan, opts, RmaRmapVariant::V1),
        MethodId::RmaRmapV2 => solve_rma_rmap(p, plan, opts, RmaRmapVariant::V2),
        MethodId::RsU1 => solve_rs_u1(p, plan, opts),
        MethodId::Rs => solve_right_sketch(p, plan, opts),
        MethodId::Enkf => solve_enkf(p, plan, opts),
        MethodId::All => solve_all(p, plan, opts),
    }
}

/// σ/δ samples, honoring the zero-variance hook and the flag being off
/// (either way the samples are exactly zero).
struct Perts {
    ens: Option<PerturbationEnsemble>,
    scale: f64,
    dim: usize,
}

impl Perts {
    fn draw(
        cov: &Covariance,
        active: bool,
        plan: &RandomizationPlan,
        n: usize,
        tag: VariableTag,
    ) -> Result<Self> {
        let scale = plan.perturbation_scale;
        if !active || scale == 0.0 {
            return Ok(Self {
                ens: None,
                scale: 0.0,
                dim: cov.dim(),
            });
        }
        Ok(Self {
            ens: Some(draw_perturbations(cov, n, plan.seed, tag)?),
            scale,
            dim: cov.dim(),
        })
    }

    fn sample(&self, i: usize) -> DVector<f64> {
        match &self.ens {
            Some(e) => e.sample(i) * self.scale,
            None => DVector::zeros(self.dim),
        }
    }

    fn mean(&self) -> DVector<f64> {
        match &self.ens {
            Some(e) => e.mean() * self.scale,
            None => DVector::zeros(self.dim),
        }
    }
}

fn base_result(plan: &RandomizationPlan, start: Instant) -> SolveResult {
    SolveResult {
        estimate: DVector::zeros(0),
        objective_value: f64::NAN,
        iterations: 0,
        final_gradient_norm: f64::NAN,
        sample_count: plan.n,
        outer_sample_count: plan.n,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: plan.seed,
        flags: SolveFlags::default(),
        samples: None,
    }
}

fn finish(
    mut res: SolveResult,
    p: &InverseProblem,
    estimate: DVector<f64>,
    start: Instant,
) -> Result<SolveResult> {
    res.objective_value = p.cost(&estimate)?;
    res.final_gradient_norm = p.gradient(&estimate)?.norm();
    res.estimate = estimate;
    res.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    res.check_finite()?;
    Ok(res)
}

/// Average of per-sample MAP solves with dⁱ = d + σⁱ, u0ⁱ = u0 + δⁱ. In the
/// linear dense case one factorization of (AᵀL⁻¹A + Γ⁻¹) is shared by all
/// samples; in the linear matrix-free case the average is computed with a
/// single solve at the averaged right-hand side (the solution map is affine
/// in (d, u0), so the mean commutes with the solve).
pub fn solve_rmap(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !(plan.randomize_sigma || plan.randomize_delta) {
        return Err(Error::InvalidParameter(
            "RMAP randomizes sigma and/or delta".into(),
        ));
    }
    let start = Instant::now();
    let n_samples = plan.n;
    let sig = Perts::draw(&p.noise_cov, plan.randomize_sigma, plan, n_samples, VariableTag::Sigma)?;
    let del = Perts::draw(&p.prior_cov, plan.randomize_delta, plan, n_samples, VariableTag::Delta)?;
    let mut res = base_result(plan, start);

    if p.pto.is_linear() {
        let dense_ok = p.pto.dense().is_some() && p.param_dim() <= DENSE_LIMIT && !opts.force_cg;
        if dense_ok {
            let a = p.pto.dense().unwrap();
            let linv = p.noise_cov.inverse_to_dense()?;
            let ginv = p.prior_cov.inverse_to_dense()?;
            let at_linv = a.tr_mul(&linv); // n×k
            let h = &at_linv * a + &ginv;
            let chol = h.cholesky().ok_or(Error::NotSpd)?;
            let base_rhs = &at_linv * &p.data + &ginv * &p.prior_mean;

            let n = p.param_dim();
            let mut mean = DVector::zeros(n);
            let mut kept: Vec<DVector<f64>> = Vec::new();
            let chunk = 1024usize;
            let mut i0 = 0;
            while i0 < n_samples {
                let b = (n_samples - i0).min(chunk);
                let mut rhs = DMatrix::zeros(n, b);
                for j in 0..b {
                    let mut col = base_rhs.clone();
                    col += &at_linv * sig.sample(i0 + j);
                    col += &ginv * del.sample(i0 + j);
                    rhs.set_column(j, &col);
                }
                let sols = chol.solve(&rhs);
                for j in 0..b {
                    let s = DVector::from(sols.column(j));
                    mean += &s;
                    if opts.keep_samples {
                        kept.push(s);
                    }
                }
                i0 += b;
            }
            mean /= n_samples as f64;
            res.iterations = 1;
            if opts.keep_samples {
                res.samples = Some(kept);
            }
            return finish(res, p, mean, start);
        }

        if !opts.keep_samples {
            // Matrix-free: one solve at the averaged data/prior mean.
            let qp = QuadProblem {
                map: &p.pto,
                d_eff: &p.data + sig.mean(),
                w: Weight::CovInv(&p.noise_cov),
                e: None,
                m_eff: &p.prior_mean + del.mean(),
                r: Weight::CovInv(&p.prior_cov),
            };
            let out = solve_quadratic(&qp, opts)?;
            res.iterations = out.iterations;
            res.flags.not_converged = !out.converged;
            return finish(res, p, out.u, start);
        }
    }

    // Per-sample nonlinear (or sample-retaining matrix-free) solves.
    let outcomes: Vec<Result<crate::map_solvers::QuadOutcome>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let qp = QuadProblem {
                map: &p.pto,
                d_eff: &p.data + sig.sample(i),
                w: Weight::CovInv(&p.noise_cov),
                e: None,
                m_eff: &p.prior_mean + del.sample(i),
                r: Weight::CovInv(&p.prior_cov),
            };
            solve_quadratic(&qp, opts)
        })
        .collect();

    let n = p.param_dim();
    let mut mean = DVector::zeros(n);
    let mut kept = Vec::new();
    let mut used = 0usize;
    for out in outcomes {
        match out {
            Ok(o) => {
                if !o.converged && opts.skip_failed {
                    res.flags.skipped_samples += 1;
                    continue;
                }
                res.flags.not_converged |= !o.converged;
                res.iterations = res.iterations.max(o.iterations);
                mean += &o.u;
                used += 1;
                if opts.keep_samples {
                    kept.push(o.u);
                }
            }
            Err(e) => {
                if opts.skip_failed {
                    res.flags.skipped_samples += 1;
                } else {
                    return Err(e);
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::SolverDiverged {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    mean /= used as f64;
    if opts.keep_samples {
        res.samples = Some(kept);
    }
    finish(res, p, mean, start)
}

/// Single solve with the misfit weight replaced by the sketched noise
/// precision S_N = EEᵀ.
pub fn solve_rma(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !plan.randomize_eps {
        return Err(Error::InvalidParameter("RMA randomizes eps".into()));
    }
    let start = Instant::now();
    let eps = draw_sketch(
        plan.distribution,
        &p.noise_cov,
        TargetMoment::Precision,
        plan.n,
        plan.seed,
        VariableTag::Eps,
    )?;
    let qp = QuadProblem {
        map: &p.pto,
        d_eff: p.data.clone(),
        w: Weight::Ensemble(&eps),
        e: None,
        m_eff: p.prior_mean.clone(),
        r: Weight::CovInv(&p.prior_cov),
    };
    let out = solve_quadratic(&qp, opts)?;
    let mut res = base_result(plan, start);
    res.iterations = out.iterations;
    res.flags.not_converged = !out.converged;
    finish(res, p, out.u, start)
}

/// Combined misfit sketching and data/prior perturbation.
pub fn solve_rma_rmap(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
    variant: RmaRmapVariant,
) -> Result<SolveResult> {
    if !plan.randomize_eps || !(plan.randomize_sigma || plan.randomize_delta) {
        return Err(Error::InvalidParameter(
            "RMA+RMAP randomizes eps plus sigma/delta".into(),
        ));
    }
    let start = Instant::now();
    match variant {
        RmaRmapVariant::Joint => {
            let eps = draw_sketch(
                plan.distribution,
                &p.noise_cov,
                TargetMoment::Precision,
                plan.n,
                plan.seed,
                VariableTag::Eps,
            )?;
            let sig = Perts::draw(&p.noise_cov, plan.randomize_sigma, plan, plan.n, VariableTag::Sigma)?;
            let del = Perts::draw(&p.prior_cov, plan.randomize_delta, plan, plan.n, VariableTag::Delta)?;
            // Tilt e = (1/N)·Σ εⁱ(εⁱ)ᵀσⁱ, paired by sample index.
            let mut e = DVector::zeros(p.obs_dim());
            if sig.ens.is_some() {
                for i in 0..plan.n {
                    let c = eps.columns().column(i);
                    let w = c.dot(&sig.sample(i));
                    e.axpy(w, &c, 1.0);
                }
            }
            let qp = QuadProblem {
                map: &p.pto,
                d_eff: p.data.clone(),
                w: Weight::Ensemble(&eps),
                e: Some(e),
                m_eff: &p.prior_mean + del.mean(),
                r: Weight::CovInv(&p.prior_cov),
            };
            let out = solve_quadratic(&qp, opts)?;
            let mut res = base_result(plan, start);
            res.iterations = out.iterations;
            res.flags.not_converged = !out.converged;
            finish(res, p, out.u, start)
        }
        RmaRmapVariant::V1 => {
            let eps = draw_sketch(
                plan.distribution,
                &p.noise_cov,
                TargetMoment::Precision,
                plan.n,
                plan.seed,
                VariableTag::Eps,
            )?;
            let sig = Perts::draw(&p.noise_cov, plan.randomize_sigma, plan, plan.n, VariableTag::Sigma)?;
            let del = Perts::draw(&p.prior_cov, plan.randomize_delta, plan, plan.n, VariableTag::Delta)?;
            // Degenerate mode: a lone basis column is not its own
            // exact-moment counterpart, so the deterministic check replaces
            // the per-solve rank-1 weight by the full exact second moment.
            let exact = plan.distribution == crate::randomize::SketchDistribution::DeterministicBasis;
            let outs: Vec<Result<crate::map_solvers::QuadOutcome>> = (0..plan.n)
                .into_par_iter()
                .map(|i| {
                    let single = if exact { eps.clone() } else { eps.single(i) };
                    let qp = QuadProblem {
                        map: &p.pto,
                        d_eff: &p.data + sig.sample(i),
                        w: Weight::Ensemble(&single),
                        e: None,
                        m_eff: &p.prior_mean + del.sample(i),
                        r: Weight::CovInv(&p.prior_cov),
                    };
                    solve_quadratic(&qp, opts)
                })
                .collect();
            average_outcomes(p, plan, opts, outs, start)
        }
        RmaRmapVariant::V2 => {
            let m = plan.m;
            let cost = m.saturating_mul(plan.n);
            if cost > opts.inner_solve_budget {
                return Err(Error::BudgetExceeded {
                    requested: cost,
                    budget: opts.inner_solve_budget,
                });
            }
            let sig = Perts::draw(&p.noise_cov, plan.randomize_sigma, plan, m, VariableTag::Sigma)?;
            let del = Perts::draw(&p.prior_cov, plan.randomize_delta, plan, m, VariableTag::Delta)?;
            let outs: Vec<Result<crate::map_solvers::QuadOutcome>> = (0..m)
                .into_par_iter()
                .map(|i| {
                    // Independent inner sketch per outer sample.
                    let inner_seed = plan
                        .seed
                        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
                    let eps = draw_sketch(
                        plan.distribution,
                        &p.noise_cov,
                        TargetMoment::Precision,
                        plan.n,
                        inner_seed,
                        VariableTag::Eps,
                    )?;
                    let qp = QuadProblem {
                        map: &p.pto,
                        d_eff: &p.data + sig.sample(i),
                        w: Weight::Ensemble(&eps),
                        e: None,
                        m_eff: &p.prior_mean + del.sample(i),
                        r: Weight::CovInv(&p.prior_cov),
                    };
                    solve_quadratic(&qp, opts)
                })
                .collect();
            let mut res = average_outcomes(p, plan, opts, outs, start)?;
            res.outer_sample_count = m;
            Ok(res)
        }
    }
}

fn average_outcomes(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
    outs: Vec<Result<crate::map_solvers::QuadOutcome>>,
    start: Instant,
) -> Result<SolveResult> {
    let mut res = base_result(plan, start);
    let mut mean = DVector::zeros(p.param_dim());
    let mut kept = Vec::new();
    let mut used = 0usize;
    for out in outs {
        match out {
            Ok(o) => {
                if !o.converged && opts.skip_failed {
                    res.flags.skipped_samples += 1;
                    continue;
                }
                res.flags.not_converged |= !o.converged;
                res.iterations = res.iterations.max(o.iterations);
                mean += &o.u;
                used += 1;
                if opts.keep_samples {
                    kept.push(o.u);
                }
            }
            Err(e) if opts.skip_failed => {
                let _ = e;
                res.flags.skipped_samples += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::SolverDiverged {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    mean /= used as f64;
    if opts.keep_samples {
        res.samples = Some(kept);
    }
    finish(res, p, mean, start)
}

/// Single solve with the prior precision replaced by the sketched
/// L_N = ΛΛᵀ. Rank-deficient for N < n; the solve then runs through CG,
/// whose early stopping regularizes implicitly, and the result is flagged.
pub fn solve_rs_u1(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !plan.randomize_lambda {
        return Err(Error::InvalidParameter("RS_U1 randomizes lambda".into()));
    }
    let start = Instant::now();
    let lam = draw_sketch(
        plan.distribution,
        &p.prior_cov,
        TargetMoment::Precision,
        plan.n,
        plan.seed,
        VariableTag::Lambda,
    )?;
    let rank_deficient = plan.n < p.param_dim();
    let mut eff_opts = opts.clone();
    if rank_deficient {
        eff_opts.force_cg = true;
    }
    let qp = QuadProblem {
        map: &p.pto,
        d_eff: p.data.clone(),
        w: Weight::CovInv(&p.noise_cov),
        e: None,
        m_eff: p.prior_mean.clone(),
        r: Weight::Ensemble(&lam),
    };
    let out = solve_quadratic(&qp, &eff_opts)?;
    let mut res = base_result(plan, start);
    res.iterations = out.iterations;
    // Early CG stopping is the point of the rank-deficient path; only a
    // genuinely broken solve is surfaced.
    res.flags.not_converged = !out.converged && !rank_deficient;
    res.flags.rank_deficient_prior = rank_deficient;
    finish(res, p, out.u, start)
}

/// One right-sketch/Kalman update linearized at `u_c`:
///   u⁺ = m + C1 (L + C2)⁻¹ (d_eff − F(u_c) − A(m − u_c)),  A = ∇F(u_c),
/// with C1 = Ω(AΩ)ᵀ, C2 = (AΩ)(AΩ)ᵀ from the scaled ω-ensemble.
fn rs_update(
    p: &InverseProblem,
    omega: &SketchEnsemble,
    u_c: &DVector<f64>,
    d_eff: &DVector<f64>,
    m: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = p.obs_dim();
    let nn = omega.n_samples();
    let mut a_om = DMatrix::zeros(k, nn);
    for j in 0..nn {
        let col = p.pto.jvp(u_c, &DVector::from(omega.columns().column(j)))?;
        a_om.set_column(j, &col);
    }
    let s = p.noise_cov.to_dense() + &a_om * a_om.transpose();
    let innov = d_eff - p.pto.forward(u_c)? - p.pto.jvp(u_c, &(m - u_c))?;
    let y = match s.clone().cholesky() {
        Some(chol) => chol.solve(&innov),
        None => s.lu().solve(&innov).ok_or(Error::SingularGain)?,
    };
    Ok(m + omega.columns() * a_om.tr_mul(&y))
}

fn rs_iterate(
    p: &InverseProblem,
    omega: &SketchEnsemble,
    d_eff: &DVector<f64>,
    m: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, usize, bool)> {
    let mut u = m.clone();
    if p.pto.is_linear() {
        return Ok((rs_update(p, omega, &u, d_eff, m)?, 1, true));
    }
    // Gauss-Newton-style outer loop re-linearizing the forward map; one
    // ω-ensemble is reused across iterations.
    for it in 0..opts.max_newton {
        let u_next = rs_update(p, omega, &u, d_eff, m)?;
        let step = (&u_next - &u).norm();
        u = u_next;
        if step <= 1e-8 * (1.0 + u.norm()) {
            return Ok((u, it + 1, true));
        }
    }
    Ok((u, opts.max_newton, false))
}

/// Right sketching of the forward map through N samples of the prior
/// covariance.
pub fn solve_right_sketch(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !plan.randomize_omega {
        return Err(Error::InvalidParameter("RS randomizes omega".into()));
    }
    let start = Instant::now();
    let omega = draw_sketch(
        plan.distribution,
        &p.prior_cov,
        TargetMoment::Cov,
        plan.n,
        plan.seed,
        VariableTag::Omega,
    )?;
    let (u, iters, converged) = rs_iterate(p, &omega, &p.data, &p.prior_mean, opts)?;
    let mut res = base_result(plan, start);
    res.iterations = iters;
    res.flags.not_converged = !converged;
    finish(res, p, u, start)
}

/// Single-step ensemble Kalman update: M members share the right-sketch gain;
/// each member sees perturbed data and prior mean; the estimate is the member
/// mean. The gain is linear, so the mean is computed directly from the
/// averaged perturbations unless per-member solutions are requested.
pub fn solve_enkf(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !plan.randomize_omega || !(plan.randomize_sigma || plan.randomize_delta) {
        return Err(Error::InvalidParameter(
            "ENKF randomizes omega plus sigma/delta".into(),
        ));
    }
    let start = Instant::now();
    let m_members = plan.m;
    let omega = draw_sketch(
        plan.distribution,
        &p.prior_cov,
        TargetMoment::Cov,
        plan.n,
        plan.seed,
        VariableTag::Omega,
    )?;
    let sig = Perts::draw(&p.noise_cov, plan.randomize_sigma, plan, m_members, VariableTag::Sigma)?;
    let del = Perts::draw(&p.prior_cov, plan.randomize_delta, plan, m_members, VariableTag::Delta)?;

    let mut res = base_result(plan, start);
    res.outer_sample_count = m_members;

    if opts.keep_samples && p.pto.is_linear() {
        let mut kept = Vec::with_capacity(m_members);
        let mut mean = DVector::zeros(p.param_dim());
        for i in 0..m_members {
            let d_i = &p.data + sig.sample(i);
            let m_i = &p.prior_mean + del.sample(i);
            let u_i = rs_update(p, &omega, &p.prior_mean, &d_i, &m_i)?;
            mean += &u_i;
            kept.push(u_i);
        }
        mean /= m_members as f64;
        res.iterations = 1;
        res.samples = Some(kept);
        return finish(res, p, mean, start);
    }

    let d_eff = &p.data + sig.mean();
    let m_eff = &p.prior_mean + del.mean();
    let (u, iters, converged) = rs_iterate(p, &omega, &d_eff, &m_eff, opts)?;
    res.iterations = iters;
    res.flags.not_converged = !converged;
    finish(res, p, u, start)
}

/// Every variable randomized: misfit weighted by S_N against d + σ̄, prior
/// weighted by L_N around u0 + δ̄.
pub fn solve_all(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !(plan.randomize_sigma && plan.randomize_eps && plan.randomize_delta && plan.randomize_lambda)
    {
        return Err(Error::InvalidParameter(
            "ALL randomizes sigma, eps, delta and lambda".into(),
        ));
    }
    let start = Instant::now();
    let eps = draw_sketch(
        plan.distribution,
        &p.noise_cov,
        TargetMoment::Precision,
        plan.n,
        plan.seed,
        VariableTag::Eps,
    )?;
    let lam = draw_sketch(
        plan.distribution,
        &p.prior_cov,
        TargetMoment::Precision,
        plan.n,
        plan.seed,
        VariableTag::Lambda,
    )?;
    let sig = Perts::draw(&p.noise_cov, true, plan, plan.n, VariableTag::Sigma)?;
    let del = Perts::draw(&p.prior_cov, true, plan, plan.n, VariableTag::Delta)?;

    let rank_deficient = plan.n < p.param_dim();
    let mut eff_opts = opts.clone();
    if rank_deficient {
        eff_opts.force_cg = true;
    }
    let qp = QuadProblem {
        map: &p.pto,
        d_eff: &p.data + sig.mean(),
        w: Weight::Ensemble(&eps),
        e: None,
        m_eff: &p.prior_mean + del.mean(),
        r: Weight::Ensemble(&lam),
    };
    let out = solve_quadratic(&qp, &eff_opts)?;
    let mut res = base_result(plan, start);
    res.iterations = out.iterations;
    res.flags.not_converged = !out.converged && !rank_deficient;
    res.flags.rank_deficient_prior = rank_deficient;
    finish(res, p, out.u, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_solvers::{map_solve_linear_form1, map_solve_linear_form2};
    use crate::pto::PtoMap;
    use crate::randomize::SketchDistribution;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_instance(seed: u64, k: usize, n: usize) -> InverseProblem {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = DMatrix::from_fn(k, n, |_, _| rng.gen::<f64>() - 0.5);
        let b = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() - 0.5);
        let l = &b * b.transpose() + DMatrix::identity(k, k) * 0.5;
        let c = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let g = &c * c.transpose() + DMatrix::identity(n, n) * 0.5;
        InverseProblem::new(
            PtoMap::from_dense(a),
            DVector::from_fn(k, |_, _| rng.gen::<f64>() - 0.5),
            DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5),
            Covariance::dense(l).unwrap(),
            Covariance::dense(g).unwrap(),
        )
        .unwrap()
    }

    fn scalar_problem() -> InverseProblem {
        InverseProblem::new(
            PtoMap::from_dense(DMatrix::from_element(1, 1, 1.0)),
            DVector::from_element(1, 2.0),
            DVector::zeros(1),
            Covariance::identity(1),
            Covariance::identity(1),
        )
        .unwrap()
    }

    fn degenerate_plan(n: usize) -> RandomizationPlan {
        RandomizationPlan::new(SketchDistribution::DeterministicBasis, n, 0).with_zero_variance()
    }

    #[test]
    fn rmap_zero_variance_equals_map() {
        let p = random_instance(1, 6, 4);
        let plan = degenerate_plan(8).with_sigma().with_delta();
        let u = solve_rmap(&p, &plan, &SolverOptions::default()).unwrap().estimate;
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        assert!((u - &u_map).norm() / u_map.norm() <= 1e-10);
    }

    #[test]
    fn rmap_scalar_closed_form() {
        // A=L=G=1, u0=0, d=2: per-sample solution (2+sigma+delta)/2, mean 1
        // with per-sample std sqrt(1/2).
        let p = scalar_problem();
        let n = 10_000;
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, n, 3)
            .with_sigma()
            .with_delta();
        let out = solve_rmap(&p, &plan, &SolverOptions::default()).unwrap();
        let tol = 3.0 * (0.5f64).sqrt() / (n as f64).sqrt();
        assert!((out.estimate[0] - 1.0).abs() <= tol, "{}", out.estimate[0]);
    }

    #[test]
    fn rmap_samples_match_mean_and_closed_form() {
        let p = scalar_problem();
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 64, 5)
            .with_sigma()
            .with_delta();
        let opts = SolverOptions {
            keep_samples: true,
            ..SolverOptions::default()
        };
        let out = solve_rmap(&p, &plan, &opts).unwrap();
        let samples = out.samples.as_ref().unwrap();
        assert_eq!(samples.len(), 64);
        let mean: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / 64.0;
        assert_relative_eq!(mean, out.estimate[0], max_relative = 1e-12);
        // Per-sample closed form (2 + sigma_i + delta_i)/2 via the ensembles.
        let sig = draw_perturbations(&p.noise_cov, 64, 5, VariableTag::Sigma).unwrap();
        let del = draw_perturbations(&p.prior_cov, 64, 5, VariableTag::Delta).unwrap();
        for i in 0..64 {
            let expect = (2.0 + sig.sample(i)[0] + del.sample(i)[0]) / 2.0;
            assert_relative_eq!(samples[i][0], expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn rmap_matrix_free_mean_matches_dense_mean() {
        let p = random_instance(9, 7, 5);
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 200, 11)
            .with_sigma()
            .with_delta();
        let dense = solve_rmap(&p, &plan, &SolverOptions::default()).unwrap().estimate;
        let mut p2 = p.clone();
        p2.pto = p.pto.forget_linearity();
        // Nonlinear path: per-sample Gauss-Newton solves.
        let gn = solve_rmap(&p2, &plan, &SolverOptions::default()).unwrap().estimate;
        assert!((gn - &dense).norm() / dense.norm() <= 1e-6);
    }

    #[test]
    fn rma_exact_sketch_equals_map() {
        let p = random_instance(2, 6, 4);
        let plan = RandomizationPlan::new(SketchDistribution::DeterministicBasis, 6, 0).with_eps();
        let u = solve_rma(&p, &plan, &SolverOptions::default()).unwrap().estimate;
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        assert!((u - &u_map).norm() / u_map.norm() <= 1e-8);
    }

    #[test]
    fn rma_rmap_degenerate_all_variants() {
        let p = random_instance(3, 6, 4);
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        for variant in [RmaRmapVariant::Joint, RmaRmapVariant::V1, RmaRmapVariant::V2] {
            let plan = degenerate_plan(6).with_sigma().with_eps().with_delta().with_outer(2);
            let u = solve_rma_rmap(&p, &plan, &SolverOptions::default(), variant)
                .unwrap()
                .estimate;
            assert!(
                (&u - &u_map).norm() / u_map.norm() <= 1e-8,
                "{variant:?}"
            );
        }
    }

    #[test]
    fn rma_rmap_v1_single_sample_is_prior_dominated() {
        let p = random_instance(13, 3, 3);
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 1, 7)
            .with_sigma()
            .with_eps()
            .with_delta()
            .with_zero_variance();
        let u = solve_rma_rmap(&p, &plan, &SolverOptions::default(), RmaRmapVariant::V1)
            .unwrap()
            .estimate;
        assert!((u - &p.prior_mean).norm() < (u_map - &p.prior_mean).norm());
    }

    #[test]
    fn rma_rmap_v2_budget() {
        let p = random_instance(4, 5, 4);
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 1000, 0)
            .with_sigma()
            .with_eps()
            .with_delta()
            .with_outer(1000);
        let opts = SolverOptions {
            inner_solve_budget: 100,
            ..SolverOptions::default()
        };
        assert!(matches!(
            solve_rma_rmap(&p, &plan, &opts, RmaRmapVariant::V2),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn rs_u1_exact_sketch_equals_map() {
        let p = random_instance(5, 6, 4);
        let plan = RandomizationPlan::new(SketchDistribution::DeterministicBasis, 4, 0).with_lambda();
        let out = solve_rs_u1(&p, &plan, &SolverOptions::default()).unwrap();
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        assert!(!out.flags.rank_deficient_prior);
        assert!((out.estimate - &u_map).norm() / u_map.norm() <= 1e-8);
    }

    #[test]
    fn rs_u1_rank_deficiency_flagged() {
        let p = random_instance(6, 10, 10);
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 3, 1).with_lambda();
        let out = solve_rs_u1(&p, &plan, &SolverOptions::default()).unwrap();
        assert!(out.flags.rank_deficient_prior);
    }

    #[test]
    fn rs_exact_covariance_equals_form2() {
        let p = random_instance(7, 6, 4);
        let plan = RandomizationPlan::new(SketchDistribution::DeterministicBasis, 4, 0).with_omega();
        let u = solve_right_sketch(&p, &plan, &SolverOptions::default())
            .unwrap()
            .estimate;
        let u2 = map_solve_linear_form2(&p).unwrap().estimate;
        assert!((u - &u2).norm() / u2.norm() <= 1e-9);
    }

    #[test]
    fn enkf_degenerate_equals_map() {
        let p = random_instance(8, 6, 4);
        let plan = degenerate_plan(4).with_sigma().with_delta().with_omega();
        let u = solve_enkf(&p, &plan, &SolverOptions::default()).unwrap().estimate;
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        assert!((u - &u_map).norm() / u_map.norm() <= 1e-8);
    }

    #[test]
    fn enkf_scalar_closed_form() {
        // Exact covariance (basis, N = n = 1): member i = (d_i + u0_i)/2.
        let p = scalar_problem();
        let m = 10_000;
        let plan = RandomizationPlan::new(SketchDistribution::DeterministicBasis, 1, 13)
            .with_sigma()
            .with_delta()
            .with_omega()
            .with_outer(m);
        let out = solve_enkf(&p, &plan, &SolverOptions::default()).unwrap();
        let tol = 3.0 * (0.5f64).sqrt() / (m as f64).sqrt();
        assert!((out.estimate[0] - 1.0).abs() <= tol, "{}", out.estimate[0]);
        // Per-member solutions agree with the closed form.
        let opts = SolverOptions {
            keep_samples: true,
            ..SolverOptions::default()
        };
        let out2 = solve_enkf(&p, &plan, &opts).unwrap();
        let sig = draw_perturbations(&p.noise_cov, m, 13, VariableTag::Sigma).unwrap();
        let del = draw_perturbations(&p.prior_cov, m, 13, VariableTag::Delta).unwrap();
        let samples = out2.samples.unwrap();
        for i in (0..m).step_by(997) {
            let expect = (2.0 + sig.sample(i)[0] + del.sample(i)[0]) / 2.0;
            assert_relative_eq!(samples[i][0], expect, max_relative = 1e-10);
        }
        assert_relative_eq!(out2.estimate[0], out.estimate[0], max_relative = 1e-10);
    }

    #[test]
    fn all_degenerate_equals_map() {
        let p = random_instance(9, 6, 4);
        let plan = degenerate_plan(6)
            .with_sigma()
            .with_eps()
            .with_delta()
            .with_lambda();
        // N = 6 > n = 4, so the basis lambda sketch is exact.
        let u = solve_all(&p, &plan, &SolverOptions::default()).unwrap().estimate;
        let u_map = map_solve_linear_form1(&p).unwrap().estimate;
        assert!((u - &u_map).norm() / u_map.norm() <= 1e-8);
    }

    #[test]
    fn relative_error_basics() {
        let r = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
        assert_relative_eq!(relative_error(&(2.0 * &r), &r).unwrap(), 100.0);
        let mut u = r.clone();
        u[0] += r.norm() / 10.0;
        assert_relative_eq!(relative_error(&u, &r).unwrap(), 10.0);
        assert!(relative_error(&r, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn missing_flags_are_rejected() {
        let p = random_instance(10, 4, 3);
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 4, 0);
        let opts = SolverOptions::default();
        assert!(solve_rmap(&p, &plan, &opts).is_err());
        assert!(solve_rma(&p, &plan, &opts).is_err());
        assert!(solve_rs_u1(&p, &plan, &opts).is_err());
        assert!(solve_right_sketch(&p, &plan, &opts).is_err());
        assert!(solve_enkf(&p, &plan, &opts).is_err());
        assert!(solve_all(&p, &plan, &opts).is_err());
    }

    #[test]
    fn method_id_round_trip() {
        for id in MethodId::all_randomized() {
            assert_eq!(MethodId::parse(id.name()).unwrap(), id);
        }
        assert_eq!(MethodId::parse("map").unwrap(), MethodId::Map);
        assert!(MethodId::parse("nope").is_err());
    }
}
