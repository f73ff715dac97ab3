//! Empirical checks of the concentration and perturbation bounds.
//!
//! Probabilistic statements are tested as frequency-decay properties over R
//! repetitions (the absolute constants in the exponential envelopes are
//! unknown), with a 2/√R binomial slack on every frequency comparison.
//! Deterministic inequalities — the linear-system perturbation bound on its
//! admissible realizations and the ∞-norm lower bounds for sums of SPSD
//! matrices — are hard assertions with only arithmetic slack.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::problem::InverseProblem;
use crate::randomize::{
    draw_perturbations, draw_perturbations_with, draw_sketch, RandomizationPlan,
    SketchDistribution, TargetMoment, VariableTag,
};

/// Arithmetic slack for hard (theorem-backed) inequalities.
const HARD_SLACK: f64 = 1e-12;

/// One (N, β) cell of a frequency sweep.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub n_samples: usize,
    pub beta: f64,
    /// Fraction of the R trials on which the bounded quantity exceeded its
    /// threshold (or, for the perturbation check, was inadmissible).
    pub exceed_freq: f64,
    /// Shape of the theoretical envelope with unit constant, e.g.
    /// exp(−β²N); comparable across rows, not an absolute probability.
    pub envelope: f64,
    pub pass: bool,
}

/// Outcome of one bound check: per-(N, β) exceedance frequencies, named
/// realized norms, and an overall verdict.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub bound_id: String,
    pub r_trials: usize,
    pub rows: Vec<BoundRow>,
    /// Named realized quantities (condition numbers, relative norms, fit
    /// statistics) for diagnostics.
    pub realized: Vec<(String, f64)>,
    pub pass: bool,
}

impl BoundReport {
    /// CSV with header `bound_id,N,beta,R,exceed_freq,pass`, one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bound_id,N,beta,R,exceed_freq,pass\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.bound_id, row.n_samples, row.beta, self.r_trials, row.exceed_freq, row.pass
            ));
        }
        out
    }

    pub fn realized_value(&self, name: &str) -> Option<f64> {
        self.realized
            .iter()
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
    }
}

fn require_repetitions(r: usize) -> Result<()> {
    if r < 100 {
        return Err(Error::InvalidParameter(
            "probabilistic bound checks need R >= 100 repetitions".into(),
        ));
    }
    Ok(())
}

/// Matrix ∞-norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..m.nrows() {
        let s: f64 = m.row(i).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_add(trial.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Frequencies over increasing N must be non-increasing, allowing one
/// inversion inside the 2/√R binomial noise band, and the largest-N
/// frequency must not exceed the smallest-N one.
fn monotone_decay(freqs: &[f64], r: usize) -> bool {
    let slack = 2.0 / (r as f64).sqrt();
    let mut inversions = 0usize;
    for w in freqs.windows(2) {
        if w[1] > w[0] {
            if w[1] - w[0] <= slack {
                inversions += 1;
            } else {
                return false;
            }
        }
    }
    inversions <= 1
        && freqs.last().copied().unwrap_or(0.0) <= freqs.first().copied().unwrap_or(0.0) + HARD_SLACK
}

/// ∞-norm of the square-root factor the sampler applies (columns of
/// C^{1/2} as realized by `apply_sqrt`).
fn sqrt_factor_inf_norm(cov: &Covariance) -> Result<f64> {
    let dim = cov.dim();
    let mut rows = vec![0.0f64; dim];
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let col = cov.apply_sqrt(&e)?;
        for (i, v) in col.iter().enumerate() {
            rows[i] += v.abs();
        }
    }
    Ok(rows.into_iter().fold(0.0, f64::max))
}

/// Exceedance-frequency sweep for the sample-mean bound: how often does
/// ‖δ̄_N‖∞ exceed β‖Γ^{1/2}‖∞?
pub fn check_mean_concentration(
    cov: &Covariance,
    dist: SketchDistribution,
    beta: f64,
    n_grid: &[usize],
    r: usize,
    seed: u64,
) -> Result<BoundReport> {
    require_repetitions(r)?;
    if beta <= 0.0 || n_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "mean-concentration check needs beta > 0 and a nonempty N grid".into(),
        ));
    }
    let threshold = beta * sqrt_factor_inf_norm(cov)?;
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let exceed: usize = (0..r)
            .into_par_iter()
            .map(|t| {
                let s = trial_seed(seed, (gi * r + t) as u64);
                let ens = draw_perturbations_with(dist, cov, n, s, VariableTag::Delta)?;
                Ok(usize::from(ens.mean().amax() > threshold))
            })
            .sum::<Result<usize>>()?;
        rows.push(BoundRow {
            n_samples: n,
            beta,
            exceed_freq: exceed as f64 / r as f64,
            envelope: (-beta * beta * n as f64).exp(),
            pass: true,
        });
    }
    let freqs: Vec<f64> = rows.iter().map(|r| r.exceed_freq).collect();
    let pass = monotone_decay(&freqs, r);
    for row in &mut rows {
        row.pass = pass;
    }
    Ok(BoundReport {
        bound_id: "mean_concentration".into(),
        r_trials: r,
        rows,
        realized: vec![("threshold".into(), threshold)],
        pass,
    })
}

/// Exceedance-frequency sweep for the outer-product bound: how often does
/// ‖S_N − T‖∞ exceed β‖T‖∞, with T the covariance or its inverse?
pub fn check_outer_product_concentration(
    cov: &Covariance,
    dist: SketchDistribution,
    target_moment: TargetMoment,
    beta: f64,
    n_grid: &[usize],
    r: usize,
    seed: u64,
) -> Result<BoundReport> {
    require_repetitions(r)?;
    if beta <= 0.0 || n_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "outer-product check needs beta > 0 and a nonempty N grid".into(),
        ));
    }
    let target = match target_moment {
        TargetMoment::Cov => cov.to_dense(),
        TargetMoment::Precision => cov.inverse_to_dense()?,
    };
    let threshold = beta * inf_norm(&target);
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let exceed: usize = (0..r)
            .into_par_iter()
            .map(|t| {
                let s = trial_seed(seed, (gi * r + t) as u64);
                let ens = draw_sketch(dist, cov, target_moment, n, s, VariableTag::Omega)?;
                let dev = ens.second_moment_dense()? - &target;
                Ok(usize::from(inf_norm(&dev) > threshold))
            })
            .sum::<Result<usize>>()?;
        rows.push(BoundRow {
            n_samples: n,
            beta,
            exceed_freq: exceed as f64 / r as f64,
            envelope: 2.0 * (-beta * beta * n as f64).exp(),
            pass: true,
        });
    }
    let freqs: Vec<f64> = rows.iter().map(|r| r.exceed_freq).collect();
    let pass = monotone_decay(&freqs, r);
    for row in &mut rows {
        row.pass = pass;
    }
    Ok(BoundReport {
        bound_id: "outer_product_concentration".into(),
        r_trials: r,
        rows,
        realized: vec![("threshold".into(), threshold)],
        pass,
    })
}

/// R draws of Y = X₁X₂X₃ with independent standard-normal factors.
pub(crate) fn triple_product_samples(r: usize, seed: u64) -> Vec<f64> {
    (0..r)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t as u64));
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let x3: f64 = rng.sample(StandardNormal);
            x1 * x2 * x3
        })
        .collect()
}

/// Tail-shape check for a product of three standard Gaussians: log P(|Y|>β)
/// should be linear in β^{2/3} (heavier than Gaussian, lighter than
/// polynomial), and the sample mean of Y should concentrate with N.
pub fn check_triple_product_tail(beta_grid: &[f64], r: usize, seed: u64) -> Result<BoundReport> {
    require_repetitions(r)?;
    if beta_grid.len() < 3 || beta_grid.iter().any(|&b| b <= 0.0) {
        return Err(Error::InvalidParameter(
            "tail fit needs at least three positive beta values".into(),
        ));
    }
    let samples = triple_product_samples(r, seed);
    let mut rows = Vec::with_capacity(beta_grid.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut tail_ok = true;
    for &beta in beta_grid {
        let count = samples.iter().filter(|y| y.abs() > beta).count();
        let freq = count as f64 / r as f64;
        if count == 0 {
            // Too few repetitions to resolve this tail point.
            tail_ok = false;
        } else {
            xs.push(beta.powf(2.0 / 3.0));
            ys.push(freq.ln());
        }
        rows.push(BoundRow {
            n_samples: r,
            beta,
            exceed_freq: freq,
            envelope: (-beta.powf(2.0 / 3.0)).exp(),
            pass: true,
        });
    }
    // Least-squares line log P = a + slope·β^{2/3}.
    let (slope, r2) = if xs.len() >= 3 {
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let slope = sxy / sxx;
        let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
        (slope, r2)
    } else {
        (0.0, 0.0)
    };
    tail_ok = tail_ok && slope < 0.0 && r2 >= 0.95;

    // Sample-mean concentration of (1/N)ΣYᵢ: exceedance of a fixed
    // threshold must decay with N.
    let mean_grid = [10usize, 100, 1000];
    let mean_reps = 500usize;
    let mean_beta = 0.5f64;
    let mut mean_freqs = Vec::with_capacity(mean_grid.len());
    for (gi, &n) in mean_grid.iter().enumerate() {
        let exceed: usize = (0..mean_reps)
            .into_par_iter()
            .map(|t| {
                let s = trial_seed(seed ^ 0x5bd1_e995, (gi * mean_reps + t) as u64);
                let draws = triple_product_samples(n, s);
                let mean = draws.iter().sum::<f64>() / n as f64;
                usize::from(mean.abs() > mean_beta)
            })
            .sum();
        let freq = exceed as f64 / mean_reps as f64;
        mean_freqs.push(freq);
        rows.push(BoundRow {
            n_samples: n,
            beta: mean_beta,
            exceed_freq: freq,
            envelope: (-(mean_beta * mean_beta * n as f64).powf(1.0 / 3.0)).exp(),
            pass: true,
        });
    }
    let pass = tail_ok && monotone_decay(&mean_freqs, mean_reps);
    for row in &mut rows {
        row.pass = pass;
    }
    Ok(BoundReport {
        bound_id: "triple_product_tail".into(),
        r_trials: r,
        rows,
        realized: vec![("slope".into(), slope), ("r_squared".into(), r2)],
        pass,
    })
}

/// Dense PtO matrix of a linear problem (materialized through forward
/// applications when no dense representation is stored).
fn dense_forward(p: &InverseProblem) -> Result<DMatrix<f64>> {
    if !p.pto.is_linear() {
        return Err(Error::NotLinear);
    }
    if let Some(a) = p.pto.dense() {
        return Ok(a.clone());
    }
    let (k, n) = (p.obs_dim(), p.param_dim());
    let mut a = DMatrix::zeros(k, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        a.set_column(j, &p.pto.forward(&e)?);
    }
    Ok(a)
}

/// Per-realization verification of the linear-system perturbation bound on
/// the randomized normal equations (M + ΔM)ũ = b + Δb with
/// M = AᵀL⁻¹A + Γ⁻¹, ΔM = AᵀS_N A + L_N − M.
///
/// Hard assertions per realization: the relative-error bound
/// κ/(1 − κ·r_M)·(r_M + r_b) whenever κ·r_M < 1 (inadmissible realizations
/// are excluded and counted in `exceed_freq`); the SPSD ∞-norm lower bounds
/// ‖M‖∞ ≥ (1/n)‖AᵀL⁻¹A‖∞ and ≥ (1/n)‖Γ⁻¹‖∞; and
/// ‖ΔM‖∞/‖M‖∞ ≤ 2n·β_emp with β_emp the largest realized entrywise
/// deviation relative to the largest entry of M.
pub fn check_linear_perturbation_bound(
    p: &InverseProblem,
    plan: &RandomizationPlan,
    r: usize,
    seed: u64,
) -> Result<BoundReport> {
    if r == 0 {
        return Err(Error::InvalidParameter(
            "perturbation check needs R >= 1".into(),
        ));
    }
    let n = p.param_dim();
    if n > 512 {
        return Err(Error::InvalidParameter(
            "perturbation check materializes M densely; n <= 512 required".into(),
        ));
    }
    let a = dense_forward(p)?;
    let linv = p.noise_cov.inverse_to_dense()?;
    let ginv = p.prior_cov.inverse_to_dense()?;
    let at_linv_a = a.transpose() * &linv * &a;
    let m = &at_linv_a + &ginv;
    let b = a.transpose() * (&linv * &p.data) + &ginv * &p.prior_mean;
    let m_lu = m.clone().lu();
    let m_inv = m_lu
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("normal-equation matrix is singular".into()))?;
    let u_star = &m_inv * &b;
    let m_norm = inf_norm(&m);
    let b_norm = b.amax();
    let kappa = m_norm * inf_norm(&m_inv);
    let m_amax = m.amax();

    // Hard inequality for sums of SPSD matrices (∞-norm form): one-time check.
    let spsd_ok = m_norm + HARD_SLACK >= inf_norm(&at_linv_a) / n as f64
        && m_norm + HARD_SLACK >= inf_norm(&ginv) / n as f64;

    struct Trial {
        admissible: bool,
        holds: bool,
        entrywise_holds: bool,
        r_m: f64,
        r_b: f64,
        beta_emp: f64,
        rel_err: f64,
    }
    let trials: Result<Vec<Trial>> = (0..r)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t as u64);
            let w = if plan.randomize_eps {
                let eps = draw_sketch(
                    plan.distribution,
                    &p.noise_cov,
                    TargetMoment::Precision,
                    plan.n,
                    s,
                    VariableTag::Eps,
                )?;
                eps.second_moment_dense()?
            } else {
                linv.clone()
            };
            let l_n = if plan.randomize_lambda {
                let lambda = draw_sketch(
                    plan.distribution,
                    &p.prior_cov,
                    TargetMoment::Precision,
                    plan.n,
                    s,
                    VariableTag::Lambda,
                )?;
                lambda.second_moment_dense()?
            } else {
                ginv.clone()
            };
            let mut d_eff = p.data.clone();
            if plan.randomize_sigma && plan.perturbation_scale != 0.0 {
                let sig = draw_perturbations(&p.noise_cov, plan.n, s, VariableTag::Sigma)?;
                d_eff += sig.mean() * plan.perturbation_scale;
            }
            let mut m_eff = p.prior_mean.clone();
            if plan.randomize_delta && plan.perturbation_scale != 0.0 {
                let del = draw_perturbations(&p.prior_cov, plan.n, s, VariableTag::Delta)?;
                m_eff += del.mean() * plan.perturbation_scale;
            }
            let m_tilde = a.transpose() * &w * &a + &l_n;
            let b_tilde = a.transpose() * (&w * &d_eff) + &l_n * &m_eff;
            let dm = &m_tilde - &m;
            let db = &b_tilde - &b;
            let r_m = inf_norm(&dm) / m_norm;
            let r_b = if b_norm > 0.0 { db.amax() / b_norm } else { 0.0 };
            let beta_emp = if m_amax > 0.0 { dm.amax() / m_amax } else { 0.0 };
            let entrywise_holds = r_m <= 2.0 * n as f64 * beta_emp + HARD_SLACK;
            let admissible = kappa * r_m < 1.0;
            let (holds, rel_err) = if admissible {
                let u_tilde = m_tilde
                    .lu()
                    .solve(&b_tilde)
                    .ok_or_else(|| Error::InvalidParameter("perturbed system singular".into()))?;
                let rel_err = (&u_star - &u_tilde).amax() / u_star.amax().max(f64::MIN_POSITIVE);
                let bound = kappa / (1.0 - kappa * r_m) * (r_m + r_b);
                (rel_err <= bound * (1.0 + 1e-9) + HARD_SLACK, rel_err)
            } else {
                (true, f64::NAN)
            };
            Ok(Trial {
                admissible,
                holds,
                entrywise_holds,
                r_m,
                r_b,
                beta_emp,
                rel_err,
            })
        })
        .collect();
    let trials = trials?;
    let inadmissible = trials.iter().filter(|t| !t.admissible).count();
    let all_hold = trials.iter().all(|t| t.holds && t.entrywise_holds);
    let max_r_m = trials.iter().map(|t| t.r_m).fold(0.0, f64::max);
    let max_r_b = trials.iter().map(|t| t.r_b).fold(0.0, f64::max);
    let max_beta = trials.iter().map(|t| t.beta_emp).fold(0.0, f64::max);
    let max_err = trials
        .iter()
        .filter(|t| t.admissible)
        .map(|t| t.rel_err)
        .fold(0.0, f64::max);
    let pass = spsd_ok && all_hold;
    let exceed_freq = inadmissible as f64 / r as f64;
    Ok(BoundReport {
        bound_id: "linear_perturbation".into(),
        r_trials: r,
        rows: vec![BoundRow {
            n_samples: plan.n,
            beta: max_beta,
            exceed_freq,
            envelope: 0.0,
            pass,
        }],
        realized: vec![
            ("kappa_inf".into(), kappa),
            ("max_rel_dm".into(), max_r_m),
            ("max_rel_db".into(), max_r_b),
            ("max_beta_emp".into(), max_beta),
            ("max_rel_err".into(), max_err),
        ],
        pass,
    })
}

/// Random dense linear problem (Gaussian entries scaled so the normal
/// equations stay well conditioned, SPD prior, unit noise) for
/// perturbation-bound experiments and equivalence tests.
pub fn random_linear_problem(n: usize, k: usize, seed: u64) -> Result<InverseProblem> {
    use crate::pto::PtoMap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (k as f64).sqrt();
    let a = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    let d = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let prior = Covariance::dense(&g * &g.transpose() * (0.2 / n as f64) + DMatrix::identity(n, n))?;
    InverseProblem::new(
        PtoMap::from_dense(a),
        d,
        DVector::zeros(n),
        Covariance::identity(k),
        prior,
    )
}

/// Eigenvalues of a symmetric matrix, descending, truncated to `top_k`
/// (0 keeps all).
pub fn spectrum_report(op: &DMatrix<f64>, top_k: usize) -> Result<Vec<f64>> {
    if op.nrows() != op.ncols() {
        return Err(Error::InvalidParameter("spectrum needs a square matrix".into()));
    }
    let asym = inf_norm(&(op - op.transpose()));
    if asym > 1e-10 * inf_norm(op).max(1.0) {
        return Err(Error::InvalidParameter(
            "spectrum needs a symmetric matrix".into(),
        ));
    }
    let mut eigs: Vec<f64> = op.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if top_k > 0 {
        eigs.truncate(top_k);
    }
    Ok(eigs)
}

/// Side-by-side CSV of two spectra (`index,name_a,name_b`), padded with
/// empty cells when lengths differ.
pub fn spectra_to_csv(name_a: &str, a: &[f64], name_b: &str, b: &[f64]) -> String {
    let mut out = format!("index,{name_a},{name_b}\n");
    for i in 0..a.len().max(b.len()) {
        let va = a.get(i).map(|v| format!("{v:.17e}")).unwrap_or_default();
        let vb = b.get(i).map(|v| format!("{v:.17e}")).unwrap_or_default();
        out.push_str(&format!("{i},{va},{vb}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

    fn random_problem(n: usize, k: usize, seed: u64) -> InverseProblem {
        random_linear_problem(n, k, seed).unwrap()
    }

    #[test]
    fn mean_concentration_matches_normal_cdf() {
        // Scalar Γ = 1: δ̄_N ~ N(0, 1/N), so P(|δ̄| > β) = 2Φ(−β√N).
        let cov = Covariance::identity(1);
        let rep = check_mean_concentration(
            &cov,
            SketchDistribution::Gaussian,
            0.5,
            &[16],
            2000,
            7,
        )
        .unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let expected = 2.0 * normal.cdf(-0.5 * 4.0);
        assert!(
            (rep.rows[0].exceed_freq - expected).abs() <= 0.02,
            "freq {} vs {}",
            rep.rows[0].exceed_freq,
            expected
        );
        assert!(rep.pass);
    }

    #[test]
    fn mean_concentration_huge_beta_never_exceeds() {
        let cov = Covariance::identity(3);
        let rep = check_mean_concentration(
            &cov,
            SketchDistribution::Gaussian,
            100.0,
            &[10, 50],
            200,
            1,
        )
        .unwrap();
        for row in &rep.rows {
            assert_eq!(row.exceed_freq, 0.0);
        }
        assert!(rep.pass);
    }

    #[test]
    fn mean_concentration_achlioptas_decays() {
        let cov = Covariance::identity(5);
        let rep = check_mean_concentration(
            &cov,
            SketchDistribution::Achlioptas,
            0.4,
            &[10, 100, 1000],
            500,
            3,
        )
        .unwrap();
        assert!(rep.pass, "freqs {:?}", rep.rows.iter().map(|r| r.exceed_freq).collect::<Vec<_>>());
        assert!(rep.rows[0].exceed_freq >= rep.rows[2].exceed_freq);
    }

    #[test]
    fn outer_product_basis_sketch_never_exceeds() {
        let cov = Covariance::identity(4);
        let rep = check_outer_product_concentration(
            &cov,
            SketchDistribution::DeterministicBasis,
            TargetMoment::Cov,
            1e-6,
            &[4, 8],
            100,
            0,
        )
        .unwrap();
        for row in &rep.rows {
            assert_eq!(row.exceed_freq, 0.0);
        }
        assert!(rep.pass);
    }

    #[test]
    fn outer_product_scalar_matches_chi_square() {
        // Scalar Γ = 1: S_N = χ²_N/N, exceedance P(|χ²_N/N − 1| > 0.3).
        let cov = Covariance::identity(1);
        let n = 50usize;
        let rep = check_outer_product_concentration(
            &cov,
            SketchDistribution::Gaussian,
            TargetMoment::Cov,
            0.3,
            &[n],
            2000,
            11,
        )
        .unwrap();
        let chi = ChiSquared::new(n as f64).unwrap();
        let expected = chi.cdf(0.7 * n as f64) + (1.0 - chi.cdf(1.3 * n as f64));
        assert!(
            (rep.rows[0].exceed_freq - expected).abs() <= 0.02,
            "freq {} vs {}",
            rep.rows[0].exceed_freq,
            expected
        );
    }

    #[test]
    fn outer_product_decays_with_n() {
        let cov = Covariance::identity(3);
        let rep = check_outer_product_concentration(
            &cov,
            SketchDistribution::Gaussian,
            TargetMoment::Precision,
            0.25,
            &[100, 1000, 10000],
            150,
            5,
        )
        .unwrap();
        assert!(rep.pass, "freqs {:?}", rep.rows.iter().map(|r| r.exceed_freq).collect::<Vec<_>>());
    }

    #[test]
    fn triple_product_moments() {
        let samples = triple_product_samples(1_000_000, 13);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        // Var[X₁X₂X₃] = E[X²]³ = 1, so the mean of 10⁶ draws has sd 1e-3.
        assert!(mean.abs() <= 3e-3, "mean {mean}");
        let var = samples.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() <= 0.05, "var {var}");
    }

    #[test]
    fn triple_product_tail_is_stretched_exponential() {
        let rep = check_triple_product_tail(&[2.0, 4.0, 8.0, 16.0], 4_000_000, 17).unwrap();
        assert!(rep.pass);
        assert!(rep.realized_value("slope").unwrap() < 0.0);
        assert!(rep.realized_value("r_squared").unwrap() >= 0.95);
    }

    #[test]
    fn perturbation_degenerate_plan_is_exact() {
        let p = random_problem(6, 6, 2);
        let plan = RandomizationPlan::new(SketchDistribution::DeterministicBasis, 6, 0)
            .with_sigma()
            .with_eps()
            .with_delta()
            .with_lambda()
            .with_zero_variance();
        let rep = check_linear_perturbation_bound(&p, &plan, 5, 0).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.rows[0].exceed_freq, 0.0);
        assert!(rep.realized_value("max_rel_err").unwrap() <= 1e-10);
        assert!(rep.realized_value("max_rel_dm").unwrap() <= 1e-10);
    }

    #[test]
    fn perturbation_bound_holds_on_random_problem() {
        let p = random_problem(12, 15, 4);
        let plan = RandomizationPlan::new(SketchDistribution::Gaussian, 2000, 9)
            .with_sigma()
            .with_eps()
            .with_delta()
            .with_lambda();
        let rep = check_linear_perturbation_bound(&p, &plan, 100, 21).unwrap();
        assert!(rep.pass, "realized {:?}", rep.realized);
    }

    #[test]
    fn condition_number_of_diagonal_normal_matrix() {
        // A = diag(1, 2), L = I, Γ⁻¹ = I → M = diag(2, 5), κ₂ = 2.5.
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let eigs = spectrum_report(&m, 0).unwrap();
        assert_relative_eq!(eigs[0] / eigs[1], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn sketched_precision_rank_bound() {
        // N = 10 samples in 100 dimensions: exactly 90 zero eigenvalues.
        let cov = Covariance::identity(100);
        let lam = draw_sketch(
            SketchDistribution::Gaussian,
            &cov,
            TargetMoment::Precision,
            10,
            3,
            VariableTag::Lambda,
        )
        .unwrap();
        let eigs = spectrum_report(&lam.second_moment_dense().unwrap(), 0).unwrap();
        let zeros = eigs.iter().filter(|v| v.abs() <= 1e-10).count();
        assert_eq!(zeros, 90);
    }

    #[test]
    fn basis_sketch_spectrum_matches_target() {
        let mut rng = StdRng::seed_from_u64(8);
        let g = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = Covariance::dense(&g * g.transpose() + DMatrix::identity(6, 6)).unwrap();
        let lam = draw_sketch(
            SketchDistribution::DeterministicBasis,
            &cov,
            TargetMoment::Precision,
            6,
            0,
            VariableTag::Lambda,
        )
        .unwrap();
        let sketched = spectrum_report(&lam.second_moment_dense().unwrap(), 0).unwrap();
        let exact = spectrum_report(&cov.inverse_to_dense().unwrap(), 0).unwrap();
        for (s, e) in sketched.iter().zip(&exact) {
            assert_relative_eq!(s, e, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn spectrum_rejects_nonsymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(spectrum_report(&m, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let cov = Covariance::identity(2);
        let rep = check_mean_concentration(
            &cov,
            SketchDistribution::Gaussian,
            1.0,
            &[10, 20],
            100,
            0,
        )
        .unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bound_id,N,beta,R,exceed_freq,pass");
        assert_eq!(lines.len(), 3);
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 6);
        }
    }
}
