//! Sampling distributions and sample-average ensembles.
//!
//! A [`SketchEnsemble`] holds N columns, pre-scaled by 1/√N, whose outer
//! product approximates a target covariance or precision. A
//! [`PerturbationEnsemble`] holds N mean-zero vectors with a prescribed
//! covariance. Column j is a pure function of (seed, variable tag, j), so
//! generation is reproducible regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::Covariance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchDistribution {
    Gaussian,
    /// Entries {−√3, 0, +√3} with probabilities {1/6, 2/3, 1/6}.
    Achlioptas,
    Rademacher,
    /// Scaled standard basis vectors; the sample second moment equals the
    /// target exactly. Used for degenerate-randomization checks.
    DeterministicBasis,
}

impl SketchDistribution {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "achlioptas" => Ok(Self::Achlioptas),
            "rademacher" => Ok(Self::Rademacher),
            "deterministic_basis" => Ok(Self::DeterministicBasis),
            _ => Err(Error::Config(format!("unknown distribution '{s}'"))),
        }
    }
}

/// Which random variable an ensemble stands in for; part of the seed stream
/// so the variables are mutually independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableTag {
    /// Data-space perturbation, cov L.
    Sigma,
    /// Misfit sketch, second moment L⁻¹.
    Eps,
    /// Parameter-space perturbation, cov Γ.
    Delta,
    /// Prior-precision sketch, second moment Γ⁻¹.
    Lambda,
    /// Prior-covariance sketch, second moment Γ.
    Omega,
}

impl VariableTag {
    fn stream_id(self) -> u64 {
        match self {
            VariableTag::Sigma => 1,
            VariableTag::Eps => 2,
            VariableTag::Delta => 3,
            VariableTag::Lambda => 4,
            VariableTag::Omega => 5,
        }
    }
}

/// Which moment of the target covariance the sketch should reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMoment {
    Cov,
    Precision,
}

/// What to randomize, with what, and how many samples.
#[derive(Debug, Clone, Copy)]
pub struct RandomizationPlan {
    pub randomize_sigma: bool,
    pub randomize_eps: bool,
    pub randomize_delta: bool,
    pub randomize_lambda: bool,
    pub randomize_omega: bool,
    pub distribution: SketchDistribution,
    /// Samples per randomized variable.
    pub n: usize,
    /// Outer samples for nested variants.
    pub m: usize,
    pub seed: u64,
    /// Multiplier on σ/δ draws; 0 is the zero-variance degenerate hook.
    pub perturbation_scale: f64,
}

impl RandomizationPlan {
    pub fn new(distribution: SketchDistribution, n: usize, seed: u64) -> Self {
        Self {
            randomize_sigma: false,
            randomize_eps: false,
            randomize_delta: false,
            randomize_lambda: false,
            randomize_omega: false,
            distribution,
            n,
            m: n,
            seed,
            perturbation_scale: 1.0,
        }
    }

    /// Degenerate hook: σ/δ become exactly zero, so perturbation-based
    /// methods collapse onto the deterministic MAP solve.
    pub fn with_zero_variance(mut self) -> Self {
        self.perturbation_scale = 0.0;
        self
    }

    pub fn with_sigma(mut self) -> Self {
        self.randomize_sigma = true;
        self
    }
    pub fn with_eps(mut self) -> Self {
        self.randomize_eps = true;
        self
    }
    pub fn with_delta(mut self) -> Self {
        self.randomize_delta = true;
        self
    }
    pub fn with_lambda(mut self) -> Self {
        self.randomize_lambda = true;
        self
    }
    pub fn with_omega(mut self) -> Self {
        self.randomize_omega = true;
        self
    }
    pub fn with_outer(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParameter(
                "sample counts must be at least 1".into(),
            ));
        }
        if !(self.randomize_sigma
            || self.randomize_eps
            || self.randomize_delta
            || self.randomize_lambda
            || self.randomize_omega)
        {
            return Err(Error::InvalidParameter(
                "randomized solver needs at least one randomized variable".into(),
            ));
        }
        Ok(())
    }
}

/// RNG for column `j` of variable `tag` under master `seed`; pure in its
/// arguments so columns can be generated in any order.
fn column_rng(seed: u64, tag: VariableTag, j: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.stream_id().to_le_bytes());
    key[16..24].copy_from_slice(&j.to_le_bytes());
    // Mix so nearby (seed, j) pairs do not share a prefix-only difference.
    key[24..32].copy_from_slice(
        &(seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(tag.stream_id().wrapping_mul(0xbf58_476d_1ce4_e5b9))
            .wrapping_add(j.wrapping_mul(0x94d0_49bb_1331_11eb)))
        .to_le_bytes(),
    );
    ChaCha8Rng::from_seed(key)
}

fn raw_entry(dist: SketchDistribution, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        SketchDistribution::Gaussian => rng.sample(StandardNormal),
        SketchDistribution::Achlioptas => {
            let u: f64 = rng.gen();
            if u < 1.0 / 6.0 {
                -3f64.sqrt()
            } else if u < 1.0 / 3.0 {
                3f64.sqrt()
            } else {
                0.0
            }
        }
        SketchDistribution::Rademacher => {
            if rng.gen::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        SketchDistribution::DeterministicBasis => unreachable!("basis columns are not i.i.d."),
    }
}

/// Unit-second-moment raw column j (before the covariance factor and the
/// 1/√N scaling).
fn raw_column(dist: SketchDistribution, dim: usize, n: usize, seed: u64, tag: VariableTag, j: usize) -> DVector<f64> {
    match dist {
        SketchDistribution::DeterministicBasis => {
            // Basis index j mod dim, used c_j times across the ensemble;
            // scale √(N/c_j) makes (1/N)·Σ wⱼwⱼᵀ exactly the identity.
            let i = j % dim;
            let uses = (n / dim + usize::from(i < n % dim)).max(1);
            let mut w = DVector::zeros(dim);
            w[i] = (n as f64 / uses as f64).sqrt();
            w
        }
        _ => {
            let mut rng = column_rng(seed, tag, j as u64);
            DVector::from_fn(dim, |_, _| raw_entry(dist, &mut rng))
        }
    }
}

/// N scaled samples of one variable; `columns` already carries the 1/√N
/// factor, so the sample second moment is `columns · columnsᵀ`.
#[derive(Debug, Clone)]
pub struct SketchEnsemble {
    columns: DMatrix<f64>,
    tag: VariableTag,
    seed: u64,
}

impl SketchEnsemble {
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.columns.ncols()
    }

    pub fn tag(&self) -> VariableTag {
        self.tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The dim × N column matrix E (with the 1/√N scaling baked in).
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Unscaled sample i, i.e. √N times column i.
    pub fn sample(&self, i: usize) -> DVector<f64> {
        let scale = (self.n_samples() as f64).sqrt();
        DVector::from(self.columns.column(i)) * scale
    }

    /// v ↦ S_N v = E(Eᵀv), never materializing S_N.
    pub fn apply_second_moment(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(&self.columns * self.columns.tr_mul(v))
    }

    /// Eᵀ v (the sketched residual).
    pub fn sketch(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(self.columns.tr_mul(v))
    }

    /// One-sample ensemble holding unscaled sample i (its second moment is
    /// the single outer product εⁱ(εⁱ)ᵀ).
    pub fn single(&self, i: usize) -> SketchEnsemble {
        let scale = (self.n_samples() as f64).sqrt();
        let col = DVector::from(self.columns.column(i)) * scale;
        SketchEnsemble {
            columns: DMatrix::from_columns(&[col]),
            tag: self.tag,
            seed: self.seed,
        }
    }

    /// Dense S_N = EEᵀ; refuses to materialize beyond 2048².
    pub fn second_moment_dense(&self) -> Result<DMatrix<f64>> {
        if self.dim() > 2048 {
            return Err(Error::InvalidParameter(format!(
                "refusing to materialize a {0}x{0} sample second moment",
                self.dim()
            )));
        }
        Ok(&self.columns * self.columns.transpose())
    }
}

/// N mean-zero samples with covariance `cov`, plus their running mean.
#[derive(Debug, Clone)]
pub struct PerturbationEnsemble {
    samples: DMatrix<f64>,
    mean: DVector<f64>,
    tag: VariableTag,
}

impl PerturbationEnsemble {
    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn tag(&self) -> VariableTag {
        self.tag
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.samples.column(i).into()
    }

    /// σ̄_N / δ̄_N.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

/// Draw N sketch columns targeting `cov` (moment = Cov) or `cov⁻¹`
/// (moment = Precision); columns carry the 1/√N scaling.
pub fn draw_sketch(
    dist: SketchDistribution,
    target: &Covariance,
    moment: TargetMoment,
    n: usize,
    seed: u64,
    tag: VariableTag,
) -> Result<SketchEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("sketch needs N >= 1".into()));
    }
    let dim = target.dim();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let cols: Result<Vec<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let w = raw_column(dist, dim, n, seed, tag, j);
            let col = match moment {
                TargetMoment::Cov => target.apply_sqrt(&w)?,
                TargetMoment::Precision => target.apply_inv_sqrt(&w)?,
            };
            Ok(col * inv_sqrt_n)
        })
        .collect();
    let cols = cols?;
    Ok(SketchEnsemble {
        columns: DMatrix::from_columns(&cols),
        tag,
        seed,
    })
}

/// Draw N mean-zero Gaussian perturbations with covariance `cov`.
pub fn draw_perturbations(
    cov: &Covariance,
    n: usize,
    seed: u64,
    tag: VariableTag,
) -> Result<PerturbationEnsemble> {
    draw_perturbations_with(SketchDistribution::Gaussian, cov, n, seed, tag)
}

/// Draw N mean-zero perturbations with covariance `cov` and i.i.d.
/// unit-variance raw entries from `dist`.
pub fn draw_perturbations_with(
    dist: SketchDistribution,
    cov: &Covariance,
    n: usize,
    seed: u64,
    tag: VariableTag,
) -> Result<PerturbationEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("perturbation needs N >= 1".into()));
    }
    if dist == SketchDistribution::DeterministicBasis {
        return Err(Error::InvalidParameter(
            "perturbations need an i.i.d. entry distribution".into(),
        ));
    }
    let dim = cov.dim();
    let cols: Result<Vec<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = column_rng(seed, tag, j as u64);
            let w = DVector::from_fn(dim, |_, _| raw_entry(dist, &mut rng));
            cov.apply_sqrt(&w)
        })
        .collect();
    let cols = cols?;
    let samples = DMatrix::from_columns(&cols);
    let mean = samples.column_mean();
    Ok(PerturbationEnsemble { samples, mean, tag })
}
