//! Symmetric positive definite covariance operators.
//!
//! A [`Covariance`] exposes the four actions needed throughout the crate:
//! `C v`, `C^{-1} v`, `C^{1/2} v` and `C^{-1/2} v`. Three representations are
//! supported: a scaled identity, a dense SPD matrix (actions derived from one
//! symmetric eigendecomposition at construction), and a symmetric-factor form
//! `C = W W` with `W` SPD (used for PDE-based priors where the square root is
//! known exactly).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Representation tag, mostly useful for diagnostics and dispatch decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovRepr {
    ScaledIdentity,
    Dense,
    Operator,
}

#[derive(Debug, Clone)]
enum Repr {
    /// C = scale * I. `scale == 0` is permitted as a degenerate hook for
    /// zero-variance perturbation tests; inverse actions then fail.
    ScaledIdentity { dim: usize, scale: f64 },
    Dense(Box<DenseCov>),
    /// C = W * W with W symmetric positive definite. `sqrt` is W and
    /// `inv_sqrt` is W^{-1}, both materialized.
    SymmetricFactor {
        sqrt: Box<DMatrix<f64>>,
        inv_sqrt: Box<DMatrix<f64>>,
    },
}

#[derive(Debug, Clone)]
struct DenseCov {
    cov: DMatrix<f64>,
    inv: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Covariance {
    repr: Repr,
}

impl Covariance {
    /// C = scale * I with `scale >= 0`. Zero scale is a degenerate operator
    /// usable only for sampling hooks, not for inverse actions.
    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 || !scale.is_finite() || scale < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scaled identity covariance requires dim > 0 and scale >= 0, got dim={dim}, scale={scale}"
            )));
        }
        Ok(Self {
            repr: Repr::ScaledIdentity { dim, scale },
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0).expect("identity is valid")
    }

    /// Dense SPD covariance. All four actions are precomputed from one
    /// symmetric eigendecomposition; fails if the matrix is not symmetric
    /// positive definite.
    pub fn dense(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 || cov.ncols() != n {
            return Err(Error::InvalidParameter(
                "covariance matrix must be square and nonempty".into(),
            ));
        }
        let sym_tol = 1e-10 * cov.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (cov[(i, j)] - cov[(j, i)]).abs() > sym_tol {
                    return Err(Error::NotSpd);
                }
            }
        }
        // Symmetrize before decomposing so roundoff asymmetry cannot leak in.
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let max_eig = eig.eigenvalues.amax();
        if eig.eigenvalues.iter().any(|&l| l <= 1e-14 * max_eig) {
            return Err(Error::NotSpd);
        }
        let build = |f: &dyn Fn(f64) -> f64| -> DMatrix<f64> {
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| f(l)));
            &eig.eigenvectors * d * eig.eigenvectors.transpose()
        };
        let dense = DenseCov {
            inv: build(&|l| 1.0 / l),
            sqrt: build(&|l| l.sqrt()),
            inv_sqrt: build(&|l| 1.0 / l.sqrt()),
            cov: sym,
        };
        Ok(Self {
            repr: Repr::Dense(Box::new(dense)),
        })
    }

    /// C = W W for a symmetric positive definite `sqrt = W` with known
    /// inverse `inv_sqrt = W^{-1}`. The caller guarantees `W * inv_sqrt = I`.
    pub fn symmetric_factor(sqrt: DMatrix<f64>, inv_sqrt: DMatrix<f64>) -> Result<Self> {
        let n = sqrt.nrows();
        if n == 0 || sqrt.ncols() != n || inv_sqrt.nrows() != n || inv_sqrt.ncols() != n {
            return Err(Error::InvalidParameter(
                "symmetric factor matrices must be square with matching dims".into(),
            ));
        }
        Ok(Self {
            repr: Repr::SymmetricFactor {
                sqrt: Box::new(sqrt),
                inv_sqrt: Box::new(inv_sqrt),
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::ScaledIdentity { dim, .. } => *dim,
            Repr::Dense(d) => d.cov.nrows(),
            Repr::SymmetricFactor { sqrt, .. } => sqrt.nrows(),
        }
    }

    pub fn repr_tag(&self) -> CovRepr {
        match &self.repr {
            Repr::ScaledIdentity { .. } => CovRepr::ScaledIdentity,
            Repr::Dense(_) => CovRepr::Dense,
            Repr::SymmetricFactor { .. } => CovRepr::Operator,
        }
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// C v
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        Ok(match &self.repr {
            Repr::ScaledIdentity { scale, .. } => v * *scale,
            Repr::Dense(d) => &d.cov * v,
            Repr::SymmetricFactor { sqrt, .. } => &**sqrt * (&**sqrt * v),
        })
    }

    /// C^{-1} v
    pub fn apply_inverse(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        match &self.repr {
            Repr::ScaledIdentity { scale, .. } => {
                if *scale == 0.0 {
                    Err(Error::SingularCovariance)
                } else {
                    Ok(v / *scale)
                }
            }
            Repr::Dense(d) => Ok(&d.inv * v),
            Repr::SymmetricFactor { inv_sqrt, .. } => Ok(&**inv_sqrt * (&**inv_sqrt * v)),
        }
    }

    /// C^{1/2} v
    pub fn apply_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        Ok(match &self.repr {
            Repr::ScaledIdentity { scale, .. } => v * scale.sqrt(),
            Repr::Dense(d) => &d.sqrt * v,
            Repr::SymmetricFactor { sqrt, .. } => &**sqrt * v,
        })
    }

    /// C^{-1/2} v
    pub fn apply_inv_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        match &self.repr {
            Repr::ScaledIdentity { scale, .. } => {
                if *scale == 0.0 {
                    Err(Error::SingularCovariance)
                } else {
                    Ok(v / scale.sqrt())
                }
            }
            Repr::Dense(d) => Ok(&d.inv_sqrt * v),
            Repr::SymmetricFactor { inv_sqrt, .. } => Ok(&**inv_sqrt * v),
        }
    }

    /// Dense materialization of C.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::ScaledIdentity { dim, scale } => DMatrix::identity(*dim, *dim) * *scale,
            Repr::Dense(d) => d.cov.clone(),
            Repr::SymmetricFactor { sqrt, .. } => &**sqrt * &**sqrt,
        }
    }

    /// Dense materialization of C^{-1}.
    pub fn inverse_to_dense(&self) -> Result<DMatrix<f64>> {
        match &self.repr {
            Repr::ScaledIdentity { dim, scale } => {
                if *scale == 0.0 {
                    Err(Error::SingularCovariance)
                } else {
                    Ok(DMatrix::identity(*dim, *dim) / *scale)
                }
            }
            Repr::Dense(d) => Ok(d.inv.clone()),
            Repr::SymmetricFactor { inv_sqrt, .. } => Ok(&**inv_sqrt * &**inv_sqrt),
        }
    }

    /// C^{-1} applied to each column of a matrix.
    pub fn apply_inverse_mat(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.repr {
            Repr::ScaledIdentity { dim, scale } => {
                if m.nrows() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: m.nrows(),
                    });
                }
                if *scale == 0.0 {
                    Err(Error::SingularCovariance)
                } else {
                    Ok(m / *scale)
                }
            }
            Repr::Dense(d) => Ok(&d.inv * m),
            Repr::SymmetricFactor { inv_sqrt, .. } => Ok(&**inv_sqrt * (&**inv_sqrt * m)),
        }
    }
}
