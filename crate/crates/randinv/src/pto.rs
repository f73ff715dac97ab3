//! Parameter-to-observable maps.
//!
//! A [`PtoMap`] wraps a forward model F(u) together with Jacobian and
//! Jacobian-transpose actions. Linear maps additionally expose their matrix
//! (dense or sparse) so solvers can pick a factorization path.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Forward-model interface. Implementations must be thread-safe; all solver
/// state lives in the caller.
pub trait ForwardOp: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// F(u)
    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// dF(u) v
    fn jvp(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>;
    /// dF(u)^T w
    fn vjp(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;
    fn is_linear(&self) -> bool {
        false
    }
    /// Dense matrix when the map is linear and materializable.
    fn dense(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

#[derive(Clone)]
pub struct PtoMap {
    inner: Arc<dyn ForwardOp>,
}

impl PtoMap {
    pub fn new(op: impl ForwardOp + 'static) -> Self {
        Self { inner: Arc::new(op) }
    }

    pub fn from_dense(a: DMatrix<f64>) -> Self {
        Self::new(DenseLinearOp { a })
    }

    pub fn from_sparse(rows: Vec<Vec<(usize, f64)>>, ncols: usize) -> Self {
        Self::new(SparseLinearOp::new(rows, ncols))
    }

    /// Wrap a linear map so it advertises itself as nonlinear; used to push
    /// linear benchmarks through the Gauss-Newton path.
    pub fn forget_linearity(&self) -> Self {
        Self::new(OpaqueOp {
            inner: self.inner.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    pub fn is_linear(&self) -> bool {
        self.inner.is_linear()
    }

    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        self.inner.dense()
    }

    pub fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_in(u)?;
        self.inner.forward(u)
    }

    pub fn jvp(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_in(u)?;
        self.check_in(v)?;
        self.inner.jvp(u, v)
    }

    pub fn vjp(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_in(u)?;
        if w.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: w.len(),
            });
        }
        self.inner.vjp(u, w)
    }

    fn check_in(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }
}

struct DenseLinearOp {
    a: DMatrix<f64>,
}

impl ForwardOp for DenseLinearOp {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }
    fn output_dim(&self) -> usize {
        self.a.nrows()
    }
    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * u)
    }
    fn jvp(&self, _u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * v)
    }
    fn vjp(&self, _u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.a.tr_mul(w))
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn dense(&self) -> Option<&DMatrix<f64>> {
        Some(&self.a)
    }
}

/// Row-compressed sparse linear map.
pub struct SparseLinearOp {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl SparseLinearOp {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, ncols: usize) -> Self {
        Self { rows, ncols }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }
}

impl ForwardOp for SparseLinearOp {
    fn input_dim(&self) -> usize {
        self.ncols
    }
    fn output_dim(&self) -> usize {
        self.rows.len()
    }
    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, v) in row {
                acc += v * u[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }
    fn jvp(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let _ = u;
        self.forward(v)
    }
    fn vjp(&self, _u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            let wi = w[i];
            if wi != 0.0 {
                for &(j, v) in row {
                    out[j] += v * wi;
                }
            }
        }
        Ok(out)
    }
    fn is_linear(&self) -> bool {
        true
    }
}

struct OpaqueOp {
    inner: Arc<dyn ForwardOp>,
}

impl ForwardOp for OpaqueOp {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.forward(u)
    }
    fn jvp(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.jvp(u, v)
    }
    fn vjp(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.vjp(u, w)
    }
}

/// Check `<jvp(u,v), w> == <v, vjp(u,w)>` for random directions. Returns the
/// worst relative defect over `trials`.
pub fn adjoint_test(map: &PtoMap, u: &DVector<f64>, seed: u64, trials: usize) -> Result<f64> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v = DVector::from_fn(map.input_dim(), |_, _| rng.gen::<f64>() - 0.5);
        let w = DVector::from_fn(map.output_dim(), |_, _| rng.gen::<f64>() - 0.5);
        let lhs = map.jvp(u, &v)?.dot(&w);
        let rhs = v.dot(&map.vjp(u, &w)?);
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}
