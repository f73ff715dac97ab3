//! Prior covariance constructors.

use nalgebra::DMatrix;

use crate::covariance::Covariance;
use crate::error::{Error, Result};

/// Γ = α⁻¹ I.
pub fn make_identity_prior(n: usize, alpha: f64) -> Result<Covariance> {
    if alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "identity prior needs alpha > 0, got {alpha}"
        )));
    }
    Covariance::scaled_identity(n, 1.0 / alpha)
}

/// Squared-inverse-elliptic prior Γ = K⁻², K = δ·I + γ·S where S is the
/// (1/h²-scaled) bilinear-FEM stiffness matrix of −div θ grad on a gx×gy
/// node grid with natural (zero-flux) boundary conditions. S annihilates
/// constants exactly, so K·1 = δ·1.
pub fn make_bilaplacian_prior(
    gx: usize,
    gy: usize,
    delta: f64,
    gamma: f64,
    theta: [[f64; 2]; 2],
) -> Result<Covariance> {
    if delta <= 0.0 || gamma <= 0.0 {
        return Err(Error::InvalidParameter(
            "bilaplacian prior needs positive delta, gamma".into(),
        ));
    }
    if (theta[0][1] - theta[1][0]).abs() > 1e-14 {
        return Err(Error::InvalidParameter("theta must be symmetric".into()));
    }
    let det = theta[0][0] * theta[1][1] - theta[0][1] * theta[1][0];
    if theta[0][0] <= 0.0 || det <= 0.0 {
        return Err(Error::InvalidParameter("theta must be SPD".into()));
    }
    let n = gx * gy;
    if n > 4096 {
        return Err(Error::InvalidParameter(format!(
            "prior too large to materialize: {n} dims"
        )));
    }
    let stiff = bilinear_stiffness(gx, gy, theta);
    let hx = 1.0 / (gx.max(2) - 1) as f64;
    let hy = 1.0 / (gy.max(2) - 1) as f64;
    let scale = 1.0 / (hx * hy);
    let k = DMatrix::identity(n, n) * delta + stiff * (gamma * scale);

    // K is SPD; Γ^{1/2} = K⁻¹ exactly, Γ = K⁻².
    let chol = k
        .clone()
        .cholesky()
        .ok_or(Error::NotSpd)?;
    let k_inv = chol.inverse();
    Covariance::symmetric_factor(k_inv, k)
}

/// θ₁/θ₂ principal conductivities rotated by angle `alpha`.
pub fn rotated_tensor(theta1: f64, theta2: f64, alpha: f64) -> [[f64; 2]; 2] {
    let (s, c) = alpha.sin_cos();
    // R diag(θ1, θ2) Rᵀ
    [
        [c * c * theta1 + s * s * theta2, s * c * (theta1 - theta2)],
        [s * c * (theta1 - theta2), s * s * theta1 + c * c * theta2],
    ]
}

/// Bilinear-quad stiffness matrix for −div θ grad on a gx×gy node grid
/// (node (ix, iy) ↦ index iy·gx + ix), assembled with 2×2 Gauss quadrature
/// on each cell. Unscaled: multiply by 1/(hx·hy) to approximate the
/// operator.
fn bilinear_stiffness(gx: usize, gy: usize, theta: [[f64; 2]; 2]) -> DMatrix<f64> {
    let n = gx * gy;
    let mut s = DMatrix::zeros(n, n);
    // Reference-element shape gradients at the 2×2 Gauss points; the
    // physical element is square so the Jacobian is diagonal and cancels in
    // the unscaled assembly up to the hx/hy anisotropy, which is unity for
    // the uniform unit-square grids used here.
    let gp = [-(1.0f64 / 3.0f64).sqrt(), (1.0f64 / 3.0f64).sqrt()];
    let shape_grad = |a: usize, xi: f64, eta: f64| -> (f64, f64) {
        // Nodes in (xi, eta) ∈ [-1,1]²: 0:(-1,-1) 1:(1,-1) 2:(-1,1) 3:(1,1)
        let (sx, sy) = match a {
            0 => (-1.0, -1.0),
            1 => (1.0, -1.0),
            2 => (-1.0, 1.0),
            _ => (1.0, 1.0),
        };
        (0.25 * sx * (1.0 + sy * eta), 0.25 * sy * (1.0 + sx * xi))
    };
    for cy in 0..gy - 1 {
        for cx in 0..gx - 1 {
            let nodes = [
                cy * gx + cx,
                cy * gx + cx + 1,
                (cy + 1) * gx + cx,
                (cy + 1) * gx + cx + 1,
            ];
            for &xi in &gp {
                for &eta in &gp {
                    let grads: Vec<(f64, f64)> =
                        (0..4).map(|a| shape_grad(a, xi, eta)).collect();
                    for a in 0..4 {
                        for b in 0..4 {
                            let (gax, gay) = grads[a];
                            let (gbx, gby) = grads[b];
                            let v = gax * (theta[0][0] * gbx + theta[0][1] * gby)
                                + gay * (theta[1][0] * gbx + theta[1][1] * gby);
                            s[(nodes[a], nodes[b])] += v;
                        }
                    }
                }
            }
        }
    }
    // Enforce exact symmetry against accumulation-order noise.
    let st = s.transpose();
    (s + st) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn identity_prior_basics() {
        let g = make_identity_prior(3, 1.0).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_relative_eq!(g.apply(&v).unwrap(), v);
        let g4 = make_identity_prior(2, 4.0).unwrap();
        let v = DVector::from_vec(vec![2.0, 4.0]);
        assert_relative_eq!(g4.apply_sqrt(&v).unwrap(), 0.5 * &v);
        assert!(make_identity_prior(2, 0.0).is_err());
        assert!(make_identity_prior(2, -1.0).is_err());
    }

    #[test]
    fn bilaplacian_fixes_constants() {
        let g = make_bilaplacian_prior(8, 8, 8.0, 1.0, [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let ones = DVector::from_element(64, 1.0);
        assert_relative_eq!(
            g.apply(&ones).unwrap(),
            &ones / 64.0,
            max_relative = 1e-10
        );
        // sqrt twice equals apply
        let v = DVector::from_fn(64, |i, _| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5);
        let twice = g.apply_sqrt(&g.apply_sqrt(&v).unwrap()).unwrap();
        assert_relative_eq!(twice, g.apply(&v).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn bilaplacian_rejects_bad_tensor() {
        assert!(make_bilaplacian_prior(4, 4, 1.0, 1.0, [[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(make_bilaplacian_prior(4, 4, 0.0, 1.0, [[1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn rotated_tensor_is_spd_with_given_eigenvalues() {
        let t = rotated_tensor(2.0, 0.5, std::f64::consts::FRAC_PI_4);
        assert_relative_eq!(t[0][1], t[1][0]);
        let tr = t[0][0] + t[1][1];
        let det = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        assert_relative_eq!(tr, 2.5, max_relative = 1e-12);
        assert_relative_eq!(det, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn spectrum_decays() {
        // The prior covariance spectrum spans several orders of magnitude:
        // the 50th-largest eigenvalue of Γ exceeds the 500th by ≥ 10×.
        let g = make_bilaplacian_prior(32, 32, 8.0, 1.0, [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let dense = g.to_dense();
        let mut eigs: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(
            eigs[49] / eigs[499] >= 10.0,
            "ratio {}",
            eigs[49] / eigs[499]
        );
    }
}
