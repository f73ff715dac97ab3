//! Parallel-beam tomography benchmark.
//!
//! The forward map is the sparse discrete Radon transform of a g×g image on
//! [−1,1]²: for each of `angles` directions uniformly spaced over [0, π)
//! and g parallel detector bins, the matrix row holds the ray-pixel
//! intersection lengths from a Siddon grid traversal. Truth is the
//! Shepp–Logan phantom.

use nalgebra::DVector;

use super::{identity_alpha, noise_sigma, noise_vector, GeneratedProblem, PriorSpec, ProblemSpec};
use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::problem::InverseProblem;
use crate::problems::priors::make_identity_prior;
use crate::pto::PtoMap;

/// (center x, center y, semi-axis a, semi-axis b, angle degrees, intensity)
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
];

/// Shepp–Logan phantom sampled at pixel centers; pixel (ix, iy) of a g×g
/// grid on [−1,1]² maps to index iy·g + ix.
pub fn shepp_logan_phantom(g: usize) -> DVector<f64> {
    let mut img = DVector::zeros(g * g);
    for iy in 0..g {
        for ix in 0..g {
            let x = -1.0 + (ix as f64 + 0.5) * 2.0 / g as f64;
            let y = -1.0 + (iy as f64 + 0.5) * 2.0 / g as f64;
            let mut v = 0.0;
            for &(cx, cy, a, b, deg, val) in &SHEPP_LOGAN {
                let phi = deg.to_radians();
                let (s, c) = phi.sin_cos();
                let dx = x - cx;
                let dy = y - cy;
                let xr = c * dx + s * dy;
                let yr = -s * dx + c * dy;
                if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                    v += val;
                }
            }
            img[iy * g + ix] = v;
        }
    }
    img
}

/// Intersection lengths of the ray p(t) = origin + t·dir with the pixels of
/// a g×g grid on [−1,1]² (Siddon traversal via sorted plane crossings).
fn trace_ray(g: usize, origin: (f64, f64), dir: (f64, f64)) -> Vec<(usize, f64)> {
    let (ox, oy) = origin;
    let (dx, dy) = dir;
    // Clip to the bounding box.
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < 1e-14 {
            if !(-1.0..=1.0).contains(&o) {
                return Vec::new();
            }
        } else {
            let (t0, t1) = ((-1.0 - o) / d, (1.0 - o) / d);
            tmin = tmin.max(t0.min(t1));
            tmax = tmax.min(t0.max(t1));
        }
    }
    if tmin >= tmax {
        return Vec::new();
    }
    let h = 2.0 / g as f64;
    let mut ts = vec![tmin, tmax];
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() >= 1e-14 {
            for i in 0..=g {
                let t = (-1.0 + i as f64 * h - o) / d;
                if t > tmin && t < tmax {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let len = tb - ta;
        if len <= 1e-14 {
            continue;
        }
        let tm = 0.5 * (ta + tb);
        let px = ox + tm * dx;
        let py = oy + tm * dy;
        let ix = (((px + 1.0) / h).floor() as isize).clamp(0, g as isize - 1) as usize;
        let iy = (((py + 1.0) / h).floor() as isize).clamp(0, g as isize - 1) as usize;
        out.push((iy * g + ix, len));
    }
    out
}

/// Sparse Radon matrix rows, angle-major: row t·g + r is detector bin r at
/// angle t·π/angles.
pub fn radon_rows(g: usize, angles: usize) -> Vec<Vec<(usize, f64)>> {
    let mut rows = Vec::with_capacity(angles * g);
    for t in 0..angles {
        let theta = t as f64 * std::f64::consts::PI / angles as f64;
        let (s, c) = theta.sin_cos();
        let dir = (c, s);
        let normal = (-s, c);
        for r in 0..g {
            let offset = -1.0 + (r as f64 + 0.5) * 2.0 / g as f64;
            let origin = (offset * normal.0, offset * normal.1);
            rows.push(trace_ray(g, origin, dir));
        }
    }
    rows
}

pub fn make_xray(spec: &ProblemSpec) -> Result<GeneratedProblem> {
    let g = spec.n;
    if g < 4 || spec.angles == 0 {
        return Err(Error::InvalidParameter(
            "xray needs grid >= 4 and angles >= 1".into(),
        ));
    }
    let n = g * g;
    let rows = radon_rows(g, spec.angles);
    let map = PtoMap::from_sparse(rows, n);
    let truth = shepp_logan_phantom(g);
    let clean = map.forward(&truth)?;
    let sigma = noise_sigma(&clean, spec.noise_frac);
    let k = clean.len();
    let d = clean + noise_vector(k, sigma, spec.data_seed);
    let prior = match spec.prior {
        PriorSpec::ScaledIdentity { alpha_scale } => {
            make_identity_prior(n, identity_alpha(alpha_scale, sigma))?
        }
        _ => {
            return Err(Error::InvalidParameter(
                "xray benchmark uses the scaled-identity prior".into(),
            ))
        }
    };
    let problem = InverseProblem::new(
        map,
        d,
        DVector::zeros(n),
        Covariance::scaled_identity(k, sigma * sigma)?,
        prior,
    )?;
    Ok(GeneratedProblem {
        problem,
        truth,
        spec: spec.clone(),
        sigma_noise: sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pto::{adjoint_test, SparseLinearOp};
    use approx::assert_relative_eq;

    #[test]
    fn matrix_shape_matches_geometry() {
        let rows = radon_rows(64, 45);
        assert_eq!(rows.len(), 2880);
        let op = SparseLinearOp::new(rows, 64 * 64);
        let dense = op.to_dense();
        assert_eq!((dense.nrows(), dense.ncols()), (2880, 4096));
    }

    #[test]
    fn zero_image_gives_zero_sinogram() {
        let mut spec = ProblemSpec::xray();
        spec.n = 16;
        spec.angles = 10;
        let gp = make_xray(&spec).unwrap();
        let y = gp.problem.pto.forward(&DVector::zeros(256)).unwrap();
        assert_eq!(y, DVector::zeros(160));
    }

    #[test]
    fn adjoint_consistency() {
        let rows = radon_rows(16, 12);
        let map = PtoMap::from_sparse(rows, 256);
        let u = DVector::zeros(256);
        assert!(adjoint_test(&map, &u, 3, 10).unwrap() <= 1e-12);
    }

    #[test]
    fn ray_lengths_cover_straight_rays_exactly() {
        // Axis-aligned ray through the middle: total length 2, g pixels of
        // length 2/g each.
        let lens = trace_ray(8, (0.0, 0.05), (1.0, 0.0));
        assert_eq!(lens.len(), 8);
        let total: f64 = lens.iter().map(|&(_, l)| l).sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-12);
        for &(_, l) in &lens {
            assert_relative_eq!(l, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn phantom_values_are_plausible() {
        let img = shepp_logan_phantom(64);
        // Skull intensity 2 at the rim region, ~1 inside, 0 outside.
        assert_eq!(img[0], 0.0);
        let center = img[32 * 64 + 32];
        assert!(center > 0.9 && center < 1.1, "center {center}");
        assert!(img.amax() <= 2.0 + 1e-12);
    }
}
