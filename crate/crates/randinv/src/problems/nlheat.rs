//! Nonlinear heat-conduction inversion: recover the log-conductivity κ in
//! ∇·(e^κ∇T) = f from temperature observations in the lower half of the
//! unit square.
//!
//! Finite differences on a g×g node grid with edge conductances
//! exp((κᵢ+κⱼ)/2); Dirichlet T = 2(1−x) at y = 0 and T = 2x at y = 1,
//! zero flux on the sides. For fixed κ the state equation is linear and
//! solved by one Cholesky factorization, which is cached per κ so the many
//! Jacobian actions inside Gauss–Newton/CG reuse it. The gradient is
//! assembled from the adjoint state: each edge contributes
//! (c/2)·(Tᵢ−Tⱼ)(pᵢ−pⱼ)/h² to both endpoint parameters.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::f64::consts::PI;

use super::{identity_alpha, noise_sigma, noise_vector, GeneratedProblem, PriorSpec, ProblemSpec};
use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::problem::InverseProblem;
use crate::problems::priors::{make_bilaplacian_prior, make_identity_prior, rotated_tensor};
use crate::pto::{ForwardOp, PtoMap};

struct Grid {
    g: usize,
    h: f64,
    /// node → free index, or usize::MAX for Dirichlet nodes.
    free_of: Vec<usize>,
    /// free index → node.
    node_of: Vec<usize>,
    /// Dirichlet temperature per node (0 for free nodes).
    dirichlet: Vec<f64>,
}

impl Grid {
    fn new(g: usize) -> Self {
        let h = 1.0 / (g - 1) as f64;
        let mut free_of = vec![usize::MAX; g * g];
        let mut node_of = Vec::new();
        let mut dirichlet = vec![0.0; g * g];
        for iy in 0..g {
            for ix in 0..g {
                let node = iy * g + ix;
                let x = ix as f64 * h;
                if iy == 0 {
                    dirichlet[node] = 2.0 * (1.0 - x);
                } else if iy == g - 1 {
                    dirichlet[node] = 2.0 * x;
                } else {
                    free_of[node] = node_of.len();
                    node_of.push(node);
                }
            }
        }
        Self {
            g,
            h,
            free_of,
            node_of,
            dirichlet,
        }
    }

    fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let g = self.g;
        (0..g * g).flat_map(move |node| {
            let ix = node % g;
            let mut out = Vec::with_capacity(2);
            if ix + 1 < g {
                out.push((node, node + 1));
            }
            if node + g < g * g {
                out.push((node, node + g));
            }
            out.into_iter()
        })
    }
}

/// Factorized state system and solved temperature at one κ.
struct State {
    kappa: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Full temperature field (Dirichlet values included).
    temp: DVector<f64>,
}

fn edge_conductance(kappa: &DVector<f64>, i: usize, j: usize) -> f64 {
    (0.5 * (kappa[i] + kappa[j])).exp()
}

/// Solve ∇·(e^κ∇T) = f on the grid; returns the full T field.
fn solve_state(grid: &Grid, kappa: &DVector<f64>, f: &DVector<f64>) -> Result<State> {
    let nf = grid.node_of.len();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut a = DMatrix::zeros(nf, nf);
    let mut b = DVector::zeros(nf);
    for fi in 0..nf {
        b[fi] = -f[grid.node_of[fi]];
    }
    for (i, j) in grid.edges() {
        let c = edge_conductance(kappa, i, j) * inv_h2;
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::ForwardSolveFailed(format!(
                "conductance overflow at kappa ≈ {:.3}",
                0.5 * (kappa[i] + kappa[j])
            )));
        }
        let (fi, fj) = (grid.free_of[i], grid.free_of[j]);
        match (fi != usize::MAX, fj != usize::MAX) {
            (true, true) => {
                a[(fi, fi)] += c;
                a[(fj, fj)] += c;
                a[(fi, fj)] -= c;
                a[(fj, fi)] -= c;
            }
            (true, false) => {
                a[(fi, fi)] += c;
                b[fi] += c * grid.dirichlet[j];
            }
            (false, true) => {
                a[(fj, fj)] += c;
                b[fj] += c * grid.dirichlet[i];
            }
            (false, false) => {}
        }
    }
    let chol = a.cholesky().ok_or(Error::ForwardSolveFailed(
        "state system not positive definite".into(),
    ))?;
    let t_free = chol.solve(&b);
    let mut temp = DVector::from_column_slice(&grid.dirichlet);
    for (fi, &node) in grid.node_of.iter().enumerate() {
        temp[node] = t_free[fi];
    }
    Ok(State {
        kappa: kappa.clone(),
        chol,
        temp,
    })
}

fn hash_vector(v: &DVector<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in v.iter() {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub struct NlHeatOp {
    grid: Grid,
    obs_nodes: Vec<usize>,
    source: DVector<f64>,
    cache: Mutex<HashMap<u64, Arc<State>>>,
    cache_cap: usize,
}

impl NlHeatOp {
    fn state(&self, kappa: &DVector<f64>) -> Result<Arc<State>> {
        let key = hash_vector(kappa);
        {
            let cache = self.cache.lock().unwrap();
            if let Some(s) = cache.get(&key) {
                if s.kappa == *kappa {
                    return Ok(s.clone());
                }
            }
        }
        let s = Arc::new(solve_state(&self.grid, kappa, &self.source)?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= self.cache_cap {
            cache.clear();
        }
        cache.insert(key, s.clone());
        Ok(s)
    }

    fn observe(&self, temp: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.obs_nodes.len(), |r, _| temp[self.obs_nodes[r]])
    }

    /// Scatter observation-space weights to the free right-hand side.
    fn obs_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.grid.node_of.len());
        for (r, &node) in self.obs_nodes.iter().enumerate() {
            let fi = self.grid.free_of[node];
            if fi != usize::MAX {
                rhs[fi] += w[r];
            }
        }
        rhs
    }
}

impl ForwardOp for NlHeatOp {
    fn input_dim(&self) -> usize {
        self.grid.g * self.grid.g
    }

    fn output_dim(&self) -> usize {
        self.obs_nodes.len()
    }

    fn forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.observe(&self.state(u)?.temp))
    }

    fn jvp(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let st = self.state(u)?;
        let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
        // r = ∂(A T − b)/∂κ · v restricted to free nodes.
        let mut r = DVector::zeros(self.grid.node_of.len());
        for (i, j) in self.grid.edges() {
            let w = 0.5 * (v[i] + v[j])
                * edge_conductance(u, i, j)
                * (st.temp[i] - st.temp[j])
                * inv_h2;
            let (fi, fj) = (self.grid.free_of[i], self.grid.free_of[j]);
            if fi != usize::MAX {
                r[fi] += w;
            }
            if fj != usize::MAX {
                r[fj] -= w;
            }
        }
        let dt_free = -st.chol.solve(&r);
        let mut dt = DVector::zeros(self.grid.g * self.grid.g);
        for (fi, &node) in self.grid.node_of.iter().enumerate() {
            dt[node] = dt_free[fi];
        }
        Ok(self.observe(&dt))
    }

    fn vjp(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let st = self.state(u)?;
        let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
        let p_free = st.chol.solve(&self.obs_transpose(w));
        let mut p = DVector::zeros(self.grid.g * self.grid.g);
        for (fi, &node) in self.grid.node_of.iter().enumerate() {
            p[node] = p_free[fi];
        }
        let mut grad = DVector::zeros(self.grid.g * self.grid.g);
        for (i, j) in self.grid.edges() {
            let w_e = -0.5
                * edge_conductance(u, i, j)
                * (st.temp[i] - st.temp[j])
                * (p[i] - p[j])
                * inv_h2;
            grad[i] += w_e;
            grad[j] += w_e;
        }
        Ok(grad)
    }
}

/// Observation nodes: ⌈√m⌉×⌈√m⌉ sub-grid of non-Dirichlet nodes in y < ½.
fn observation_nodes(g: usize, m: usize) -> Vec<usize> {
    let side = (m as f64).sqrt().ceil() as usize;
    let rows_avail = g / 2 - 1; // iy ∈ [1, g/2)
    let mut nodes = Vec::with_capacity(m);
    'outer: for jy in 0..side {
        for jx in 0..side {
            let ix = (((jx as f64 + 0.5) * g as f64 / side as f64) as usize).min(g - 1);
            let iy = 1 + (((jy as f64 + 0.5) * rows_avail as f64 / side as f64) as usize)
                .min(rows_avail - 1);
            nodes.push(iy * g + ix);
            if nodes.len() == m {
                break 'outer;
            }
        }
    }
    nodes
}

fn source_field(g: usize) -> DVector<f64> {
    let h = 1.0 / (g - 1) as f64;
    DVector::from_fn(g * g, |node, _| {
        let x = (node % g) as f64 * h;
        let y = (node / g) as f64 * h;
        50.0 * (PI * x).sin().powi(2) * (PI * y).cos().powi(2)
    })
}

fn truth_field(g: usize) -> DVector<f64> {
    let h = 1.0 / (g - 1) as f64;
    DVector::from_fn(g * g, |node, _| {
        let x = (node % g) as f64 * h;
        let y = (node / g) as f64 * h;
        0.8 * (-((x - 0.3).powi(2) + (y - 0.4).powi(2)) / 0.04).exp()
            + 0.4 * (-((x - 0.7).powi(2) + (y - 0.6).powi(2)) / 0.03).exp()
    })
}

pub fn make_nlheat(spec: &ProblemSpec) -> Result<GeneratedProblem> {
    let g = spec.n;
    if g < 8 || spec.m_obs == 0 {
        return Err(Error::InvalidParameter(
            "nlheat needs grid >= 8 and m_obs >= 1".into(),
        ));
    }
    let n = g * g;
    let op = NlHeatOp {
        grid: Grid::new(g),
        obs_nodes: observation_nodes(g, spec.m_obs),
        source: source_field(g),
        cache: Mutex::new(HashMap::new()),
        cache_cap: 4 * rayon::current_num_threads().max(4),
    };
    let map = PtoMap::new(op);
    let truth = truth_field(g);
    let clean = map.forward(&truth)?;
    let sigma = noise_sigma(&clean, spec.noise_frac);
    let k = clean.len();
    let d = clean + noise_vector(k, sigma, spec.data_seed);
    let prior = match spec.prior {
        PriorSpec::BiLaplacian {
            delta,
            gamma,
            theta1,
            theta2,
            angle,
        } => make_bilaplacian_prior(g, g, delta, gamma, rotated_tensor(theta1, theta2, angle))?,
        PriorSpec::ScaledIdentity { alpha_scale } => {
            make_identity_prior(n, identity_alpha(alpha_scale, sigma))?
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
    use crate::pto::adjoint_test;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_kappa_cancels_for_homogeneous_source() {
        let grid = Grid::new(12);
        let f = DVector::zeros(144);
        let t0 = solve_state(&grid, &DVector::from_element(144, 0.0), &f)
            .unwrap()
            .temp;
        let t2 = solve_state(&grid, &DVector::from_element(144, 2.0), &f)
            .unwrap()
            .temp;
        assert!((t0 - t2).norm() <= 1e-10);
    }

    #[test]
    fn scaling_identity() {
        let grid = Grid::new(12);
        let f = source_field(12);
        let c = 1.3;
        let ta = solve_state(&grid, &DVector::from_element(144, c), &f)
            .unwrap()
            .temp;
        let tb = solve_state(&grid, &DVector::from_element(144, 0.0), &(&f * (-c).exp()))
            .unwrap()
            .temp;
        assert!((ta - tb).norm() <= 1e-10);
    }

    #[test]
    fn adjoint_and_gradient_consistency() {
        let mut spec = ProblemSpec::nlheat();
        spec.n = 16;
        spec.m_obs = 25;
        let gp = make_nlheat(&spec).unwrap();
        let p = &gp.problem;
        let mut rng = StdRng::seed_from_u64(4);
        let u = DVector::from_fn(256, |_, _| 0.4 * (rng.gen::<f64>() - 0.5));
        // Jacobian adjoint identity.
        assert!(adjoint_test(&p.pto, &u, 5, 10).unwrap() <= 1e-10);
        // Adjoint gradient vs central finite differences of the cost.
        let grad = p.gradient(&u).unwrap();
        for _ in 0..10 {
            let dir = DVector::from_fn(256, |_, _| rng.gen::<f64>() - 0.5).normalize();
            let eps = 1e-5;
            let cp = p.cost(&(&u + eps * &dir)).unwrap();
            let cm = p.cost(&(&u - eps * &dir)).unwrap();
            let fd = (cp - cm) / (2.0 * eps);
            let an = grad.dot(&dir);
            assert!(
                (fd - an).abs() / an.abs().max(1e-8) <= 1e-5,
                "fd {fd} vs adjoint {an}"
            );
        }
    }

    #[test]
    fn observations_sit_in_lower_half() {
        let g = 32;
        let nodes = observation_nodes(g, 100);
        assert_eq!(nodes.len(), 100);
        for &node in &nodes {
            let iy = node / g;
            assert!(iy >= 1 && iy < g / 2, "iy = {iy}");
        }
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
    }

    #[test]
    fn generator_reproducible() {
        let mut spec = ProblemSpec::nlheat();
        spec.n = 12;
        spec.m_obs = 16;
        let a = make_nlheat(&spec).unwrap();
        let b = make_nlheat(&spec).unwrap();
        assert_eq!(a.problem.data, b.problem.data);
        assert_eq!(a.problem.obs_dim(), 16);
    }
}
