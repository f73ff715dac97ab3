//! Sweep execution, result CSV emission, and table/spectrum rendering.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::RunConfig;
use crate::bounds::spectrum_report;
use crate::error::{Error, Result};
use crate::map_solvers::{map_solve, SolverOptions};
use crate::methods::{relative_error, solve_method, MethodId};
use crate::problems::{generate, GeneratedProblem, ProblemSpec};
use crate::randomize::{draw_sketch, RandomizationPlan, TargetMoment, VariableTag};

/// Header of results.csv.
pub const RESULTS_HEADER: &str =
    "problem,method,N,seed,rel_err_vs_map_pct,rel_err_vs_truth_pct,iterations,flags,wall_ms";

/// One sweep cell, already formatted for CSV except the timing column.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub problem: String,
    pub method: MethodId,
    pub n_samples: usize,
    pub seed: u64,
    pub rel_err_vs_map_pct: f64,
    pub rel_err_vs_truth_pct: f64,
    pub iterations: usize,
    pub flags: String,
    pub wall_ms: f64,
}

/// 17-significant-digit float formatting (round-trippable).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ResultRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.problem,
            self.method.name(),
            self.n_samples,
            self.seed,
            fmt_f64(self.rel_err_vs_map_pct),
            fmt_f64(self.rel_err_vs_truth_pct),
            self.iterations,
            self.flags,
            self.wall_ms
        )
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub csv: String,
    pub any_not_converged: bool,
    pub budget_exceeded: bool,
}

/// Load the reference MAP solution from the cache directory, or solve and
/// store it. The cache key is a content hash of the problem spec.
pub fn load_or_solve_map(
    gp: &GeneratedProblem,
    cache_dir: &Path,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    let key = gp.spec.content_hash();
    let path = cache_dir.join(format!("map_{key:016x}.csv"));
    if let Ok(text) = fs::read_to_string(&path) {
        let vals: std::result::Result<Vec<f64>, _> =
            text.lines().skip(1).map(|l| l.parse::<f64>()).collect();
        if let Ok(vals) = vals {
            if vals.len() == gp.problem.param_dim() {
                return Ok(DVector::from_vec(vals));
            }
        }
        // Corrupt or stale cache entry: fall through and recompute.
    }
    let u = map_solve(&gp.problem, opts)?.estimate;
    fs::create_dir_all(cache_dir)?;
    let mut text = String::from("u_map\n");
    for v in u.iter() {
        text.push_str(&fmt_f64(*v));
        text.push('\n');
    }
    fs::write(&path, text)?;
    Ok(u)
}

/// Run every (method, N, seed) cell of the sweep. The deterministic MAP
/// method ignores the sample count and runs once per seed (reported with
/// N = 0). Cells not started before the budget elapses are dropped and the
/// outcome is marked budget-exceeded.
pub fn run_sweep(cfg: &RunConfig, cache_dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let gp = generate(&cfg.problem)?;
    let opts = SolverOptions::default();
    let u_map = load_or_solve_map(&gp, cache_dir, &opts)?;

    let mut cells: Vec<(MethodId, usize, u64)> = Vec::new();
    for &method in &cfg.methods {
        if method == MethodId::Map {
            for &seed in &cfg.seeds {
                cells.push((method, 0, seed));
            }
        } else {
            for &n in &cfg.n_list {
                for &seed in &cfg.seeds {
                    cells.push((method, n, seed));
                }
            }
        }
    }

    let deadline = Instant::now() + Duration::from_secs(cfg.budget_secs);
    let results: Vec<Result<Option<ResultRow>>> = cells
        .par_iter()
        .map(|&(method, n, seed)| {
            if Instant::now() >= deadline {
                return Ok(None);
            }
            let started = Instant::now();
            let res = if method == MethodId::Map {
                map_solve(&gp.problem, &opts)?
            } else {
                let plan = method.default_plan(RandomizationPlan::new(cfg.distribution, n, seed));
                solve_method(&gp.problem, &plan, &opts, method)?
            };
            Ok(Some(ResultRow {
                problem: gp.spec.id.name().to_string(),
                method,
                n_samples: n,
                seed,
                rel_err_vs_map_pct: relative_error(&res.estimate, &u_map)?,
                rel_err_vs_truth_pct: relative_error(&res.estimate, &gp.truth)?,
                iterations: res.iterations,
                flags: res.flags.label(),
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            }))
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    let mut budget_exceeded = false;
    for r in results {
        match r? {
            Some(row) => rows.push(row),
            None => budget_exceeded = true,
        }
    }
    let any_not_converged = rows.iter().any(|r| r.flags.contains("not_converged"));
    let mut csv = String::from(RESULTS_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
    }
    Ok(SweepOutcome {
        rows,
        csv,
        any_not_converged,
        budget_exceeded,
    })
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Canonical method display order for tables.
fn method_order(m: MethodId) -> usize {
    [
        MethodId::Map,
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
    .iter()
    .position(|&x| x == m)
    .unwrap()
}

/// Pivot a results CSV into a markdown table: one row per method, one
/// column per N, cell = median over seeds of the error vs u_MAP.
pub fn render_table(results_csv: &str) -> Result<String> {
    let mut lines = results_csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty results CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Config(format!("results CSV missing column '{name}'")))
    };
    let (ci_method, ci_n, ci_err) = (col("method")?, col("N")?, col("rel_err_vs_map_pct")?);

    let mut data: Vec<(MethodId, usize, f64)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let method = MethodId::parse(f[ci_method])?;
        let n: usize = f[ci_n]
            .parse()
            .map_err(|_| Error::Config(format!("bad N '{}'", f[ci_n])))?;
        let err: f64 = f[ci_err]
            .parse()
            .map_err(|_| Error::Config(format!("bad error '{}'", f[ci_err])))?;
        data.push((method, n, err));
    }
    if data.is_empty() {
        return Err(Error::Config("results CSV has no data rows".into()));
    }

    let ns: BTreeSet<usize> = data.iter().map(|&(_, n, _)| n).collect();
    let mut methods: Vec<MethodId> = {
        let set: BTreeSet<usize> = data.iter().map(|&(m, _, _)| method_order(m)).collect();
        let order = [
            MethodId::Map,
            MethodId::Rmap,
            MethodId::Rma,
            MethodId::RmaRmapJoint,
            MethodId::RmaRmapV1,
            MethodId::RmaRmapV2,
            MethodId::RsU1,
            MethodId::Rs,
            MethodId::Enkf,
            MethodId::All,
        ];
        set.into_iter().map(|i| order[i]).collect()
    };
    methods.dedup();

    let mut out = String::from("| method |");
    for n in &ns {
        out.push_str(&format!(" N={n} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &ns {
        out.push_str("---|");
    }
    out.push('\n');
    for m in methods {
        out.push_str(&format!("| {} |", m.name()));
        for &n in &ns {
            let mut vals: Vec<f64> = data
                .iter()
                .filter(|&&(dm, dn, _)| dm == m && dn == n)
                .map(|&(_, _, e)| e)
                .collect();
            if vals.is_empty() {
                out.push_str(" |");
            } else {
                out.push_str(&format!(" {:.2} |", median(&mut vals)));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// CSV comparing the prior-precision spectrum with its sketched versions:
/// `index,true_eig,eig_N<k>,...`, eigenvalues descending, 1-based index.
pub fn spectrum_csv(spec: &ProblemSpec, n_list: &[usize], seed: u64) -> Result<String> {
    let gp = generate(spec)?;
    let n = gp.problem.param_dim();
    if n > 4096 {
        return Err(Error::InvalidParameter(
            "spectrum report materializes the precision densely; n <= 4096 required".into(),
        ));
    }
    let ginv = gp.problem.prior_cov.inverse_to_dense()?;
    let true_eigs = spectrum_report(&ginv, 0)?;
    let mut sketched: Vec<Vec<f64>> = Vec::with_capacity(n_list.len());
    for &k in n_list {
        let lam = draw_sketch(
            crate::randomize::SketchDistribution::Gaussian,
            &gp.problem.prior_cov,
            TargetMoment::Precision,
            k,
            seed,
            VariableTag::Lambda,
        )?;
        sketched.push(spectrum_report(&lam.second_moment_dense()?, 0)?);
    }
    let mut out = String::from("index,true_eig");
    for k in n_list {
        out.push_str(&format!(",eig_N{k}"));
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("{},{}", i + 1, fmt_f64(true_eigs[i])));
        for s in &sketched {
            out.push_str(&format!(",{}", fmt_f64(s[i])));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemSpec;
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        let mut spec = ProblemSpec::deconv1d();
        spec.n = 64;
        RunConfig {
            problem: spec,
            methods: vec![MethodId::Map, MethodId::Rmap],
            n_list: vec![10, 50],
            seeds: vec![1, 2],
            ..RunConfig::default()
        }
    }

    #[test]
    fn map_rows_have_zero_error_and_one_row_per_seed() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let out = run_sweep(&cfg, dir.path()).unwrap();
        let map_rows: Vec<_> = out
            .rows
            .iter()
            .filter(|r| r.method == MethodId::Map)
            .collect();
        assert_eq!(map_rows.len(), 2);
        for r in map_rows {
            assert!(r.rel_err_vs_map_pct <= 1e-9);
        }
        // RMAP: 2 N values × 2 seeds.
        assert_eq!(out.rows.len(), 2 + 4);
        assert!(!out.budget_exceeded);
    }

    #[test]
    fn sweep_is_deterministic_modulo_timing() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let a = run_sweep(&cfg, dir.path()).unwrap();
        let b = run_sweep(&cfg, dir.path()).unwrap();
        let strip = |csv: &str| {
            csv.lines()
                .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.csv), strip(&b.csv));
    }

    #[test]
    fn map_cache_is_reused() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        run_sweep(&cfg, dir.path()).unwrap();
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        let gp = generate(&cfg.problem).unwrap();
        let u = load_or_solve_map(&gp, dir.path(), &SolverOptions::default()).unwrap();
        let u2 = load_or_solve_map(&gp, dir.path(), &SolverOptions::default()).unwrap();
        assert_eq!(u, u2);
    }

    #[test]
    fn csv_errors_round_trip_through_text() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let out = run_sweep(&cfg, dir.path()).unwrap();
        for (line, row) in out.csv.lines().skip(1).zip(&out.rows) {
            let err: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            assert_eq!(err, row.rel_err_vs_map_pct);
        }
    }

    #[test]
    fn budget_of_one_second_on_heavy_sweep_is_partial() {
        let mut cfg = tiny_config();
        cfg.problem.n = 512;
        cfg.methods = vec![MethodId::Rmap];
        cfg.n_list = (1..40).map(|i| 100 * i).collect();
        cfg.budget_secs = 1;
        let dir = tempdir().unwrap();
        let out = run_sweep(&cfg, dir.path()).unwrap();
        // Not asserting how many cells finished, only that the partial flag
        // matches the row count.
        let total = cfg.n_list.len() * cfg.seeds.len();
        assert_eq!(out.budget_exceeded, out.rows.len() < total);
    }

    #[test]
    fn table_renders_medians() {
        let csv = "problem,method,N,seed,rel_err_vs_map_pct,rel_err_vs_truth_pct,iterations,flags,wall_ms\n\
                   deconv1d,RMAP,10,1,4.0,9.0,1,ok,1.0\n\
                   deconv1d,RMAP,10,2,2.0,9.0,1,ok,1.0\n\
                   deconv1d,RMAP,10,3,3.0,9.0,1,ok,1.0\n\
                   deconv1d,RMA,10,1,5.5,9.0,1,ok,1.0\n";
        let md = render_table(csv).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| method | N=10 |");
        assert!(lines[2].starts_with("| RMAP | 3.00 |"));
        assert!(lines[3].starts_with("| RMA | 5.50 |"));
    }

    #[test]
    fn table_single_row() {
        let csv = format!("{RESULTS_HEADER}\ndeconv1d,RS,100,1,42.0,50.0,3,ok,1.0\n");
        let md = render_table(&csv).unwrap();
        assert!(md.contains("| RS | 42.00 |"));
        assert!(render_table(RESULTS_HEADER).is_err());
        assert!(render_table("").is_err());
    }

    #[test]
    fn spectrum_csv_layout_and_rank() {
        let mut spec = ProblemSpec::deconv1d();
        spec.n = 100;
        let csv = spectrum_csv(&spec, &[10], 1).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,true_eig,eig_N10");
        assert_eq!(lines.len(), 101);
        // Rank 10 sketch: rows 11..100 are numerically zero.
        for line in &lines[11..] {
            let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!(v.abs() <= 1e-10, "line {line}");
        }
        // true_eig column descending.
        let col: Vec<f64> = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(col.windows(2).all(|w| w[0] >= w[1]));
    }
}
