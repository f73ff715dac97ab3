//! Flat key-value run configuration with section headers.
//!
//! Grammar: lines of `key = value` grouped under `[problem]` and `[run]`
//! headers; `#` starts a comment; blank lines ignored. Parsing and
//! serialization round-trip: `parse(serialize(cfg)) == cfg`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::methods::MethodId;
use crate::problems::{PriorSpec, ProblemId, ProblemSpec};
use crate::randomize::SketchDistribution;

/// A full sweep description: what problem, which methods, which sample
/// counts and seeds, and where the output goes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub methods: Vec<MethodId>,
    /// Sample counts, kept sorted ascending.
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub budget_secs: u64,
    pub distribution: SketchDistribution,
    /// Directory holding cached reference-MAP solutions; defaults to
    /// `<out_dir>/map_cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::deconv1d(),
            methods: vec![MethodId::Rmap],
            n_list: vec![100],
            seeds: vec![1],
            out_dir: PathBuf::from("out"),
            budget_secs: 3600,
            distribution: SketchDistribution::Gaussian,
            cache_dir: None,
        }
    }
}

fn dist_name(d: SketchDistribution) -> &'static str {
    match d {
        SketchDistribution::Gaussian => "gaussian",
        SketchDistribution::Achlioptas => "achlioptas",
        SketchDistribution::Rademacher => "rademacher",
        SketchDistribution::DeterministicBasis => "deterministic_basis",
    }
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad integer '{t}'")))
        })
        .collect()
}

pub fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad integer '{t}'")))
        })
        .collect()
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{t}'")))
        })
        .collect()
}

fn parse_methods(s: &str) -> Result<Vec<MethodId>> {
    if s.trim() == "all" {
        // The six methods of the main convergence table.
        return Ok(vec![
            MethodId::Rmap,
            MethodId::Rma,
            MethodId::RmaRmapJoint,
            MethodId::Rs,
            MethodId::Enkf,
            MethodId::All,
        ]);
    }
    s.split(',').map(|t| MethodId::parse(t.trim())).collect()
}

/// Split raw text into `(section, key) -> value`, rejecting anything that
/// is not a header, comment, blank line, or key-value pair.
fn split_sections(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", ln + 1)))?;
        if section.is_empty() {
            return Err(Error::Config(format!(
                "line {}: key before any [section] header",
                ln + 1
            )));
        }
        out.insert(
            (section.clone(), k.trim().to_string()),
            v.trim().to_string(),
        );
    }
    Ok(out)
}

fn get_f64(v: &str, key: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::Config(format!("bad number for '{key}': '{v}'")))
}

fn get_usize(v: &str, key: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::Config(format!("bad integer for '{key}': '{v}'")))
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let kv = split_sections(text)?;
    let get = |sec: &str, key: &str| kv.get(&(sec.to_string(), key.to_string()));

    let id_str = get("problem", "id")
        .ok_or_else(|| Error::Config("missing [problem] id".into()))?;
    let id = ProblemId::parse(id_str)?;
    let mut spec = match id {
        ProblemId::Deconv1d => ProblemSpec::deconv1d(),
        ProblemId::Xray => ProblemSpec::xray(),
        ProblemId::Advdiff => ProblemSpec::advdiff(),
        ProblemId::Nlheat => ProblemSpec::nlheat(),
    };
    let mut prior_kind: Option<String> = None;
    let mut prior_vals: BTreeMap<&str, f64> = BTreeMap::new();
    for ((sec, key), val) in &kv {
        if sec != "problem" {
            continue;
        }
        match key.as_str() {
            "id" => {}
            "n" => spec.n = get_usize(val, key)?,
            "angles" => spec.angles = get_usize(val, key)?,
            "m_obs" => spec.m_obs = get_usize(val, key)?,
            "noise_frac" => spec.noise_frac = get_f64(val, key)?,
            "kappa" => spec.kappa_diff = get_f64(val, key)?,
            "t_final" => spec.t_final = get_f64(val, key)?,
            "steps" => spec.steps = get_usize(val, key)?,
            "data_seed" => {
                spec.data_seed = val
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad integer for 'data_seed': '{val}'")))?
            }
            "prior" => prior_kind = Some(val.clone()),
            "alpha_scale" | "delta" | "gamma" | "theta1" | "theta2" | "angle" => {
                let k: &str = match key.as_str() {
                    "alpha_scale" => "alpha_scale",
                    "delta" => "delta",
                    "gamma" => "gamma",
                    "theta1" => "theta1",
                    "theta2" => "theta2",
                    _ => "angle",
                };
                prior_vals.insert(k, get_f64(val, key)?);
            }
            _ => return Err(Error::Config(format!("unknown [problem] key '{key}'"))),
        }
    }
    if let Some(kind) = prior_kind {
        spec.prior = match kind.as_str() {
            "scaled_identity" => PriorSpec::ScaledIdentity {
                alpha_scale: *prior_vals.get("alpha_scale").unwrap_or(&0.1),
            },
            "bilaplacian" => {
                let base = match spec.prior {
                    PriorSpec::BiLaplacian {
                        delta,
                        gamma,
                        theta1,
                        theta2,
                        angle,
                    } => (delta, gamma, theta1, theta2, angle),
                    _ => (1.0, 1.0, 1.0, 1.0, 0.0),
                };
                PriorSpec::BiLaplacian {
                    delta: *prior_vals.get("delta").unwrap_or(&base.0),
                    gamma: *prior_vals.get("gamma").unwrap_or(&base.1),
                    theta1: *prior_vals.get("theta1").unwrap_or(&base.2),
                    theta2: *prior_vals.get("theta2").unwrap_or(&base.3),
                    angle: *prior_vals.get("angle").unwrap_or(&base.4),
                }
            }
            _ => return Err(Error::Config(format!("unknown prior '{kind}'"))),
        };
    } else if let PriorSpec::ScaledIdentity { ref mut alpha_scale } = spec.prior {
        if let Some(a) = prior_vals.get("alpha_scale") {
            *alpha_scale = *a;
        }
    }
    spec.validate()?;

    let mut cfg = RunConfig {
        problem: spec,
        ..RunConfig::default()
    };
    for ((sec, key), val) in &kv {
        if sec != "run" {
            continue;
        }
        match key.as_str() {
            "methods" => cfg.methods = parse_methods(val)?,
            "n_list" => cfg.n_list = parse_usize_list(val)?,
            "seeds" => cfg.seeds = parse_u64_list(val)?,
            "out" => cfg.out_dir = PathBuf::from(val),
            "budget_secs" => {
                cfg.budget_secs = val
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad integer for 'budget_secs': '{val}'")))?
            }
            "distribution" => cfg.distribution = SketchDistribution::parse(val)?,
            "cache" => cfg.cache_dir = Some(PathBuf::from(val)),
            _ => return Err(Error::Config(format!("unknown [run] key '{key}'"))),
        }
    }
    cfg.n_list.sort_unstable();
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_secs == 0 {
            return Err(Error::Config("budget_secs must be positive".into()));
        }
        if self.methods.is_empty() || self.n_list.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "methods, n_list, and seeds must be nonempty".into(),
            ));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_list must be strictly ascending".into()));
        }
        self.problem.validate()
    }

    /// Canonical text form; `parse_config` of this reproduces `self`.
    pub fn serialize(&self) -> String {
        let p = &self.problem;
        let mut out = String::from("[problem]\n");
        out.push_str(&format!("id = {}\n", p.id.name()));
        out.push_str(&format!("n = {}\n", p.n));
        if p.angles > 0 {
            out.push_str(&format!("angles = {}\n", p.angles));
        }
        if p.m_obs > 0 {
            out.push_str(&format!("m_obs = {}\n", p.m_obs));
        }
        out.push_str(&format!("noise_frac = {}\n", p.noise_frac));
        if p.kappa_diff > 0.0 {
            out.push_str(&format!("kappa = {}\n", p.kappa_diff));
        }
        if p.t_final > 0.0 {
            out.push_str(&format!("t_final = {}\n", p.t_final));
        }
        if p.steps > 0 {
            out.push_str(&format!("steps = {}\n", p.steps));
        }
        out.push_str(&format!("data_seed = {}\n", p.data_seed));
        match p.prior {
            PriorSpec::ScaledIdentity { alpha_scale } => {
                out.push_str("prior = scaled_identity\n");
                out.push_str(&format!("alpha_scale = {alpha_scale}\n"));
            }
            PriorSpec::BiLaplacian {
                delta,
                gamma,
                theta1,
                theta2,
                angle,
            } => {
                out.push_str("prior = bilaplacian\n");
                out.push_str(&format!("delta = {delta}\n"));
                out.push_str(&format!("gamma = {gamma}\n"));
                out.push_str(&format!("theta1 = {theta1}\n"));
                out.push_str(&format!("theta2 = {theta2}\n"));
                out.push_str(&format!("angle = {angle}\n"));
            }
        }
        out.push_str("\n[run]\n");
        out.push_str(&format!(
            "methods = {}\n",
            self.methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!(
            "n_list = {}\n",
            self.n_list
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!(
            "seeds = {}\n",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!("out = {}\n", self.out_dir.display()));
        out.push_str(&format!("budget_secs = {}\n", self.budget_secs));
        out.push_str(&format!("distribution = {}\n", dist_name(self.distribution)));
        if let Some(ref c) = self.cache_dir {
            out.push_str(&format!("cache = {}\n", c.display()));
        }
        out
    }
}
