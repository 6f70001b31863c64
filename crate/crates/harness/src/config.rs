//! Run specifications: flat `key = value` files, command-line overrides and
//! validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use trqda_core::driver::omega_limit;
use trqda_core::problems::{build_problem, default_start, ProblemParams};
use trqda_core::{CostModel, Policy, Problem, TrConfig, Vector};

use crate::HarnessError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "TRQDA_OUTPUT_DIR";

const DEFAULT_OUTPUT_DIR: &str = "trqda_out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    Single,
    EpsSweep,
    SeedSweep,
    Audit,
}

impl StudyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyMode::Single => "single",
            StudyMode::EpsSweep => "eps_sweep",
            StudyMode::SeedSweep => "seed_sweep",
            StudyMode::Audit => "audit",
        }
    }
}

impl fmt::Display for StudyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "single" | "run" => Ok(StudyMode::Single),
            "eps_sweep" | "sweep" => Ok(StudyMode::EpsSweep),
            "seed_sweep" => Ok(StudyMode::SeedSweep),
            "audit" => Ok(StudyMode::Audit),
            other => Err(HarnessError::Config(format!("unknown study mode '{other}'"))),
        }
    }
}

/// Everything needed to execute one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub problem: String,
    pub params: ProblemParams,
    /// Starting point; the problem's conventional start when absent.
    pub x0: Option<Vec<f64>>,
    pub config: TrConfig,
    pub policy: Policy,
    pub cost_model: CostModel,
    /// Derivative orders the oracle returns exactly.
    pub exact_orders: Vec<usize>,
    pub mode: StudyMode,
    /// Tolerances of an epsilon sweep; every order uses the same value.
    pub eps_grid: Vec<f64>,
    /// Seeds of a sweep.
    pub seeds: Vec<u64>,
    /// Whether to audit each run against the exact problem.
    pub audit: bool,
    pub output_dir: PathBuf,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// Keys set explicitly; derived defaults follow the others.
    pub explicit: BTreeSet<String>,
}

/// Keys accepted in spec files and as `--key value` flags.
pub const KEYS: &[&str] = &[
    "problem",
    "dim",
    "cond",
    "quartic",
    "coupling",
    "terms",
    "lambda",
    "data_seed",
    "x0",
    "q",
    "eps",
    "delta0",
    "delta_max",
    "vartheta",
    "eta1",
    "eta2",
    "gamma1",
    "gamma2",
    "gamma3",
    "omega",
    "varsigma",
    "gamma_zeta",
    "kappa_zeta",
    "zeta0",
    "seed",
    "max_iterations",
    "f_accuracy_cap",
    "policy",
    "cost_model",
    "exact_orders",
    "mode",
    "eps_grid",
    "seeds",
    "audit",
    "output_dir",
    "csv",
    "json",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| HarnessError::Config(format!("cannot parse {key} = '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(HarnessError::Config(format!("cannot parse {key} = '{value}' as a boolean"))),
    }
}

/// Parses an epsilon grid: a comma list, or `a..b` for the points from `a`
/// down to `b` at three per decade.
pub fn parse_eps_grid(value: &str) -> Result<Vec<f64>, HarnessError> {
    if let Some((a, b)) = value.split_once("..") {
        let a: f64 = parse("eps_grid", a)?;
        let b: f64 = parse("eps_grid", b)?;
        if !(a > 0.0 && b > 0.0) {
            return Err(HarnessError::Config(format!("eps_grid bounds must be positive, got '{value}'")));
        }
        let (hi, lo) = (a.max(b), a.min(b));
        let steps = (3.0 * (hi / lo).log10()).round() as usize;
        return Ok((0..=steps)
            .map(|k| {
                let e = hi * 10f64.powf(-(k as f64) / 3.0);
                // Keep the grid on short decimals.
                let p = 10f64.powf(e.log10().floor() - 2.0);
                (e / p).round() * p
            })
            .collect());
    }
    parse_list("eps_grid", value)
}

/// Reads `key = value` pairs; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_pairs(&text)
}

fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

impl RunSpec {
    /// Builds a spec from key-value pairs; later pairs override earlier ones.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, HarnessError> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.trim().replace('-', "_");
            if !KEYS.contains(&k.as_str()) {
                return Err(HarnessError::Config(format!("unknown key '{k}'")));
            }
            map.insert(k, v.clone());
        }
        let get = |k: &str| map.get(k).map(String::as_str);

        let mut eps: Option<Vec<f64>> = get("eps").map(|v| parse_list("eps", v)).transpose()?;
        let q: usize = match get("q") {
            Some(v) => parse("q", v)?,
            None => eps.as_ref().map_or(1, |e| e.len().max(1)),
        };
        // A single tolerance applies to every order.
        if let Some(e) = &eps {
            if e.len() == 1 && q > 1 {
                eps = Some(vec![e[0]; q]);
            }
        }
        let mut config = TrConfig::new(q, eps.unwrap_or_else(|| vec![1e-3; q]));
        let mut params = ProblemParams::default();
        let mut spec = RunSpec {
            problem: "rosenbrock".into(),
            params: ProblemParams::default(),
            x0: None,
            config: config.clone(),
            policy: Policy::Adversarial,
            cost_model: CostModel::Unit,
            exact_orders: Vec::new(),
            mode: StudyMode::Single,
            eps_grid: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            seeds: (0..5).collect(),
            audit: true,
            output_dir: default_output_dir(),
            csv: None,
            json: None,
            explicit: map.keys().cloned().collect(),
        };
        for (k, v) in &map {
            let v = v.as_str();
            match k.as_str() {
                "problem" => spec.problem = v.trim().to_string(),
                "dim" => params.dim = Some(parse(k, v)?),
                "cond" => params.cond = parse(k, v)?,
                "quartic" => params.quartic = parse(k, v)?,
                "coupling" => params.coupling = parse(k, v)?,
                "terms" => params.terms = parse(k, v)?,
                "lambda" => params.lambda = parse(k, v)?,
                "data_seed" => params.data_seed = parse(k, v)?,
                "x0" => spec.x0 = Some(parse_list(k, v)?),
                "q" | "eps" => {}
                "delta0" => config.delta0 = parse(k, v)?,
                "delta_max" => config.delta_max = parse(k, v)?,
                "vartheta" => config.vartheta = parse(k, v)?,
                "eta1" => config.eta1 = parse(k, v)?,
                "eta2" => config.eta2 = parse(k, v)?,
                "gamma1" => config.gamma1 = parse(k, v)?,
                "gamma2" => config.gamma2 = parse(k, v)?,
                "gamma3" => config.gamma3 = parse(k, v)?,
                "omega" => config.omega = parse(k, v)?,
                "varsigma" => config.varsigma = parse(k, v)?,
                "gamma_zeta" => config.gamma_zeta = parse(k, v)?,
                "kappa_zeta" => config.kappa_zeta = parse(k, v)?,
                "zeta0" => config.zeta0 = parse_list(k, v)?,
                "seed" => config.seed = parse(k, v)?,
                "max_iterations" => config.max_iterations = parse(k, v)?,
                "f_accuracy_cap" => {
                    config.f_accuracy_cap = match v.trim() {
                        "" | "none" => None,
                        s => Some(parse(k, s)?),
                    }
                }
                "policy" => spec.policy = v.parse().map_err(|e: trqda_core::Error| HarnessError::Config(e.to_string()))?,
                "cost_model" => spec.cost_model = v.parse().map_err(|e: trqda_core::Error| HarnessError::Config(e.to_string()))?,
                "exact_orders" => spec.exact_orders = parse_list(k, v)?,
                "mode" => spec.mode = v.parse()?,
                "eps_grid" => spec.eps_grid = parse_eps_grid(v)?,
                "seeds" => spec.seeds = parse_list(k, v)?,
                "audit" => spec.audit = parse_bool(k, v)?,
                "output_dir" => spec.output_dir = PathBuf::from(v.trim()),
                "csv" => spec.csv = Some(PathBuf::from(v.trim())),
                "json" => spec.json = Some(PathBuf::from(v.trim())),
                _ => unreachable!("keys checked above"),
            }
        }
        if !spec.explicit.contains("omega") {
            config.omega = 0.9 * omega_limit(config.eta1, config.eta2);
        }
        if !spec.explicit.contains("zeta0") {
            config.zeta0 = vec![config.kappa_zeta.min(0.1); q];
        } else if config.zeta0.len() == 1 && q > 1 {
            config.zeta0 = vec![config.zeta0[0]; q];
        }
        spec.config = config;
        spec.params = params;
        Ok(spec)
    }

    /// Spec with default settings for `problem` at order `q`.
    pub fn new(problem: &str, q: usize, eps: f64) -> Self {
        let pairs = vec![
            ("problem".to_string(), problem.to_string()),
            ("q".to_string(), q.to_string()),
            ("eps".to_string(), eps.to_string()),
        ];
        Self::from_pairs(&pairs).expect("default spec is well formed")
    }

    /// Copy with every tolerance set to `eps`; the optimality radius follows
    /// unless it was set explicitly.
    pub fn with_eps(&self, eps: f64) -> Self {
        let mut s = self.clone();
        s.config.eps = vec![eps; s.config.q];
        if !s.explicit.contains("vartheta") {
            s.config.vartheta = eps.max(0.5);
        }
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.config.seed = seed;
        s
    }

    pub fn build_problem(&self) -> Result<Arc<dyn Problem>, HarnessError> {
        build_problem(&self.problem, &self.params).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn start(&self, problem: &dyn Problem) -> Vector {
        match &self.x0 {
            Some(x) => Vector::from_column_slice(x),
            None => default_start(&self.problem, problem.dim()),
        }
    }

    /// File stem identifying the run.
    pub fn stem(&self) -> String {
        format!("{}_q{}_{}_s{}", self.problem, self.config.q, self.policy, self.config.seed)
    }

    pub fn csv_path(&self) -> PathBuf {
        self.csv.clone().unwrap_or_else(|| self.output_dir.join(format!("{}.csv", self.stem())))
    }

    pub fn json_path(&self) -> PathBuf {
        self.json.clone().unwrap_or_else(|| self.output_dir.join(format!("{}.json", self.stem())))
    }

    /// Checks the algorithm constants, the problem and the study settings.
    /// The message names the violated constraint.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let p = self.build_problem()?;
        if self.config.q > p.max_order() {
            return Err(HarnessError::Config(format!(
                "q = {} exceeds the derivative order {} of problem '{}'",
                self.config.q,
                p.max_order(),
                self.problem
            )));
        }
        if let Some(x) = &self.x0 {
            if x.len() != p.dim() {
                return Err(HarnessError::Config(format!("x0 has {} entries, problem '{}' has dimension {}", x.len(), self.problem, p.dim())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(HarnessError::Config("x0 must be finite".into()));
            }
        }
        if let Some(o) = self.exact_orders.iter().find(|o| **o == 0 || **o > self.config.q) {
            return Err(HarnessError::Config(format!("exact order {o} outside 1..={}", self.config.q)));
        }
        if self.policy == Policy::Subsample && p.sampled_value(&self.start(p.as_ref()), 1.0).is_none() {
            return Err(HarnessError::Config(format!("policy subsample needs a finite-sum problem, got '{}'", self.problem)));
        }
        if self.mode == StudyMode::EpsSweep {
            if self.eps_grid.len() < 4 {
                return Err(HarnessError::Config(format!("an epsilon sweep needs at least 4 grid points, got {}", self.eps_grid.len())));
            }
            for &e in &self.eps_grid {
                self.with_eps(e).config.validate().map_err(|err| HarnessError::Config(format!("eps_grid point {e}: {err}")))?;
            }
        }
        if matches!(self.mode, StudyMode::EpsSweep | StudyMode::SeedSweep) && self.seeds.is_empty() {
            return Err(HarnessError::Config("a sweep needs at least one seed".into()));
        }
        Ok(())
    }
}
