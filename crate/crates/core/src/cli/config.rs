//! Experiment configuration: an INI-like key/value file, command-specific
//! defaults and flag overrides, all resolved into one serializable value.
//!
//! Keys are `section.name`. A file may write them dotted at top level or
//! inside `[section]` blocks:
//!
//! ```text
//! # comment
//! run.seed = 7
//! [schedule]
//! kind = vp-cosine
//! [tau]
//! pieces = (0.05, 1, 1.0)
//! ```
//!
//! Precedence, lowest first: command defaults, `--manifest`, `--config`,
//! `--set` and the dedicated flags (applied in that order).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::CoeffMode;
use crate::oracle::{GaussianMixture, GmmModel};
use crate::schedules::{make_time_grid, GridKind, GridParams, NoiseSchedule, ScheduleKind, TimeGrid};
use crate::solver::{EvalMode, SolverConfig};
use crate::stochasticity::{ddim_equivalent_tau, TauSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    InvalidValue { line: usize, key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Every key the configuration understands. `grid.M` and `grid.steps` are
/// the same setting.
pub const KEYS: &[&str] = &[
    "schedule.kind",
    "schedule.beta_min",
    "schedule.beta_max",
    "schedule.sigma_min",
    "schedule.sigma_max",
    "schedule.t_eps",
    "schedule.t_end",
    "grid.kind",
    "grid.M",
    "grid.steps",
    "grid.rho",
    "grid.sigma_min",
    "grid.sigma_max",
    "tau.kind",
    "tau.value",
    "tau.pieces",
    "tau.eta",
    "solver.sp",
    "solver.sc",
    "solver.coeff_mode",
    "solver.eval_mode",
    "solver.quadrature_order",
    "model.weights",
    "model.means",
    "model.variances",
    "run.seed",
    "run.batch",
    "output.dir",
    "convergence.levels",
    "convergence.reference_level",
    "convergence.n_paths",
    "marginals.taus",
    "marginals.n_samples",
    "perturbed.epsilons",
    "perturbed.taus",
    "perturbed.n_samples",
    "perturbed.bootstrap",
    "perturbed.perturb_seed",
    "inequality.n",
    "inequality.max_tau",
    "inequality.schedules",
    "ddim.eta",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: String,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub t_eps: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kind: String,
    pub steps: usize,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// `kind` is `constant` (uses `value`), `pieces` (σ^EDM intervals, zero
/// outside them) or `eta` (the DDIM-η equivalent on the run's grid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSpec {
    pub kind: String,
    pub value: f64,
    pub pieces: Vec<(f64, f64, f64)>,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub sp: usize,
    pub sc: usize,
    pub coeff_mode: String,
    pub eval_mode: String,
    pub quadrature_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub seed: u64,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub levels: Vec<u32>,
    pub reference_level: u32,
    pub n_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalsSpec {
    pub taus: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedSpec {
    pub epsilons: Vec<f64>,
    pub taus: Vec<f64>,
    pub n_samples: usize,
    pub bootstrap: usize,
    pub perturb_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalitySpec {
    pub n: usize,
    pub max_tau: f64,
    pub schedules: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdimSpec {
    pub eta: f64,
}

/// Fully resolved settings of one command. The output directory is kept
/// out of the serialized form so a replayed manifest is byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSpec,
    pub grid: GridSpec,
    pub tau: TauSpec,
    pub solver: SolverSpec,
    pub model: ModelSpec,
    pub run: RunSpec,
    pub convergence: ConvergenceSpec,
    pub marginals: MarginalsSpec,
    pub perturbed: PerturbedSpec,
    pub inequality: InequalitySpec,
    pub ddim: DdimSpec,
    #[serde(skip)]
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec {
                kind: "vp-cosine".into(),
                beta_min: 0.1,
                beta_max: 20.0,
                sigma_min: 0.002,
                sigma_max: 80.0,
                t_eps: None,
                t_end: None,
            },
            grid: GridSpec { kind: "uniform-lambda".into(), steps: 20, rho: 7.0, sigma_min: 0.02, sigma_max: 80.0 },
            tau: TauSpec { kind: "constant".into(), value: 1.0, pieces: Vec::new(), eta: 0.0 },
            solver: SolverSpec {
                sp: 3,
                sc: 1,
                coeff_mode: "auto".into(),
                eval_mode: "pec".into(),
                quadrature_order: 32,
            },
            model: ModelSpec {
                weights: vec![0.5, 0.5],
                means: vec![vec![-1.5], vec![1.5]],
                variances: vec![0.3, 0.3],
            },
            run: RunSpec { seed: 0, batch: 1000 },
            convergence: ConvergenceSpec { levels: vec![4, 5, 6, 7], reference_level: 14, n_paths: 64 },
            marginals: MarginalsSpec { taus: vec![0.0, 0.5, 1.0], n_samples: 100_000 },
            perturbed: PerturbedSpec {
                epsilons: vec![0.0, 0.5, 1.0],
                taus: vec![0.0, 1.0],
                n_samples: 100_000,
                bootstrap: 200,
                perturb_seed: 11,
            },
            inequality: InequalitySpec {
                n: 1000,
                max_tau: 3.0,
                schedules: vec!["vp-linear".into(), "vp-cosine".into(), "ve".into(), "edm".into()],
            },
            ddim: DdimSpec { eta: 0.5 },
            output_dir: None,
        }
    }
}

/// First level used when `convergence.levels` is given as a count.
pub const FIRST_TEST_LEVEL: u32 = 4;

fn parse_f64(v: &str) -> Result<f64, String> {
    let x: f64 = v.trim().parse().map_err(|_| format!("`{}` is not a number", v.trim()))?;
    if !x.is_finite() {
        return Err(format!("`{}` is not finite", v.trim()));
    }
    Ok(x)
}

fn parse_int<T: FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("`{}` is not a non-negative integer", v.trim()))
}

fn parse_list<T>(v: &str, sep: char, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(sep).map(item).collect()
}

fn parse_choice<T: FromStr>(v: &str) -> Result<String, String>
where
    T::Err: std::fmt::Display,
{
    let v = v.trim();
    v.parse::<T>().map(|_| v.to_string()).map_err(|e| e.to_string())
}

/// `(lo, hi, value), (lo, hi, value), …`
pub fn parse_pieces(v: &str) -> Result<Vec<(f64, f64, f64)>, String> {
    let mut out = Vec::new();
    let mut rest = v.trim();
    while !rest.is_empty() {
        let body = rest.strip_prefix('(').ok_or_else(|| format!("expected `(` at `{rest}`"))?;
        let close = body.find(')').ok_or("unclosed `(`")?;
        let nums = parse_list(&body[..close], ',', parse_f64)?;
        if nums.len() != 3 {
            return Err(format!("a piece needs (sigma_lo, sigma_hi, tau), got {} numbers", nums.len()));
        }
        out.push((nums[0], nums[1], nums[2]));
        rest = body[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("expected `,` between pieces at `{rest}`"));
        }
    }
    Ok(out)
}

fn parse_levels(v: &str) -> Result<Vec<u32>, String> {
    let levels: Vec<u32> = parse_list(v, ',', parse_int)?;
    Ok(match levels.as_slice() {
        [count] => (FIRST_TEST_LEVEL..FIRST_TEST_LEVEL + count).collect(),
        _ => levels,
    })
}

fn fmt_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Defaults suited to each command.
    pub fn for_command(command: &str) -> Self {
        let mut c = Self::default();
        match command {
            "convergence" => {
                c.schedule.kind = "vp-linear".into();
                c.grid.kind = "edm".into();
                c.grid.steps = 4;
                c.solver.sc = 0;
                c.model = ModelSpec { weights: vec![1.0], means: vec![vec![0.5, -0.3]], variances: vec![0.5] };
            }
            "marginals" | "perturbed" => {
                c.grid.steps = 512;
            }
            "ddim-equiv" => {
                c.schedule.kind = "vp-linear".into();
                c.grid.kind = "uniform-t".into();
                c.grid.steps = 16;
                c.run.batch = 64;
                c.solver.sp = 1;
                c.solver.sc = 0;
            }
            _ => {}
        }
        c
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "schedule.kind" => self.schedule.kind = parse_choice::<ScheduleKind>(v)?,
            "schedule.beta_min" => self.schedule.beta_min = parse_f64(v)?,
            "schedule.beta_max" => self.schedule.beta_max = parse_f64(v)?,
            "schedule.sigma_min" => self.schedule.sigma_min = parse_f64(v)?,
            "schedule.sigma_max" => self.schedule.sigma_max = parse_f64(v)?,
            "schedule.t_eps" => self.schedule.t_eps = Some(parse_f64(v)?),
            "schedule.t_end" => self.schedule.t_end = Some(parse_f64(v)?),
            "grid.kind" => self.grid.kind = parse_choice::<GridKind>(v)?,
            "grid.M" | "grid.steps" => self.grid.steps = parse_int(v)?,
            "grid.rho" => self.grid.rho = parse_f64(v)?,
            "grid.sigma_min" => self.grid.sigma_min = parse_f64(v)?,
            "grid.sigma_max" => self.grid.sigma_max = parse_f64(v)?,
            "tau.kind" => match v {
                "constant" | "pieces" | "eta" => self.tau.kind = v.to_string(),
                _ => return Err(format!("unknown tau kind `{v}` (constant, pieces, eta)")),
            },
            "tau.value" => {
                self.tau.value = parse_f64(v)?;
                self.tau.kind = "constant".into();
            }
            "tau.pieces" => {
                self.tau.pieces = parse_pieces(v)?;
                self.tau.kind = "pieces".into();
            }
            "tau.eta" => {
                self.tau.eta = parse_f64(v)?;
                self.tau.kind = "eta".into();
            }
            "solver.sp" => self.solver.sp = parse_int(v)?,
            "solver.sc" => self.solver.sc = parse_int(v)?,
            "solver.coeff_mode" => self.solver.coeff_mode = parse_choice::<CoeffMode>(v)?,
            "solver.eval_mode" => self.solver.eval_mode = parse_choice::<EvalMode>(v)?,
            "solver.quadrature_order" => self.solver.quadrature_order = parse_int(v)?,
            "model.weights" => self.model.weights = parse_list(v, ',', parse_f64)?,
            "model.means" => self.model.means = parse_list(v, ';', |c| parse_list(c, ',', parse_f64))?,
            "model.variances" => self.model.variances = parse_list(v, ',', parse_f64)?,
            "run.seed" => self.run.seed = parse_int(v)?,
            "run.batch" => self.run.batch = parse_int(v)?,
            "output.dir" => self.output_dir = Some(v.to_string()),
            "convergence.levels" => self.convergence.levels = parse_levels(v)?,
            "convergence.reference_level" => self.convergence.reference_level = parse_int(v)?,
            "convergence.n_paths" => self.convergence.n_paths = parse_int(v)?,
            "marginals.taus" => self.marginals.taus = parse_list(v, ',', parse_f64)?,
            "marginals.n_samples" => self.marginals.n_samples = parse_int(v)?,
            "perturbed.epsilons" => self.perturbed.epsilons = parse_list(v, ',', parse_f64)?,
            "perturbed.taus" => self.perturbed.taus = parse_list(v, ',', parse_f64)?,
            "perturbed.n_samples" => self.perturbed.n_samples = parse_int(v)?,
            "perturbed.bootstrap" => self.perturbed.bootstrap = parse_int(v)?,
            "perturbed.perturb_seed" => self.perturbed.perturb_seed = parse_int(v)?,
            "inequality.n" => self.inequality.n = parse_int(v)?,
            "inequality.max_tau" => self.inequality.max_tau = parse_f64(v)?,
            "inequality.schedules" => self.inequality.schedules = parse_list(v, ',', parse_choice::<ScheduleKind>)?,
            "ddim.eta" => self.ddim.eta = parse_f64(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies a config file's text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Parse { line, message: format!("malformed section header `{body}`") })?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(ConfigError::Parse { line, message: format!("malformed section header `{body}`") });
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line, message: format!("expected `key = value`, got `{body}`") })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Parse { line, message: "empty key".into() });
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let Some(&canonical) = KEYS.iter().find(|&&known| known == key) else {
                return Err(ConfigError::UnknownKey { line, key });
            };
            let canonical = if canonical == "grid.steps" { "grid.M" } else { canonical };
            if seen.contains(&canonical) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            seen.push(canonical);
            self.set(&key, v).map_err(|message| ConfigError::InvalidValue { line, key: key.clone(), message })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        self.apply_text(&text)
    }

    /// The resolved configuration in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = &self.schedule;
        let _ = writeln!(out, "[schedule]\nkind = {}\nbeta_min = {}\nbeta_max = {}", s.kind, s.beta_min, s.beta_max);
        let _ = writeln!(out, "sigma_min = {}\nsigma_max = {}", s.sigma_min, s.sigma_max);
        if let Some(t) = s.t_eps {
            let _ = writeln!(out, "t_eps = {t}");
        }
        if let Some(t) = s.t_end {
            let _ = writeln!(out, "t_end = {t}");
        }
        let g = &self.grid;
        let _ = writeln!(out, "[grid]\nkind = {}\nM = {}\nrho = {}\nsigma_min = {}\nsigma_max = {}", g.kind, g.steps, g.rho, g.sigma_min, g.sigma_max);
        let t = &self.tau;
        let _ = writeln!(out, "[tau]\nvalue = {}\neta = {}", t.value, t.eta);
        if !t.pieces.is_empty() {
            let p: Vec<String> = t.pieces.iter().map(|(a, b, v)| format!("({a}, {b}, {v})")).collect();
            let _ = writeln!(out, "pieces = {}", p.join(", "));
        }
        let _ = writeln!(out, "kind = {}", t.kind);
        let v = &self.solver;
        let _ = writeln!(
            out,
            "[solver]\nsp = {}\nsc = {}\ncoeff_mode = {}\neval_mode = {}\nquadrature_order = {}",
            v.sp, v.sc, v.coeff_mode, v.eval_mode, v.quadrature_order
        );
        let m = &self.model;
        let means: Vec<String> = m.means.iter().map(|c| fmt_list(c)).collect();
        let _ = writeln!(out, "[model]\nweights = {}\nmeans = {}\nvariances = {}", fmt_list(&m.weights), means.join("; "), fmt_list(&m.variances));
        let _ = writeln!(out, "[run]\nseed = {}\nbatch = {}", self.run.seed, self.run.batch);
        let c = &self.convergence;
        let _ = writeln!(out, "[convergence]\nlevels = {}\nreference_level = {}\nn_paths = {}", fmt_list(&c.levels), c.reference_level, c.n_paths);
        let _ = writeln!(out, "[marginals]\ntaus = {}\nn_samples = {}", fmt_list(&self.marginals.taus), self.marginals.n_samples);
        let p = &self.perturbed;
        let _ = writeln!(
            out,
            "[perturbed]\nepsilons = {}\ntaus = {}\nn_samples = {}\nbootstrap = {}\nperturb_seed = {}",
            fmt_list(&p.epsilons),
            fmt_list(&p.taus),
            p.n_samples,
            p.bootstrap,
            p.perturb_seed
        );
        let q = &self.inequality;
        let _ = writeln!(out, "[inequality]\nn = {}\nmax_tau = {}\nschedules = {}", q.n, q.max_tau, q.schedules.join(", "));
        let _ = writeln!(out, "[ddim]\neta = {}", self.ddim.eta);
        out
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, ConfigError> {
        self.schedule_of(&self.schedule.kind)
    }

    /// A schedule of the given kind with this config's parameters.
    pub fn schedule_of(&self, kind: &str) -> Result<NoiseSchedule, ConfigError> {
        let s = &self.schedule;
        let base = match kind.parse::<ScheduleKind>().map_err(invalid)? {
            ScheduleKind::VpLinear => NoiseSchedule::vp_linear(s.beta_min, s.beta_max),
            ScheduleKind::VpCosine => Ok(NoiseSchedule::vp_cosine()),
            ScheduleKind::Ve => NoiseSchedule::ve(s.sigma_min, s.sigma_max),
            ScheduleKind::Edm => NoiseSchedule::edm(s.sigma_min, s.sigma_max),
        }
        .map_err(invalid)?;
        if s.t_eps.is_none() && s.t_end.is_none() {
            return Ok(base);
        }
        let (lo, hi) = base.domain();
        base.with_domain(s.t_eps.unwrap_or(lo), s.t_end.unwrap_or(hi)).map_err(invalid)
    }

    pub fn grid(&self, schedule: &NoiseSchedule) -> Result<TimeGrid, ConfigError> {
        let g = &self.grid;
        let params = GridParams { sigma_min: g.sigma_min, sigma_max: g.sigma_max, rho: g.rho };
        make_time_grid(schedule, g.kind.parse().map_err(invalid)?, g.steps, params).map_err(invalid)
    }

    pub fn tau(&self, schedule: &NoiseSchedule, grid: &TimeGrid) -> Result<TauSchedule, ConfigError> {
        match self.tau.kind.as_str() {
            "constant" => TauSchedule::constant(self.tau.value),
            "pieces" => TauSchedule::from_sigma_edm_pieces(schedule, &self.tau.pieces),
            "eta" => ddim_equivalent_tau(self.tau.eta, schedule, grid),
            other => return Err(ConfigError::Invalid(format!("unknown tau kind `{other}`"))),
        }
        .map_err(invalid)
    }

    pub fn solver(&self) -> Result<SolverConfig, ConfigError> {
        let v = &self.solver;
        let cfg = SolverConfig {
            predictor_steps: v.sp,
            corrector_steps: v.sc,
            coeff_mode: v.coeff_mode.parse().map_err(invalid)?,
            eval_mode: v.eval_mode.parse().map_err(invalid)?,
            quadrature_order: v.quadrature_order,
            seed: self.run.seed,
            record_trajectory: false,
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn model(&self, schedule: NoiseSchedule) -> Result<GmmModel, ConfigError> {
        let m = &self.model;
        let mix = GaussianMixture::new(m.weights.clone(), m.means.clone(), m.variances.clone()).map_err(invalid)?;
        Ok(GmmModel::new(mix, schedule))
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys() {
        let mut c = ExperimentConfig::default();
        c.apply_text("run.seed = 9\n[schedule]\nkind = vp-linear # trailing\n\n[grid]\nM = 12\n").unwrap();
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.schedule.kind, "vp-linear");
        assert_eq!(c.grid.steps, 12);
    }

    #[test]
    fn missing_key_keeps_default() {
        let mut c = ExperimentConfig::default();
        c.apply_text("[solver]\nsp = 2\n").unwrap();
        assert_eq!(c.solver.sc, ExperimentConfig::default().solver.sc);
        assert_eq!(c.solver.sp, 2);
    }

    #[test]
    fn tau_piece_parses() {
        let mut c = ExperimentConfig::default();
        c.apply_text("tau.pieces = (0.05, 1, 1.0)\n").unwrap();
        assert_eq!(c.tau.kind, "pieces");
        assert_eq!(c.tau.pieces, vec![(0.05, 1.0, 1.0)]);
        let s = c.schedule().unwrap();
        let g = c.grid(&s).unwrap();
        let tau = c.tau(&s, &g).unwrap();
        let inside = s.sigma_edm_inverse(0.3).unwrap();
        assert_eq!(tau.eval(inside), 1.0);
        assert_eq!(tau.eval(s.sigma_edm_inverse(5.0).unwrap()), 0.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut c = ExperimentConfig::default();
        assert_eq!(
            c.apply_text("run.seed = 1\n\nrun.seed = 2\n"),
            Err(ConfigError::DuplicateKey { line: 3, key: "run.seed".into() })
        );
        let mut c = ExperimentConfig::default();
        assert_eq!(c.apply_text("[grid]\nM = 4\nsteps = 5\n"), Err(ConfigError::DuplicateKey { line: 3, key: "grid.steps".into() }));
        let mut c = ExperimentConfig::default();
        assert_eq!(c.apply_text("[run]\nsed = 1\n"), Err(ConfigError::UnknownKey { line: 2, key: "run.sed".into() }));
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.apply_text("x\n"), Err(ConfigError::Parse { line: 1, .. })));
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.apply_text("[run\n"), Err(ConfigError::Parse { line: 1, .. })));
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.apply_text("\n[grid]\nkind = hex\n"), Err(ConfigError::InvalidValue { line: 3, .. })));
    }

    #[test]
    fn levels_count_or_list() {
        assert_eq!(parse_levels("5").unwrap(), vec![4, 5, 6, 7, 8]);
        assert_eq!(parse_levels("2, 3,4 ,5").unwrap(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn pieces_reject_bad_shapes() {
        assert!(parse_pieces("(1, 2)").is_err());
        assert!(parse_pieces("(1, 2, 3) (4, 5, 6)").is_err());
        assert!(parse_pieces("1, 2, 3").is_err());
        assert_eq!(parse_pieces("(0.05, 1, 1.0), (1, 10, 0.5)").unwrap().len(), 2);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::for_command("convergence");
        c.apply_text("tau.pieces = (0.05, 1, 1.0), (2, 3, 0.25)\nmodel.means = 0.125, -1e-3\nschedule.t_eps = 0.002\n").unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_settable() {
        let sample = |k: &str| match k {
            "schedule.kind" | "inequality.schedules" => "ve",
            "grid.kind" => "uniform-t",
            "tau.kind" => "constant",
            "tau.pieces" => "(0.1, 1, 0.5)",
            "solver.coeff_mode" => "quadrature",
            "solver.eval_mode" => "pece",
            "output.dir" => "/tmp/x",
            "model.means" => "1; 2",
            _ => "2",
        };
        for k in KEYS {
            ExperimentConfig::default().set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
