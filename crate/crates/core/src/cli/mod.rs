//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a verification assertion fails, 2 on a
//! usage or configuration error.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use commands::{execute, Outcome, COMMANDS};
pub use config::{ConfigError, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "sasolver", version, about = "Stochastic Adams diffusion samplers and their verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate predictor/corrector coefficients for a grid.
    Coeffs(Common),
    /// Draw samples from a Gaussian-mixture oracle.
    Sample(Common),
    /// Estimate the strong convergence order on an affine oracle.
    Convergence(Common),
    /// KS test of the sampled marginal for several noise levels.
    Marginals(Common),
    /// Scan injected variances of the two parameterizations.
    Inequality(Common),
    /// W1 distances under a perturbed score.
    Perturbed(Common),
    /// Compare DDIM-eta with the matching one-step predictor.
    #[command(name = "ddim-equiv")]
    DdimEquiv(Common),
}

impl Command {
    fn split(self) -> (&'static str, Common) {
        match self {
            Command::Coeffs(c) => ("coeffs", c),
            Command::Sample(c) => ("sample", c),
            Command::Convergence(c) => ("convergence", c),
            Command::Marginals(c) => ("marginals", c),
            Command::Inequality(c) => ("inequality", c),
            Command::Perturbed(c) => ("perturbed", c),
            Command::DdimEquiv(c) => ("ddim-equiv", c),
        }
    }
}

/// Sources are applied in this order: command defaults, `--manifest`,
/// `--config`, `--set`, then the dedicated flags below.
#[derive(Args, Debug, Default)]
struct Common {
    /// INI-like configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Replay the configuration recorded by an earlier run.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Output root; defaults to $SASOLVER_OUTDIR, then `runs`.
    #[arg(long, value_name = "DIR")]
    outdir: Option<String>,
    /// Any configuration key, e.g. `--set grid.rho=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    /// Number of steps.
    #[arg(long = "M", value_name = "M")]
    steps: Option<String>,
    /// Constant noise level.
    #[arg(long)]
    tau: Option<String>,
    /// `(sigma_lo, sigma_hi, tau), …` over σ^EDM intervals.
    #[arg(long = "tau-pieces", value_name = "PIECES")]
    tau_pieces: Option<String>,
    #[arg(long)]
    sp: Option<String>,
    #[arg(long)]
    sc: Option<String>,
    #[arg(long = "coeff-mode")]
    coeff_mode: Option<String>,
    #[arg(long = "eval-mode")]
    eval_mode: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// DDIM eta (`ddim-equiv`), otherwise the noise level equivalent to it.
    #[arg(long)]
    eta: Option<String>,
    /// A count of test levels, or an explicit comma-separated list.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long = "reference-level")]
    reference_level: Option<String>,
    #[arg(long = "n-paths")]
    n_paths: Option<String>,
    #[arg(long = "n-samples")]
    n_samples: Option<String>,
    /// Comma-separated noise levels (`marginals`, `perturbed`).
    #[arg(long)]
    taus: Option<String>,
    #[arg(long)]
    epsilons: Option<String>,
    /// Number of scanned tuples (`inequality`).
    #[arg(long)]
    n: Option<String>,
}

impl Common {
    /// `(key, value)` pairs for the dedicated flags, in a fixed order.
    fn flag_settings(&self, command: &str) -> Vec<(String, String)> {
        let per_command = |suffix: &str| match command {
            "perturbed" => format!("perturbed.{suffix}"),
            _ => format!("marginals.{suffix}"),
        };
        let pairs: [(String, &Option<String>); 20] = [
            ("schedule.kind".into(), &self.schedule),
            ("grid.kind".into(), &self.grid),
            ("grid.M".into(), &self.steps),
            ("tau.value".into(), &self.tau),
            ("tau.pieces".into(), &self.tau_pieces),
            ("solver.sp".into(), &self.sp),
            ("solver.sc".into(), &self.sc),
            ("solver.coeff_mode".into(), &self.coeff_mode),
            ("solver.eval_mode".into(), &self.eval_mode),
            ("run.batch".into(), &self.batch),
            ("run.seed".into(), &self.seed),
            ((if command == "ddim-equiv" { "ddim.eta" } else { "tau.eta" }).into(), &self.eta),
            ("convergence.levels".into(), &self.levels),
            ("convergence.reference_level".into(), &self.reference_level),
            ("convergence.n_paths".into(), &self.n_paths),
            (per_command("n_samples"), &self.n_samples),
            (per_command("taus"), &self.taus),
            ("perturbed.epsilons".into(), &self.epsilons),
            ("inequality.n".into(), &self.n),
            ("output.dir".into(), &self.outdir),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))).collect()
    }
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
    }
}

fn resolve(command: &str, args: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::for_command(command);
    if let Some(path) = &args.manifest {
        let m = Manifest::load(path)?;
        if m.command != command {
            return Err(ConfigError::Invalid(format!("manifest records `{}`, not `{command}`", m.command)));
        }
        cfg = m.config;
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v).map_err(|e| ConfigError::Invalid(format!("--set {kv}: {e}")))?;
    }
    for (k, v) in args.flag_settings(command) {
        cfg.set(&k, &v).map_err(|e| ConfigError::Invalid(format!("{k}: {e}")))?;
    }
    Ok(cfg)
}

/// Runs one command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (command, args) = cli.command.split();
    let cfg = match resolve(command, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("sasolver {command}: {e}");
            return EXIT_USAGE;
        }
    };
    let outcome = match execute(command, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("sasolver {command}: {e}");
            return EXIT_USAGE;
        }
    };
    let manifest = Manifest { command: command.to_string(), config: cfg.clone() };
    let mut artifacts = outcome.artifacts;
    artifacts.push(output::Artifact::json(MANIFEST_FILE, &manifest));
    artifacts.push(output::Artifact { name: "config.ini".into(), bytes: cfg.to_text().into_bytes() });
    let root = output::output_root(cfg.output_dir.as_deref());
    let written = output::create_run_dir(&root, command).and_then(|dir| output::write_artifacts(&dir, &artifacts).map(|_| dir));
    let dir = match written {
        Ok(d) => d,
        Err(e) => {
            eprintln!("sasolver {command}: cannot write outputs under {}: {e}", root.display());
            return EXIT_USAGE;
        }
    };
    println!("{} {command}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.message);
    println!("output: {}", dir.display());
    if outcome.pass {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(f: impl FnOnce(&mut Common)) -> Common {
        let mut c = Common::default();
        f(&mut c);
        c
    }

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ini");
        std::fs::write(&path, "[grid]\nM = 12\n[run]\nseed = 3\nbatch = 9\n").unwrap();
        let args = common(|c| {
            c.config = Some(path.clone());
            c.set = vec!["grid.M=14".into(), "run.seed=4".into()];
            c.steps = Some("16".into());
        });
        let cfg = resolve("sample", &args).unwrap();
        // flag > --set > file > default
        assert_eq!(cfg.grid.steps, 16);
        assert_eq!(cfg.run.seed, 4);
        assert_eq!(cfg.run.batch, 9);
        assert_eq!(cfg.solver.sp, ExperimentConfig::default().solver.sp);
    }

    #[test]
    fn override_matrix() {
        // Each source alone, and each pair, for one key.
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.ini");
        std::fs::write(&file, "run.seed = 2\n").unwrap();
        let manifest = dir.path().join("m.json");
        let mut recorded = ExperimentConfig::for_command("sample");
        recorded.run.seed = 1;
        std::fs::write(&manifest, serde_json::to_string(&Manifest { command: "sample".into(), config: recorded }).unwrap()).unwrap();
        for mask in 0u8..16 {
            let args = common(|c| {
                if mask & 1 != 0 {
                    c.manifest = Some(manifest.clone());
                }
                if mask & 2 != 0 {
                    c.config = Some(file.clone());
                }
                if mask & 4 != 0 {
                    c.set = vec!["run.seed=3".into()];
                }
                if mask & 8 != 0 {
                    c.seed = Some("4".into());
                }
            });
            let want = (0..4).rev().find(|b| mask & (1 << b) != 0).map_or(0, |b| b as u64 + 1);
            assert_eq!(resolve("sample", &args).unwrap().run.seed, want, "mask {mask:04b}");
        }
    }

    #[test]
    fn manifest_command_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = Manifest { command: "coeffs".into(), config: ExperimentConfig::default() };
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(resolve("sample", &common(|c| c.manifest = Some(path.clone()))).is_err());
        assert!(resolve("coeffs", &common(|c| c.manifest = Some(path.clone()))).is_ok());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["sasolver"]), EXIT_USAGE);
        assert_eq!(run(["sasolver", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["sasolver", "sample", "--grid", "hexagonal"]), EXIT_USAGE);
        assert_eq!(run(["sasolver", "sample", "--set", "nope"]), EXIT_USAGE);
        assert_eq!(run(["sasolver", "--help"]), EXIT_OK);
    }

    #[test]
    fn eta_flag_depends_on_command() {
        let args = common(|c| c.eta = Some("0.37".into()));
        assert_eq!(resolve("ddim-equiv", &args).unwrap().ddim.eta, 0.37);
        let cfg = resolve("sample", &args).unwrap();
        assert_eq!((cfg.tau.kind.as_str(), cfg.tau.eta), ("eta", 0.37));
    }
}
