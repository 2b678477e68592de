//! The subcommands. Each one turns a resolved configuration into output
//! files and a pass/fail verdict; nothing here touches the filesystem.

use serde::Serialize;

use crate::cli::config::{ConfigError, ExperimentConfig};
use crate::cli::output::{fmt_f64, Artifact, Csv};
use crate::coefficients::StepCoefficients;
use crate::error::Error;
use crate::schedules::NoiseSchedule;
use crate::solver::{sa_solve, CoefficientPlan};
use crate::stochasticity::TauSchedule;
use crate::verification::{
    ddim_equivalence, marginal_invariance, perturbed_score_sweep, strong_order, variance_inequality_scan, ConvergenceSetup,
};

pub const COMMANDS: &[&str] = &["coeffs", "sample", "convergence", "marginals", "inequality", "perturbed", "ddim-equiv"];

/// Half-width of the accepted band around a deterministic order.
pub const ORDER_TOLERANCE: f64 = 0.35;
/// Accepted slopes once noise is injected.
pub const STOCHASTIC_ORDER_RANGE: (f64, f64) = (0.75, 1.6);

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
}

#[derive(Debug)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    /// False when a verification assertion failed.
    pub pass: bool,
    /// One-line human summary.
    pub message: String,
}

pub fn execute(command: &str, cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    match command {
        "coeffs" => coeffs(cfg),
        "sample" => sample(cfg),
        "convergence" => convergence(cfg),
        "marginals" => marginals(cfg),
        "inequality" => inequality(cfg),
        "perturbed" => perturbed(cfg),
        "ddim-equiv" => ddim_equiv(cfg),
        other => Err(CommandError::UnknownCommand(other.to_string())),
    }
}

fn f(x: f64) -> String {
    fmt_f64(x)
}

fn tau_label(t: f64) -> String {
    format!("{t}")
}

fn coeff_rows(csv: &mut Csv, step: usize, kind: &str, c: &StepCoefficients, nodes: &[f64], t_i: f64, t_next: f64) {
    for (j, (w, node)) in c.model_weights.iter().zip(nodes).enumerate() {
        csv.row(&[
            step.to_string(),
            kind.into(),
            c.mode.to_string(),
            c.order().to_string(),
            j.to_string(),
            f(*node),
            f(*w),
            f(c.state_decay),
            f(c.noise_std),
            f(c.tau2_integral),
            f(t_i),
            f(t_next),
        ]);
    }
}

#[derive(Serialize)]
struct CoeffSummary {
    steps: usize,
    nfe: usize,
    checksums: Vec<String>,
}

fn coeffs(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let s = cfg.schedule()?;
    let grid = cfg.grid(&s)?;
    let tau = cfg.tau(&s, &grid)?;
    let sc = cfg.solver()?;
    let plan = CoefficientPlan::build(&s, &tau, &grid, &sc)?;
    let times = grid.times();
    let mut csv = Csv::new(&[
        "step", "kind", "source", "order", "j", "node_t", "weight", "state_decay", "noise_std", "tau2_integral", "t_i", "t_next",
    ]);
    for (i, step) in plan.steps.iter().enumerate() {
        let p = &step.predictor;
        let nodes: Vec<f64> = (0..p.order()).map(|j| times[i - j]).collect();
        coeff_rows(&mut csv, i, "predictor", p, &nodes, times[i], times[i + 1]);
        if let Some(c) = &step.corrector {
            let nodes: Vec<f64> = (0..c.order()).map(|j| times[i + 1 - j]).collect();
            coeff_rows(&mut csv, i, "corrector", c, &nodes, times[i], times[i + 1]);
        }
    }
    let summary = CoeffSummary { steps: grid.steps(), nfe: sc.nfe(grid.steps()), checksums: plan.checksums() };
    Ok(Outcome {
        artifacts: vec![Artifact::csv("coefficients.csv", csv), Artifact::json("summary.json", &summary)],
        pass: true,
        message: format!("{} steps, NFE {}", summary.steps, summary.nfe),
    })
}

#[derive(Serialize)]
struct SampleSummary {
    batch: usize,
    steps: usize,
    nfe: usize,
    mean: Vec<f64>,
}

fn sample(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let s = cfg.schedule()?;
    let grid = cfg.grid(&s)?;
    let tau = cfg.tau(&s, &grid)?;
    let model = cfg.model(s)?;
    let sc = cfg.solver()?;
    let run = sa_solve(&model, &s, &tau, &grid, &sc, cfg.run.batch)?;
    let d = model.mixture().dim();
    let mut header = vec!["sample".to_string()];
    header.extend((0..d).map(|k| format!("x{k}")));
    let mut samples = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (i, x) in run.final_states.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| f(*v)));
        samples.row(&row);
    }
    let mut diag = Csv::new(&["step", "t_i", "t_next", "noise_std", "predictor_order", "corrector_order", "checksum"]);
    for r in &run.diagnostics {
        diag.row(&[
            r.step.to_string(),
            f(r.t_i),
            f(r.t_next),
            f(r.noise_std),
            r.predictor_order.to_string(),
            r.corrector_order.to_string(),
            r.checksum.clone(),
        ]);
    }
    let n = run.final_states.len().max(1) as f64;
    let mean = (0..d).map(|k| run.final_states.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let summary = SampleSummary { batch: cfg.run.batch, steps: grid.steps(), nfe: run.nfe_count, mean };
    Ok(Outcome {
        artifacts: vec![
            Artifact::csv("samples.csv", samples),
            Artifact::csv("diagnostics.csv", diag),
            Artifact::json("summary.json", &summary),
        ],
        pass: true,
        message: format!("{} samples, {} steps, NFE {}", summary.batch, summary.steps, summary.nfe),
    })
}

/// Slope expected on a deterministic run.
pub fn expected_order(predictor_steps: usize, corrector_steps: usize) -> usize {
    if corrector_steps == 0 {
        predictor_steps
    } else {
        (predictor_steps + 1).min(corrector_steps + 1)
    }
}

#[derive(Serialize)]
struct ConvergenceSummary {
    slope_l1: f64,
    slope_l2: f64,
    slope_l1_without_largest: f64,
    reference_shift: f64,
    accepted: (f64, f64),
    pass: bool,
}

fn convergence(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let s = cfg.schedule()?;
    let base = cfg.grid(&s)?;
    let tau = cfg.tau(&s, &base)?;
    let model = cfg.model(s)?;
    let sc = cfg.solver()?;
    let setup = ConvergenceSetup {
        base_grid: base,
        test_levels: cfg.convergence.levels.clone(),
        reference_level: cfg.convergence.reference_level,
        n_paths: cfg.convergence.n_paths,
        seed: cfg.run.seed,
    };
    let r = strong_order(&model, &s, &tau, &sc, &setup)?;
    let accepted = if tau.max_value() == 0.0 {
        let p = expected_order(sc.predictor_steps, sc.corrector_steps) as f64;
        (p - ORDER_TOLERANCE, p + ORDER_TOLERANCE)
    } else {
        STOCHASTIC_ORDER_RANGE
    };
    let pass = r.slope_l1 >= accepted.0 && r.slope_l1 <= accepted.1;
    let mut csv = Csv::new(&["level", "steps", "h", "err_l1", "err_l2"]);
    for k in 0..r.levels.len() {
        csv.row(&[r.levels[k].to_string(), r.steps[k].to_string(), f(r.h[k]), f(r.err_l1[k]), f(r.err_l2[k])]);
    }
    let summary = ConvergenceSummary {
        slope_l1: r.slope_l1,
        slope_l2: r.slope_l2,
        slope_l1_without_largest: r.slope_l1_without_largest,
        reference_shift: r.reference_shift,
        accepted,
        pass,
    };
    Ok(Outcome {
        artifacts: vec![Artifact::csv("convergence.csv", csv), Artifact::json("summary.json", &summary)],
        pass,
        message: format!("slope {:.3}, accepted [{}, {}]", r.slope_l1, accepted.0, accepted.1),
    })
}

fn constant_taus(values: &[f64]) -> Result<Vec<(String, TauSchedule)>, CommandError> {
    values.iter().map(|&t| Ok((tau_label(t), TauSchedule::constant(t)?))).collect()
}

fn marginals(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let s = cfg.schedule()?;
    let grid = cfg.grid(&s)?;
    let model = cfg.model(s)?;
    let sc = cfg.solver()?;
    let taus = constant_taus(&cfg.marginals.taus)?;
    let results = marginal_invariance(&model, &taus, &grid, &sc, cfg.marginals.n_samples)?;
    let mut csv = Csv::new(&["tau", "n", "ks", "critical", "pass"]);
    for r in &results {
        csv.row(&[r.tau.clone(), r.n.to_string(), f(r.ks), f(r.critical), r.pass.to_string()]);
    }
    let pass = results.iter().all(|r| r.pass);
    let worst = results.iter().map(|r| r.ks).fold(0.0, f64::max);
    Ok(Outcome {
        artifacts: vec![Artifact::csv("ks.csv", csv), Artifact::json("summary.json", &results)],
        pass,
        message: format!("largest KS {worst:.5}, critical {:.5}", results.first().map_or(0.0, |r| r.critical)),
    })
}

#[derive(Serialize)]
struct InequalitySummary {
    n: usize,
    violations: usize,
    min_margin: f64,
    pass: bool,
}

fn inequality(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let schedules = cfg.inequality.schedules.iter().map(|k| cfg.schedule_of(k)).collect::<Result<Vec<NoiseSchedule>, _>>()?;
    let r = variance_inequality_scan(&schedules, cfg.inequality.n, cfg.inequality.max_tau, cfg.run.seed)?;
    let mut csv = Csv::new(&["schedule", "lambda_i", "lambda_next", "tau", "data_variance", "noise_variance", "margin"]);
    for t in &r.tuples {
        csv.row(&[
            t.schedule.clone(),
            f(t.lambda_i),
            f(t.lambda_next),
            format!("\"{}\"", t.tau.replace('"', "\"\"")),
            f(t.data_variance),
            f(t.noise_variance),
            f(t.noise_variance - t.data_variance),
        ]);
    }
    let summary = InequalitySummary { n: r.n, violations: r.violations, min_margin: r.min_margin, pass: r.pass };
    Ok(Outcome {
        artifacts: vec![Artifact::csv("inequality.csv", csv), Artifact::json("summary.json", &summary)],
        pass: r.pass,
        message: format!("{} tuples, {} violations, min margin {:e}", r.n, r.violations, r.min_margin),
    })
}

#[derive(Serialize)]
struct PerturbedSummary {
    epsilon: Option<f64>,
    compared: Option<(String, String)>,
    difference: Option<f64>,
    standard_error: Option<f64>,
    pass: bool,
}

fn perturbed(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let s = cfg.schedule()?;
    let grid = cfg.grid(&s)?;
    let model = cfg.model(s)?;
    let sc = cfg.solver()?;
    let p = &cfg.perturbed;
    let taus = constant_taus(&p.taus)?;
    let table = perturbed_score_sweep(&model, &p.epsilons, &taus, &grid, &sc, p.n_samples, p.perturb_seed, p.bootstrap)?;
    let mut csv = Csv::new(&["epsilon", "tau", "w1", "w1_se", "diff_vs_first", "diff_se"]);
    for r in &table.rows {
        csv.row(&[f(r.epsilon), r.tau.clone(), f(r.w1), f(r.w1_se), f(r.diff_vs_first), f(r.diff_se)]);
    }
    // At the largest ε the last τ must beat the first by three standard errors.
    let eps = p.epsilons.iter().copied().fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    let check = match (eps, taus.first(), taus.last()) {
        (Some(e), Some(first), Some(last)) if e > 0.0 && taus.len() > 1 => table.get(e, &last.0).map(|row| (e, first, last, row)),
        _ => None,
    };
    let summary = match check {
        Some((e, first, last, row)) => PerturbedSummary {
            epsilon: Some(e),
            compared: Some((last.0.clone(), first.0.clone())),
            difference: Some(row.diff_vs_first),
            standard_error: Some(row.diff_se),
            pass: row.diff_vs_first + 3.0 * row.diff_se <= 0.0,
        },
        None => PerturbedSummary { epsilon: None, compared: None, difference: None, standard_error: None, pass: true },
    };
    let message = match (&summary.compared, summary.difference, summary.standard_error) {
        (Some((a, b)), Some(d), Some(se)) => {
            format!("W1(tau={a}) - W1(tau={b}) = {d:.5} (se {se:.5}) at epsilon {}", summary.epsilon.unwrap_or(0.0))
        }
        _ => "no trend assertion (needs two taus and a positive epsilon)".into(),
    };
    Ok(Outcome {
        pass: summary.pass,
        artifacts: vec![Artifact::csv("w1.csv", csv), Artifact::json("summary.json", &summary)],
        message,
    })
}

fn ddim_equiv(cfg: &ExperimentConfig) -> Result<Outcome, CommandError> {
    let s = cfg.schedule()?;
    let grid = cfg.grid(&s)?;
    let model = cfg.model(s)?;
    let r = ddim_equivalence(&model, &s, &grid, cfg.ddim.eta, cfg.run.batch, cfg.run.seed)?;
    let mut csv = Csv::new(&["node", "t", "max_deviation"]);
    for (k, (d, t)) in r.per_node.iter().zip(grid.times()).enumerate() {
        csv.row(&[k.to_string(), f(*t), f(*d)]);
    }
    Ok(Outcome {
        message: format!("max trajectory deviation {:e} over {} samples", r.max_deviation, r.batch),
        pass: r.pass,
        artifacts: vec![Artifact::csv("deviation.csv", csv), Artifact::json("summary.json", &r)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_orders() {
        assert_eq!(expected_order(3, 0), 3);
        assert_eq!(expected_order(1, 1), 2);
        assert_eq!(expected_order(2, 2), 3);
        assert_eq!(expected_order(3, 1), 2);
    }

    #[test]
    fn coeffs_rows_match_orders() {
        let mut c = ExperimentConfig::for_command("coeffs");
        c.set("grid.M", "6").unwrap();
        let out = execute("coeffs", &c).unwrap();
        let text = String::from_utf8(out.artifacts[0].bytes.clone()).unwrap();
        // predictor 1+2+3+3+3+3 weights, corrector 2 per step
        assert_eq!(text.lines().count(), 1 + 15 + 12);
        assert!(out.pass);
    }

    #[test]
    fn unknown_command() {
        assert!(matches!(execute("plot", &ExperimentConfig::default()), Err(CommandError::UnknownCommand(_))));
    }

    #[test]
    fn small_runs_of_each_verification() {
        let mut c = ExperimentConfig::for_command("inequality");
        c.set("inequality.n", "50").unwrap();
        assert!(execute("inequality", &c).unwrap().pass);

        let mut c = ExperimentConfig::for_command("ddim-equiv");
        c.set("ddim.eta", "0.37").unwrap();
        let out = execute("ddim-equiv", &c).unwrap();
        assert!(out.pass, "{}", out.message);

        let mut c = ExperimentConfig::for_command("marginals");
        c.set("marginals.n_samples", "500").unwrap();
        c.set("grid.M", "20").unwrap();
        assert_eq!(execute("marginals", &c).unwrap().artifacts.len(), 2);

        let mut c = ExperimentConfig::for_command("perturbed");
        for (k, v) in [("perturbed.n_samples", "300"), ("grid.M", "10"), ("perturbed.bootstrap", "5"), ("perturbed.epsilons", "1")] {
            c.set(k, v).unwrap();
        }
        let out = execute("perturbed", &c).unwrap();
        assert!(out.message.contains("epsilon 1"), "{}", out.message);
    }

    #[test]
    fn convergence_rejects_mixtures() {
        let mut c = ExperimentConfig::for_command("convergence");
        c.set("model.weights", "0.5, 0.5").unwrap();
        c.set("model.means", "0, 0; 1, 1").unwrap();
        c.set("model.variances", "1, 1").unwrap();
        assert!(matches!(execute("convergence", &c), Err(CommandError::Solver(Error::NonAffineModel))));
    }
}
