//! Run orchestration: build a task from its config, execute it, and write the
//! artifact set (resolved config, metrics CSV, analysis CSV, step trace,
//! final checkpoint, status line).

use crate::analysis;
use crate::checkpoint::write_checkpoint;
use crate::config::{ExperimentConfig, XStarMode};
use crate::data::write_csv_dataset;
use crate::engine::{run_experiment, AnalysisSettings, RunOutcome, RunOutput};
use crate::error::{Error, Result};
use crate::math::ParamVector;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ANALYSIS_FILE: &str = "analysis.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const STATUS_FILE: &str = "status";

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub outcome: RunOutcome,
    pub final_test_acc: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub first_train_loss: Option<f64>,
    pub estimates: crate::analysis::AssumptionEstimates,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path.display().to_string(), e.to_string())
}

/// Execute a validated config and write every artifact into `out_dir`.
pub fn execute_run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let (split, fixed_partition) = config.build_dataset()?;
    let partition = match fixed_partition {
        Some(p) => p,
        None => config.build_partition(&split)?,
    };
    let model = config.build_model(&split)?;
    let x_star = if config.analysis.lyapunov {
        Some(match config.analysis.x_star {
            XStarMode::Zeros => ParamVector::zeros(model.param_count()),
            XStarMode::Solve => {
                analysis::reference_minimizer(&model, &split.train, 1e-10, 200_000)?
            }
        })
    } else {
        None
    };
    let mut settings = config.run_settings(AnalysisSettings {
        lyapunov: config.analysis.lyapunov,
        x_star,
        constants: config.analysis.constants,
        step_trace: config.analysis.step_trace,
    })?;
    settings.init_params = config.initial_params(model.param_count())?;
    let output = run_experiment(&settings, &model, &split, &partition)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    std::fs::write(out_dir.join(CONFIG_FILE), config.to_toml_string()?)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_metrics(&output, &out_dir.join(METRICS_FILE))?;
    if !output.analysis.is_empty() {
        write_analysis(&output, &out_dir.join(ANALYSIS_FILE))?;
    }
    if !output.step_trace.is_empty() {
        write_steps(&output, &out_dir.join(STEPS_FILE))?;
    }
    write_checkpoint(&output.final_params, &out_dir.join(CHECKPOINT_FILE))?;
    let status = match &output.outcome {
        RunOutcome::Completed => "ok".to_string(),
        RunOutcome::Diverged {
            round,
            client,
            step,
        } => format!("diverged round={round} client={client} step={step}"),
    };
    std::fs::write(out_dir.join(STATUS_FILE), format!("{status}\n"))
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let last = output.records.last();
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        outcome: output.outcome.clone(),
        final_test_acc: last.and_then(|r| r.test_acc),
        final_train_loss: last.map(|r| r.train_loss),
        first_train_loss: output.records.first().map(|r| r.train_loss),
        estimates: output.estimates.clone(),
    })
}

fn write_metrics(output: &RunOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "round",
        "wall_ms",
        "train_loss",
        "test_loss",
        "test_acc",
        "grad_norm_sq",
        "eta_mean",
        "eta_max",
        "eta_min",
        "participating_clients",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in &output.records {
        w.write_record([
            r.round.to_string(),
            format!("{}", r.wall_ms),
            format!("{}", r.train_loss),
            format!("{}", r.test_loss),
            fmt_opt(r.test_acc),
            format!("{}", r.grad_norm_sq),
            format!("{}", r.eta_mean),
            format!("{}", r.eta_max),
            format!("{}", r.eta_min),
            r.participating.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn write_analysis(output: &RunOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "round",
        "V",
        "V_dist",
        "V_pair",
        "V_subopt",
        "Ltilde_hat",
        "sigma2_hat",
        "G_hat",
        "rho_hat",
        "slope",
    ])
    .map_err(|e| csv_error(path, e))?;
    for row in &output.analysis {
        let (v, dist, pair, subopt) = match &row.lyapunov {
            Some(s) => (
                Some(s.value),
                Some(s.distance),
                Some(s.pairwise),
                Some(s.suboptimality),
            ),
            None => (None, None, None, None),
        };
        w.write_record([
            row.round.to_string(),
            fmt_opt(v),
            fmt_opt(dist),
            fmt_opt(pair),
            fmt_opt(subopt),
            fmt_opt(row.smoothness),
            fmt_opt(row.sigma2),
            fmt_opt(row.grad_bound),
            fmt_opt(row.dissimilarity),
            fmt_opt(row.slope),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn write_steps(output: &RunOutput, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["round", "client", "local_step", "branch1", "branch2", "eta"])
        .map_err(|e| csv_error(path, e))?;
    for row in &output.step_trace {
        w.write_record([
            row.round.to_string(),
            row.client.to_string(),
            row.local_step.to_string(),
            fmt_opt(row.branch_smooth),
            fmt_opt(row.branch_growth),
            format!("{}", row.eta),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Materialize the config's dataset as train/test CSV files.
pub fn generate_data(config: &ExperimentConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (split, _) = config.build_dataset()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let train = out_dir.join("train.csv");
    let test = out_dir.join("test.csv");
    write_csv_dataset(&split.train, &train)?;
    write_csv_dataset(&split.test, &test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference_config;

    fn quick_config() -> ExperimentConfig {
        let mut config = reference_config();
        config.federation.rounds = 3;
        config.federation.timing = false;
        config.dataset.per_class = Some(50);
        config.partition.clients = 5;
        config
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let artifacts = execute_run(&quick_config(), &out).unwrap();
        assert_eq!(artifacts.outcome, RunOutcome::Completed);
        assert!(out.join(METRICS_FILE).exists());
        assert!(out.join(CONFIG_FILE).exists());
        assert!(out.join(CHECKPOINT_FILE).exists());
        assert_eq!(std::fs::read_to_string(out.join(STATUS_FILE)).unwrap(), "ok\n");
        let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 4);
        assert!(metrics.starts_with("round,wall_ms,train_loss"));
    }

    #[test]
    fn zero_rounds_leaves_header_only() {
        let mut config = quick_config();
        config.federation.rounds = 0;
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        execute_run(&config, &out).unwrap();
        let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 1);
    }

    #[test]
    fn identical_configs_produce_identical_bytes() {
        let config = quick_config();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        execute_run(&config, &a).unwrap();
        execute_run(&config, &b).unwrap();
        let bytes_a = std::fs::read(a.join(METRICS_FILE)).unwrap();
        let bytes_b = std::fs::read(b.join(METRICS_FILE)).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn gen_data_round_trips_through_csv_source() {
        let config = quick_config();
        let dir = tempfile::tempdir().unwrap();
        let (train, test) = generate_data(&config, dir.path()).unwrap();
        let back = crate::data::read_csv_dataset(&train).unwrap();
        let (split, _) = config.build_dataset().unwrap();
        assert_eq!(back.len(), split.train.len());
        for i in 0..back.len() {
            assert_eq!(back.row(i), split.train.row(i));
        }
        assert!(test.exists());
    }
}
