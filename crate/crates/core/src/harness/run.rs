//! Executes one configured experiment end to end and records its artifacts:
//! the resolved config, the exact taskset text, a fixed-schema metrics CSV,
//! task checkpoints, and a byte-deterministic summary.

use super::{ExperimentConfig, Method};
use crate::lifelong::{
    fit_statistics, relearn_from_checkpoint, train_lifelong, GatingMode, LifelongOptions,
    TaskOutcome, TrainState,
};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Fixed CSV schema. Fields that do not apply to a run (gating telemetry for
/// the monolithic baseline) are left empty, never dropped.
pub const METRICS_HEADER: &str = "task,task_name,iteration,cumulative_steps,mean_reward,\
success_rate,gating_loss,gating_accuracy,gating_entropy,usage,wall_clock_s";

#[derive(Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub outcomes: Vec<TaskOutcome>,
    pub out_dir: PathBuf,
    /// Contents of summary.txt (deterministic given config).
    pub summary: String,
}

impl RunOutput {
    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }

    pub fn total_steps(&self) -> usize {
        self.outcomes.iter().map(|o| o.steps).sum()
    }
}

fn mode_for(method: Method) -> GatingMode {
    match method {
        Method::Gated => GatingMode::Learned,
        Method::Baseline => GatingMode::Unit,
        Method::OracleGating => GatingMode::Oracle,
    }
}

fn method_name(method: Method) -> &'static str {
    match method {
        Method::Gated => "gated",
        Method::Baseline => "baseline",
        Method::OracleGating => "oracle-gating",
    }
}

/// Runs the experiment and writes config.toml, taskset.txt, metrics.csv,
/// summary.txt, and per-task checkpoints under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let taskset = cfg.build_taskset()?;
    let first = &taskset.tasks[0];
    let (obs_dim, act_dim) = (first.obs_dim(), first.action_dim());
    for t in &taskset.tasks {
        if t.obs_dim() != obs_dim || t.action_dim() != act_dim {
            return Err(Error::Config(format!(
                "taskset mixes observation/action spaces (task {})",
                t.name
            )));
        }
    }
    let (normalizer, cov) = fit_statistics(first, cfg.seed, cfg.budget.stat_steps)?;
    let primitives = if cfg.method == Method::Baseline {
        Vec::new()
    } else {
        cfg.build_primitives(&cov)?
    };
    let mut state =
        TrainState::new(obs_dim, act_dim, cfg.k(), &cfg.hyper, normalizer, cfg.seed)?;
    let mut hyper = cfg.hyper.clone();
    hyper.coupled_targets = cfg.ablation.coupled || hyper.coupled_targets;
    let opts = LifelongOptions {
        reset_gating: cfg.ablation.reset_gating,
        reset_baseline: cfg.ablation.reset_baseline,
        // the monolithic baseline never transfers: fresh policy every task
        reset_subpolicies: cfg.ablation.reset_subpolicies || cfg.method == Method::Baseline,
        mode: mode_for(cfg.method),
        stop_on_failure: cfg.ablation.stop_on_failure,
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    std::fs::write(out_dir.join("taskset.txt"), taskset.encode())?;
    let outcomes = train_lifelong(
        &mut state,
        &taskset,
        &primitives,
        cfg.budget.max_steps_per_task,
        &hyper,
        &opts,
        Some(out_dir),
    )?;
    std::fs::write(out_dir.join("metrics.csv"), render_metrics(&outcomes))?;
    let summary = render_summary(cfg, &outcomes);
    std::fs::write(out_dir.join("summary.txt"), &summary)?;
    Ok(RunOutput { config: cfg.clone(), outcomes, out_dir: out_dir.to_path_buf(), summary })
}

fn render_metrics(outcomes: &[TaskOutcome]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (ti, o) in outcomes.iter().enumerate() {
        for m in &o.metrics {
            // gating telemetry only exists when a controller was trained
            // (learned-mode usage is a distribution summing to 1)
            let (gl, ga, ge, usage) = if m.usage.iter().sum::<f64>() == 0.0 {
                (String::new(), String::new(), String::new(), String::new())
            } else {
                (
                    format!("{:.6}", m.gating_loss),
                    format!("{:.6}", m.gating_accuracy),
                    format!("{:.6}", m.gating_entropy),
                    m.usage
                        .iter()
                        .map(|u| format!("{u:.4}"))
                        .collect::<Vec<_>>()
                        .join(";"),
                )
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{},{},{},{},{:.3}",
                ti + 1,
                o.name,
                m.iteration,
                m.cumulative_steps,
                m.mean_reward,
                m.success_rate,
                gl,
                ga,
                ge,
                usage,
                m.wall_clock_s
            );
        }
    }
    out
}

fn render_summary(cfg: &ExperimentConfig, outcomes: &[TaskOutcome]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name={}", cfg.name);
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "method={}", method_name(cfg.method));
    let _ = writeln!(
        s,
        "primitives={} sigma_in={} sigma_out={} k={}",
        if cfg.primitives.preset.is_empty() { "custom" } else { &cfg.primitives.preset },
        cfg.primitives.sigma_in,
        cfg.primitives.sigma_out,
        cfg.k()
    );
    let _ = writeln!(s, "budget_per_task={}", cfg.budget.max_steps_per_task);
    for (i, o) in outcomes.iter().enumerate() {
        let status = if !o.attempted {
            "skipped"
        } else if o.converged {
            "yes"
        } else {
            "no"
        };
        let acc = if cfg.method == Method::Gated && o.attempted {
            format!("{:.4}", o.gating_accuracy)
        } else {
            "na".into()
        };
        let _ = writeln!(
            s,
            "task={} name={} steps={} converged={status} accuracy={acc}",
            i + 1,
            o.name,
            o.steps
        );
    }
    let total: usize = outcomes.iter().map(|o| o.steps).sum();
    let converged = outcomes.iter().filter(|o| o.converged).count();
    let _ = writeln!(s, "total_steps={total}");
    let _ = writeln!(s, "converged={converged}/{}", outcomes.len());
    s
}

/// Loads persisted subpolicies from an earlier run and retrains the first
/// `n_tasks` of the config's taskset from them; writes relearn_summary.txt.
pub fn run_relearn(
    cfg: &ExperimentConfig,
    ckpt: &Path,
    n_tasks: usize,
    out_dir: &Path,
) -> Result<Vec<TaskOutcome>> {
    cfg.validate()?;
    if cfg.method == Method::Baseline {
        return Err(Error::Config("relearning requires a gated method".into()));
    }
    let mut taskset = cfg.build_taskset()?;
    if n_tasks == 0 || n_tasks > taskset.tasks.len() {
        return Err(Error::Config(format!(
            "relearn prefix {n_tasks} out of range (taskset has {})",
            taskset.tasks.len()
        )));
    }
    taskset.tasks.truncate(n_tasks);
    // same probe stream as the original run, so the oracle covariance matches
    let (_, cov) = fit_statistics(&taskset.tasks[0], cfg.seed, cfg.budget.stat_steps)?;
    let primitives = cfg.build_primitives(&cov)?;
    let outcomes = relearn_from_checkpoint(
        ckpt,
        &taskset,
        &primitives,
        cfg.budget.max_steps_per_task,
        &cfg.hyper,
        cfg.seed,
    )?;
    std::fs::create_dir_all(out_dir)?;
    let mut s = String::new();
    let _ = writeln!(s, "name={} (relearn from {})", cfg.name, ckpt.display());
    for (i, o) in outcomes.iter().enumerate() {
        let _ = writeln!(
            s,
            "task={} name={} steps={} converged={}",
            i + 1,
            o.name,
            o.steps,
            if o.converged { "yes" } else { "no" }
        );
    }
    std::fs::write(out_dir.join("relearn_summary.txt"), s)?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset_config;

    fn tiny(preset: &str, budget: usize) -> ExperimentConfig {
        let mut cfg = preset_config(preset).unwrap();
        cfg.taskset.n_tasks = cfg.taskset.n_tasks.min(2);
        cfg.taskset.corridors = 2;
        cfg.budget.max_steps_per_task = budget;
        cfg.budget.stat_steps = 1_000;
        cfg.hyper.actors = 2;
        cfg.hyper.steps_per_actor = 128;
        cfg.ablation.stop_on_failure = false;
        cfg
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("maze-lifelong-5", 256);
        let out = run_experiment(&cfg, dir.path()).unwrap();
        for f in ["config.toml", "taskset.txt", "metrics.csv", "summary.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(dir.path().join("task0/subpolicies.ckpt").exists());
        let csv = std::fs::read_to_string(out.metrics_path()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), METRICS_HEADER.split(',').count());
        // gated run fills the gating columns
        assert!(!row.split(',').nth(6).unwrap().is_empty());
        assert_eq!(out.outcomes.len(), 2);
        assert_eq!(out.total_steps(), 2 * 256);
    }

    #[test]
    fn summary_is_deterministic_and_baseline_blanks_gating() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg = tiny("maze-baseline-5", 256);
        let a = run_experiment(&cfg, dir_a.path()).unwrap();
        let b = run_experiment(&cfg, dir_b.path()).unwrap();
        assert_eq!(a.summary, b.summary);
        // everything except wall-clock time is deterministic
        let strip = |p: &std::path::Path| -> Vec<String> {
            std::fs::read_to_string(p)
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        assert_eq!(
            strip(&dir_a.path().join("metrics.csv")),
            strip(&dir_b.path().join("metrics.csv"))
        );
        assert!(a.summary.contains("method=baseline"));
        assert!(a.summary.contains("k=1"));
        assert!(a.summary.contains("accuracy=na"));
        let csv = std::fs::read_to_string(a.metrics_path()).unwrap();
        let row = csv.lines().nth(1).unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        assert!(cols[6].is_empty() && cols[7].is_empty() && cols[9].is_empty());
    }

    #[test]
    fn mixed_taskset_is_rejected() {
        let maze = crate::envs::generate_maze_taskset(1, 1, 2, crate::envs::MazeGenMode::Standard)
            .unwrap();
        let chain = crate::envs::generate_chain_taskset(1, 1).unwrap();
        let mut cfg = tiny("maze-lifelong-5", 128);
        cfg.taskset.kind = "explicit".into();
        cfg.taskset.explicit =
            format!("{}{}", maze.encode(), chain.encode());
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, dir.path()).unwrap_err();
        assert!(err.to_string().contains("mixes"));
    }

    #[test]
    fn relearn_prefix_bounds_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("maze-lifelong-5", 256);
        let out = run_experiment(&cfg, dir.path()).unwrap();
        let ckpt = out.out_dir.join("task1/subpolicies.ckpt");
        assert!(run_relearn(&cfg, &ckpt, 0, dir.path()).is_err());
        assert!(run_relearn(&cfg, &ckpt, 99, dir.path()).is_err());
        let mut zero = cfg.clone();
        zero.budget.max_steps_per_task = 0;
        let outcomes = run_relearn(&zero, &ckpt, 1, dir.path()).unwrap();
        assert_eq!(outcomes.len(), 1);
        assert_eq!(outcomes[0].steps, 0);
        assert!(dir.path().join("relearn_summary.txt").exists());
    }
}
