//! Batched ablation runs: a grid of configurations times seeds, each run in
//! its own output directory, summarized as a steps-to-convergence table.
//! Tasks that never converge (or are skipped after an earlier failure, or
//! whose run errored) show up as N/A; one bad run never aborts the batch.

use super::run::run_experiment;
use super::ExperimentConfig;
use crate::Result;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    /// Steps to convergence per task; None = did not converge / skipped.
    pub task_steps: Vec<Option<usize>>,
    /// Set when the run itself failed before producing outcomes.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct AblationSummary {
    pub cells: Vec<AblationCell>,
    /// Rendered table, also written to ablation_summary.txt.
    pub table: String,
}

/// Runs every configuration with every seed. Output for variant `v`, seed `s`
/// lands in `<out_dir>/<v>/seed<s>/`.
pub fn ablation_matrix(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationSummary> {
    let mut cells = Vec::new();
    let max_tasks = configs.iter().map(|c| c.taskset.n_tasks).max().unwrap_or(0);
    for cfg in configs {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            let run_dir = out_dir.join(&c.name).join(format!("seed{seed}"));
            let cell = match run_experiment(&c, &run_dir) {
                Ok(out) => AblationCell {
                    variant: c.name.clone(),
                    seed,
                    task_steps: out
                        .outcomes
                        .iter()
                        .map(|o| if o.converged { Some(o.steps) } else { None })
                        .collect(),
                    error: None,
                },
                Err(e) => AblationCell {
                    variant: c.name.clone(),
                    seed,
                    task_steps: Vec::new(),
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    let table = render_table(&cells, max_tasks);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("ablation_summary.txt"), &table)?;
    Ok(AblationSummary { cells, table })
}

fn render_table(cells: &[AblationCell], max_tasks: usize) -> String {
    let mut s = String::from("variant\tseed");
    for t in 0..max_tasks {
        let _ = write!(s, "\ttask{}", t + 1);
    }
    s.push('\n');
    for c in cells {
        let _ = write!(s, "{}\t{}", c.variant, c.seed);
        if let Some(e) = &c.error {
            let _ = writeln!(s, "\terror: {e}");
            continue;
        }
        for t in 0..max_tasks {
            match c.task_steps.get(t) {
                Some(Some(steps)) => {
                    let _ = write!(s, "\t{steps}");
                }
                _ => {
                    let _ = write!(s, "\tN/A");
                }
            }
        }
        s.push('\n');
    }
    s
}
