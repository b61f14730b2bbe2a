use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use primgate::harness::{
    ablation_matrix, emit_plots, preset_config, preset_names, run_experiment, run_relearn,
    ExperimentConfig,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "primgate",
    about = "Lifelong reinforcement learning with model-primitive gated policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Run seed (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// key=value config overrides (repeatable), e.g. hyper.ppo_epochs=5.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            (None, Some(name)) => preset_config(name)?,
            (None, None) => bail!(
                "need --config or --preset (presets: {})",
                preset_names().join(", ")
            ),
            (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        for spec in &self.overrides {
            cfg.apply_override(spec)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment and write metrics, summary, and checkpoints.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default runs/<name>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved configuration and exit without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run a preset x seed grid and summarize steps-to-convergence.
    Ablate {
        /// Preset names to include (repeatable).
        #[arg(long = "preset", required = true)]
        presets: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
        /// key=value overrides applied to every variant.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render a success-rate curve (mean +/- std across seeds) to SVG.
    Plot {
        /// metrics.csv files, one per seed.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "curve.svg")]
        out: PathBuf,
    },
    /// Retrain the first tasks of a config from saved subpolicies.
    Relearn {
        #[command(flatten)]
        config: ConfigArgs,
        /// subpolicies.ckpt written by an earlier run.
        #[arg(long)]
        ckpt: PathBuf,
        /// How many leading tasks to relearn.
        #[arg(long, default_value_t = 1)]
        tasks: usize,
        #[arg(long, default_value = "runs/relearn")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, dry_run } => {
            let cfg = config.resolve()?;
            if dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let out = out.unwrap_or_else(|| {
                PathBuf::from(format!("runs/{}-seed{}", cfg.name, cfg.seed))
            });
            let result = run_experiment(&cfg, &out)?;
            print!("{}", result.summary);
            eprintln!("artifacts written to {}", out.display());
        }
        Command::Ablate { presets, seeds, out, overrides } => {
            let mut configs = Vec::new();
            for name in &presets {
                let mut cfg = preset_config(name)?;
                for spec in &overrides {
                    cfg.apply_override(spec)?;
                }
                cfg.validate()?;
                configs.push(cfg);
            }
            let summary = ablation_matrix(&configs, &seeds, &out)?;
            print!("{}", summary.table);
        }
        Command::Plot { inputs, out } => {
            emit_plots(&inputs, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Relearn { config, ckpt, tasks, out } => {
            let cfg = config.resolve()?;
            let outcomes = run_relearn(&cfg, &ckpt, tasks, &out)?;
            for (i, o) in outcomes.iter().enumerate() {
                println!(
                    "task={} name={} steps={} converged={}",
                    i + 1,
                    o.name,
                    o.steps,
                    if o.converged { "yes" } else { "no" }
                );
            }
        }
    }
    Ok(())
}
