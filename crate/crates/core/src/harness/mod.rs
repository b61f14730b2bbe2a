//! Experiment harness: declarative run configuration (TOML), named presets,
//! command-line overrides, metrics/summary emission, SVG learning-curve
//! plots, and batched ablation runs.

pub mod ablate;
pub mod plot;
pub mod run;

pub use ablate::{ablation_matrix, AblationCell, AblationSummary};
pub use plot::emit_plots;
pub use run::{run_experiment, run_relearn, RunOutput, METRICS_HEADER};

use crate::envs::{generate_chain_taskset, generate_maze_taskset, MazeGenMode, TasksetSpec};
use crate::lifelong::Hyper;
use crate::primitives::{
    build_oracle_set, load_learned_primitive, EmpiricalCovariance, ModelPrimitive,
    RegionPredicate,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which policy architecture a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Gated mixture over K subpolicies with a learned controller.
    Gated,
    /// Monolithic single policy (K=1, gate fixed at 1), re-initialized fresh
    /// at every task boundary. The transfer-free comparison point.
    Baseline,
    /// Gated mixture with the ground-truth one-hot controller.
    OracleGating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksetConfig {
    /// "maze-generated", "chain-generated", or "explicit".
    pub kind: String,
    pub n_tasks: usize,
    /// Corridors per maze (maze-generated only).
    pub corridors: usize,
    /// "standard" or "partial-source" (maze-generated only).
    pub gen_mode: String,
    /// Seed for taskset sampling; defaults to the run seed when absent so a
    /// fixed task sequence can be shared across seeds.
    pub taskset_seed: Option<u64>,
    /// Inline task listing, one task per line (kind = "explicit").
    pub explicit: String,
}

impl Default for TasksetConfig {
    fn default() -> Self {
        Self {
            kind: "maze-generated".into(),
            n_tasks: 5,
            corridors: 4,
            gen_mode: "standard".into(),
            taskset_seed: Some(0),
            explicit: String::new(),
        }
    }
}

/// A single additional primitive outside the preset (custom oracle or a
/// pre-trained learned model loaded from a checkpoint).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimitiveEntry {
    pub label: String,
    /// Region predicate name, e.g. "dir:E", "axis:h", "box1:grasp", "never".
    pub predicate: String,
    /// Path to a learned-primitive checkpoint; when absent the entry is a
    /// noisy oracle using the run's noise scales.
    pub ckpt: Option<String>,
}

impl Default for PrimitiveEntry {
    fn default() -> Self {
        Self { label: String::new(), predicate: "never".into(), ckpt: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimitivesConfig {
    /// Named oracle set ("standard-4", "extra-5", "hv-2", "velocity-2",
    /// "corner-overlap", "stage-12", "box-only-2", "action-only-6"), or ""
    /// to use only the custom entries.
    pub preset: String,
    /// In-region noise scale for oracle primitives.
    pub sigma_in: f64,
    /// Out-of-region noise scale for oracle primitives.
    pub sigma_out: f64,
    pub custom: Vec<PrimitiveEntry>,
}

impl Default for PrimitivesConfig {
    fn default() -> Self {
        Self { preset: "standard-4".into(), sigma_in: 0.0, sigma_out: 0.5, custom: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// Environment-step cap per task.
    pub max_steps_per_task: usize,
    /// Random-action probe steps used to fit observation statistics and the
    /// oracle covariance (not charged to the task budget).
    pub stat_steps: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { max_steps_per_task: 2_000_000, stat_steps: 10_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Couple the gating targets to subpolicy action log-probs.
    pub coupled: bool,
    pub reset_gating: bool,
    pub reset_baseline: bool,
    /// Also re-initialize subpolicies at task boundaries (destroys transfer).
    pub reset_subpolicies: bool,
    /// Skip remaining tasks once one fails to converge.
    pub stop_on_failure: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            coupled: false,
            reset_gating: true,
            reset_baseline: true,
            reset_subpolicies: false,
            stop_on_failure: true,
        }
    }
}

/// Full description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub method: Method,
    pub taskset: TasksetConfig,
    pub primitives: PrimitivesConfig,
    pub budget: BudgetConfig,
    pub ablation: AblationFlags,
    pub hyper: Hyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            seed: 0,
            method: Method::Gated,
            taskset: TasksetConfig::default(),
            primitives: PrimitivesConfig::default(),
            budget: BudgetConfig::default(),
            ablation: AblationFlags::default(),
            hyper: Hyper::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self.taskset.kind.as_str() {
            "maze-generated" => {
                if self.taskset.n_tasks == 0 || self.taskset.corridors == 0 {
                    return Err(Error::Config(
                        "taskset.n_tasks and taskset.corridors must be >= 1".into(),
                    ));
                }
                if !matches!(self.taskset.gen_mode.as_str(), "standard" | "partial-source") {
                    return Err(Error::Config(format!(
                        "unknown taskset.gen_mode {:?} (want standard or partial-source)",
                        self.taskset.gen_mode
                    )));
                }
            }
            "chain-generated" => {
                if self.taskset.n_tasks == 0 {
                    return Err(Error::Config("taskset.n_tasks must be >= 1".into()));
                }
            }
            "explicit" => {
                if self.taskset.explicit.trim().is_empty() {
                    return Err(Error::Config(
                        "taskset.kind = explicit requires taskset.explicit".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown taskset.kind {other:?} (want maze-generated, chain-generated, or explicit)"
                )))
            }
        }
        if self.primitives.sigma_in < 0.0 || self.primitives.sigma_out < 0.0 {
            return Err(Error::Config("primitive noise scales must be >= 0".into()));
        }
        if !self.primitives.preset.is_empty() {
            crate::primitives::preset_predicates(&self.primitives.preset)?;
        } else if self.primitives.custom.is_empty() && self.method != Method::Baseline {
            return Err(Error::Config("no primitives configured".into()));
        }
        for entry in &self.primitives.custom {
            if entry.label.is_empty() {
                return Err(Error::Config("custom primitive missing label".into()));
            }
            RegionPredicate::parse(&entry.predicate)?;
        }
        if self.budget.stat_steps < 2 {
            return Err(Error::Config("budget.stat_steps must be >= 2".into()));
        }
        let h = &self.hyper;
        if h.actors == 0 || h.steps_per_actor == 0 || h.minibatch == 0 {
            return Err(Error::Config("actors, steps_per_actor, minibatch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&h.gamma) && h.gamma != 1.0 {
            return Err(Error::Config("gamma must be in [0, 1]".into()));
        }
        if h.clip_eps <= 0.0 {
            return Err(Error::Config("clip_eps must be > 0".into()));
        }
        Ok(())
    }

    fn primitive_count(&self) -> usize {
        let preset_n = if self.primitives.preset.is_empty() {
            0
        } else {
            crate::primitives::preset_predicates(&self.primitives.preset)
                .map(|v| v.len())
                .unwrap_or(0)
        };
        preset_n + self.primitives.custom.len()
    }

    /// Number of subpolicies the run will train.
    pub fn k(&self) -> usize {
        match self.method {
            Method::Baseline => 1,
            _ => self.primitive_count(),
        }
    }

    /// Materializes the task sequence.
    pub fn build_taskset(&self) -> Result<TasksetSpec> {
        let seed = self.taskset.taskset_seed.unwrap_or(self.seed);
        match self.taskset.kind.as_str() {
            "maze-generated" => {
                let mode = if self.taskset.gen_mode == "partial-source" {
                    MazeGenMode::PartialSource
                } else {
                    MazeGenMode::Standard
                };
                generate_maze_taskset(seed, self.taskset.n_tasks, self.taskset.corridors, mode)
            }
            "chain-generated" => generate_chain_taskset(seed, self.taskset.n_tasks),
            "explicit" => TasksetSpec::decode(&self.taskset.explicit),
            other => Err(Error::Config(format!("unknown taskset.kind {other:?}"))),
        }
    }

    /// Materializes the primitive set given the fitted covariance.
    pub fn build_primitives(&self, cov: &EmpiricalCovariance) -> Result<Vec<ModelPrimitive>> {
        let mut prims = if self.primitives.preset.is_empty() {
            Vec::new()
        } else {
            build_oracle_set(
                &self.primitives.preset,
                self.primitives.sigma_in,
                self.primitives.sigma_out,
                cov,
                self.seed,
            )?
        };
        for entry in &self.primitives.custom {
            let pred = RegionPredicate::parse(&entry.predicate)?;
            let p = match &entry.ckpt {
                Some(path) => ModelPrimitive::Learned(load_learned_primitive(
                    &entry.label,
                    pred,
                    std::path::Path::new(path),
                )?),
                None => ModelPrimitive::Oracle(crate::primitives::NoisyOraclePrimitive::new(
                    &entry.label,
                    pred,
                    self.primitives.sigma_in,
                    self.primitives.sigma_out,
                    cov.clone(),
                    self.seed,
                )?),
            };
            prims.push(p);
        }
        Ok(prims)
    }

    /// Applies one `key=value` command-line override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for override {key:?}")))
        }
        let h = &mut self.hyper;
        match key {
            "name" => self.name = value.to_string(),
            "seed" => self.seed = p(key, value)?,
            "method" => {
                self.method = match value {
                    "gated" => Method::Gated,
                    "baseline" => Method::Baseline,
                    "oracle-gating" => Method::OracleGating,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad method {value:?} (want gated, baseline, or oracle-gating)"
                        )))
                    }
                }
            }
            "taskset.kind" => self.taskset.kind = value.to_string(),
            "taskset.n_tasks" => self.taskset.n_tasks = p(key, value)?,
            "taskset.corridors" => self.taskset.corridors = p(key, value)?,
            "taskset.gen_mode" => self.taskset.gen_mode = value.to_string(),
            "taskset.taskset_seed" => self.taskset.taskset_seed = Some(p(key, value)?),
            "primitives.preset" => self.primitives.preset = value.to_string(),
            "primitives.sigma_in" => self.primitives.sigma_in = p(key, value)?,
            "primitives.sigma_out" => self.primitives.sigma_out = p(key, value)?,
            "budget.max_steps_per_task" => self.budget.max_steps_per_task = p(key, value)?,
            "budget.stat_steps" => self.budget.stat_steps = p(key, value)?,
            "ablation.coupled" => self.ablation.coupled = p(key, value)?,
            "ablation.reset_gating" => self.ablation.reset_gating = p(key, value)?,
            "ablation.reset_baseline" => self.ablation.reset_baseline = p(key, value)?,
            "ablation.reset_subpolicies" => self.ablation.reset_subpolicies = p(key, value)?,
            "ablation.stop_on_failure" => self.ablation.stop_on_failure = p(key, value)?,
            "hyper.actors" => h.actors = p(key, value)?,
            "hyper.steps_per_actor" => h.steps_per_actor = p(key, value)?,
            "hyper.minibatch" => h.minibatch = p(key, value)?,
            "hyper.ppo_epochs" => h.ppo_epochs = p(key, value)?,
            "hyper.baseline_epochs" => h.baseline_epochs = p(key, value)?,
            "hyper.gamma" => h.gamma = p(key, value)?,
            "hyper.lambda" => h.lambda = p(key, value)?,
            "hyper.clip_eps" => h.clip_eps = p(key, value)?,
            "hyper.entropy_coef" => h.entropy_coef = p(key, value)?,
            "hyper.policy_lr" => h.policy_lr = p(key, value)?,
            "hyper.baseline_lr" => h.baseline_lr = p(key, value)?,
            "hyper.gating_lr_source" => h.gating_lr_source = p(key, value)?,
            "hyper.gating_lr_target" => h.gating_lr_target = p(key, value)?,
            "hyper.gating_epochs_source" => h.gating_epochs_source = p(key, value)?,
            "hyper.gating_epochs_target" => h.gating_epochs_target = p(key, value)?,
            "hyper.subpolicy_hidden" => h.subpolicy_hidden = p(key, value)?,
            "hyper.gating_hidden" => h.gating_hidden = p(key, value)?,
            "hyper.baseline_hidden" => h.baseline_hidden = p(key, value)?,
            other => return Err(Error::Config(format!("unknown override key {other:?}"))),
        }
        Ok(())
    }
}

/// Names of all built-in presets.
pub fn preset_names() -> Vec<&'static str> {
    vec![
        "maze-lifelong-5",
        "maze-baseline-5",
        "maze-oracle-5",
        "maze-reset-subpolicies-5",
        "maze-coupled-5",
        "maze-keep-gating-5",
        "maze-partial-source-5",
        "maze-corner-overlap-5",
        "maze-extra-5",
        "maze-hv-2",
        "maze-velocity-2",
        "maze-decomp-4",
        "noise-a",
        "noise-b",
        "noise-c",
        "noise-d",
        "noise-e",
        "chain-lifelong-3",
        "chain-box-only-2",
        "chain-action-only-6",
    ]
}

/// Resolves a named preset to a full configuration.
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig { name: name.to_string(), ..Default::default() };
    let maze_single_4 = |cfg: &mut ExperimentConfig| {
        cfg.taskset.n_tasks = 1;
        cfg.taskset.corridors = 4;
    };
    match name {
        "maze-lifelong-5" => {}
        "maze-baseline-5" => {
            cfg.method = Method::Baseline;
            cfg.hyper.subpolicy_hidden = 64;
        }
        "maze-oracle-5" => cfg.method = Method::OracleGating,
        "maze-reset-subpolicies-5" => cfg.ablation.reset_subpolicies = true,
        "maze-coupled-5" => {
            cfg.ablation.coupled = true;
            cfg.hyper.coupled_targets = true;
        }
        "maze-keep-gating-5" => cfg.ablation.reset_gating = false,
        "maze-partial-source-5" => cfg.taskset.gen_mode = "partial-source".into(),
        "maze-corner-overlap-5" => cfg.primitives.preset = "corner-overlap".into(),
        "maze-extra-5" => cfg.primitives.preset = "extra-5".into(),
        "maze-hv-2" => cfg.primitives.preset = "hv-2".into(),
        "maze-velocity-2" => cfg.primitives.preset = "velocity-2".into(),
        "maze-decomp-4" => maze_single_4(&mut cfg),
        "noise-a" => {
            maze_single_4(&mut cfg);
            cfg.primitives.sigma_in = 0.4;
            cfg.primitives.sigma_out = 0.5;
        }
        "noise-b" => {
            maze_single_4(&mut cfg);
            cfg.primitives.sigma_in = 0.5;
            cfg.primitives.sigma_out = 1.0;
        }
        "noise-c" => {
            maze_single_4(&mut cfg);
            cfg.primitives.sigma_in = 5.0;
            cfg.primitives.sigma_out = 10.0;
        }
        "noise-d" => {
            maze_single_4(&mut cfg);
            cfg.primitives.sigma_in = 9.0;
            cfg.primitives.sigma_out = 10.0;
        }
        "noise-e" => {
            maze_single_4(&mut cfg);
            cfg.primitives.sigma_in = 0.5;
            cfg.primitives.sigma_out = 0.5;
        }
        "chain-lifelong-3" => {
            cfg.taskset.kind = "chain-generated".into();
            cfg.taskset.n_tasks = 3;
            cfg.primitives.preset = "stage-12".into();
        }
        "chain-box-only-2" => {
            cfg.taskset.kind = "chain-generated".into();
            cfg.taskset.n_tasks = 3;
            cfg.primitives.preset = "box-only-2".into();
        }
        "chain-action-only-6" => {
            cfg.taskset.kind = "chain-generated".into();
            cfg.taskset.n_tasks = 3;
            cfg.primitives.preset = "action-only-6".into();
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                preset_names().join(", ")
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
