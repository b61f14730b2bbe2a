//! Training orchestration: single-task loops, lifelong task sequences with
//! selective re-initialization at task boundaries, convergence detection by
//! success rate, and checkpoint management.
//!
//! Across a task sequence the subpolicies (and their optimizer moments)
//! persist by default while the gating controller and baseline are freshly
//! initialized per task; flags invert any of those choices for ablations.

use crate::envs::{build_env, TaskSpec, TasksetSpec};
use crate::gating::{gating_update, GatingController, GatingSample, GatingUpdateConfig};
use crate::numkit::{derive_rng, AdamState, Checkpoint, CkptShape, Mlp};
use crate::policy::{
    baseline_update, collect_rollout, episode_values, gae_advantages, gated_ppo_update,
    ActorPool, BaselineNet, GateSource, ObsNormalizer, PpoConfig, SubpolicySet,
};
use crate::primitives::{correct_indices, fit_covariance, EmpiricalCovariance, ModelPrimitive};
use crate::{Error, Result};
use rand::Rng;
use std::path::Path;

/// All tunable training constants in one place.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub actors: usize,
    pub steps_per_actor: usize,
    pub minibatch: usize,
    pub ppo_epochs: usize,
    pub baseline_epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub policy_lr: f64,
    pub baseline_lr: f64,
    pub gating_lr_source: f64,
    pub gating_lr_target: f64,
    pub gating_epochs_source: usize,
    pub gating_epochs_target: usize,
    pub subpolicy_hidden: usize,
    pub gating_hidden: usize,
    pub baseline_hidden: usize,
    /// Posterior-target form for the gating update (coupled = ablation).
    pub coupled_targets: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            actors: 4,
            steps_per_actor: 512,
            minibatch: 64,
            ppo_epochs: 10,
            baseline_epochs: 10,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.0,
            policy_lr: 3e-4,
            baseline_lr: 3e-4,
            gating_lr_source: 1e-3,
            gating_lr_target: 3e-3,
            gating_epochs_source: 1,
            gating_epochs_target: 10,
            subpolicy_hidden: 16,
            gating_hidden: 64,
            baseline_hidden: 64,
            coupled_targets: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GatingMode {
    /// Train the categorical controller.
    Learned,
    /// Ground-truth one-hot gate; gating updates skipped.
    Oracle,
    /// K=1 monolithic policy (the comparison baseline); gate is fixed [1.0].
    Unit,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvergenceRule {
    /// Success rate over the latest batch that counts as learned.
    pub threshold: f64,
    /// Environment-step budget per task.
    pub max_steps: usize,
}

/// Everything that persists while training.
pub struct TrainState {
    pub subs: SubpolicySet,
    pub sub_opts: Vec<AdamState>,
    pub gating: GatingController,
    pub baseline: BaselineNet,
    pub baseline_opt: AdamState,
    pub normalizer: ObsNormalizer,
    pub seed: u64,
    pub cumulative_steps: usize,
}

impl TrainState {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        k: usize,
        hyper: &Hyper,
        normalizer: ObsNormalizer,
        seed: u64,
    ) -> Result<Self> {
        let subs = SubpolicySet::new(obs_dim, act_dim, hyper.subpolicy_hidden, k, seed)?;
        let sub_opts = subs
            .subs
            .iter()
            .map(|s| AdamState::new(s.param_count(), hyper.policy_lr))
            .collect();
        let gating = fresh_gating(obs_dim, k, hyper, seed, 0)?;
        let (baseline, baseline_opt) = fresh_baseline(obs_dim, hyper, seed, 0)?;
        Ok(Self {
            subs,
            sub_opts,
            gating,
            baseline,
            baseline_opt,
            normalizer,
            seed,
            cumulative_steps: 0,
        })
    }

    pub fn reset_gating(&mut self, hyper: &Hyper, task_idx: usize) -> Result<()> {
        self.gating =
            fresh_gating(self.subs.obs_dim(), self.subs.k(), hyper, self.seed, task_idx)?;
        Ok(())
    }

    pub fn reset_baseline(&mut self, hyper: &Hyper, task_idx: usize) -> Result<()> {
        let (b, o) = fresh_baseline(self.subs.obs_dim(), hyper, self.seed, task_idx)?;
        self.baseline = b;
        self.baseline_opt = o;
        Ok(())
    }

    pub fn reset_subpolicies(&mut self, hyper: &Hyper, task_idx: usize) -> Result<()> {
        let seed = crate::numkit::rng_key(self.seed, &format!("reinit-sub/task{task_idx}"));
        self.subs = SubpolicySet::new(
            self.subs.obs_dim(),
            self.subs.act_dim(),
            hyper.subpolicy_hidden,
            self.subs.k(),
            seed,
        )?;
        self.sub_opts = self
            .subs
            .subs
            .iter()
            .map(|s| AdamState::new(s.param_count(), hyper.policy_lr))
            .collect();
        Ok(())
    }
}

fn fresh_gating(
    obs_dim: usize,
    k: usize,
    hyper: &Hyper,
    seed: u64,
    task_idx: usize,
) -> Result<GatingController> {
    let mut rng = derive_rng(seed, &format!("init/gating/task{task_idx}"));
    GatingController::new(obs_dim, hyper.gating_hidden, k, &mut rng)
}

fn fresh_baseline(
    obs_dim: usize,
    hyper: &Hyper,
    seed: u64,
    task_idx: usize,
) -> Result<(BaselineNet, AdamState)> {
    let mut rng = derive_rng(seed, &format!("init/baseline/task{task_idx}"));
    let b = BaselineNet::new(obs_dim, hyper.baseline_hidden, &mut rng)?;
    let opt = AdamState::new(b.net.param_count(), hyper.baseline_lr);
    Ok((b, opt))
}

/// Random-action statistics for one task: an observation normalizer and the
/// diagonal covariance of next observations used by oracle primitives. These
/// probe steps are not charged against any training budget.
pub fn fit_statistics(
    task: &TaskSpec,
    seed: u64,
    n_steps: usize,
) -> Result<(ObsNormalizer, EmpiricalCovariance)> {
    let mut env = build_env(task, 1.0);
    let mut rng = derive_rng(seed, "statfit");
    let act_dim = env.action_dim();
    let mut obs = env.reset(&mut rng);
    let mut all_obs: Vec<Vec<f64>> = vec![obs.clone()];
    let mut next_obs: Vec<Vec<f64>> = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let action: Vec<f64> = (0..act_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r = env.step(&action);
        next_obs.push(r.obs.clone());
        all_obs.push(r.obs.clone());
        obs = if r.done { env.reset(&mut rng) } else { r.obs };
        all_obs.push(obs.clone());
    }
    let normalizer = ObsNormalizer::fit(&all_obs)?;
    let cov = fit_covariance(next_obs.iter().map(|s| s.as_slice()))?;
    Ok((normalizer, cov))
}

/// One training iteration's telemetry.
#[derive(Clone, Debug)]
pub struct IterMetrics {
    pub iteration: usize,
    pub cumulative_steps: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub gating_loss: f64,
    pub gating_accuracy: f64,
    pub gating_entropy: f64,
    pub usage: Vec<f64>,
    /// Seconds since the task started training (telemetry only; excluded
    /// from anything that must be byte-deterministic).
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct TaskResult {
    pub steps: usize,
    pub converged: bool,
    pub iterations: usize,
    pub metrics: Vec<IterMetrics>,
}

/// Trains one task until the rule is met or the budget runs out, iterating
/// collect -> advantages -> policy update -> baseline update -> gating update.
pub fn train_single_task(
    state: &mut TrainState,
    task: &TaskSpec,
    task_idx: usize,
    primitives: &[ModelPrimitive],
    rule: &ConvergenceRule,
    hyper: &Hyper,
    mode: GatingMode,
) -> Result<TaskResult> {
    if mode == GatingMode::Unit && state.subs.k() != 1 {
        return Err(Error::InvalidInput("unit gating requires K=1".into()));
    }
    let mut pool = ActorPool::new(task, hyper.actors, state.seed, task_idx)?;
    let batch = hyper.actors * hyper.steps_per_actor;
    let mut ppo_rng = derive_rng(state.seed, &format!("ppo/task{task_idx}"));
    let mut bl_rng = derive_rng(state.seed, &format!("baseline/task{task_idx}"));
    let mut gate_rng = derive_rng(state.seed, &format!("gating/task{task_idx}"));
    let ppo_cfg = PpoConfig {
        clip_eps: hyper.clip_eps,
        epochs: hyper.ppo_epochs,
        minibatch: hyper.minibatch,
        lr: hyper.policy_lr,
        entropy_coef: hyper.entropy_coef,
    };
    let gating_cfg = GatingUpdateConfig {
        epochs: if task_idx == 0 { hyper.gating_epochs_source } else { hyper.gating_epochs_target },
        minibatch: hyper.minibatch,
        lr: if task_idx == 0 { hyper.gating_lr_source } else { hyper.gating_lr_target },
        coupled: hyper.coupled_targets,
    };
    let mut result = TaskResult { steps: 0, converged: false, iterations: 0, metrics: Vec::new() };
    let started = std::time::Instant::now();
    while result.steps + batch <= rule.max_steps {
        let gate_source = match mode {
            GatingMode::Learned => GateSource::Learned(&state.gating),
            GatingMode::Oracle => GateSource::Oracle,
            GatingMode::Unit => GateSource::Unit,
        };
        let rollout = collect_rollout(
            &mut pool,
            &state.subs,
            &gate_source,
            primitives,
            &state.normalizer,
            &state.baseline,
            hyper.steps_per_actor,
        )?;
        result.steps += rollout.total_steps;
        state.cumulative_steps += rollout.total_steps;
        result.iterations += 1;
        let success_rate = rollout.success_rate();
        let mean_reward = rollout.mean_episode_reward();

        let values = episode_values(&rollout, &state.baseline)?;
        let adv = gae_advantages(&rollout, hyper.gamma, hyper.lambda, &values)?;
        gated_ppo_update(
            &mut state.subs,
            &mut state.sub_opts,
            &rollout,
            &adv,
            &ppo_cfg,
            &mut ppo_rng,
        )?;
        baseline_update(
            &mut state.baseline,
            &mut state.baseline_opt,
            &rollout,
            &adv,
            hyper.baseline_epochs,
            hyper.minibatch,
            &mut bl_rng,
        )?;
        let mut gating_loss = 0.0;
        let mut gating_accuracy = 0.0;
        let mut gating_entropy = 0.0;
        let mut usage = vec![0.0; state.subs.k()];
        if mode == GatingMode::Learned {
            let corrects: Vec<Vec<usize>> = rollout
                .transitions()
                .map(|t| correct_indices(primitives, &t.region))
                .collect();
            let samples: Vec<GatingSample> = rollout
                .transitions()
                .zip(&corrects)
                .map(|(t, c)| GatingSample {
                    obs: &t.nobs,
                    log_likelihoods: &t.log_likelihoods,
                    subpolicy_log_probs: Some(&t.sub_log_probs),
                    correct: c,
                })
                .collect();
            let diag = gating_update(&mut state.gating, &samples, &gating_cfg, &mut gate_rng)?;
            gating_loss = diag.loss;
            gating_accuracy = diag.accuracy;
            gating_entropy = diag.target_entropy;
            usage = diag.usage;
        }
        result.metrics.push(IterMetrics {
            iteration: result.iterations,
            cumulative_steps: state.cumulative_steps,
            mean_reward,
            success_rate,
            gating_loss,
            gating_accuracy,
            gating_entropy,
            usage,
            wall_clock_s: started.elapsed().as_secs_f64(),
        });
        if success_rate >= rule.threshold {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}

/// Post-hoc decomposition quality of the current controller on fresh policy
/// rollouts: (argmax-vs-ground-truth accuracy, mean KL from the controller's
/// distribution to uniform).
pub fn evaluate_gating(
    state: &TrainState,
    task: &TaskSpec,
    task_idx: usize,
    primitives: &[ModelPrimitive],
    n_steps: usize,
) -> Result<(f64, f64)> {
    let mut pool = ActorPool::new(task, 1, rng_key_for_eval(state.seed), task_idx)?;
    let rollout = collect_rollout(
        &mut pool,
        &state.subs,
        &GateSource::Learned(&state.gating),
        primitives,
        &state.normalizer,
        &state.baseline,
        n_steps,
    )?;
    let k = state.subs.k();
    let uniform = 1.0 / k as f64;
    let mut hits = 0usize;
    let mut scorable = 0usize;
    let mut kl = 0.0;
    let mut n = 0usize;
    for t in rollout.transitions() {
        let probs = &t.gate;
        kl += probs
            .iter()
            .map(|p| if *p > 0.0 { p * (p / uniform).ln() } else { 0.0 })
            .sum::<f64>();
        n += 1;
        let correct = correct_indices(primitives, &t.region);
        if correct.is_empty() {
            continue;
        }
        scorable += 1;
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if correct.contains(&argmax) {
            hits += 1;
        }
    }
    let acc = if scorable > 0 { hits as f64 / scorable as f64 } else { 0.0 };
    Ok((acc, kl / n.max(1) as f64))
}

fn rng_key_for_eval(seed: u64) -> u64 {
    crate::numkit::rng_key(seed, "gating-eval")
}

#[derive(Clone, Debug)]
pub struct LifelongOptions {
    pub reset_gating: bool,
    pub reset_baseline: bool,
    pub reset_subpolicies: bool,
    pub mode: GatingMode,
    /// Stop at the first task that fails to converge (later tasks are
    /// reported as skipped with zero steps).
    pub stop_on_failure: bool,
}

impl Default for LifelongOptions {
    fn default() -> Self {
        Self {
            reset_gating: true,
            reset_baseline: true,
            reset_subpolicies: false,
            mode: GatingMode::Learned,
            stop_on_failure: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub name: String,
    pub steps: usize,
    pub converged: bool,
    pub attempted: bool,
    pub metrics: Vec<IterMetrics>,
    pub gating_accuracy: f64,
    pub gating_kl_uniform: f64,
}

/// Runs the taskset in order, applying the configured resets at every task
/// boundary and checkpointing after each task when `out_dir` is given.
#[allow(clippy::too_many_arguments)]
pub fn train_lifelong(
    state: &mut TrainState,
    taskset: &TasksetSpec,
    primitives: &[ModelPrimitive],
    max_steps_per_task: usize,
    hyper: &Hyper,
    opts: &LifelongOptions,
    out_dir: Option<&Path>,
) -> Result<Vec<TaskOutcome>> {
    let mut outcomes = Vec::with_capacity(taskset.tasks.len());
    let mut failed = false;
    for (i, task) in taskset.tasks.iter().enumerate() {
        if failed && opts.stop_on_failure {
            outcomes.push(TaskOutcome {
                name: task.name.clone(),
                steps: 0,
                converged: false,
                attempted: false,
                metrics: Vec::new(),
                gating_accuracy: 0.0,
                gating_kl_uniform: 0.0,
            });
            continue;
        }
        if i > 0 {
            if opts.reset_gating {
                state.reset_gating(hyper, i)?;
            }
            if opts.reset_baseline {
                state.reset_baseline(hyper, i)?;
            }
            if opts.reset_subpolicies {
                state.reset_subpolicies(hyper, i)?;
            }
        }
        let rule = ConvergenceRule { threshold: task.success_threshold, max_steps: max_steps_per_task };
        let res = train_single_task(state, task, i, primitives, &rule, hyper, opts.mode)?;
        let (acc, kl) = if opts.mode == GatingMode::Learned {
            evaluate_gating(state, task, i, primitives, 512)?
        } else {
            (0.0, 0.0)
        };
        if let Some(dir) = out_dir {
            save_task_checkpoints(state, &dir.join(format!("task{i}")), i, res.steps, res.converged)?;
        }
        if !res.converged {
            failed = true;
        }
        outcomes.push(TaskOutcome {
            name: task.name.clone(),
            steps: res.steps,
            converged: res.converged,
            attempted: true,
            metrics: res.metrics,
            gating_accuracy: acc,
            gating_kl_uniform: kl,
        });
    }
    Ok(outcomes)
}

// ---- checkpoints ------------------------------------------------------

pub fn save_subpolicies(
    subs: &SubpolicySet,
    normalizer: &ObsNormalizer,
    path: &Path,
) -> Result<()> {
    let mut ck = Checkpoint::new();
    for (i, s) in subs.subs.iter().enumerate() {
        ck.push_mlp(&format!("sub{i}.mean"), s.mean_net.sizes(), s.mean_net.params().to_vec())?;
        ck.push_vec(&format!("sub{i}.log_std"), s.log_std.clone())?;
    }
    ck.push_vec("obs_mean", normalizer.mean.clone())?;
    ck.push_vec("obs_std", normalizer.std.clone())?;
    ck.save(path)
}

pub fn load_subpolicies(path: &Path) -> Result<(SubpolicySet, ObsNormalizer)> {
    let ck = Checkpoint::load(path)?;
    let mut subs = Vec::new();
    for i in 0.. {
        let Some(mean_entry) = ck.entry(&format!("sub{i}.mean")) else { break };
        let CkptShape::Mlp(sizes) = &mean_entry.shape else {
            return Err(Error::Checkpoint(format!("sub{i}.mean is not an mlp entry")));
        };
        let mean_net = Mlp::from_params(sizes, mean_entry.data.clone())?;
        let log_std = ck.require(&format!("sub{i}.log_std"))?.data.clone();
        if log_std.len() != mean_net.out_dim() {
            return Err(Error::Checkpoint(format!("sub{i}.log_std length mismatch")));
        }
        subs.push(crate::policy::Subpolicy { mean_net, log_std });
    }
    if subs.is_empty() {
        return Err(Error::Checkpoint("no subpolicy entries".into()));
    }
    let normalizer = ObsNormalizer {
        mean: ck.require("obs_mean")?.data.clone(),
        std: ck.require("obs_std")?.data.clone(),
    };
    let obs_dim = subs[0].mean_net.in_dim();
    let act_dim = subs[0].mean_net.out_dim();
    if normalizer.mean.len() != obs_dim {
        return Err(Error::Checkpoint("normalizer dim mismatch".into()));
    }
    Ok((SubpolicySet::from_parts(subs, obs_dim, act_dim)?, normalizer))
}

pub fn save_gating(gating: &GatingController, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.push_mlp("gating", gating.net().sizes(), gating.net().params().to_vec())?;
    ck.save(path)
}

pub fn save_baseline(baseline: &BaselineNet, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.push_mlp("baseline", baseline.net.sizes(), baseline.net.params().to_vec())?;
    ck.save(path)
}

fn save_task_checkpoints(
    state: &TrainState,
    dir: &Path,
    task_idx: usize,
    steps: usize,
    converged: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_subpolicies(&state.subs, &state.normalizer, &dir.join("subpolicies.ckpt"))?;
    save_gating(&state.gating, &dir.join("gating.ckpt"))?;
    save_baseline(&state.baseline, &dir.join("baseline.ckpt"))?;
    let manifest = format!(
        "task={task_idx}\nseed={}\nsteps={steps}\nconverged={converged}\ncumulative_steps={}\n",
        state.seed, state.cumulative_steps
    );
    std::fs::write(dir.join("manifest"), manifest)?;
    Ok(())
}

/// Restores subpolicies from a checkpoint, then retrains each task of the
/// prefix with freshly reset gating controller and baseline.
pub fn relearn_from_checkpoint(
    ckpt: &Path,
    prefix: &TasksetSpec,
    primitives: &[ModelPrimitive],
    max_steps_per_task: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<Vec<TaskOutcome>> {
    let (subs, normalizer) = load_subpolicies(ckpt)?;
    let sub_opts = subs
        .subs
        .iter()
        .map(|s| AdamState::new(s.param_count(), hyper.policy_lr))
        .collect();
    let gating = fresh_gating(subs.obs_dim(), subs.k(), hyper, seed, 0)?;
    let (baseline, baseline_opt) = fresh_baseline(subs.obs_dim(), hyper, seed, 0)?;
    let mut state = TrainState {
        subs,
        sub_opts,
        gating,
        baseline,
        baseline_opt,
        normalizer,
        seed,
        cumulative_steps: 0,
    };
    let mut outcomes = Vec::new();
    for (i, task) in prefix.tasks.iter().enumerate() {
        state.reset_gating(hyper, i)?;
        state.reset_baseline(hyper, i)?;
        // relearned tasks are treated as transfer targets, never as the
        // source task, so use index >= 1 for the gating schedule
        let rule = ConvergenceRule { threshold: task.success_threshold, max_steps: max_steps_per_task };
        let res = train_single_task(&mut state, task, i + 1, primitives, &rule, hyper, GatingMode::Learned)?;
        outcomes.push(TaskOutcome {
            name: task.name.clone(),
            steps: res.steps,
            converged: res.converged,
            attempted: true,
            metrics: res.metrics,
            gating_accuracy: 0.0,
            gating_kl_uniform: 0.0,
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_maze_taskset, MazeGenMode};
    use crate::primitives::build_oracle_set;

    fn small_hyper() -> Hyper {
        Hyper { actors: 2, steps_per_actor: 256, ..Default::default() }
    }

    fn setup(k: usize, seed: u64) -> (TasksetSpec, TrainState, Vec<ModelPrimitive>, Hyper) {
        let taskset = generate_maze_taskset(seed, 2, 2, MazeGenMode::Standard).unwrap();
        let task = &taskset.tasks[0];
        let (norm, cov) = fit_statistics(task, seed, 2_000).unwrap();
        let prims = build_oracle_set("standard-4", 0.4, 0.5, &cov, seed).unwrap();
        let hyper = small_hyper();
        let state =
            TrainState::new(task.obs_dim(), task.action_dim(), k, &hyper, norm, seed).unwrap();
        (taskset, state, prims, hyper)
    }

    #[test]
    fn zero_budget_means_zero_iterations() {
        let (taskset, mut state, prims, hyper) = setup(4, 1);
        let rule = ConvergenceRule { threshold: 0.8, max_steps: 0 };
        let res = train_single_task(
            &mut state,
            &taskset.tasks[0],
            0,
            &prims,
            &rule,
            &hyper,
            GatingMode::Learned,
        )
        .unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.steps, 0);
        assert!(!res.converged);
    }

    #[test]
    fn single_task_training_is_deterministic() {
        let run = || {
            let (taskset, mut state, prims, hyper) = setup(4, 5);
            let rule = ConvergenceRule { threshold: 2.0, max_steps: 2 * 512 };
            let res = train_single_task(
                &mut state,
                &taskset.tasks[0],
                0,
                &prims,
                &rule,
                &hyper,
                GatingMode::Learned,
            )
            .unwrap();
            (
                state.subs.subs[0].mean_net.params().to_vec(),
                state.gating.net().params().to_vec(),
                res.metrics.iter().map(|m| m.mean_reward).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reset_semantics_at_task_boundary() {
        let (taskset, mut state, prims, hyper) = setup(4, 7);
        // budget of one iteration per task; thresholds unreachable
        let opts = LifelongOptions { stop_on_failure: false, ..Default::default() };
        let pre_gating = state.gating.net().params().to_vec();
        let pre_baseline = state.baseline.net.params().to_vec();
        let outcomes = train_lifelong(
            &mut state,
            &taskset,
            &prims,
            2 * 256,
            &hyper,
            &opts,
            None,
        )
        .unwrap();
        assert_eq!(outcomes.len(), 2);
        assert!(outcomes.iter().all(|o| o.attempted && !o.converged));
        // gating/baseline re-initialized for task 1: training moved them,
        // but more importantly they are not continuations of task 0's nets
        assert_ne!(state.gating.net().params(), pre_gating.as_slice());
        assert_ne!(state.baseline.net.params(), pre_baseline.as_slice());
        // step accounting: outcome steps match the iteration batch size
        for o in &outcomes {
            assert_eq!(o.steps, 512);
            assert_eq!(o.metrics.len(), 1);
        }
        assert_eq!(state.cumulative_steps, 1024);
    }

    #[test]
    fn subpolicies_persist_across_boundary_unless_reset() {
        let run = |reset_subs: bool| {
            let (taskset, mut state, prims, hyper) = setup(2, 9);
            let opts = LifelongOptions {
                reset_subpolicies: reset_subs,
                stop_on_failure: false,
                ..Default::default()
            };
            // zero budget: no training happens, so any parameter change
            // across the boundary comes from the reset alone
            let before = state.subs.subs[0].mean_net.params().to_vec();
            train_lifelong(&mut state, &taskset, &prims, 0, &hyper, &opts, None).unwrap();
            (before, state.subs.subs[0].mean_net.params().to_vec())
        };
        let (before, after) = run(false);
        assert_eq!(before, after);
        let (before, after) = run(true);
        assert_ne!(before, after);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let (taskset, mut state, prims, hyper) = setup(4, 11);
        let dir = tempfile::tempdir().unwrap();
        let opts = LifelongOptions { stop_on_failure: false, ..Default::default() };
        train_lifelong(
            &mut state,
            &taskset,
            &prims,
            512,
            &hyper,
            &opts,
            Some(dir.path()),
        )
        .unwrap();
        let p = dir.path().join("task1/subpolicies.ckpt");
        let (subs, norm) = load_subpolicies(&p).unwrap();
        assert_eq!(subs.k(), 4);
        for (a, b) in subs.subs.iter().zip(&state.subs.subs) {
            assert_eq!(a.mean_net.params(), b.mean_net.params());
            assert_eq!(a.log_std, b.log_std);
        }
        assert_eq!(norm, state.normalizer);
        let manifest = std::fs::read_to_string(dir.path().join("task0/manifest")).unwrap();
        assert!(manifest.contains("seed=11"));
        // relearning an empty prefix is a no-op
        let empty = relearn_from_checkpoint(
            &p,
            &TasksetSpec { tasks: Vec::new() },
            &prims,
            512,
            &hyper,
            11,
        )
        .unwrap();
        assert!(empty.is_empty());
        assert!(relearn_from_checkpoint(
            Path::new("/nonexistent/s.ckpt"),
            &taskset,
            &prims,
            512,
            &hyper,
            11
        )
        .is_err());
    }

    #[test]
    fn oracle_mode_trains_only_active_subpolicy() {
        let (taskset, mut state, prims, hyper) = setup(4, 13);
        // restrict to a single-corridor task so only one region ever appears
        let single = generate_maze_taskset(13, 1, 1, MazeGenMode::Standard).unwrap();
        let task = &single.tasks[0];
        let crate::envs::EnvKind::Maze(l) = &task.kind else { panic!() };
        let active_dir = l.corridors()[0].dir;
        let active_idx = prims
            .iter()
            .position(|p| {
                p.predicate() == crate::primitives::RegionPredicate::Dir(active_dir)
            })
            .unwrap();
        let before: Vec<Vec<f64>> = state
            .subs
            .subs
            .iter()
            .map(|s| s.mean_net.params().to_vec())
            .collect();
        let rule = ConvergenceRule { threshold: 2.0, max_steps: 512 };
        train_single_task(&mut state, task, 0, &prims, &rule, &hyper, GatingMode::Oracle)
            .unwrap();
        for (i, s) in state.subs.subs.iter().enumerate() {
            if i == active_idx {
                assert_ne!(s.mean_net.params(), before[i].as_slice());
            } else {
                assert_eq!(s.mean_net.params(), before[i].as_slice());
            }
        }
        drop(taskset);
    }
}
