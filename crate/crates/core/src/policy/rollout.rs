//! Rollout collection with persistent per-actor environments.
//!
//! Each actor owns an environment and an independent RNG stream; episodes
//! that outlive one batch's step quota carry over into the next batch. Every
//! transition records the gate, the per-component action log-probs, the
//! per-primitive transition log-likelihoods, and the baseline value, so all
//! later updates work from the rollout alone.

use super::{sample_action, BaselineNet, ObsNormalizer, SubpolicySet};
use crate::envs::{build_env, Environment, RegionInfo, TaskSpec};
use crate::gating::GatingController;
use crate::numkit::derive_rng;
use crate::primitives::{correct_indices, ModelPrimitive, TransitionCtx};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Where gate probabilities come from during collection.
pub enum GateSource<'a> {
    /// Single-component policy: gate is exactly [1.0].
    Unit,
    Learned(&'a GatingController),
    /// Ground-truth one-hot over the primitives' region predicates; the first
    /// matching primitive wins ties, uniform if nothing matches.
    Oracle,
}

impl GateSource<'_> {
    pub fn gate(
        &self,
        nobs: &[f64],
        region: &RegionInfo,
        primitives: &[ModelPrimitive],
        k: usize,
    ) -> Result<Vec<f64>> {
        match self {
            GateSource::Unit => {
                if k != 1 {
                    return Err(Error::InvalidInput("unit gate requires K=1".into()));
                }
                Ok(vec![1.0])
            }
            GateSource::Learned(c) => {
                if c.k() != k {
                    return Err(Error::DimMismatch("controller K != subpolicy K".into()));
                }
                c.probs(nobs)
            }
            GateSource::Oracle => {
                let hits = correct_indices(primitives, region);
                let mut g = vec![0.0; k];
                match hits.first() {
                    Some(&i) => g[i] = 1.0,
                    None => g.iter_mut().for_each(|v| *v = 1.0 / k as f64),
                }
                Ok(g)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub nobs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub next_nobs: Vec<f64>,
    pub reward: f64,
    /// True only on terminal success; horizon truncation leaves it false so
    /// the advantage computation bootstraps.
    pub done: bool,
    pub gate: Vec<f64>,
    pub chosen: usize,
    pub mix_log_prob: f64,
    pub sub_log_probs: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    pub value: f64,
    pub region: RegionInfo,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// Episode reached a terminal or its horizon within this batch (as
    /// opposed to being cut by the collection quota).
    pub finished: bool,
    pub success: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub episodes: Vec<Episode>,
    pub total_steps: usize,
}

impl Rollout {
    /// Success rate over episodes that actually ended this batch.
    pub fn success_rate(&self) -> f64 {
        let finished: Vec<&Episode> = self.episodes.iter().filter(|e| e.finished).collect();
        if finished.is_empty() {
            return 0.0;
        }
        finished.iter().filter(|e| e.success).count() as f64 / finished.len() as f64
    }

    pub fn mean_episode_reward(&self) -> f64 {
        let finished: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.finished)
            .map(|e| e.transitions.iter().map(|t| t.reward).sum())
            .collect();
        if finished.is_empty() {
            return self
                .episodes
                .iter()
                .map(|e| e.transitions.iter().map(|t| t.reward).sum::<f64>())
                .sum::<f64>()
                / self.episodes.len().max(1) as f64;
        }
        finished.iter().sum::<f64>() / finished.len() as f64
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}

struct Actor {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    episode_uid: u64,
    step_in_ep: u64,
    needs_reset: bool,
}

/// Persistent collection state for one task: environments, actor RNG
/// streams, and episode counters survive across batches.
pub struct ActorPool {
    actors: Vec<Actor>,
}

impl ActorPool {
    pub fn new(task: &TaskSpec, n_actors: usize, seed: u64, task_idx: usize) -> Result<Self> {
        if n_actors == 0 {
            return Err(Error::InvalidInput("need at least one actor".into()));
        }
        let actors = (0..n_actors)
            .map(|i| {
                let env = build_env(task, 1.0);
                let rng = derive_rng(seed, &format!("rollout/task{task_idx}/actor{i}"));
                // unique episode ids keep primitive noise streams disjoint
                // across tasks and actors
                let episode_uid = ((task_idx as u64) << 48) | ((i as u64) << 32);
                Ok(Actor { env, rng, obs: Vec::new(), episode_uid, step_in_ep: 0, needs_reset: true })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { actors })
    }

    pub fn n_actors(&self) -> usize {
        self.actors.len()
    }
}

/// Steps every actor for exactly `steps_per_actor` environment steps.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    pool: &mut ActorPool,
    subs: &SubpolicySet,
    gate_source: &GateSource,
    primitives: &[ModelPrimitive],
    normalizer: &ObsNormalizer,
    baseline: &BaselineNet,
    steps_per_actor: usize,
) -> Result<Rollout> {
    let k = subs.k();
    let mut rollout = Rollout::default();
    for actor in &mut pool.actors {
        let mut current: Vec<Transition> = Vec::new();
        for _ in 0..steps_per_actor {
            if actor.needs_reset {
                actor.obs = actor.env.reset(&mut actor.rng);
                actor.episode_uid += 1;
                actor.step_in_ep = 0;
                actor.needs_reset = false;
            }
            let obs = actor.obs.clone();
            let nobs = normalizer.normalize(&obs);
            let region = actor.env.region();
            let gate = gate_source.gate(&nobs, &region, primitives, k)?;
            let (action, chosen, mix_lp, sub_lps) =
                sample_action(subs, &gate, &nobs, &mut actor.rng)?;
            let value = baseline.value(&nobs)?;
            let r = actor.env.step(&action);
            let ctx = TransitionCtx {
                episode: actor.episode_uid,
                step: actor.step_in_ep,
                region: &r.region,
                true_next: &r.obs,
            };
            let log_likelihoods: Vec<f64> = primitives
                .iter()
                .map(|p| p.log_likelihood(&obs, &action, &r.obs, &ctx))
                .collect::<Result<_>>()?;
            current.push(Transition {
                obs,
                nobs,
                action,
                next_obs: r.obs.clone(),
                next_nobs: normalizer.normalize(&r.obs),
                reward: r.reward,
                done: r.success,
                gate,
                chosen,
                mix_log_prob: mix_lp,
                sub_log_probs: sub_lps,
                log_likelihoods,
                value,
                region: r.region,
            });
            actor.obs = r.obs;
            actor.step_in_ep += 1;
            rollout.total_steps += 1;
            if r.done {
                rollout.episodes.push(Episode {
                    transitions: std::mem::take(&mut current),
                    finished: true,
                    success: r.success,
                });
                actor.needs_reset = true;
            }
        }
        if !current.is_empty() {
            rollout.episodes.push(Episode { transitions: current, finished: false, success: false });
        }
    }
    Ok(rollout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_maze_taskset, MazeGenMode};
    use crate::policy::mixture_density;
    use crate::primitives::{build_oracle_set, EmpiricalCovariance};

    fn maze_task() -> TaskSpec {
        generate_maze_taskset(2, 1, 2, MazeGenMode::Standard)
            .unwrap()
            .tasks
            .remove(0)
    }

    fn fixture(k: usize) -> (TaskSpec, SubpolicySet, BaselineNet, Vec<ModelPrimitive>) {
        let task = maze_task();
        let subs = SubpolicySet::new(task.obs_dim(), task.action_dim(), 16, k, 3).unwrap();
        let mut brng = derive_rng(3, "init/baseline");
        let baseline = BaselineNet::new(task.obs_dim(), 64, &mut brng).unwrap();
        let cov = EmpiricalCovariance { var: vec![1.0; task.obs_dim()], count: 10 };
        let prims = build_oracle_set("standard-4", 0.4, 0.5, &cov, 3).unwrap();
        (task, subs, baseline, prims)
    }

    #[test]
    fn quota_is_exact_and_carryover_works() {
        let (task, subs, baseline, prims) = fixture(4);
        let norm = ObsNormalizer::identity(task.obs_dim());
        let mut pool = ActorPool::new(&task, 2, 7, 0).unwrap();
        let controller_rng = &mut derive_rng(7, "init/gating");
        let gc = GatingController::new(task.obs_dim(), 64, 4, controller_rng).unwrap();
        let r1 = collect_rollout(
            &mut pool,
            &subs,
            &GateSource::Learned(&gc),
            &prims,
            &norm,
            &baseline,
            50,
        )
        .unwrap();
        assert_eq!(r1.total_steps, 100);
        let steps: usize = r1.episodes.iter().map(|e| e.transitions.len()).sum();
        assert_eq!(steps, 100);
        // horizon is 120, quota 50: per-actor partial episodes must carry
        assert!(r1.episodes.iter().any(|e| !e.finished));
        let r2 = collect_rollout(
            &mut pool,
            &subs,
            &GateSource::Learned(&gc),
            &prims,
            &norm,
            &baseline,
            100,
        )
        .unwrap();
        assert_eq!(r2.total_steps, 200);
    }

    #[test]
    fn stored_log_probs_are_recomputable() {
        let (task, subs, baseline, prims) = fixture(4);
        let norm = ObsNormalizer::identity(task.obs_dim());
        let mut pool = ActorPool::new(&task, 1, 9, 0).unwrap();
        let gc = GatingController::new(task.obs_dim(), 64, 4, &mut derive_rng(9, "init/gating"))
            .unwrap();
        let r = collect_rollout(
            &mut pool,
            &subs,
            &GateSource::Learned(&gc),
            &prims,
            &norm,
            &baseline,
            80,
        )
        .unwrap();
        for t in r.transitions() {
            let (mix, lps) = mixture_density(&subs, &t.gate, &t.nobs, &t.action).unwrap();
            assert!((mix - t.mix_log_prob).abs() < 1e-9);
            for (a, b) in lps.iter().zip(&t.sub_log_probs) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((t.gate.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(t.log_likelihoods.len(), 4);
            assert!((baseline.value(&t.nobs).unwrap() - t.value).abs() < 1e-12);
        }
    }

    #[test]
    fn collection_is_deterministic_and_actor_streams_independent() {
        let (task, subs, baseline, prims) = fixture(1);
        let norm = ObsNormalizer::identity(task.obs_dim());
        let collect = |n_actors: usize| {
            let mut pool = ActorPool::new(&task, n_actors, 11, 0).unwrap();
            collect_rollout(
                &mut pool,
                &subs,
                &GateSource::Unit,
                &prims,
                &norm,
                &baseline,
                40,
            )
            .unwrap()
        };
        let a = collect(2);
        let b = collect(2);
        assert_eq!(a.episodes.len(), b.episodes.len());
        for (ea, eb) in a.episodes.iter().zip(&b.episodes) {
            for (ta, tb) in ea.transitions.iter().zip(&eb.transitions) {
                assert_eq!(ta.action, tb.action);
                assert_eq!(ta.obs, tb.obs);
            }
        }
        // actor 0's trajectory does not depend on actor 1 existing
        let solo = collect(1);
        let first_ep_multi = &a.episodes[0];
        let first_ep_solo = &solo.episodes[0];
        assert_eq!(
            first_ep_solo.transitions[0].action,
            first_ep_multi.transitions[0].action
        );
    }

    #[test]
    fn oracle_gate_is_one_hot_on_matching_primitive() {
        let (task, subs, baseline, prims) = fixture(4);
        let norm = ObsNormalizer::identity(task.obs_dim());
        let mut pool = ActorPool::new(&task, 1, 13, 0).unwrap();
        let r = collect_rollout(
            &mut pool,
            &subs,
            &GateSource::Oracle,
            &prims,
            &norm,
            &baseline,
            60,
        )
        .unwrap();
        for t in r.transitions() {
            let hits = correct_indices(&prims, &t.region);
            assert!(!hits.is_empty());
            assert_eq!(t.gate[hits[0]], 1.0);
            assert_eq!(t.gate.iter().sum::<f64>(), 1.0);
        }
    }
}
