//! Subpolicies, the gated mixture policy, rollouts, advantages, and updates.
//!
//! K diagonal-Gaussian subpolicies are composed by gating probabilities into
//! a mixture. Sampling is exact (component then action); the clipped policy
//! update treats each subpolicy's importance ratio separately, weighted by
//! the rollout-time gate probability of that component.

mod advantage;
mod rollout;
mod update;

pub use advantage::{episode_values, gae_advantages, AdvantageBuffer};
pub use rollout::{collect_rollout, ActorPool, Episode, GateSource, Rollout, Transition};
pub use update::{
    baseline_loss, baseline_update, gated_ppo_update, ppo_loss, PpoConfig, PpoDiagnostics,
};

use crate::numkit::{derive_rng, log_sum_exp, sample_index, DiagGaussian, Mlp};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -0.5;
/// Normalized observations are clamped to this many units.
pub const NORM_CLIP: f64 = 10.0;
/// Gate probabilities below this are treated as exactly zero in updates.
pub const GATE_EPS: f64 = 1e-12;

/// Fixed affine observation normalizer, fit once on a random-action corpus
/// and reused for every network input afterward. Raw observations are what
/// environments and primitives see; networks only ever see normalized ones.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("normalizer fit needs >=2 samples".into()));
        }
        let dim = samples[0].len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            if s.len() != dim {
                return Err(Error::DimMismatch("normalizer sample dims".into()));
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for i in 0..dim {
                var[i] += (s[i] - mean[i]).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(1e-3)).collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| ((x - m) / s).clamp(-NORM_CLIP, NORM_CLIP))
            .collect()
    }
}

/// One Gaussian subpolicy: an MLP action mean plus a free log-std vector.
#[derive(Clone, Debug)]
pub struct Subpolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

impl Subpolicy {
    pub fn dist(&self, nobs: &[f64]) -> Result<DiagGaussian> {
        let mean = self.mean_net.forward(nobs)?;
        let log_std = self
            .log_std
            .iter()
            .map(|ls| ls.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        DiagGaussian::new(mean, log_std)
    }

    pub fn log_prob(&self, nobs: &[f64], action: &[f64]) -> Result<f64> {
        self.dist(nobs)?.log_prob(action)
    }

    pub fn param_count(&self) -> usize {
        self.mean_net.param_count() + self.log_std.len()
    }
}

#[derive(Clone, Debug)]
pub struct SubpolicySet {
    pub subs: Vec<Subpolicy>,
    obs_dim: usize,
    act_dim: usize,
}

impl SubpolicySet {
    /// K subpolicies with per-component init streams derived from the seed,
    /// so adding components never perturbs existing ones.
    pub fn new(obs_dim: usize, act_dim: usize, hidden: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("need at least one subpolicy".into()));
        }
        let subs = (0..k)
            .map(|i| {
                let mut rng = derive_rng(seed, &format!("init/subpolicy{i}"));
                let mean_net = Mlp::new(&[obs_dim, hidden, hidden, act_dim], 0.01, &mut rng)?;
                Ok(Subpolicy { mean_net, log_std: vec![LOG_STD_INIT; act_dim] })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { subs, obs_dim, act_dim })
    }

    /// Assembles a set from already-built components (checkpoint restore).
    pub fn from_parts(subs: Vec<Subpolicy>, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if subs.is_empty() {
            return Err(Error::InvalidInput("need at least one subpolicy".into()));
        }
        for s in &subs {
            if s.mean_net.in_dim() != obs_dim || s.mean_net.out_dim() != act_dim {
                return Err(Error::DimMismatch("subpolicy dims disagree".into()));
            }
        }
        Ok(Self { subs, obs_dim, act_dim })
    }

    pub fn k(&self) -> usize {
        self.subs.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }
}

/// Scalar state-value network.
#[derive(Clone, Debug)]
pub struct BaselineNet {
    pub net: Mlp,
}

impl BaselineNet {
    pub fn new(obs_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self { net: Mlp::new(&[obs_dim, hidden, hidden, 1], 1.0, rng)? })
    }

    pub fn value(&self, nobs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(nobs)?[0])
    }
}

/// Mixture log-density of an action plus every component's own log-density.
/// Components with zero gate contribute nothing to the mixture but their
/// log-probs are still reported.
pub fn mixture_density(
    subs: &SubpolicySet,
    gate: &[f64],
    nobs: &[f64],
    action: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if gate.len() != subs.k() {
        return Err(Error::DimMismatch("gate length != K".into()));
    }
    let sub_lps: Vec<f64> = subs
        .subs
        .iter()
        .map(|s| s.log_prob(nobs, action))
        .collect::<Result<_>>()?;
    let terms: Vec<f64> = gate
        .iter()
        .zip(&sub_lps)
        .map(|(g, lp)| if *g > 0.0 { g.ln() + lp } else { f64::NEG_INFINITY })
        .collect();
    let mix = log_sum_exp(&terms);
    if !mix.is_finite() {
        return Err(Error::Numeric("degenerate mixture log-prob".into()));
    }
    Ok((mix, sub_lps))
}

/// Exact mixture sampling: draw the component from the gate, then the action
/// from that component. Returns (action, component, mixture log-prob,
/// per-component log-probs).
pub fn sample_action(
    subs: &SubpolicySet,
    gate: &[f64],
    nobs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, usize, f64, Vec<f64>)> {
    let k = sample_index(gate, rng);
    let action = subs.subs[k].dist(nobs)?.sample(rng);
    let (mix, sub_lps) = mixture_density(subs, gate, nobs, &action)?;
    Ok((action, k, mix, sub_lps))
}
