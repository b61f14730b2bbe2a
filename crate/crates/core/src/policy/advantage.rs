//! Generalized advantage estimation over episode-structured rollouts.

use super::{BaselineNet, Rollout};
use crate::{Error, Result};

/// Per-episode advantages and return targets, normalized batch-wise.
#[derive(Clone, Debug)]
pub struct AdvantageBuffer {
    pub adv: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    /// Pre-normalization batch statistics.
    pub raw_mean: f64,
    pub raw_std: f64,
}

/// Values aligned with each episode: one per transition plus a tail entry —
/// zero on terminal episodes, the baseline's bootstrap on truncated ones.
pub fn episode_values(rollout: &Rollout, baseline: &BaselineNet) -> Result<Vec<Vec<f64>>> {
    rollout
        .episodes
        .iter()
        .map(|ep| {
            let mut vs: Vec<f64> = ep.transitions.iter().map(|t| t.value).collect();
            let last = ep
                .transitions
                .last()
                .ok_or_else(|| Error::InvalidInput("empty episode".into()))?;
            vs.push(if last.done { 0.0 } else { baseline.value(&last.next_nobs)? });
            Ok(vs)
        })
        .collect()
}

pub fn gae_advantages(
    rollout: &Rollout,
    gamma: f64,
    lambda: f64,
    values: &[Vec<f64>],
) -> Result<AdvantageBuffer> {
    if values.len() != rollout.episodes.len() {
        return Err(Error::InvalidInput("values misaligned with episodes".into()));
    }
    let mut adv = Vec::with_capacity(values.len());
    let mut returns = Vec::with_capacity(values.len());
    for (ep, vs) in rollout.episodes.iter().zip(values) {
        let n = ep.transitions.len();
        if vs.len() != n + 1 {
            return Err(Error::InvalidInput("episode values must have length T+1".into()));
        }
        let mut a = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let tr = &ep.transitions[t];
            let not_done = if tr.done { 0.0 } else { 1.0 };
            let delta = tr.reward + gamma * vs[t + 1] * not_done - vs[t];
            acc = delta + gamma * lambda * not_done * acc;
            a[t] = acc;
        }
        let r: Vec<f64> = a.iter().zip(vs).map(|(ai, vi)| ai + vi).collect();
        adv.push(a);
        returns.push(r);
    }
    let flat: Vec<f64> = adv.iter().flatten().copied().collect();
    let n = flat.len() as f64;
    let raw_mean = flat.iter().sum::<f64>() / n;
    let raw_std = (flat.iter().map(|x| (x - raw_mean).powi(2)).sum::<f64>() / n).sqrt();
    if raw_std > 1e-8 {
        for ep in &mut adv {
            for x in ep.iter_mut() {
                *x = (*x - raw_mean) / raw_std;
            }
        }
    }
    Ok(AdvantageBuffer { adv, returns, raw_mean, raw_std })
}
