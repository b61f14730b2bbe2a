//! Gated clipped policy update and value-baseline regression.

use super::{
    AdvantageBuffer, BaselineNet, Rollout, SubpolicySet, Transition, GATE_EPS, LOG_STD_MAX,
    LOG_STD_MIN,
};
use crate::numkit::AdamState;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub entropy_coef: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PpoDiagnostics {
    /// Mean minimized loss (negative gated surrogate) over the last epoch.
    pub loss: f64,
    /// Fraction of gated (transition, component) ratio terms outside the
    /// clip range during the last epoch.
    pub clip_fraction: f64,
}

/// Minimized loss −(1/B)·Σ_t Σ_k gate_k·[min(r_k·Â, clip(r_k)·Â) + c2·H_k]
/// over one minibatch, with gradients accumulated per subpolicy. The gradient
/// layout per component is [mean-net params..., log-std...]. Returns (loss,
/// clipped term count, gated term count).
pub fn ppo_loss(
    subs: &SubpolicySet,
    batch: &[(&Transition, f64)],
    clip_eps: f64,
    entropy_coef: f64,
    grads: &mut [Vec<f64>],
) -> Result<(f64, usize, usize)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty policy batch".into()));
    }
    if grads.len() != subs.k() {
        return Err(Error::DimMismatch("gradient buffers != K".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let act_dim = subs.act_dim();
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut counted = 0usize;
    for (t, adv) in batch {
        for k in 0..subs.k() {
            let gate = t.gate[k];
            if gate < GATE_EPS {
                continue;
            }
            counted += 1;
            let sub = &subs.subs[k];
            let (mean, cache) = sub.mean_net.forward_cached(&t.nobs)?;
            let mut lp = 0.0;
            let mut z = vec![0.0; act_dim];
            let mut var = vec![0.0; act_dim];
            for i in 0..act_dim {
                let ls = sub.log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let std = ls.exp();
                var[i] = std * std;
                z[i] = (t.action[i] - mean[i]) / std;
                lp += -ls - 0.5 * crate::numkit::LN_2PI - 0.5 * z[i] * z[i];
            }
            let ratio = (lp - t.sub_log_probs[k]).exp();
            let unclipped = ratio * adv;
            let clip_r = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            if ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps {
                clipped += 1;
            }
            let surrogate = unclipped.min(clip_r * adv);
            loss -= scale * gate * surrogate;
            // gradient flows through the ratio only on the unclipped branch
            if unclipped <= clip_r * adv {
                let dl_dlp = -scale * gate * ratio * adv;
                let out_grad: Vec<f64> = (0..act_dim)
                    .map(|i| dl_dlp * (t.action[i] - mean[i]) / var[i])
                    .collect();
                let g = &mut grads[k];
                sub.mean_net.backward(&cache, &out_grad, &mut g[..sub.mean_net.param_count()])?;
                let ls_grads = &mut g[sub.mean_net.param_count()..];
                for i in 0..act_dim {
                    if sub.log_std[i] > LOG_STD_MIN && sub.log_std[i] < LOG_STD_MAX {
                        ls_grads[i] += dl_dlp * (z[i] * z[i] - 1.0);
                    }
                }
            }
            if entropy_coef != 0.0 {
                let mut ent = 0.0;
                for i in 0..act_dim {
                    let ls = sub.log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    ent += ls + 0.5 * (crate::numkit::LN_2PI + 1.0);
                }
                loss -= scale * gate * entropy_coef * ent;
                let ls_grads = &mut grads[k][subs.subs[k].mean_net.param_count()..];
                for i in 0..act_dim {
                    if subs.subs[k].log_std[i] > LOG_STD_MIN && subs.subs[k].log_std[i] < LOG_STD_MAX
                    {
                        ls_grads[i] -= scale * gate * entropy_coef;
                    }
                }
            }
        }
    }
    Ok((loss, clipped, counted))
}

fn step_subpolicy(subs: &mut SubpolicySet, k: usize, opt: &mut AdamState, grads: &[f64]) -> Result<()> {
    // a component no gated transition touched stays exactly as it was,
    // including its optimizer moments
    if grads.iter().all(|g| *g == 0.0) {
        return Ok(());
    }
    let nmean = subs.subs[k].mean_net.param_count();
    let mut params: Vec<f64> = subs.subs[k]
        .mean_net
        .params()
        .iter()
        .chain(subs.subs[k].log_std.iter())
        .copied()
        .collect();
    opt.step(&mut params, grads)?;
    subs.subs[k]
        .mean_net
        .params_mut()
        .copy_from_slice(&params[..nmean]);
    subs.subs[k].log_std.copy_from_slice(&params[nmean..]);
    Ok(())
}

/// Minibatched Adam on the gated clipped surrogate. Gate weights are the
/// rollout-time gating probabilities stored in each transition, fixed for the
/// whole update. One Adam state per subpolicy.
pub fn gated_ppo_update(
    subs: &mut SubpolicySet,
    opts: &mut [AdamState],
    rollout: &Rollout,
    advantages: &AdvantageBuffer,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoDiagnostics> {
    if opts.len() != subs.k() {
        return Err(Error::DimMismatch("optimizer count != K".into()));
    }
    let flat: Vec<(&Transition, f64)> = rollout
        .episodes
        .iter()
        .zip(&advantages.adv)
        .flat_map(|(ep, adv)| ep.transitions.iter().zip(adv.iter().copied()))
        .collect();
    if flat.is_empty() {
        return Err(Error::InvalidInput("empty rollout".into()));
    }
    let mut order: Vec<usize> = (0..flat.len()).collect();
    let mut grads: Vec<Vec<f64>> = subs
        .subs
        .iter()
        .map(|s| vec![0.0; s.param_count()])
        .collect();
    let mut diag = PpoDiagnostics::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_clipped = 0usize;
        let mut epoch_counted = 0usize;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let batch: Vec<(&Transition, f64)> = chunk.iter().map(|&i| flat[i]).collect();
            for g in &mut grads {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
            let (loss, clipped, counted) =
                ppo_loss(subs, &batch, cfg.clip_eps, cfg.entropy_coef, &mut grads)?;
            epoch_loss += loss;
            epoch_clipped += clipped;
            epoch_counted += counted;
            n_batches += 1;
            for k in 0..subs.k() {
                step_subpolicy(subs, k, &mut opts[k], &grads[k])?;
            }
        }
        diag.loss = epoch_loss / n_batches.max(1) as f64;
        diag.clip_fraction = epoch_clipped as f64 / epoch_counted.max(1) as f64;
    }
    Ok(diag)
}

/// Mean squared error of the baseline against fixed return targets, with
/// gradients accumulated into `grads`.
pub fn baseline_loss(
    baseline: &BaselineNet,
    batch: &[(&[f64], f64)],
    grads: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty baseline batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (nobs, target) in batch {
        let (out, cache) = baseline.net.forward_cached(nobs)?;
        let err = out[0] - target;
        loss += scale * err * err;
        baseline.net.backward(&cache, &[2.0 * scale * err], grads)?;
    }
    Ok(loss)
}

/// Minibatched Adam regression of the baseline onto return targets.
pub fn baseline_update(
    baseline: &mut BaselineNet,
    opt: &mut AdamState,
    rollout: &Rollout,
    advantages: &AdvantageBuffer,
    epochs: usize,
    minibatch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let flat: Vec<(&[f64], f64)> = rollout
        .episodes
        .iter()
        .zip(&advantages.returns)
        .flat_map(|(ep, rets)| {
            ep.transitions
                .iter()
                .zip(rets.iter().copied())
                .map(|(t, r)| (t.nobs.as_slice(), r))
        })
        .collect();
    if flat.is_empty() {
        return Err(Error::InvalidInput("empty rollout".into()));
    }
    let mut order: Vec<usize> = (0..flat.len()).collect();
    let mut grads = vec![0.0; baseline.net.param_count()];
    let mut last = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(minibatch.max(1)) {
            let batch: Vec<(&[f64], f64)> = chunk.iter().map(|&i| flat[i]).collect();
            grads.iter_mut().for_each(|g| *g = 0.0);
            epoch_loss += baseline_loss(baseline, &batch, &mut grads)?;
            n_batches += 1;
            opt.step(baseline.net.params_mut(), &grads)?;
        }
        last = epoch_loss / n_batches.max(1) as f64;
    }
    Ok(last)
}
