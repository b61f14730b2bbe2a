//! Gating controller: a categorical network over model primitives.
//!
//! Targets come from a per-transition posterior combining the controller's
//! own prior with primitive transition log-likelihoods (decoupled form by
//! default; the coupled form that also folds in subpolicy action log-probs
//! exists only as an ablation). The network is trained by conditional cross
//! entropy against targets that are frozen for the duration of one update.

use crate::numkit::{log_sum_exp, softmax, AdamState, Mlp};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct GatingController {
    net: Mlp,
}

impl GatingController {
    /// Fresh controller: obs -> hidden -> hidden -> K logits.
    pub fn new(obs_dim: usize, hidden: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("need at least one primitive".into()));
        }
        let net = Mlp::new(&[obs_dim, hidden, hidden, k], 0.01, rng)?;
        Ok(Self { net })
    }

    pub fn from_net(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn k(&self) -> usize {
        self.net.out_dim()
    }

    pub fn logits(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }

    /// P(primitive | obs). With K=1 this is exactly [1.0].
    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(obs)?))
    }
}

/// Posterior target over primitives for one transition.
///
/// Decoupled (default): target_k proportional to prior_k * exp(ll_k).
/// Coupled (ablation): additionally multiplied by exp(subpolicy log-prob of
/// the taken action under component k).
pub fn posterior_target(
    prior: &[f64],
    log_likelihoods: &[f64],
    coupled: bool,
    subpolicy_log_probs: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let k = prior.len();
    if log_likelihoods.len() != k {
        return Err(Error::DimMismatch("prior/likelihood length".into()));
    }
    if prior.iter().any(|p| !(*p >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput("prior is not a distribution".into()));
    }
    if log_likelihoods.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite log-likelihood".into()));
    }
    let slp = if coupled {
        let slp = subpolicy_log_probs
            .ok_or_else(|| Error::InvalidInput("coupled target needs subpolicy log-probs".into()))?;
        if slp.len() != k {
            return Err(Error::DimMismatch("subpolicy log-prob length".into()));
        }
        Some(slp)
    } else {
        None
    };
    let logt: Vec<f64> = (0..k)
        .map(|i| {
            let base = if prior[i] > 0.0 { prior[i].ln() } else { f64::NEG_INFINITY };
            base + log_likelihoods[i] + slp.map_or(0.0, |s| s[i])
        })
        .collect();
    let z = log_sum_exp(&logt);
    if !z.is_finite() {
        return Err(Error::Numeric("degenerate posterior normalizer".into()));
    }
    Ok(logt.iter().map(|l| (l - z).exp()).collect())
}

/// Mean conditional cross entropy of the controller against fixed targets,
/// with gradients accumulated into `grads` (flat, matching the network).
pub fn gating_loss(
    controller: &GatingController,
    batch: &[(&[f64], &[f64])],
    grads: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty gating batch".into()));
    }
    let k = controller.k();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (obs, target) in batch {
        if target.len() != k {
            return Err(Error::DimMismatch("gating target length".into()));
        }
        let (logits, cache) = controller.net.forward_cached(obs)?;
        let log_probs: Vec<f64> = {
            let z = log_sum_exp(&logits);
            logits.iter().map(|l| l - z).collect()
        };
        loss -= scale
            * target
                .iter()
                .zip(&log_probs)
                .map(|(t, lp)| if *t > 0.0 { t * lp } else { 0.0 })
                .sum::<f64>();
        // d(CE)/d(logits) = probs - target
        let probs = softmax(&logits);
        let out_grad: Vec<f64> = probs
            .iter()
            .zip(target.iter())
            .map(|(p, t)| scale * (p - t))
            .collect();
        controller.net.backward(&cache, &out_grad, grads)?;
    }
    Ok(loss)
}

pub struct GatingUpdateConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub coupled: bool,
}

/// One transition's worth of inputs to a gating update.
pub struct GatingSample<'a> {
    pub obs: &'a [f64],
    pub log_likelihoods: &'a [f64],
    /// Per-component action log-probs; consulted only in coupled mode.
    pub subpolicy_log_probs: Option<&'a [f64]>,
    /// Ground-truth primitive indices considered correct for this state
    /// (empty when no primitive specializes here; such samples are skipped
    /// when scoring accuracy).
    pub correct: &'a [usize],
}

#[derive(Clone, Debug, Default)]
pub struct GatingDiagnostics {
    pub loss: f64,
    pub target_entropy: f64,
    /// Fraction of scorable samples whose post-update argmax is a correct
    /// primitive.
    pub accuracy: f64,
    /// Mean post-update probability mass per primitive.
    pub usage: Vec<f64>,
}

/// Minibatched cross-entropy training against targets computed once, from the
/// controller as it stood at entry. Adam state is fresh per update.
pub fn gating_update(
    controller: &mut GatingController,
    samples: &[GatingSample],
    cfg: &GatingUpdateConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GatingDiagnostics> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("gating update needs samples".into()));
    }
    let k = controller.k();
    let mut targets: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    let mut target_entropy = 0.0;
    for s in samples {
        let prior = controller.probs(s.obs)?;
        let t = posterior_target(&prior, s.log_likelihoods, cfg.coupled, s.subpolicy_log_probs)?;
        target_entropy -= t
            .iter()
            .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();
        targets.push(t);
    }
    target_entropy /= samples.len() as f64;

    let mut adam = AdamState::new(controller.net.param_count(), cfg.lr);
    let mut grads = vec![0.0; controller.net.param_count()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last_loss = 0.0;
    let mut n_batches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        last_loss = 0.0;
        n_batches = 0;
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| (samples[i].obs, targets[i].as_slice()))
                .collect();
            last_loss += gating_loss(controller, &batch, &mut grads)?;
            n_batches += 1;
            adam.step(controller.net.params_mut(), &grads)?;
        }
    }
    let loss = if n_batches > 0 { last_loss / n_batches as f64 } else { 0.0 };

    let mut usage = vec![0.0; k];
    let mut hits = 0usize;
    let mut scorable = 0usize;
    for s in samples {
        let probs = controller.probs(s.obs)?;
        for (u, p) in usage.iter_mut().zip(&probs) {
            *u += p / samples.len() as f64;
        }
        if !s.correct.is_empty() {
            scorable += 1;
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            if s.correct.contains(&argmax) {
                hits += 1;
            }
        }
    }
    let accuracy = if scorable > 0 { hits as f64 / scorable as f64 } else { 0.0 };
    Ok(GatingDiagnostics { loss, target_entropy, accuracy, usage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::derive_rng;
    use proptest::prelude::*;

    #[test]
    fn symmetric_posterior_stays_uniform() {
        let t = posterior_target(&[0.5, 0.5], &[-3.0, -3.0], false, None).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-12 && (t[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_to_one_likelihood_ratio() {
        let t = posterior_target(&[0.5, 0.5], &[(3.0f64).ln(), 0.0], false, None).unwrap();
        assert!((t[0] - 0.75).abs() < 1e-12);
        assert!((t[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn one_hot_prior_absorbs() {
        let t = posterior_target(&[1.0, 0.0], &[-100.0, 50.0], false, None).unwrap();
        assert_eq!(t, vec![1.0, 0.0]);
    }

    #[test]
    fn coupled_needs_subpolicy_log_probs() {
        assert!(posterior_target(&[0.5, 0.5], &[0.0, 0.0], true, None).is_err());
        let t =
            posterior_target(&[0.5, 0.5], &[0.0, 0.0], true, Some(&[(3.0f64).ln(), 0.0])).unwrap();
        assert!((t[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn loss_at_matching_output_equals_target_entropy() {
        let mut rng = derive_rng(1, "gate-ent");
        let c = GatingController::new(3, 8, 2, &mut rng).unwrap();
        let obs = vec![0.2, -0.1, 0.4];
        let target = c.probs(&obs).unwrap();
        let mut grads = vec![0.0; c.net.param_count()];
        let loss = gating_loss(&c, &[(&obs, &target)], &mut grads).unwrap();
        let ent: f64 = -target.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((loss - ent).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = derive_rng(4, "gate-fd");
        let mut c = GatingController::new(4, 6, 3, &mut rng).unwrap();
        let batch_data: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
            .map(|i| {
                let obs: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 3) as f64).sin()).collect();
                let raw: Vec<f64> = (0..3).map(|j| ((i + j) as f64).cos().abs() + 0.1).collect();
                let z: f64 = raw.iter().sum();
                (obs, raw.into_iter().map(|r| r / z).collect())
            })
            .collect();
        let batch: Vec<(&[f64], &[f64])> = batch_data
            .iter()
            .map(|(o, t)| (o.as_slice(), t.as_slice()))
            .collect();
        let mut grads = vec![0.0; c.net.param_count()];
        gating_loss(&c, &batch, &mut grads).unwrap();
        let h = 1e-5;
        for idx in (0..c.net.param_count()).step_by(11) {
            let orig = c.net.params()[idx];
            let mut scratch = vec![0.0; c.net.param_count()];
            c.net.params_mut()[idx] = orig + h;
            let up = gating_loss(&c, &batch, &mut scratch).unwrap();
            c.net.params_mut()[idx] = orig - h;
            scratch.iter_mut().for_each(|g| *g = 0.0);
            let down = gating_loss(&c, &batch, &mut scratch).unwrap();
            c.net.params_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grads[idx].abs()).max(1e-8);
            assert!(
                (fd - grads[idx]).abs() / denom < 1e-4,
                "param {idx}: fd {fd} vs analytic {}",
                grads[idx]
            );
        }
    }

    fn scripted_samples(
        k: usize,
        n: usize,
        ll_gap: f64,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<usize>>) {
        // one distinctive observation cluster per primitive
        let mut obs = Vec::new();
        let mut lls = Vec::new();
        let mut correct = Vec::new();
        for i in 0..n {
            let region = i % k;
            let mut o = vec![0.1 * ((i / k) as f64 % 7.0); k];
            o[region] += 1.0;
            let ll: Vec<f64> = (0..k)
                .map(|j| if j == region { 0.0 } else { -ll_gap })
                .collect();
            obs.push(o);
            lls.push(ll);
            correct.push(vec![region]);
        }
        (obs, lls, correct)
    }

    #[test]
    fn separable_likelihoods_reach_high_accuracy() {
        let k = 4;
        let (obs, lls, correct) = scripted_samples(k, 512, 50.0);
        let mut rng = derive_rng(8, "gate-sep");
        let mut c = GatingController::new(k, 64, k, &mut rng).unwrap();
        let cfg = GatingUpdateConfig { epochs: 40, minibatch: 64, lr: 3e-3, coupled: false };
        let mut diag = GatingDiagnostics::default();
        for _ in 0..5 {
            let samples: Vec<GatingSample> = (0..obs.len())
                .map(|i| GatingSample {
                    obs: &obs[i],
                    log_likelihoods: &lls[i],
                    subpolicy_log_probs: None,
                    correct: &correct[i],
                })
                .collect();
            diag = gating_update(&mut c, &samples, &cfg, &mut rng).unwrap();
        }
        assert!(diag.accuracy > 0.95, "accuracy {}", diag.accuracy);
        assert!((diag.usage.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_likelihoods_drive_controller_toward_uniform() {
        let k = 4;
        let (obs, _, correct) = scripted_samples(k, 256, 0.0);
        let flat = vec![vec![-1.0; k]; obs.len()];
        let mut rng = derive_rng(9, "gate-flat");
        let mut c = GatingController::new(k, 64, k, &mut rng).unwrap();
        let cfg = GatingUpdateConfig { epochs: 30, minibatch: 64, lr: 3e-3, coupled: false };
        for _ in 0..3 {
            let samples: Vec<GatingSample> = (0..obs.len())
                .map(|i| GatingSample {
                    obs: &obs[i],
                    log_likelihoods: &flat[i],
                    subpolicy_log_probs: None,
                    correct: &correct[i],
                })
                .collect();
            gating_update(&mut c, &samples, &cfg, &mut rng).unwrap();
        }
        let uniform = 1.0 / k as f64;
        let mean_kl: f64 = obs
            .iter()
            .map(|o| {
                let p = c.probs(o).unwrap();
                p.iter()
                    .map(|pi| if *pi > 0.0 { pi * (pi / uniform).ln() } else { 0.0 })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / obs.len() as f64;
        assert!(mean_kl < 0.05, "mean KL to uniform {mean_kl}");
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut rng = derive_rng(10, "gate-noop");
        let mut c = GatingController::new(2, 4, 2, &mut rng).unwrap();
        let before = c.net.params().to_vec();
        let obs = vec![0.3, 0.4];
        let lls = vec![0.0, -1.0];
        let samples = [GatingSample {
            obs: &obs,
            log_likelihoods: &lls,
            subpolicy_log_probs: None,
            correct: &[0],
        }];
        let cfg = GatingUpdateConfig { epochs: 0, minibatch: 8, lr: 1e-2, coupled: false };
        gating_update(&mut c, &samples, &cfg, &mut rng).unwrap();
        assert_eq!(c.net.params(), before.as_slice());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn targets_are_valid_distributions(
            raw in prop::collection::vec(1e-3f64..1.0, 2..6),
            lls in prop::collection::vec(-50.0f64..50.0, 6),
            slps in prop::collection::vec(-20.0f64..20.0, 6),
            shift in -100.0f64..100.0,
        ) {
            let k = raw.len();
            let z: f64 = raw.iter().sum();
            let prior: Vec<f64> = raw.iter().map(|r| r / z).collect();
            let lls = &lls[..k];
            let t = posterior_target(&prior, lls, false, None).unwrap();
            prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(t.iter().all(|p| *p >= 0.0));

            // decoupled form ignores subpolicy log-probs entirely
            let t2 = posterior_target(&prior, lls, false, Some(&slps[..k])).unwrap();
            prop_assert_eq!(&t, &t2);

            // common additive likelihood shift cancels in normalization
            let shifted: Vec<f64> = lls.iter().map(|l| l + shift).collect();
            let t3 = posterior_target(&prior, &shifted, false, None).unwrap();
            for (a, b) in t.iter().zip(&t3) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn one_hot_priors_absorb_any_likelihood(
            hot in 0usize..4,
            lls in prop::collection::vec(-300.0f64..300.0, 4),
        ) {
            let mut prior = vec![0.0; 4];
            prior[hot] = 1.0;
            let t = posterior_target(&prior, &lls, false, None).unwrap();
            prop_assert_eq!(t, prior);
        }
    }
}
