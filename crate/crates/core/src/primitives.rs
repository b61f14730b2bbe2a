//! Model primitives: stochastic next-state predictors queried for their
//! log-likelihood of observed transitions.
//!
//! Two flavors. Noisy oracles wrap the simulator's true next state in
//! Gaussian noise whose scale depends on whether the state lies in the
//! primitive's specialized region (small inside, large outside). Learned
//! primitives are residual MLP dynamics models fit by weighted regression.
//! Neither is ever used for planning — only for likelihood queries.

use crate::envs::{Axis, Dir, RegionInfo, StageKind};
use crate::numkit::{keyed_rng, AdamState, DiagGaussian, Mlp};
use crate::{Error, Result};
use rand::seq::SliceRandom;

/// Variance floor applied when fitting covariances.
pub const COV_FLOOR: f64 = 1e-6;
/// Multiplier floor on the likelihood covariance so zero-noise oracles keep
/// finite log-densities while their mean draw stays exact.
pub const SIGMA_FLOOR: f64 = 0.05;
/// Default regression weight for out-of-region transitions when training a
/// learned primitive.
pub const DEFAULT_OUT_WEIGHT: f64 = 0.1;

/// Diagonal empirical covariance of next observations.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCovariance {
    pub var: Vec<f64>,
    pub count: usize,
}

/// Per-dimension sample variance of the next states, floored at `COV_FLOOR`.
pub fn fit_covariance<'a, I>(next_states: I) -> Result<EmpiricalCovariance>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = next_states.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidInput("covariance fit needs >=2 samples".into()))?;
    let dim = first.len();
    let mut mean = first.to_vec();
    let mut m2 = vec![0.0; dim];
    let mut count = 1usize;
    for s in iter {
        if s.len() != dim {
            return Err(Error::DimMismatch("covariance sample dimension changed".into()));
        }
        count += 1;
        for i in 0..dim {
            let d = s[i] - mean[i];
            mean[i] += d / count as f64;
            m2[i] += d * (s[i] - mean[i]);
        }
    }
    if count < 2 {
        return Err(Error::InvalidInput("covariance fit needs >=2 samples".into()));
    }
    let var = m2
        .into_iter()
        .map(|v| (v / (count - 1) as f64).max(COV_FLOOR))
        .collect();
    Ok(EmpiricalCovariance { var, count })
}

/// Ground-truth region membership test a primitive specializes on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionPredicate {
    /// Primary corridor direction of the state matches.
    Dir(Dir),
    /// Any adjacent corridor direction matches (corner states belong to both
    /// neighbors).
    DirOverlap(Dir),
    /// Primary corridor axis matches (horizontal = E/W, vertical = N/S).
    CorridorAxis(Axis),
    /// Axis of current motion matches, regardless of corridor.
    Velocity(Axis),
    /// Manipulation: both the active box and the stage kind match.
    BoxStage(usize, StageKind),
    /// Manipulation: active box matches, any stage.
    BoxOnly(usize),
    /// Manipulation: stage kind matches, any box.
    StageOnly(StageKind),
    /// Matches nothing; a redundant primitive that is never the specialist.
    Never,
}

impl RegionPredicate {
    pub fn matches(&self, region: &RegionInfo) -> bool {
        match *self {
            RegionPredicate::Dir(d) => region.dirs.first() == Some(&d),
            RegionPredicate::DirOverlap(d) => region.dirs.contains(&d),
            RegionPredicate::CorridorAxis(ax) => {
                region.dirs.first().map(|d| d.axis()) == Some(ax)
            }
            RegionPredicate::Velocity(ax) => region.vel_axis == Some(ax),
            RegionPredicate::BoxStage(b, k) => region.stage == Some((b, k)),
            RegionPredicate::BoxOnly(b) => region.stage.map(|(rb, _)| rb) == Some(b),
            RegionPredicate::StageOnly(k) => region.stage.map(|(_, rk)| rk) == Some(k),
            RegionPredicate::Never => false,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            RegionPredicate::Dir(d) => format!("dir:{}", d.letter()),
            RegionPredicate::DirOverlap(d) => format!("overlap:{}", d.letter()),
            RegionPredicate::CorridorAxis(Axis::Horizontal) => "axis:h".into(),
            RegionPredicate::CorridorAxis(Axis::Vertical) => "axis:v".into(),
            RegionPredicate::Velocity(Axis::Horizontal) => "vel:h".into(),
            RegionPredicate::Velocity(Axis::Vertical) => "vel:v".into(),
            RegionPredicate::BoxStage(b, k) => format!("box{}:{}", b + 1, k.name()),
            RegionPredicate::BoxOnly(b) => format!("box{}", b + 1),
            RegionPredicate::StageOnly(k) => format!("act:{}", k.name()),
            RegionPredicate::Never => "never".into(),
        }
    }

    /// Inverse of `name()`.
    pub fn parse(s: &str) -> Result<Self> {
        let axis = |t: &str| match t {
            "h" => Ok(Axis::Horizontal),
            "v" => Ok(Axis::Vertical),
            _ => Err(Error::Config(format!("bad axis {t:?} (want h or v)"))),
        };
        let dir = |t: &str| {
            let mut it = t.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Dir::from_letter(c),
                _ => Err(Error::InvalidInput(format!("bad direction {t:?}"))),
            }
        };
        let stage = |t: &str| {
            StageKind::ALL
                .iter()
                .copied()
                .find(|k| k.name() == t)
                .ok_or_else(|| Error::Config(format!("unknown stage {t:?}")))
        };
        let box_idx = |t: &str| match t {
            "box1" => Ok(0usize),
            "box2" => Ok(1usize),
            _ => Err(Error::Config(format!("bad box {t:?} (want box1 or box2)"))),
        };
        if s == "never" {
            return Ok(RegionPredicate::Never);
        }
        if let Some(t) = s.strip_prefix("dir:") {
            return Ok(RegionPredicate::Dir(dir(t)?));
        }
        if let Some(t) = s.strip_prefix("overlap:") {
            return Ok(RegionPredicate::DirOverlap(dir(t)?));
        }
        if let Some(t) = s.strip_prefix("axis:") {
            return Ok(RegionPredicate::CorridorAxis(axis(t)?));
        }
        if let Some(t) = s.strip_prefix("vel:") {
            return Ok(RegionPredicate::Velocity(axis(t)?));
        }
        if let Some(t) = s.strip_prefix("act:") {
            return Ok(RegionPredicate::StageOnly(stage(t)?));
        }
        if let Some((b, k)) = s.split_once(':') {
            return Ok(RegionPredicate::BoxStage(box_idx(b)?, stage(k)?));
        }
        if s.starts_with("box") {
            return Ok(RegionPredicate::BoxOnly(box_idx(s)?));
        }
        Err(Error::Config(format!("unknown region predicate {s:?}")))
    }
}

/// Transition context an oracle primitive needs: where the noise stream is
/// keyed and what actually happened in the simulator.
#[derive(Clone, Debug)]
pub struct TransitionCtx<'a> {
    pub episode: u64,
    pub step: u64,
    pub region: &'a RegionInfo,
    pub true_next: &'a [f64],
}

/// Hand-crafted primitive: predicts the simulator's true next state corrupted
/// by region-dependent Gaussian noise.
#[derive(Clone, Debug)]
pub struct NoisyOraclePrimitive {
    pub label: String,
    pub predicate: RegionPredicate,
    pub sigma_in: f64,
    pub sigma_out: f64,
    pub cov: EmpiricalCovariance,
    pub seed: u64,
}

impl NoisyOraclePrimitive {
    pub fn new(
        label: &str,
        predicate: RegionPredicate,
        sigma_in: f64,
        sigma_out: f64,
        cov: EmpiricalCovariance,
        seed: u64,
    ) -> Result<Self> {
        if sigma_in < 0.0 || sigma_out < 0.0 {
            return Err(Error::InvalidInput("noise scales must be >= 0".into()));
        }
        Ok(Self { label: label.to_string(), predicate, sigma_in, sigma_out, cov, seed })
    }

    fn sigma_for(&self, region: &RegionInfo) -> f64 {
        if self.predicate.matches(region) {
            self.sigma_in
        } else {
            self.sigma_out
        }
    }

    /// Predictive distribution for one transition. The mean is drawn around
    /// the true next state with covariance sigma*cov from a stream keyed
    /// statelessly by (episode, step, label); the returned density uses
    /// max(sigma, SIGMA_FLOOR)*cov.
    pub fn oracle_predict(&self, ctx: &TransitionCtx) -> Result<DiagGaussian> {
        let sigma = self.sigma_for(ctx.region);
        if ctx.true_next.len() != self.cov.var.len() {
            return Err(Error::DimMismatch("oracle state dim != covariance dim".into()));
        }
        let mu = if sigma == 0.0 {
            // zero-noise primitives predict the true next state exactly
            ctx.true_next.to_vec()
        } else {
            let mut rng = keyed_rng(self.seed, &self.label, &[ctx.episode, ctx.step]);
            let draw_var: Vec<f64> = self.cov.var.iter().map(|v| sigma * v).collect();
            DiagGaussian::from_variances(ctx.true_next.to_vec(), &draw_var)?.sample(&mut rng)
        };
        let like_var: Vec<f64> = self
            .cov
            .var
            .iter()
            .map(|v| sigma.max(SIGMA_FLOOR) * v)
            .collect();
        DiagGaussian::from_variances(mu, &like_var)
    }
}

/// Residual MLP dynamics model: predicted next state = s + f(s, a).
#[derive(Clone, Debug)]
pub struct LearnedPrimitive {
    pub label: String,
    /// Used only for evaluation diagnostics; the likelihood itself never
    /// consults ground truth.
    pub predicate: RegionPredicate,
    pub net: Mlp,
    pub cov: EmpiricalCovariance,
}

impl LearnedPrimitive {
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<DiagGaussian> {
        let mut input = Vec::with_capacity(s.len() + a.len());
        input.extend_from_slice(s);
        input.extend_from_slice(a);
        let delta = self.net.forward(&input)?;
        let mean: Vec<f64> = s.iter().zip(&delta).map(|(si, di)| si + di).collect();
        DiagGaussian::from_variances(mean, &self.cov.var)
    }
}

/// Either flavor behind one query surface.
#[derive(Clone, Debug)]
pub enum ModelPrimitive {
    Oracle(NoisyOraclePrimitive),
    Learned(LearnedPrimitive),
}

impl ModelPrimitive {
    pub fn label(&self) -> &str {
        match self {
            ModelPrimitive::Oracle(p) => &p.label,
            ModelPrimitive::Learned(p) => &p.label,
        }
    }

    pub fn predicate(&self) -> RegionPredicate {
        match self {
            ModelPrimitive::Oracle(p) => p.predicate,
            ModelPrimitive::Learned(p) => p.predicate,
        }
    }

    /// Log-density of the observed next state under the primitive's
    /// predictive distribution for this transition.
    pub fn log_likelihood(
        &self,
        s: &[f64],
        a: &[f64],
        s_next: &[f64],
        ctx: &TransitionCtx,
    ) -> Result<f64> {
        let dist = match self {
            ModelPrimitive::Oracle(p) => p.oracle_predict(ctx)?,
            ModelPrimitive::Learned(p) => p.predict(s, a)?,
        };
        let lp = dist.log_prob(s_next)?;
        if !lp.is_finite() {
            return Err(Error::Numeric("non-finite transition log-likelihood".into()));
        }
        Ok(lp)
    }
}

/// Indices of the primitives whose predicate matches the region — the
/// "correct" choices when scoring decomposition accuracy. Corner states match
/// both adjacent direction primitives.
pub fn correct_indices(primitives: &[ModelPrimitive], region: &RegionInfo) -> Vec<usize> {
    primitives
        .iter()
        .enumerate()
        .filter(|(_, p)| p.predicate().matches(region))
        .map(|(i, _)| i)
        .collect()
}

/// Named oracle primitive-set presets. `standard-4` is the four-direction
/// maze set; `extra-5` adds a redundant fifth; `hv-2` merges directions by
/// axis; `velocity-2` specializes on motion axis instead of corridor;
/// `corner-overlap` makes corner states in-region for both neighbors;
/// `stage-12`, `box-only-2`, `action-only-6` are the manipulation sets at
/// decreasing granularity.
pub fn preset_predicates(name: &str) -> Result<Vec<(String, RegionPredicate)>> {
    let dirs = |mk: fn(Dir) -> RegionPredicate| {
        Dir::ALL
            .iter()
            .map(|&d| (format!("{}", d.letter()), mk(d)))
            .collect::<Vec<_>>()
    };
    let set = match name {
        "standard-4" => dirs(RegionPredicate::Dir),
        "corner-overlap" => dirs(RegionPredicate::DirOverlap),
        "extra-5" => {
            let mut v = dirs(RegionPredicate::Dir);
            v.push(("extra".into(), RegionPredicate::Never));
            v
        }
        "hv-2" => vec![
            ("h".into(), RegionPredicate::CorridorAxis(Axis::Horizontal)),
            ("v".into(), RegionPredicate::CorridorAxis(Axis::Vertical)),
        ],
        "velocity-2" => vec![
            ("vel-h".into(), RegionPredicate::Velocity(Axis::Horizontal)),
            ("vel-v".into(), RegionPredicate::Velocity(Axis::Vertical)),
        ],
        "stage-12" => (0..2)
            .flat_map(|b| {
                StageKind::ALL.iter().map(move |&k| {
                    (format!("b{}-{}", b + 1, k.name()), RegionPredicate::BoxStage(b, k))
                })
            })
            .collect(),
        "box-only-2" => (0..2)
            .map(|b| (format!("box{}", b + 1), RegionPredicate::BoxOnly(b)))
            .collect(),
        "action-only-6" => StageKind::ALL
            .iter()
            .map(|&k| (k.name().to_string(), RegionPredicate::StageOnly(k)))
            .collect(),
        other => {
            return Err(Error::Config(format!("unknown primitive preset {other:?}")))
        }
    };
    Ok(set)
}

/// Builds the oracle primitive set for a preset, sharing one covariance.
pub fn build_oracle_set(
    preset: &str,
    sigma_in: f64,
    sigma_out: f64,
    cov: &EmpiricalCovariance,
    seed: u64,
) -> Result<Vec<ModelPrimitive>> {
    preset_predicates(preset)?
        .into_iter()
        .map(|(label, pred)| {
            Ok(ModelPrimitive::Oracle(NoisyOraclePrimitive::new(
                &label,
                pred,
                sigma_in,
                sigma_out,
                cov.clone(),
                seed,
            )?))
        })
        .collect()
}

/// One regression sample for learned-primitive training.
#[derive(Clone, Debug)]
pub struct DynSample {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub in_region: bool,
}

pub struct LearnedTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub out_weight: f64,
    pub seed: u64,
}

impl Default for LearnedTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 200,
            minibatch: 64,
            lr: 3e-4,
            out_weight: DEFAULT_OUT_WEIGHT,
            seed: 0,
        }
    }
}

/// Fits a residual dynamics model by weighted mean-squared error (weight 1
/// in-region, `out_weight` outside), then fits its output covariance on
/// in-region residuals.
pub fn train_learned_primitive(
    label: &str,
    predicate: RegionPredicate,
    corpus: &[DynSample],
    cfg: &LearnedTrainConfig,
) -> Result<LearnedPrimitive> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty dynamics corpus".into()));
    }
    if cfg.out_weight < 0.0 {
        return Err(Error::InvalidInput("out_weight must be >= 0".into()));
    }
    let sd = corpus[0].s.len();
    let ad = corpus[0].a.len();
    let mut rng = crate::numkit::derive_rng(cfg.seed, &format!("learned-prim/{label}"));
    let mut net = Mlp::new(&[sd + ad, cfg.hidden, cfg.hidden, sd], 0.1, &mut rng)?;
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut grads = vec![0.0; net.param_count()];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut wsum = 0.0;
            for &i in chunk {
                let sm = &corpus[i];
                let w = if sm.in_region { 1.0 } else { cfg.out_weight };
                if w == 0.0 {
                    continue;
                }
                wsum += w;
                let mut input = sm.s.clone();
                input.extend_from_slice(&sm.a);
                let (delta, cache) = net.forward_cached(&input)?;
                // d/d_pred of w * ||s + delta - s'||^2
                let out_grad: Vec<f64> = delta
                    .iter()
                    .enumerate()
                    .map(|(j, dj)| 2.0 * w * (sm.s[j] + dj - sm.s_next[j]))
                    .collect();
                net.backward(&cache, &out_grad, &mut grads)?;
            }
            if wsum == 0.0 {
                continue;
            }
            grads.iter_mut().for_each(|g| *g /= wsum);
            adam.step(net.params_mut(), &grads)?;
        }
    }
    // covariance of in-region one-step residuals; falls back to the whole
    // corpus if the region never appears
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    for sm in corpus.iter().filter(|sm| sm.in_region) {
        let mut input = sm.s.clone();
        input.extend_from_slice(&sm.a);
        let delta = net.forward(&input)?;
        residuals.push(
            (0..sd)
                .map(|j| sm.s_next[j] - (sm.s[j] + delta[j]))
                .collect(),
        );
    }
    if residuals.len() < 2 {
        for sm in corpus {
            let mut input = sm.s.clone();
            input.extend_from_slice(&sm.a);
            let delta = net.forward(&input)?;
            residuals.push(
                (0..sd)
                    .map(|j| sm.s_next[j] - (sm.s[j] + delta[j]))
                    .collect(),
            );
        }
    }
    let cov = fit_covariance(residuals.iter().map(|r| r.as_slice()))?;
    Ok(LearnedPrimitive { label: label.to_string(), predicate, net, cov })
}

/// Saves a learned primitive's network and output covariance. Label and
/// predicate are configuration, not weights, so the caller re-supplies them
/// on load.
pub fn save_learned_primitive(p: &LearnedPrimitive, path: &std::path::Path) -> Result<()> {
    let mut ck = crate::numkit::Checkpoint::new();
    ck.push_mlp("net", p.net.sizes(), p.net.params().to_vec())?;
    ck.push_vec("cov", p.cov.var.clone())?;
    ck.push_vec("cov_count", vec![p.cov.count as f64])?;
    ck.save(path)
}

pub fn load_learned_primitive(
    label: &str,
    predicate: RegionPredicate,
    path: &std::path::Path,
) -> Result<LearnedPrimitive> {
    let ck = crate::numkit::Checkpoint::load(path)?;
    let entry = ck.require("net")?;
    let crate::numkit::CkptShape::Mlp(sizes) = &entry.shape else {
        return Err(Error::Checkpoint("net is not an mlp entry".into()));
    };
    let net = Mlp::from_params(sizes, entry.data.clone())?;
    let var = ck.require("cov")?.data.clone();
    if var.len() != net.out_dim() {
        return Err(Error::Checkpoint("covariance dim != model output dim".into()));
    }
    let count = ck.require("cov_count")?.data.first().copied().unwrap_or(0.0) as usize;
    Ok(LearnedPrimitive {
        label: label.to_string(),
        predicate,
        net,
        cov: EmpiricalCovariance { var, count },
    })
}
