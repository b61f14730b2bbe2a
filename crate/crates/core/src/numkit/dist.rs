//! Diagonal-Gaussian and categorical distribution heads.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Numerically stable softmax (max subtraction). `-inf` logits map to zero
/// probability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Gaussian with diagonal covariance, parameterized by mean and log standard
/// deviation per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::DimMismatch("gaussian mean/log_std length".into()));
        }
        Ok(Self { mean, log_std })
    }

    /// Per-dimension variances from a variance vector.
    pub fn from_variances(mean: Vec<f64>, var: &[f64]) -> Result<Self> {
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Numeric("non-positive gaussian variance".into()));
        }
        let log_std = var.iter().map(|v| 0.5 * v.ln()).collect();
        Self::new(mean, log_std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::DimMismatch("gaussian log_prob input".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gaussian log_prob input".into()));
        }
        let mut lp = 0.0;
        for i in 0..x.len() {
            let ls = self.log_std[i];
            let z = (x[i] - self.mean[i]) / ls.exp();
            lp += -ls - 0.5 * LN_2PI - 0.5 * z * z;
        }
        Ok(lp)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.log_std.iter())
            .map(|(&m, &ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + z * ls.exp()
            })
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|&ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
    }
}

/// Categorical distribution over K outcomes given unnormalized logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    pub logits: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidInput("empty categorical logits".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite categorical logits".into()));
        }
        Ok(Self { logits })
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|&l| l - lse).collect()
    }

    pub fn entropy(&self) -> f64 {
        let p = self.probs();
        let lp = self.log_probs();
        -p.iter().zip(lp.iter()).map(|(&p, &l)| if p > 0.0 { p * l } else { 0.0 }).sum::<f64>()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_index(&self.probs(), rng)
    }
}

/// Sample an index from an explicit probability vector.
pub fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::derive_rng;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_at_mode() {
        let d = DiagGaussian::new(vec![0.0], vec![0.0]).unwrap();
        let lp = d.log_prob(&[0.0]).unwrap();
        assert!((lp - (-0.5 * LN_2PI)).abs() < 1e-12);
        assert!((lp - (-0.91893853320467274)).abs() < 1e-10);
    }

    #[test]
    fn independent_dims_factorize() {
        let d2 = DiagGaussian::new(vec![0.3, -1.0], vec![0.1, -0.4]).unwrap();
        let a = DiagGaussian::new(vec![0.3], vec![0.1]).unwrap();
        let b = DiagGaussian::new(vec![-1.0], vec![-0.4]).unwrap();
        let x = [0.9, -1.7];
        let lhs = d2.log_prob(&x).unwrap();
        let rhs = a.log_prob(&x[..1]).unwrap() + b.log_prob(&x[1..]).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn density_normalizes_by_quadrature() {
        // 1-D trapezoid integration of exp(log_prob) over +-8 sigma.
        let d = DiagGaussian::new(vec![0.7], vec![-0.3]).unwrap();
        let std = (-0.3f64).exp();
        let (lo, hi) = (0.7 - 8.0 * std, 0.7 + 8.0 * std);
        let n = 20_000;
        let dx = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * d.log_prob(&[x]).unwrap().exp() * dx;
        }
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn random_3d_matches_closed_form() {
        let d = DiagGaussian::new(vec![1.0, -2.0, 0.5], vec![0.2, -0.1, 0.7]).unwrap();
        let x = [0.4, -1.1, 2.2];
        // Independent evaluation of the closed form.
        let mut want = 0.0;
        for i in 0..3 {
            let s = d.log_std[i].exp();
            want += -(s.ln()) - 0.5 * LN_2PI - 0.5 * ((x[i] - d.mean[i]) / s).powi(2);
        }
        assert!((d.log_prob(&x).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn sample_mean_converges() {
        let d = DiagGaussian::new(vec![2.0, -1.0], vec![0.0, 0.5]).unwrap();
        let mut rng = derive_rng(3, "gauss-sample");
        let n = 200_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let s = d.sample(&mut rng);
            sum[0] += s[0];
            sum[1] += s[1];
        }
        assert!((sum[0] / n as f64 - 2.0).abs() < 0.02);
        assert!((sum[1] / n as f64 + 1.0).abs() < 0.03);
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let c = Categorical::new(vec![0.7; 4]).unwrap();
        for p in c.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!((c.entropy() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let c = Categorical::new(vec![1e3, 0.0]).unwrap();
        let p = c.probs();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-12);
    }

    #[test]
    fn log_ratio_logits_normalize_directly() {
        let c = Categorical::new(vec![3.0f64.ln(), 1.0f64.ln()]).unwrap();
        let p = c.probs();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(Categorical::new(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn categorical_sample_frequencies() {
        let c = Categorical::new(vec![0.0, 3.0f64.ln()]).unwrap();
        let mut rng = derive_rng(9, "cat-sample");
        let n = 100_000;
        let mut count = 0usize;
        for _ in 0..n {
            if c.sample(&mut rng) == 1 {
                count += 1;
            }
        }
        assert!((count as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            let s: f64 = softmax(&logits).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_strictly_positive(logits in proptest::collection::vec(-50f64..50.0, 1..8)) {
            prop_assert!(softmax(&logits).iter().all(|&p| p > 0.0));
        }
    }
}
