//! Multi-layer perceptron with tanh hidden layers, identity output, and
//! manual backpropagation over a flat parameter vector.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Fully-connected network. Parameters live in one flat vector laid out per
/// layer as row-major weights (out x in) followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate activations cached by [`Mlp::forward_cached`] and consumed by
/// [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    input: Vec<f64>,
    /// Post-tanh activations of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

fn param_count_for(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Scaled Gaussian init: weights ~ N(0, scale^2 / fan_in), zero bias.
    /// `out_scale` applies to the final layer only (small values keep initial
    /// outputs near zero).
    pub fn new(sizes: &[usize], out_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidInput("mlp needs at least two layers".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput("zero-width mlp layer".into()));
        }
        let mut params = Vec::with_capacity(param_count_for(sizes));
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let scale = if l == n_layers - 1 { out_scale } else { 1.0 };
            let std = scale / (n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                let z: f64 = rng.sample(StandardNormal);
                params.push(z * std);
            }
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    /// Build a network from an existing flat parameter vector.
    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput("bad mlp layer sizes".into()));
        }
        if params.len() != param_count_for(sizes) {
            return Err(Error::DimMismatch(format!(
                "mlp params: expected {}, got {}",
                param_count_for(sizes),
                params.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight/bias slices of layer `l` as (weights, bias, n_out, n_in).
    pub fn layer(&self, l: usize) -> (&[f64], &[f64], usize, usize) {
        let mut off = 0;
        for i in 0..l {
            off += self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1];
        }
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b, n_out, n_in)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.run_forward(input, None)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut cache = MlpCache { input: input.to_vec(), hidden: Vec::new() };
        let out = self.run_forward(input, Some(&mut cache))?;
        Ok((out, cache))
    }

    fn run_forward(&self, input: &[f64], mut cache: Option<&mut MlpCache>) -> Result<Vec<f64>> {
        if input.len() != self.sizes[0] {
            return Err(Error::DimMismatch(format!(
                "mlp input: expected {}, got {}",
                self.sizes[0],
                input.len()
            )));
        }
        let n_layers = self.sizes.len() - 1;
        let mut act = input.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut next = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, ai) in row.iter().zip(act.iter()) {
                    z += wi * ai;
                }
                next.push(if l < n_layers - 1 { z.tanh() } else { z });
            }
            if l < n_layers - 1 {
                if let Some(c) = cache.as_deref_mut() {
                    c.hidden.push(next.clone());
                }
            }
            act = next;
        }
        Ok(act)
    }

    /// Backpropagate `out_grad` (gradient of a scalar loss wrt the output)
    /// through the cached forward pass. Parameter gradients are accumulated
    /// into `grad_acc` (same flat layout as `params`); returns the gradient
    /// wrt the input.
    pub fn backward(
        &self,
        cache: &MlpCache,
        out_grad: &[f64],
        grad_acc: &mut [f64],
    ) -> Result<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        if out_grad.len() != self.out_dim() {
            return Err(Error::DimMismatch(format!(
                "output grad: expected {}, got {}",
                self.out_dim(),
                out_grad.len()
            )));
        }
        if grad_acc.len() != self.params.len() {
            return Err(Error::DimMismatch("grad accumulator length".into()));
        }
        if cache.input.len() != self.sizes[0]
            || cache.hidden.len() != n_layers - 1
            || cache
                .hidden
                .iter()
                .zip(&self.sizes[1..])
                .any(|(h, &s)| h.len() != s)
        {
            return Err(Error::State("forward cache does not match network".into()));
        }
        // Offsets of every layer up front so we can walk backwards.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = out_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let w = &self.params[off..off + n_in * n_out];
            let below: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
            {
                let gw = &mut grad_acc[off..off + n_in * n_out];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(below.iter()) {
                        *g += d * a;
                    }
                }
            }
            let gb = &mut grad_acc[off + n_in * n_out..off + n_in * n_out + n_out];
            for (g, d) in gb.iter_mut().zip(delta.iter()) {
                *g += d;
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &w[o * n_in..(o + 1) * n_in];
                for (p, wi) in prev.iter_mut().zip(row.iter()) {
                    *p += wi * d;
                }
            }
            if l > 0 {
                for (p, a) in prev.iter_mut().zip(below.iter()) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::derive_rng;

    fn rng() -> ChaCha8Rng {
        derive_rng(7, "mlp-tests")
    }

    /// Independent from-scratch forward pass over explicit matrices.
    fn oracle_forward(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut act = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let mut z = params[off + n_in * n_out + o];
                for i in 0..n_in {
                    z += params[off + o * n_in + i] * act[i];
                }
                next[o] = z;
            }
            off += n_in * n_out + n_out;
            if l < sizes.len() - 2 {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            act = next;
        }
        act
    }

    #[test]
    fn zero_weight_net_outputs_bias() {
        let sizes = [3, 4, 2];
        let mut params = vec![0.0; param_count_for(&sizes)];
        // Set final-layer biases.
        let n = params.len();
        params[n - 2] = 1.5;
        params[n - 1] = -0.25;
        let net = Mlp::from_params(&sizes, params).unwrap();
        let out = net.forward(&[0.3, -2.0, 10.0]).unwrap();
        assert_eq!(out, vec![1.5, -0.25]);
    }

    #[test]
    fn single_linear_identity_layer() {
        let sizes = [3, 3];
        let mut params = vec![0.0; param_count_for(&sizes)];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_params(&sizes, params).unwrap();
        let x = [0.5, -1.25, 3.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let sizes = [2, 3, 1];
        let net = Mlp::new(&sizes, 1.0, &mut rng()).unwrap();
        let x = [0.7, -0.4];
        let got = net.forward(&x).unwrap();
        let want = oracle_forward(&sizes, net.params(), &x);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn forward_dim_mismatch_errors() {
        let net = Mlp::new(&[3, 2], 1.0, &mut rng()).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn linear_layer_bias_grad_is_one() {
        // loss = output => dloss/dbias = 1
        let net = Mlp::new(&[2, 1], 1.0, &mut rng()).unwrap();
        let (_, cache) = net.forward_cached(&[0.4, 0.6]).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&cache, &[1.0], &mut grads).unwrap();
        assert_eq!(grads[2], 1.0);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng()).unwrap();
        let (_, cache) = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        let ig = net.backward(&cache, &[0.0, 0.0], &mut grads).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(ig.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_with_mismatched_cache_errors() {
        let a = Mlp::new(&[2, 3, 1], 1.0, &mut rng()).unwrap();
        let b = Mlp::new(&[2, 4, 1], 1.0, &mut rng()).unwrap();
        let (_, cache) = a.forward_cached(&[0.1, 0.2]).unwrap();
        let mut grads = vec![0.0; b.param_count()];
        assert!(matches!(b.backward(&cache, &[1.0], &mut grads), Err(Error::State(_))));
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut r = rng();
        for trial in 0..5 {
            let sizes = [3, 6, 4, 2];
            let mut net = Mlp::new(&sizes, 1.0, &mut r).unwrap();
            let x: Vec<f64> = (0..3).map(|i| 0.3 * (i as f64) - 0.2 + 0.1 * trial as f64).collect();
            // scalar loss: sum of squared outputs
            let loss = |net: &Mlp| -> f64 {
                net.forward(&x).unwrap().iter().map(|v| v * v).sum::<f64>()
            };
            let (out, cache) = net.forward_cached(&x).unwrap();
            let out_grad: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
            let mut grads = vec![0.0; net.param_count()];
            net.backward(&cache, &out_grad, &mut grads).unwrap();
            let h = 1e-5;
            for p in 0..net.param_count() {
                let orig = net.params()[p];
                net.params_mut()[p] = orig + h;
                let up = loss(&net);
                net.params_mut()[p] = orig - h;
                let dn = loss(&net);
                net.params_mut()[p] = orig;
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(grads[p].abs()).max(1e-8);
                assert!(
                    (fd - grads[p]).abs() / denom < 1e-4,
                    "param {p}: analytic {} vs fd {fd}",
                    grads[p]
                );
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Mlp::new(&[4, 8, 3], 0.01, &mut rng()).unwrap();
        let x = [0.1, -0.5, 2.0, 0.0];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let net2 = Mlp::new(&[4, 8, 3], 0.01, &mut rng()).unwrap();
        assert_eq!(net.params(), net2.params());
    }

    #[test]
    fn param_count_matches_formula() {
        let sizes = [9, 16, 16, 2];
        let net = Mlp::new(&sizes, 1.0, &mut rng()).unwrap();
        let expect: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(net.param_count(), expect);
    }
}
