//! Adam optimizer over a flat parameter vector.

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimMismatch(format!(
                "adam: state {} params {} grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_magnitude_is_lr_times_sign() {
        let lr = 0.05;
        let mut st = AdamState::new(2, lr);
        let mut p = vec![0.0, 0.0];
        st.step(&mut p, &[3.0, -0.7]).unwrap();
        // On the first step mhat = g, vhat = g^2, so the update is
        // lr * g / (|g| + eps) ~= lr * sign(g).
        assert!((p[0] + lr).abs() < 1e-6);
        assert!((p[1] - lr).abs() < 1e-6);
    }

    #[test]
    fn three_step_scalar_matches_hand_unrolled_recurrence() {
        let lr = 0.01;
        let grads = [2.0, -1.0, 0.5];
        let mut st = AdamState::new(1, lr);
        let mut p = vec![0.3];
        for g in grads {
            st.step(&mut p, &[g]).unwrap();
        }
        // Hand-unrolled recurrence.
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.3f64);
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32 + 1));
            let vhat = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mhat / (vhat.sqrt() + eps);
        }
        assert!((p[0] - x).abs() < 1e-15, "{} vs {}", p[0], x);
        assert_eq!(st.step_count(), 3);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut p, &[1.0, 1.0, 1.0]).is_err());
    }
}
