use serde::{Deserialize, Serialize};

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam with bias-corrected moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut adam = Adam::new(2, DEFAULT_LR);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[0.5, -0.5]);
        let (m1, v1) = (adam.first_moment().to_vec(), adam.second_moment().to_vec());
        let before = p.clone();
        adam.step(&mut p, &[0.0, 0.0]);
        // m_hat/(sqrt(v_hat)) is non-zero after a real step, so compare moments only
        assert_eq!(adam.first_moment()[0], 0.9 * m1[0]);
        assert_eq!(adam.second_moment()[1], 0.999 * v1[1]);

        let mut fresh = Adam::new(2, DEFAULT_LR);
        let mut q = before.clone();
        fresh.step(&mut q, &[0.0, 0.0]);
        assert_eq!(q, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        for g in [1e-3, 0.7, -4.0, 250.0] {
            let mut adam = Adam::new(1, DEFAULT_LR);
            let mut p = vec![0.0];
            adam.step(&mut p, &[g]);
            // m_hat = g, v_hat = g^2 => update = -lr * g / (|g| + eps)
            let expected = -DEFAULT_LR * g / (g.abs() + DEFAULT_EPSILON);
            assert!((p[0] - expected).abs() < 1e-15, "g={g}: {} vs {expected}", p[0]);
            assert!(p[0].abs() <= DEFAULT_LR);
        }
    }

    #[test]
    fn two_steps_match_hand_trace() {
        let (g, lr) = (0.2, 0.01);
        let mut adam = Adam::new(1, lr);
        let mut p = vec![1.0];
        adam.step(&mut p, &[g]);
        adam.step(&mut p, &[g]);

        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p[0] - x).abs() < 1e-15);
        assert!((p[0] - (1.0 - 2.0 * lr)).abs() < 1e-9);
        assert_eq!(adam.step_count(), 2);
    }
}
