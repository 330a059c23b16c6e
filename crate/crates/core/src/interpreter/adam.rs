use serde::{Deserialize, Serialize};

/// Adam with bias correction and a linearly decaying learning rate:
/// the `s`-th update (0-based) uses `lr · max(0, 1 − s / total_steps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, total_steps: u64) -> Self {
        Self { step: 0, lr, total_steps, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn current_lr(&self) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        self.lr * (1.0 - self.step as f64 / self.total_steps as f64).max(0.0)
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if lr > 0.0 {
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, 1e-2, 10);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn exhausted_schedule_freezes_params() {
        let mut s = AdamState::new(1, 1e-2, 2);
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0]);
        s.step(&mut p, &[1.0]);
        assert_eq!(s.step, 2);
        assert_eq!(s.current_lr(), 0.0);
        let before = p.clone();
        s.step(&mut p, &[5.0]);
        assert_eq!(p, before);
    }

    /// First step by hand: m = 0.1·g, v = 0.001·g², m̂ = g, v̂ = g², so the
    /// update is lr·g/(|g| + eps). Second step with g2: m = 0.09·g + 0.1·g2,
    /// v = 0.000999·g² + 0.001·g2², corrected by 1 − 0.81 and 1 − 0.998001,
    /// at lr·(1 − 1/total).
    #[test]
    fn matches_hand_computed_recurrence() {
        let mut s = AdamState::new(2, 1e-2, 4);
        let mut p = vec![0.5, -1.0];
        s.step(&mut p, &[0.2, -3.0]);
        assert!((p[0] - (0.5 - 1e-2 * 0.2 / (0.2 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-1.0 + 1e-2 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);

        let p0 = p[0];
        s.step(&mut p, &[0.4, 0.0]);
        let m: f64 = 0.09 * 0.2 + 0.1 * 0.4;
        let v: f64 = 0.000_999 * 0.04 + 0.001 * 0.16;
        let expected = p0 - 1e-2 * 0.75 * (m / 0.19) / ((v / 0.001_999).sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-14, "{} vs {expected}", p[0]);
    }
}
