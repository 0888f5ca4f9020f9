/// Adam with bias-corrected moments. Minimizes: pass loss gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Updates the concatenation of `params` in order; `grads` is flat.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[f64]) {
        let total: usize = params.iter().map(|p| p.len()).sum();
        assert_eq!(total, grads.len(), "parameter/gradient size mismatch");
        assert_eq!(total, self.m.len(), "optimizer sized for another model");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut i = 0;
        for slice in params.iter_mut() {
            for p in slice.iter_mut() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut adam = Adam::new(3, 0.1);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        for g in [0.5, -3.0, 1e-3] {
            let mut p = vec![0.0];
            let mut adam = Adam::new(1, 0.01);
            adam.step(&mut [&mut p], &[g]);
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((p[0].abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn deterministic_and_split_invariant() {
        let grads = [0.3, -0.2, 0.9, 0.05];
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        let (mut b1, mut b2) = (vec![1.0, 2.0], vec![3.0, 4.0]);
        let mut oa = Adam::new(4, 0.05);
        let mut ob = Adam::new(4, 0.05);
        for _ in 0..10 {
            oa.step(&mut [&mut a], &grads);
            ob.step(&mut [&mut b1, &mut b2], &grads);
        }
        assert_eq!(a[..2], b1[..]);
        assert_eq!(a[2..], b2[..]);
    }
}
