//! Adam with a fixed learning rate.

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update. `params` and `grads` must have the state's length.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut f64>,
        grads: impl IntoIterator<Item = &'a f64>,
    ) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut count = 0;
        for (((p, &g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            count += 1;
        }
        debug_assert_eq!(count, self.m.len());
    }
}
