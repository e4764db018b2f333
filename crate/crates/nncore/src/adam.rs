use crate::matrix::Matrix;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable parameter. Gradients are
    /// left as they are; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        while self.m.len() < store.len() {
            let shape = store.value(crate::ParamId(self.m.len())).shape();
            self.m.push(Matrix::zeros(shape.0, shape.1));
            self.v.push(Matrix::zeros(shape.0, shape.1));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let g: Vec<f64> = p.grad().as_slice().to_vec();
            let m = self.m[id.index()].as_mut_slice();
            let v = self.v[id.index()].as_mut_slice();
            for (k, w) in p.value_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn zero_grad_leaves_params() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::row(&[1.0, -2.0]), true);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store);
        }
        assert_eq!(store.value(a).as_slice(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after bias correction, so the move is
        // lr / (1 + eps).
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::scalar(0.0), true);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg);
        store.get_mut(a).grad_mut()[0] = 1.0;
        adam.step(&mut store);
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert!((store.value(a).item() - expected).abs() < 1e-18);
        // constant gradient keeps m_hat = v_hat = 1
        adam.step(&mut store);
        assert!((store.value(a).item() - 2.0 * expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_square() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::scalar(1.0), true);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let mut trace = Vec::new();
        for _ in 0..100 {
            store.zero_grads();
            let mut t = Tape::new();
            let xv = t.param(&store, x);
            let l = t.square(xv);
            t.backward_into(l, &mut store).unwrap();
            adam.step(&mut store);
            trace.push(store.value(x).item());
        }
        // frozen from an independent scripted run of the Adam recurrence
        for (i, want) in [
            (0, 0.9000000005),
            (9, 0.07624915560691221),
            (49, -0.004818223222661105),
            (99, 0.002936675681102549),
        ] {
            assert!((trace[i] - want).abs() < 1e-12, "step {i}: {}", trace[i]);
        }
        // Adam overshoots on x², so |x| is a damped oscillation: the first
        // approach is monotone and the oscillation peaks shrink strictly.
        let abs: Vec<f64> = trace.iter().map(|v| v.abs()).collect();
        assert!(abs[..10].windows(2).all(|w| w[1] < w[0]));
        let peaks: Vec<f64> = abs
            .windows(3)
            .filter(|w| w[1] > w[0] && w[1] > w[2])
            .map(|w| w[1])
            .collect();
        assert!(peaks.len() >= 3);
        assert!(peaks.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::scalar(1.0), false);
        store.get_mut(a).grad_mut()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store);
        assert_eq!(store.value(a).item(), 1.0);
    }
}
