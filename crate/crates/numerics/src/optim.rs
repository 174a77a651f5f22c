use crate::{Array, NumericsError, ParamStore, Real, Result};

/// `base_lr · (1 − step/total_steps)`.
pub fn linear_schedule(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(NumericsError::ScheduleOverrun { step, total: total_steps });
    }
    Ok(base_lr * (1.0 - step as f64 / total_steps as f64))
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| {
            let g = g.as_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt();
    let coef = max_norm / (norm + 1e-6);
    if coef < 1.0 {
        let c = T::of(coef);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clipping; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Linear decay to zero over `total_steps`; constant `base_lr` when false.
    pub linear_decay: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            linear_decay: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub total_steps: u64,
    pub m: Vec<Array<T>>,
    pub v: Vec<Array<T>>,
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub state: OptimizerState<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>, total_steps: u64) -> Result<Self> {
        if !(0.0 < config.beta1 && config.beta1 < 1.0 && 0.0 < config.beta2 && config.beta2 < 1.0) {
            return Err(NumericsError::Config(format!("betas must lie in (0, 1): {} {}", config.beta1, config.beta2)));
        }
        if total_steps == 0 {
            return Err(NumericsError::Config("total_steps must be positive".into()));
        }
        let m = store.iter().map(|p| Array::zeros(p.value.shape())).collect();
        let v = store.iter().map(|p| Array::zeros(p.value.shape())).collect();
        Ok(Self { config, state: OptimizerState { step: 0, total_steps, m, v } })
    }

    /// Learning rate the next call to [`AdamW::step`] will use.
    pub fn current_lr(&self) -> Result<f64> {
        if self.config.linear_decay {
            linear_schedule(self.state.step, self.state.total_steps, self.config.base_lr)
        } else {
            Ok(self.config.base_lr)
        }
    }

    /// Apply one update from the accumulated gradients, then zero them.
    /// Returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<f64> {
        if self.state.step >= self.state.total_steps {
            return Err(NumericsError::ScheduleOverrun { step: self.state.step, total: self.state.total_steps });
        }
        if store.len() != self.state.m.len() {
            return Err(NumericsError::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.m.len(),
                store.len()
            )));
        }
        for (p, m) in store.iter().zip(&self.state.m) {
            if p.grad.shape() != p.value.shape() || m.shape() != p.value.shape() {
                return Err(NumericsError::Shape(format!("gradient/state shape mismatch for {}", p.name)));
            }
        }
        if let Some(max_norm) = self.config.clip_norm {
            clip_grad_norm(store, max_norm);
        }
        let lr = self.current_lr()?;
        let t = (self.state.step + 1) as i32;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr_t, wd, eps) = (T::of(lr), T::of(c.weight_decay), T::of(c.eps));
        let one = T::one();
        for ((p, m), v) in store.iter_mut().zip(&mut self.state.m).zip(&mut self.state.v) {
            let value = std::sync::Arc::make_mut(&mut p.value);
            let it = value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((x, &g), (mi, vi)) in it {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x = *x - lr_t * (m_hat / (v_hat.sqrt() + eps)) - lr_t * wd * *x;
            }
        }
        store.zero_grads();
        self.state.step += 1;
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Array::from_vec(vec![x])).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.get_mut(crate::ParamId(0)).grad.data_mut()[0] = g;
    }

    fn x_of(s: &ParamStore<f64>) -> f64 {
        s.get(crate::ParamId(0)).value.data()[0]
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(linear_schedule(0, 100, 1e-4).unwrap(), 1e-4);
        assert_eq!(linear_schedule(100, 100, 1e-4).unwrap(), 0.0);
        assert!((linear_schedule(25, 100, 1e-4).unwrap() - 7.5e-5).abs() < 1e-18);
        assert!(linear_schedule(101, 100, 1e-4).is_err());
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // f(x) = x², x = 5 → g = 10; after one step m̂ = g and v̂ = g².
        let mut s = scalar_store(5.0);
        let cfg = AdamWConfig { base_lr: 0.1, clip_norm: None, linear_decay: false, ..Default::default() };
        let mut opt = AdamW::new(cfg, &s, 10).unwrap();
        set_grad(&mut s, 10.0);
        opt.step(&mut s).unwrap();
        let expected = 5.0 - 0.1 * 10.0 / (10.0 + 1e-8) - 0.1 * 0.01 * 5.0;
        assert!((x_of(&s) - expected).abs() < 1e-15);
        assert_eq!(s.get(crate::ParamId(0)).grad.data(), &[0.0]);
        assert_eq!(opt.state.step, 1);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut s = scalar_store(0.0);
        let cfg = AdamWConfig { base_lr: 0.05, weight_decay: 0.0, clip_norm: None, linear_decay: false, ..Default::default() };
        let mut opt = AdamW::new(cfg, &s, 500).unwrap();
        for _ in 0..500 {
            let x = x_of(&s);
            set_grad(&mut s, 2.0 * (x - 2.0));
            opt.step(&mut s).unwrap();
        }
        assert!((x_of(&s) - 2.0).abs() < 1e-2, "x = {}", x_of(&s));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(1.25);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &s, 3).unwrap();
        opt.step(&mut s).unwrap();
        assert_eq!(x_of(&s), 1.25);
    }

    #[test]
    fn refuses_to_run_past_total_steps() {
        let mut s = scalar_store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s, 1).unwrap();
        opt.step(&mut s).unwrap();
        assert!(matches!(opt.step(&mut s), Err(NumericsError::ScheduleOverrun { .. })));
    }

    #[test]
    fn rejects_bad_betas() {
        let s = scalar_store(1.0);
        let cfg = AdamWConfig { beta1: 1.0, ..Default::default() };
        assert!(AdamW::new(cfg, &s, 1).is_err());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Array::from_vec(vec![0.0, 0.0])).unwrap();
        s.get_mut(crate::ParamId(0)).grad = Array::from_vec(vec![3.0, 4.0]);
        let before = clip_grad_norm(&mut s, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let g = s.get(crate::ParamId(0)).grad.data();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-5);
    }
}
