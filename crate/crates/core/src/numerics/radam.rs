//! Rectified Adam.
//!
//! Keeps Adam's first/second-moment accumulators but rectifies the adaptive
//! term: while the approximated second-moment variance is intractable (the
//! length of the SMA is <= 4, i.e. during the first few steps) the update
//! falls back to plain bias-corrected momentum; afterwards the step is
//! scaled by the published rectification factor.

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::array::{Array, Scalar};
use super::graph::Gradients;
use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RAdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: step count plus per-parameter moment accumulators with
/// the same shapes as their parameters.
pub struct RAdam<T> {
    pub config: RAdamConfig,
    step: u64,
    m: IndexMap<String, Array<T>>,
    v: IndexMap<String, Array<T>>,
}

impl<T: Scalar> RAdam<T> {
    pub fn new(config: RAdamConfig) -> Self {
        RAdam {
            config,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Parameters without a gradient entry are untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b1t = b1.powf(t);
        let b2t = b2.powf(t);
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        // Rectification factor, defined only when rho_t > 4.
        let rect = if rho_t > 4.0 {
            Some(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };
        let lr = self.config.learning_rate;
        let eps = self.config.epsilon;

        for (name, param) in params.iter_mut() {
            if !param.trainable {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != param.value.shape() {
                return Err(Error::Usage(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    param.value.shape()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.shape()));
            let b1s = T::from_f64(b1);
            let b2s = T::from_f64(b2);
            let one_b1 = T::from_f64(1.0 - b1);
            let one_b2 = T::from_f64(1.0 - b2);
            let m_corr = T::from_f64(1.0 / (1.0 - b1t));
            for ((pv, gv), (mv, vv)) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1s * *mv + one_b1 * *gv;
                *vv = b2s * *vv + one_b2 * *gv * *gv;
                let m_hat = *mv * m_corr;
                let delta = match rect {
                    Some(r) => {
                        let v_hat = (vv.to_f64() / (1.0 - b2t)).sqrt();
                        T::from_f64(lr * r * m_hat.to_f64() / (v_hat + eps))
                    }
                    None => T::from_f64(lr * m_hat.to_f64()),
                };
                *pv = *pv - delta;
            }
        }
        Ok(())
    }

    /// Export accumulators for checkpointing under the reserved `opt/`
    /// namespace, plus the step counter.
    pub fn export_state(&self) -> Vec<(String, Array<T>)> {
        let mut out = Vec::new();
        out.push((
            "opt/step".to_string(),
            Array::scalar(T::from_f64(self.step as f64)),
        ));
        for (name, arr) in &self.m {
            out.push((format!("opt/m/{name}"), arr.clone()));
        }
        for (name, arr) in &self.v {
            out.push((format!("opt/v/{name}"), arr.clone()));
        }
        out
    }

    /// Restore accumulators exported by [`RAdam::export_state`].
    pub fn import_state(&mut self, entries: &[(String, Array<T>)]) -> Result<()> {
        for (name, arr) in entries {
            if name == "opt/step" {
                self.step = arr.item().to_f64() as u64;
            } else if let Some(p) = name.strip_prefix("opt/m/") {
                self.m.insert(p.to_string(), arr.clone());
            } else if let Some(p) = name.strip_prefix("opt/v/") {
                self.v.insert(p.to_string(), arr.clone());
            } else {
                return Err(Error::Checkpoint(format!(
                    "unexpected optimizer record {name}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Array::scalar(x), true);
        s
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = scalar_store(0.7);
        let mut opt = RAdam::new(RAdamConfig::default());
        for _ in 0..10 {
            let mut g = Gradients::new();
            g.insert("w".to_string(), Array::scalar(0.0));
            opt.step(&mut store, &g).unwrap();
        }
        assert_eq!(store.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn default_hyperparameters() {
        let c = RAdamConfig::default();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.beta1, 0.9);
        assert_eq!(c.beta2, 0.999);
    }

    /// Independent evaluation of the rectified recurrence on a scalar
    /// parameter with constant gradient; first steps fall in the
    /// momentum-only regime, later ones in the variance-adapted regime.
    #[test]
    fn matches_hand_rolled_recurrence() {
        let cfg = RAdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.8, // small beta2 so the rectified branch activates by step 5
            epsilon: 1e-8,
        };
        let grad = 0.3f64;
        let mut store = scalar_store(1.0);
        let mut opt = RAdam::new(cfg);

        // Hand-rolled reference.
        let mut w = 1.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
        for t in 1..=5u32 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
            let b1t = cfg.beta1.powi(t as i32);
            let b2t = cfg.beta2.powi(t as i32);
            let m_hat = m / (1.0 - b1t);
            let rho_t = rho_inf - 2.0 * (t as f64) * b2t / (1.0 - b2t);
            if rho_t > 4.0 {
                let r = (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt();
                let v_hat = (v / (1.0 - b2t)).sqrt();
                w -= cfg.learning_rate * r * m_hat / (v_hat + cfg.epsilon);
            } else {
                w -= cfg.learning_rate * m_hat;
            }

            let mut g = Gradients::new();
            g.insert("w".to_string(), Array::scalar(grad));
            opt.step(&mut store, &g).unwrap();
            let got = store.get("w").unwrap().item();
            assert!(
                (got - w).abs() < 1e-12,
                "step {t}: optimizer {got} vs reference {w}"
            );
        }
    }
}
