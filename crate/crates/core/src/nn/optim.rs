use super::param::{ParamGrads, ParamStore};
use crate::error::{FlockError, Result};

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Decay is applied to the parameter before the moment update:
/// `p <- p - lr * wd * p`, then the usual bias-corrected Adam step.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub(crate) step: u64,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters with no gradient are left untouched.
    ///
    /// A non-finite gradient aborts the step before any parameter changes and
    /// reports the offending parameter by name.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        for (id, p) in store.iter() {
            if let Some(g) = grads.get(id) {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(FlockError::NonFinite(format!("gradient of {}", p.name)));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((w, gi), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *w -= c.lr * c.weight_decay * *w;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn one_param(value: f64) -> (ParamStore, super::super::param::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(value)).unwrap();
        (store, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        // After one step the bias-corrected ratio m/sqrt(v) equals sign(g).
        let (mut store, id) = one_param(1.0);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                ..Default::default()
            },
            &store,
        );
        let mut g = ParamGrads::empty(1);
        g.accumulate_slice(id, &[3.0]);
        opt.step(&mut store, &g).unwrap();
        let expected = 1.0 - 0.1 * 3.0 / (3.0 + 1e-8);
        assert!((store.tensor(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_shrinks_with_zero_gradient() {
        let (mut store, id) = one_param(2.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        let mut g = ParamGrads::empty(1);
        g.accumulate_slice(id, &[0.0]);
        opt.step(&mut store, &g).unwrap();
        assert!((store.tensor(id).item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut store, id) = one_param(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        let mut g = ParamGrads::empty(1);
        g.accumulate_slice(id, &[f64::NAN]);
        let err = opt.step(&mut store, &g).unwrap_err().to_string();
        assert!(err.contains('w'), "{err}");
        assert_eq!(store.tensor(id).item(), 1.0);
    }
}
