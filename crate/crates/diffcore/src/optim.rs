//! AMSGrad with coupled (L2) weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DiffError, Result};
use crate::params::{Gradients, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmsGrad {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsGrad {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AmsGrad {
    /// One update of every parameter named in `grads`.
    ///
    /// The decay term `weight_decay * theta` is added to the gradient before
    /// the moments are updated. `v_hat` is the running maximum of the raw
    /// second moment; both moments are bias corrected with the global step.
    /// Parameters absent from `grads` are left untouched.
    pub fn step(&self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let slot = store
                .slots
                .get(name)
                .ok_or_else(|| DiffError::UnknownParameter(name.clone()))?;
            if slot.value.shape() != g.shape() {
                return shape_err(
                    "amsgrad_step",
                    format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), slot.value.shape()),
                );
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let slot = store.slots.get_mut(name).expect("validated above");
            let value = slot.value.data_mut();
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            let v_max = slot.v_max.data_mut();
            for i in 0..value.len() {
                let gi = g.data()[i] + self.weight_decay * value[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                v_max[i] = v_max[i].max(v[i]);
                let denom = (v_max[i] / bc2).sqrt() + self.eps;
                value[i] -= self.lr * (m[i] / bc1) / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn scalar_store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("x", Tensor::scalar(x)).unwrap();
        s
    }

    fn grad(x: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert("x".into(), Tensor::scalar(x));
        g
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let opt = AmsGrad {
            weight_decay: 0.0,
            ..AmsGrad::default()
        };
        for _ in 0..5 {
            opt.step(&mut s, &grad(0.0)).unwrap();
        }
        assert_eq!(s.get("x").unwrap().item(), 0.7);
    }

    #[test]
    fn memoryless_moments_reduce_to_normalised_sgd() {
        let opt = AmsGrad {
            lr: 0.1,
            weight_decay: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
        };
        for g in [2.5, -0.3, 1e-3] {
            let mut s = scalar_store(1.0);
            opt.step(&mut s, &grad(g)).unwrap();
            let expected = 1.0 - 0.1 * g / (g.abs() + 1e-8);
            assert!((s.get("x").unwrap().item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_or_misshaped_gradients_are_rejected() {
        let mut s = scalar_store(1.0);
        let mut g = Gradients::new();
        g.insert("y".into(), Tensor::scalar(1.0));
        assert!(AmsGrad::default().step(&mut s, &g).is_err());
        let mut g = Gradients::new();
        g.insert("x".into(), Tensor::row(vec![1.0, 2.0]));
        assert!(AmsGrad::default().step(&mut s, &g).is_err());
        assert_eq!(s.step_count(), 0);
    }
}
