use std::collections::BTreeMap;

use crate::param::{ParamId, ParamStore};
use crate::tensor::Scalar;

/// Adam with decoupled weight decay.
///
/// Each step first shrinks decayed blocks by `1 − lr·weight_decay`, then
/// applies the bias-corrected Adam update. Frozen blocks are skipped.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
    pub weight_decay: Scalar,
    step: i32,
    moments: BTreeMap<ParamId, (Vec<Scalar>, Vec<Scalar>)>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(0.937, 0.999, 1e-8, 5e-4)
    }
}

impl AdamW {
    pub fn new(beta1: Scalar, beta2: Scalar, eps: Scalar, weight_decay: Scalar) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update from the accumulated `grad` of every block.
    pub fn step<'a>(&mut self, stores: impl IntoIterator<Item = &'a mut ParamStore>, lr: Scalar) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for store in stores {
            for block in store.iter_mut() {
                if block.frozen {
                    continue;
                }
                let n = block.numel();
                let (m, v) = self
                    .moments
                    .entry(block.id)
                    .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
                let shrink = if block.decay { 1.0 - lr * self.weight_decay } else { 1.0 };
                let data = block.value.data_mut();
                for i in 0..n {
                    let g = block.grad[i];
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    data[i] = data[i] * shrink - lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }
}
