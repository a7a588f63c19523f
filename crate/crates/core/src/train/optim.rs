use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self { kind: OptimizerKind::Adam, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }

    pub fn adamw() -> Self {
        Self { kind: OptimizerKind::AdamW, weight_decay: 0.01, ..Self::adam() }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

/// Adam / AdamW moments for every master parameter.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<Tensor<f32>>,
    second: Vec<Tensor<f32>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with bias-corrected moments. Parameters without a gradient
    /// (unused this step) still receive decoupled weight decay under AdamW.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor<f32>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::dim("optimizer", format!("gradient {:?} for '{}'", g.shape(), params.name(id))));
                }
                if !g.all_finite() {
                    return Err(Error::Numerical(format!("non-finite gradient for '{}'", params.name(id))));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = match c.kind {
            OptimizerKind::AdamW => (lr * c.weight_decay) as f32,
            OptimizerKind::Adam => 0.0,
        };
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            if decay != 0.0 {
                for v in p.iter_mut() {
                    *v -= decay * *v;
                }
            }
            let Some(g) = &grads[i] else { continue };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv as f64;
                let m1 = c.beta1 * *mv as f64 + (1.0 - c.beta1) * gv;
                let v1 = c.beta2 * *vv as f64 + (1.0 - c.beta2) * gv * gv;
                *mv = m1 as f32;
                *vv = v1 as f32;
                let update = lr * (m1 / bc1) / ((v1 / bc2).sqrt() + c.eps);
                *pv -= update as f32;
            }
        }
        Ok(())
    }
}
