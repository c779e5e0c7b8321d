//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::params::{flat, flat_mut};
use crate::model::ParameterSet;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl AdamW {
    /// Zero moments for every tensor of `trainable`.
    pub fn new(trainable: &ParameterSet, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: trainable.zeros_like(),
            v: trainable.zeros_like(),
        }
    }

    /// Update every tensor named in `grads`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .try_get(name)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown tensor `{name}`")))?;
            let m = self
                .m
                .try_get(name)
                .ok_or_else(|| Error::Shape(format!("no optimizer state for `{name}`")))?;
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "`{name}`: parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.eps, lr * self.weight_decay);
        for (name, g) in grads.iter() {
            let g = flat(g);
            let m = flat_mut(self.m.get_mut(name));
            let v = flat_mut(self.v.get_mut(name));
            let p = flat_mut(params.get_mut(name));
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= decay * p[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as one set with `m.` / `v.` prefixes.
    pub fn to_state(&self) -> ParameterSet {
        let mut state = ParameterSet::new();
        for (prefix, set) in [("m.", &self.m), ("v.", &self.v)] {
            for (k, t) in set.iter() {
                state.insert(format!("{prefix}{k}"), t.clone());
            }
        }
        state
    }

    pub fn from_state(state: &ParameterSet, step: u64, weight_decay: f64) -> Self {
        let mut opt = Self::new(&ParameterSet::new(), weight_decay);
        opt.step = step;
        for (k, t) in state.iter() {
            if let Some(name) = k.strip_prefix("m.") {
                opt.m.insert(name, t.clone());
            } else if let Some(name) = k.strip_prefix("v.") {
                opt.v.insert(name, t.clone());
            }
        }
        opt
    }

    pub fn snap_to_f32(&mut self) {
        self.m.snap_to_f32();
        self.v.snap_to_f32();
    }
}
