//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state; moments are indexed like the parameter store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Option<Tensor<T>>>,
    pub second_moment: Vec<Option<Tensor<T>>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update to every trainable weight, then clears gradients.
    ///
    /// Fails without touching anything if a trainable weight lacks a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if p.kind == ParamKind::Weight && p.trainable && p.grad.is_none() {
                return Err(Error::Usage(format!("parameter {} has no gradient", p.name)));
            }
        }
        self.first_moment.resize(store.len(), None);
        self.second_moment.resize(store.len(), None);
        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let lr = T::c(c.learning_rate);
        let decay = T::c(1.0 - c.learning_rate * c.weight_decay);
        let (bc1, bc2, eps) = (T::c(bc1), T::c(bc2), T::c(c.epsilon));

        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if p.kind != ParamKind::Weight || !p.trainable {
                continue;
            }
            let g = p.grad.take().expect("checked above");
            let i = id.index();
            let m_prev = self.first_moment[i].take().unwrap_or_else(|| Tensor::zeros(g.shape()));
            let v_prev = self.second_moment[i].take().unwrap_or_else(|| Tensor::zeros(g.shape()));
            let m = m_prev.zip_map(&g, |m, g| b1 * m + (T::one() - b1) * g);
            let v = v_prev.zip_map(&g, |v, g| b2 * v + (T::one() - b2) * g * g);
            let data = p
                .value
                .data()
                .iter()
                .zip(m.data())
                .zip(v.data())
                .map(|((&w, &m), &v)| w * decay - lr * (m / bc1) / ((v / bc2).sqrt() + eps))
                .collect();
            p.value = Tensor::from_parts(p.value.shape().to_vec(), data);
            self.first_moment[i] = Some(m);
            self.second_moment[i] = Some(v);
        }
        store.zero_grad();
        Ok(())
    }
}
