//! Named parameter storage and initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Seeded generator used for every stochastic draw in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of the `index`-th independent stream under `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by gradient descent.
    Weight,
    /// State updated outside the optimizer, e.g. batch-norm running stats.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub kind: ParamKind,
    /// Frozen weights enter graphs as constants and never receive gradients.
    pub trainable: bool,
}

/// Ordered collection of parameters addressed by [`ParamId`] or name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            trainable: kind == ParamKind::Weight,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn weight(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, ParamKind::Weight)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, ParamKind::Buffer)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of scalar weights (buffers excluded).
    pub fn weight_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Weight).map(|p| p.value.len()).sum()
    }

    /// Marks every weight whose name starts with `prefix` as (non-)trainable.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.kind == ParamKind::Weight && p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Adds the gradients of every bound parameter into its `grad` slot.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for &(id, var) in grads.bound_params() {
            let Some(g) = grads.get(var) else { continue };
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            p.grad = Some(match p.grad.take() {
                Some(acc) => acc.zip_map(&g, |a, b| a + b),
                None => g,
            });
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, t) in updates {
            self.params[id.0].value = t;
        }
    }

    /// Replaces the value of `name`, checking the shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::Data(format!("unknown parameter {name}")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim("set parameter", name.to_string(), p.value.len(), value.len()));
        }
        p.value = value;
        Ok(())
    }

    /// Converts every value to another element type.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    kind: p.kind,
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Global gradient norm over trainable weights that received gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter().map(|v| v.to_f64().unwrap().powi(2)))
            .sum::<f64>()
            .sqrt()
    }
}

/// Fan-in and fan-out of a weight shape.
///
/// Convolution kernels `(kh, kw, a, b)` count the receptive field on both
/// sides; matrices `(in, out)` use their extents directly.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [kh, kw, a, b] => (kh * kw * a, kh * kw * b),
        [i, o] => (*i, *o),
        [n] => (*n, *n),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

/// Glorot-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Element>(shape: &[usize], rng: &mut SeededRng) -> Tensor<T> {
    let (fi, fo) = fans(shape);
    let bound = (6.0 / (fi + fo) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.random_range(-bound..bound))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Convenience wrapper seeding a fresh generator.
pub fn xavier_init_seeded<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    xavier_init(shape, &mut rng_from_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_is_deterministic_and_bounded() {
        let a: Tensor<f32> = xavier_init_seeded(&[3, 3, 16, 32], 7);
        let b: Tensor<f32> = xavier_init_seeded(&[3, 3, 16, 32], 7);
        assert_eq!(a, b);
        let bound = (6.0f64 / (9.0 * 48.0)).sqrt() as f32;
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        let c: Tensor<f32> = xavier_init_seeded(&[3, 3, 16, 32], 8);
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_variance_matches_glorot() {
        // Uniform(-b, b) has variance b²/3 = 2/(fan_in + fan_out).
        let t: Tensor<f64> = xavier_init_seeded(&[100, 100], 3);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let want = 2.0 / 200.0;
        assert!((var - want).abs() / want < 0.1, "var {var} want {want}");
    }

    #[test]
    fn frozen_params_get_no_grad() {
        use crate::autodiff::Graph;
        let mut store = ParamStore::<f64>::new();
        let a = store.weight("enc.w", Tensor::ones(&[1]));
        let b = store.weight("dec.w", Tensor::ones(&[1]));
        store.set_trainable("enc.", false);
        let g = Graph::new();
        let (va, vb) = (g.param(&store, a), g.param(&store, b));
        let y = g.mul(va, vb).unwrap();
        let grads = g.backward(y).unwrap();
        store.accumulate(&grads);
        assert!(store.get(a).grad.is_none());
        assert_eq!(store.get(b).grad.as_ref().unwrap().data(), &[1.0]);
    }
}
