//! Parameter bundles for the layer types the networks are assembled from.

use crate::autodiff::{Graph, Mode, Padding, Var};
use crate::error::Result;
use crate::params::{xavier_init, ParamId, ParamStore, SeededRng};
use crate::tensor::{Element, Tensor};

/// Leakage coefficient of every leaky ReLU in the networks.
pub const LEAK: f64 = 0.1;

/// Weight and optional bias of a convolution, deconvolution or dense layer.
#[derive(Clone, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Affine {
    /// Convolution weight `(k, k, cin, cout)`.
    pub fn conv<T: Element>(store: &mut ParamStore<T>, rng: &mut SeededRng, name: &str, k: usize, cin: usize, cout: usize, bias: bool) -> Self {
        Self::register(store, rng, name, &[k, k, cin, cout], cout, bias)
    }

    /// Deconvolution weight `(k, k, cout, cin)`.
    pub fn deconv<T: Element>(store: &mut ParamStore<T>, rng: &mut SeededRng, name: &str, k: usize, cin: usize, cout: usize) -> Self {
        Self::register(store, rng, name, &[k, k, cout, cin], cout, true)
    }

    pub fn dense<T: Element>(store: &mut ParamStore<T>, rng: &mut SeededRng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self::register(store, rng, name, &[fan_in, fan_out], fan_out, true)
    }

    fn register<T: Element>(store: &mut ParamStore<T>, rng: &mut SeededRng, name: &str, shape: &[usize], cout: usize, bias: bool) -> Self {
        let w = store.weight(&format!("{name}.w"), xavier_init(shape, rng));
        let b = bias.then(|| store.weight(&format!("{name}.b"), Tensor::zeros(&[cout])));
        Affine { w, b }
    }

    fn bind<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>) -> (Var, Option<Var>) {
        (g.param(store, self.w), self.b.map(|b| g.param(store, b)))
    }

    pub fn conv2d<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var, stride: usize) -> Result<Var> {
        let (w, b) = self.bind(g, store);
        g.conv2d(x, w, b, stride, Padding::Same)
    }

    pub fn deconv2d<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var, stride: usize) -> Result<Var> {
        let (w, b) = self.bind(g, store);
        g.deconv2d(x, w, b, stride)
    }

    pub fn linear<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = self.bind(g, store);
        g.linear(x, w, b)
    }
}

/// Batch-norm affine weights and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: store.weight(&format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: store.weight(&format!("{name}.beta"), Tensor::zeros(&[c])),
            mean: store.buffer(&format!("{name}.mean"), Tensor::zeros(&[c])),
            var: store.buffer(&format!("{name}.var"), Tensor::ones(&[c])),
        }
    }

    pub fn apply<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let (gamma, beta) = (g.param(store, self.gamma), g.param(store, self.beta));
        g.batch_norm(x, gamma, beta, (self.mean, self.var), store, mode)
    }
}
