//! Two-layer convolutional LSTM with per-clip (Bayesian) dropout masks.
//!
//! Each layer computes input gate `I`, forget gate `A`, output gate `O`
//! and modulation `G` from convolutions of the (masked) layer input and
//! the (masked) previous hidden state:
//!
//! ```text
//! M^t = A ∘ M^{t−1} + I ∘ G
//! H^t = O ∘ tanh(M^t)
//! ```
//!
//! The second layer's hidden state is decoded by two stride-2
//! deconvolutions into a sigmoid map normalized to a distribution.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Affine, LEAK};
use crate::omcnn::ArchTable;
use crate::parallel;
use crate::params::{derive_seed, rng_from_seed, ParamStore, SeededRng};
use crate::tensor::{Element, Tensor};

/// Gate order used for weights and masks.
pub const GATES: [&str; 4] = ["i", "a", "o", "g"];

/// Name prefix of every 2C-LSTM parameter.
pub const PREFIX: &str = "clstm.";

/// Memory and hidden state of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerState {
    pub memory: Var,
    pub hidden: Var,
}

/// Concrete per-layer states carried between graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub memory: Vec<Tensor<T>>,
    pub hidden: Vec<Tensor<T>>,
}

impl<T: Element> LstmState<T> {
    pub fn zeros(layers: usize, shape: &[usize]) -> Self {
        LstmState {
            memory: vec![Tensor::zeros(shape); layers],
            hidden: vec![Tensor::zeros(shape); layers],
        }
    }
}

/// Dropout masks of one layer: hidden-path and feature-path mask per gate.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMaskSet<T> {
    pub hidden: [Tensor<T>; 4],
    pub feature: [Tensor<T>; 4],
    pub p_h: f64,
    pub p_f: f64,
}

fn check_rate(field: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(field, format!("dropout rate must lie in [0, 1), got {p}")));
    }
    Ok(())
}

fn bernoulli_mask<T: Element>(shape: &[usize], p: f64, rng: &mut SeededRng) -> Tensor<T> {
    let keep = T::c(1.0 / (1.0 - p));
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if p > 0.0 && rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    Tensor::new(shape, data).expect("mask shape")
}

impl<T: Element> DropoutMaskSet<T> {
    /// Samples inverted-dropout masks with values in `{0, 1/(1−p)}`.
    pub fn sample(shape: &[usize], p_h: f64, p_f: f64, rng: &mut SeededRng) -> Result<Self> {
        check_rate("p_h", p_h)?;
        check_rate("p_f", p_f)?;
        let hidden = std::array::from_fn(|_| bernoulli_mask(shape, p_h, rng));
        let feature = std::array::from_fn(|_| bernoulli_mask(shape, p_f, rng));
        Ok(DropoutMaskSet { hidden, feature, p_h, p_f })
    }

    pub fn sample_seeded(shape: &[usize], p_h: f64, p_f: f64, seed: u64) -> Result<Self> {
        Self::sample(shape, p_h, p_f, &mut rng_from_seed(seed))
    }
}

/// Gate activations of one cell evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CellOutput {
    pub state: LayerState,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub modulation: Var,
}

/// How dropout is applied over a clip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RunMode {
    /// No dropout.
    Deterministic,
    /// One mask sample per layer for the whole clip.
    Stochastic { p_h: f64, p_f: f64, seed: u64 },
    /// Average of `samples` stochastic passes with seeds derived from `seed`.
    MonteCarlo { p_h: f64, p_f: f64, samples: usize, seed: u64 },
}

#[derive(Clone, Debug)]
struct CellParams {
    feature: [Affine; 4],
    hidden: [Affine; 4],
}

/// Parameter handles of a 2C-LSTM instance.
#[derive(Clone, Debug)]
pub struct Clstm {
    pub fn_size: usize,
    pub channels: usize,
    kernel: usize,
    layers: Vec<CellParams>,
    head: Vec<(Affine, usize)>,
}

impl Clstm {
    pub fn new<T: Element>(arch: &ArchTable, store: &mut ParamStore<T>, seed: u64) -> Self {
        let rng = &mut rng_from_seed(seed);
        let c = arch.config.fn_channels;
        let k = arch.lstm_kernel;
        let layers = (0..arch.lstm_layers)
            .map(|l| {
                let name = |path: &str, q: &str| format!("clstm.layer{}.{path}_{q}", l + 1);
                CellParams {
                    feature: GATES.map(|q| Affine::conv(store, rng, &name("wf", q), k, c, c, true)),
                    hidden: GATES.map(|q| Affine::conv(store, rng, &name("wh", q), k, c, c, false)),
                }
            })
            .collect();
        let mut cin = c;
        let head = arch
            .lstm_deconvs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let p = Affine::deconv(store, rng, &format!("clstm.deconv{}", i + 1), d.kernel, cin, d.out_channels);
                cin = d.out_channels;
                (p, d.stride)
            })
            .collect();
        Clstm {
            fn_size: arch.config.fn_size,
            channels: c,
            kernel: k,
            layers,
            head,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Shape of each state tensor for a batch of `n` clips.
    pub fn state_shape(&self, n: usize) -> [usize; 4] {
        [n, self.fn_size, self.fn_size, self.channels]
    }

    /// One cell update of `layer` (0-based).
    pub fn cell<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        layer: usize,
        input: Var,
        state: &LayerState,
        masks: Option<&DropoutMaskSet<T>>,
    ) -> Result<CellOutput> {
        let p = self.layers.get(layer).ok_or_else(|| Error::Usage(format!("no LSTM layer {layer}")))?;
        let want = g.shape(state.hidden);
        for (what, v) in [("memory", state.memory), ("input", input)] {
            let got = g.shape(v);
            if got != want {
                let axis = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(0);
                return Err(Error::dim("clstm_cell", format!("{what} axis {axis}"), want.get(axis).copied().unwrap_or(0), got.get(axis).copied().unwrap_or(0)));
            }
        }
        let mut pre = Vec::with_capacity(4);
        for q in 0..4 {
            let (mut x, mut h) = (input, state.hidden);
            if let Some(m) = masks {
                x = g.mul(x, g.input(m.feature[q].clone()))?;
                h = g.mul(h, g.input(m.hidden[q].clone()))?;
            }
            let fx = p.feature[q].conv2d(g, store, x, 1)?;
            let fh = p.hidden[q].conv2d(g, store, h, 1)?;
            pre.push(g.add(fx, fh)?);
        }
        let i = g.sigmoid(pre[0]);
        let a = g.sigmoid(pre[1]);
        let o = g.sigmoid(pre[2]);
        let gm = g.tanh(pre[3]);
        let keep = g.mul(a, state.memory)?;
        let write = g.mul(i, gm)?;
        let memory = g.add(keep, write)?;
        let hidden = g.mul(o, g.tanh(memory))?;
        Ok(CellOutput {
            state: LayerState { memory, hidden },
            input_gate: i,
            forget_gate: a,
            output_gate: o,
            modulation: gm,
        })
    }

    /// Decodes the top hidden state into a saliency distribution.
    pub fn decode<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, hidden: Var) -> Result<Var> {
        let mut h = hidden;
        for (i, (p, stride)) in self.head.iter().enumerate() {
            h = p.deconv2d(g, store, h, *stride)?;
            if i + 1 < self.head.len() {
                h = g.leaky_relu(h, LEAK);
            }
        }
        g.normalize_samples(g.sigmoid(h))
    }

    /// One time step through every layer; returns the new states and map.
    pub fn step<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        feature: Var,
        states: &[LayerState],
        masks: Option<&[DropoutMaskSet<T>]>,
    ) -> Result<(Vec<LayerState>, Var)> {
        if states.len() != self.layers.len() {
            return Err(Error::dim("clstm_step", "layers", self.layers.len(), states.len()));
        }
        let mut x = feature;
        let mut next = Vec::with_capacity(states.len());
        for (l, s) in states.iter().enumerate() {
            let out = self.cell(g, store, l, x, s, masks.map(|m| &m[l]))?;
            x = out.state.hidden;
            next.push(out.state);
        }
        Ok((next, self.decode(g, store, x)?))
    }

    /// Runs a clip from zero state, returning one map per frame.
    pub fn forward<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        features: &[Var],
        masks: Option<&[DropoutMaskSet<T>]>,
    ) -> Result<Vec<Var>> {
        let first = *features.first().ok_or_else(|| Error::Usage("clstm_forward needs at least one frame".into()))?;
        let n = g.shape(first)[0];
        let shape = self.state_shape(n);
        let mut states: Vec<LayerState> = (0..self.layers.len())
            .map(|_| LayerState {
                memory: g.input(Tensor::zeros(&shape)),
                hidden: g.input(Tensor::zeros(&shape)),
            })
            .collect();
        let mut maps = Vec::with_capacity(features.len());
        for &f in features {
            let (next, map) = self.step(g, store, f, &states, masks)?;
            states = next;
            maps.push(map);
        }
        Ok(maps)
    }

    /// Samples one mask set per layer for a clip of batch size `n`.
    pub fn sample_masks<T: Element>(&self, n: usize, p_h: f64, p_f: f64, seed: u64) -> Result<Vec<DropoutMaskSet<T>>> {
        let rng = &mut rng_from_seed(seed);
        let shape = self.state_shape(n);
        (0..self.layers.len()).map(|_| DropoutMaskSet::sample(&shape, p_h, p_f, rng)).collect()
    }

    /// Inference over a clip of F_st tensors; returns one map per frame.
    pub fn predict<T: Element>(&self, store: &ParamStore<T>, features: &[Tensor<T>], mode: RunMode) -> Result<Vec<Tensor<T>>> {
        let first = features.first().ok_or_else(|| Error::Usage("clstm_forward needs at least one frame".into()))?;
        let n = first.shape()[0];
        let run = |masks: Option<&[DropoutMaskSet<T>]>| -> Result<Vec<Tensor<T>>> {
            let g = Graph::new();
            let vars: Vec<Var> = features.iter().map(|f| g.input(f.clone())).collect();
            let maps = self.forward(&g, store, &vars, masks)?;
            Ok(maps.into_iter().map(|m| g.value(m)).collect())
        };
        match mode {
            RunMode::Deterministic => run(None),
            RunMode::Stochastic { p_h, p_f, seed } => run(Some(&self.sample_masks(n, p_h, p_f, seed)?)),
            RunMode::MonteCarlo { p_h, p_f, samples, seed } => {
                if samples == 0 {
                    return Err(Error::config("mc_samples", "must be at least 1"));
                }
                let passes = parallel::map_indexed(samples, |l| -> Result<Vec<Tensor<T>>> {
                    run(Some(&self.sample_masks(n, p_h, p_f, derive_seed(seed, l as u64))?))
                });
                let mut acc: Option<Vec<Vec<f64>>> = None;
                for pass in passes {
                    let pass = pass?;
                    match &mut acc {
                        None => acc = Some(pass.iter().map(|t| t.to_f64_vec()).collect()),
                        Some(a) => {
                            for (dst, t) in a.iter_mut().zip(&pass) {
                                for (d, v) in dst.iter_mut().zip(t.data()) {
                                    *d += v.to_f64().unwrap();
                                }
                            }
                        }
                    }
                }
                let inv = 1.0 / samples as f64;
                Ok(acc
                    .unwrap()
                    .into_iter()
                    .zip(features)
                    .map(|(sum, _)| {
                        let shape = [n, self.fn_size * 4, self.fn_size * 4, 1];
                        Tensor::new(&shape, sum.into_iter().map(|v| T::c(v * inv)).collect()).expect("map shape")
                    })
                    .collect())
            }
        }
    }
}
