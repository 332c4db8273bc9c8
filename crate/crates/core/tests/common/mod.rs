//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod contracts;
pub mod oracles;
pub mod runs;
pub mod scenes;

use rand::Rng;
use vidsal::autodiff::{Graph, Mode, Padding, Var};
use vidsal::clstm::{Clstm, LayerState};
use vidsal::gradcheck::{check_inputs, check_params, GradCheckReport};
use vidsal::loss::om_cnn_loss;
use vidsal::omcnn::{ArchTable, OmCnn, OmCnnConfig, Variant};
use vidsal::params::{rng_from_seed, ParamStore};
use vidsal::{Result, Tensor};

pub const GRAD_TOL: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random positive tensor whose batch samples each sum to 1.
pub fn random_distribution(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = random_tensor(shape, 0.05, 1.0, seed);
    let per = t.len() / shape[0];
    let mut d = t.data().to_vec();
    for s in d.chunks_mut(per) {
        let sum: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(shape, d).unwrap()
}

/// Scalar probe `Σ x ⊙ r` with a fixed random `r`, so every output
/// coordinate carries a distinct weight into the checked loss.
pub fn probe(g: &Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let r = g.input(random_tensor(&g.shape(x), -1.0, 1.0, seed));
    Ok(g.sum(g.mul(x, r)?))
}

/// One finite-difference check per differentiable op.
pub fn op_checks() -> Vec<(&'static str, Result<GradCheckReport>)> {
    let x4 = random_tensor(&[2, 5, 5, 3], -1.0, 1.0, 1);
    let w33 = random_tensor(&[3, 3, 3, 4], -0.5, 0.5, 2);
    let b4 = random_tensor(&[4], -0.5, 0.5, 3);
    let dw = random_tensor(&[4, 4, 2, 3], -0.5, 0.5, 4);
    let pos = random_tensor(&[2, 4, 4, 3], 0.2, 2.0, 5);
    let m1 = random_tensor(&[2, 5, 5, 1], -1.0, 1.0, 6);
    let lin_x = random_tensor(&[3, 6], -1.0, 1.0, 7);
    let lin_w = random_tensor(&[6, 4], -0.5, 0.5, 8);
    let lin_b = random_tensor(&[4], -0.5, 0.5, 9);
    let dist = random_distribution(&[2, 4, 4, 1], 10);
    let ground = random_distribution(&[2, 4, 4, 1], 11);
    let s = 99;
    vec![
        ("conv2d same stride 1", check_inputs(&[x4.clone(), w33.clone(), b4.clone()], None, s, |g, v| {
            probe(g, g.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same)?, 1)
        })),
        ("conv2d same stride 2", check_inputs(&[x4.clone(), w33.clone(), b4.clone()], None, s, |g, v| {
            probe(g, g.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same)?, 2)
        })),
        ("conv2d valid", check_inputs(&[x4.clone(), w33.clone()], None, s, |g, v| {
            probe(g, g.conv2d(v[0], v[1], None, 1, Padding::Valid)?, 3)
        })),
        ("deconv2d stride 2", check_inputs(&[random_tensor(&[1, 3, 3, 3], -1.0, 1.0, 12), dw.clone(), random_tensor(&[2], -0.5, 0.5, 13)], None, s, |g, v| {
            probe(g, g.deconv2d(v[0], v[1], Some(v[2]), 2)?, 4)
        })),
        ("maxpool2d", check_inputs(&[random_tensor(&[2, 4, 4, 3], -1.0, 1.0, 14)], None, s, |g, v| {
            probe(g, g.maxpool2d(v[0], 2, 2)?, 5)
        })),
        ("leaky_relu", check_inputs(&[x4.clone()], None, s, |g, v| probe(g, g.leaky_relu(v[0], 0.1), 6))),
        ("bilinear up", check_inputs(&[random_tensor(&[1, 3, 4, 2], -1.0, 1.0, 15)], None, s, |g, v| {
            probe(g, g.bilinear_resize(v[0], 7, 5)?, 7)
        })),
        ("bilinear down", check_inputs(&[random_tensor(&[1, 8, 6, 2], -1.0, 1.0, 16)], None, s, |g, v| {
            probe(g, g.bilinear_resize(v[0], 3, 4)?, 8)
        })),
        ("add", check_inputs(&[x4.clone(), x4.map(|v| v * 0.3)], None, s, |g, v| probe(g, g.add(v[0], v[1])?, 9))),
        ("sub", check_inputs(&[x4.clone(), x4.map(|v| v * 0.3)], None, s, |g, v| probe(g, g.sub(v[0], v[1])?, 10))),
        ("mul", check_inputs(&[x4.clone(), x4.map(|v| v * 0.3 + 0.1)], None, s, |g, v| probe(g, g.mul(v[0], v[1])?, 11))),
        ("mul_channels", check_inputs(&[x4.clone(), m1.clone()], None, s, |g, v| probe(g, g.mul_channels(v[0], v[1])?, 12))),
        ("affine", check_inputs(&[x4.clone()], None, s, |g, v| probe(g, g.affine(v[0], -0.7, 0.2), 13))),
        ("scale", check_inputs(&[x4.clone()], None, s, |g, v| probe(g, g.scale(v[0], 1.7), 14))),
        ("sigmoid", check_inputs(&[x4.clone()], None, s, |g, v| probe(g, g.sigmoid(v[0]), 15))),
        ("tanh", check_inputs(&[x4.clone()], None, s, |g, v| probe(g, g.tanh(v[0]), 16))),
        ("log", check_inputs(&[pos.clone()], None, s, |g, v| probe(g, g.log(v[0]), 17))),
        ("concat_channels", check_inputs(&[x4.clone(), m1.clone()], None, s, |g, v| {
            probe(g, g.concat_channels(&[v[0], v[1]])?, 18)
        })),
        ("sum", check_inputs(&[x4.clone()], None, s, |g, v| Ok(g.sum(v[0])))),
        ("mean_scalars", check_inputs(&[x4.clone(), pos.clone()], None, s, |g, v| {
            let a = probe(g, v[0], 19)?;
            let b = probe(g, v[1], 20)?;
            g.mean_scalars(&[a, b])
        })),
        ("normalize_samples", check_inputs(&[pos.clone()], None, s, |g, v| probe(g, g.normalize_samples(v[0])?, 21))),
        ("reshape", check_inputs(&[x4.clone()], None, s, |g, v| probe(g, g.reshape(v[0], &[2, 75])?, 22))),
        ("linear", check_inputs(&[lin_x, lin_w, lin_b], None, s, |g, v| probe(g, g.linear(v[0], v[1], Some(v[2]))?, 23))),
        ("kl_div", check_inputs(&[dist], None, s, move |g, v| g.kl_div(&ground, v[0], 1e-8))),
        ("batch_norm train", {
            let mut store = ParamStore::<f64>::new();
            let mean = store.buffer("bn.mean", Tensor::zeros(&[3]));
            let var = store.buffer("bn.var", Tensor::ones(&[3]));
            let gamma = random_tensor(&[3], 0.5, 1.5, 24);
            let beta = random_tensor(&[3], -0.5, 0.5, 25);
            check_inputs(&[x4.clone(), gamma, beta], None, s, move |g, v| {
                probe(g, g.batch_norm(v[0], v[1], v[2], (mean, var), &store, Mode::Train)?, 26)
            })
        }),
    ]
}

/// Small tiny-scale configuration for 64-bit end-to-end checks.
pub fn grad_config() -> OmCnnConfig {
    OmCnnConfig {
        input_size: 64,
        fn_size: 8,
        ..OmCnnConfig::tiny()
    }
}

/// End-to-end OM-CNN loss check; `per_param` random coordinates per weight tensor.
pub fn omcnn_loss_check(per_param: usize) -> Result<GradCheckReport> {
    let arch = ArchTable::new(&grad_config())?;
    let mut store = ParamStore::<f64>::new();
    let model = OmCnn::new(&arch, Variant::Full, &mut store, 7);
    let size = arch.config.input_size;
    let prev = random_tensor(&[1, size, size, 3], -0.5, 0.5, 30);
    let cur = random_tensor(&[1, size, size, 3], -0.5, 0.5, 31);
    let m = arch.map_extent();
    let ground = random_distribution(&[1, m, m, 1], 32);
    check_params(&store, per_param, 33, |g, s| {
        let (p, c) = (g.input(prev.clone()), g.input(cur.clone()));
        let out = model.forward(g, s, p, c, Mode::Train)?;
        om_cnn_loss(g, &ground, out.fine, out.coarse, 0.5)
    })
}

/// Two-frame 2C-LSTM check through the cells and the decoder.
pub fn clstm_two_frame_check(per_param: usize) -> Result<GradCheckReport> {
    let arch = ArchTable::new(&OmCnnConfig {
        fn_channels: 4,
        ..grad_config()
    })?;
    let mut store = ParamStore::<f64>::new();
    let model = Clstm::new(&arch, &mut store, 8);
    let shape = model.state_shape(1);
    let feats = [random_tensor(&shape, -1.0, 1.0, 40), random_tensor(&shape, -1.0, 1.0, 41)];
    let m = arch.map_extent();
    let ground = [random_distribution(&[1, m, m, 1], 42), random_distribution(&[1, m, m, 1], 43)];
    let masks = model.sample_masks::<f64>(1, 0.25, 0.25, 44)?;
    check_params(&store, per_param, 45, |g, s| {
        let vars: Vec<Var> = feats.iter().map(|f| g.input(f.clone())).collect();
        let maps = model.forward(g, s, &vars, Some(&masks))?;
        vidsal::loss::clstm_loss(g, &ground, &maps)
    })
}

/// Zero-initialized layer states for `model`.
pub fn zero_states(g: &Graph<f64>, model: &Clstm) -> Vec<LayerState> {
    let shape = model.state_shape(1);
    (0..model.layer_count())
        .map(|_| LayerState {
            memory: g.input(Tensor::zeros(&shape)),
            hidden: g.input(Tensor::zeros(&shape)),
        })
        .collect()
}
