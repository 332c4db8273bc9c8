//! Exact algebraic contracts of the losses, the feature mask and the
//! ConvLSTM, as checks returning a description of the first violation.

use vidsal::autodiff::Graph;
use vidsal::clstm::{Clstm, DropoutMaskSet, LayerState};
use vidsal::loss::{clstm_loss, kl_loss, loss_weights, om_cnn_loss};
use vidsal::omcnn::{mask_features, ArchTable, OmCnnConfig};
use vidsal::params::ParamStore;
use vidsal::Tensor;

use super::{random_distribution, random_tensor};

type Check = std::result::Result<(), String>;

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub fn loss_identities(seed: u64) -> Check {
    for lambda in [0.0, 0.5, 2.0] {
        let (wf, wc) = loss_weights(lambda).map_err(|e| e.to_string())?;
        ensure(wf + wc == 1.0, || format!("weights for λ={lambda} sum to {}", wf + wc))?;
    }
    let ground = random_distribution(&[2, 6, 6, 1], seed);
    let fine = random_distribution(&[2, 6, 6, 1], seed + 1);
    let coarse = random_tensor(&[2, 6, 6, 1], 0.1, 1.0, seed + 2);
    let g = Graph::<f64>::new();
    let (f, c) = (g.input(fine.clone()), g.input(coarse));
    let full = g.value(om_cnn_loss(&g, &ground, f, c, 0.0).map_err(|e| e.to_string())?);
    let plain = g.value(kl_loss(&g, &ground, f).map_err(|e| e.to_string())?);
    ensure(full == plain, || format!("λ=0 loss {full:?} differs from KL {plain:?}"))?;

    let one = random_distribution(&[1, 6, 6, 1], seed + 3);
    let s = g.input(random_distribution(&[1, 6, 6, 1], seed + 4));
    let clip = g.value(clstm_loss(&g, std::slice::from_ref(&one), &[s]).map_err(|e| e.to_string())?);
    let frame = g.value(kl_loss(&g, &one, s).map_err(|e| e.to_string())?);
    ensure(clip == frame, || format!("single-frame clip loss {clip:?} differs from KL {frame:?}"))
}

pub fn mask_law(seed: u64) -> Check {
    let c = random_tensor(&[2, 6, 6, 5], -2.0, 2.0, seed);
    let s1 = random_tensor(&[2, 3, 3, 1], 0.0, 1.0, seed + 1);
    let s2 = random_tensor(&[2, 3, 3, 1], 0.0, 1.0, seed + 2);
    let g = Graph::<f64>::new();
    let cv = g.input(c.clone());
    let run = |s: Tensor<f64>, gamma: f64| -> Result<Tensor<f64>, String> {
        Ok(g.value(mask_features(&g, cv, g.input(s), gamma).map_err(|e| e.to_string())?))
    };
    for gamma in [0.0, 0.5, 0.9] {
        ensure(run(Tensor::ones(&[2, 3, 3, 1]), gamma)? == c, || format!("unit mask changes features at γ={gamma}"))?;
    }
    let a = run(s1, 1.0)?;
    ensure(a == run(s2, 1.0)? && a == c, || "γ=1 output depends on the mask".into())?;
    ensure(run(Tensor::zeros(&[2, 3, 3, 1]), 0.5)? == c.map(|v| 0.5 * v), || "zero mask at γ=0.5 does not halve".into())
}

fn small_clstm(store: &mut ParamStore<f64>, seed: u64) -> Clstm {
    let arch = ArchTable::new(&OmCnnConfig {
        input_size: 64,
        fn_size: 8,
        fn_channels: 4,
        ..OmCnnConfig::tiny()
    })
    .unwrap();
    Clstm::new(&arch, store, seed)
}

fn carry_states(g: &Graph<f64>, values: &[(Tensor<f64>, Tensor<f64>)]) -> Vec<LayerState> {
    values
        .iter()
        .map(|(m, h)| LayerState {
            memory: g.input(m.clone()),
            hidden: g.input(h.clone()),
        })
        .collect()
}

pub fn lstm_contracts(seed: u64) -> Check {
    // Zero weights: every gate is σ(0) = 1/2 and the modulation tanh(0) = 0.
    let mut store = ParamStore::<f64>::new();
    let net = small_clstm(&mut store, seed);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = store.get_mut(id);
        p.value = Tensor::zeros(p.value.shape());
    }
    let shape = net.state_shape(1);
    let m_prev = random_tensor(&shape, -3.0, 3.0, seed);
    let g = Graph::new();
    let st = LayerState {
        memory: g.input(m_prev.clone()),
        hidden: g.input(random_tensor(&shape, -1.0, 1.0, seed + 1)),
    };
    let x = g.input(random_tensor(&shape, -1.0, 1.0, seed + 2));
    let out = net.cell(&g, &store, 0, x, &st, None).map_err(|e| e.to_string())?;
    ensure(g.value(out.state.memory) == m_prev.map(|v| 0.5 * v), || "zero-weight cell does not halve memory".into())?;

    // A T-step pass equals single steps with the state carried by value.
    let mut store = ParamStore::<f64>::new();
    let net = small_clstm(&mut store, seed + 3);
    let feats: Vec<Tensor<f64>> = (0..4).map(|t| random_tensor(&shape, -1.0, 1.0, seed + 10 + t)).collect();
    let g = Graph::new();
    let vars: Vec<_> = feats.iter().map(|f| g.input(f.clone())).collect();
    let whole: Vec<Tensor<f64>> = net
        .forward(&g, &store, &vars, None)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|m| g.value(m))
        .collect();
    let mut carried = vec![(Tensor::zeros(&shape), Tensor::zeros(&shape)); net.layer_count()];
    for (t, f) in feats.iter().enumerate() {
        let g = Graph::new();
        let states = carry_states(&g, &carried);
        let (next, map) = net.step(&g, &store, g.input(f.clone()), &states, None).map_err(|e| e.to_string())?;
        ensure(g.value(map) == whole[t], || format!("state-carried step {t} differs from the clip pass"))?;
        carried = next.iter().map(|s| (g.value(s.memory), g.value(s.hidden))).collect();
    }

    // Masks drawn at rate 0 leave the pass unchanged.
    let masks: Vec<DropoutMaskSet<f64>> = net.sample_masks(1, 0.0, 0.0, seed).map_err(|e| e.to_string())?;
    let g = Graph::new();
    let vars: Vec<_> = feats.iter().map(|f| g.input(f.clone())).collect();
    let masked: Vec<Tensor<f64>> = net
        .forward(&g, &store, &vars, Some(&masks))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|m| g.value(m))
        .collect();
    ensure(masked == whole, || "rate-0 masks change the output".into())
}
