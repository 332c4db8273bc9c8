//! KL-divergence training losses.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Floor applied to predicted probabilities inside the logarithm.
pub const KL_EPS: f64 = 1e-8;

/// Weights `(1/(1+λ), λ/(1+λ))` of the fine and coarse KL terms.
pub fn loss_weights(lambda: f64) -> Result<(f64, f64)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config("lambda", format!("must be a finite value ≥ 0, got {lambda}")));
    }
    Ok((1.0 / (1.0 + lambda), lambda / (1.0 + lambda)))
}

/// The OM-CNN loss from already computed KL terms.
pub fn weighted_kl(kl_fine: f64, kl_coarse: f64, lambda: f64) -> Result<f64> {
    let (wf, wc) = loss_weights(lambda)?;
    Ok(wf * kl_fine + wc * kl_coarse)
}

/// `KL(G, S)` averaged over the batch axis.
///
/// `ground` and `s` are `(n, h, w, 1)` distributions (each sample sums to 1).
pub fn kl_loss<T: Element>(g: &Graph<T>, ground: &Tensor<T>, s: Var) -> Result<Var> {
    let n = g.shape(s)[0];
    let total = g.kl_div(ground, s, KL_EPS)?;
    Ok(if n == 1 { total } else { g.scale(total, 1.0 / n as f64) })
}

/// `(1/(1+λ))·KL(G, S_f) + (λ/(1+λ))·KL(G, S_c / ΣS_c)`.
pub fn om_cnn_loss<T: Element>(g: &Graph<T>, ground: &Tensor<T>, s_f: Var, s_c: Var, lambda: f64) -> Result<Var> {
    let (wf, wc) = loss_weights(lambda)?;
    let fine = kl_loss(g, ground, s_f)?;
    if lambda == 0.0 {
        return Ok(fine);
    }
    let coarse = kl_loss(g, ground, g.normalize_samples(s_c)?)?;
    g.add(g.scale(fine, wf), g.scale(coarse, wc))
}

/// Mean over frames of `KL(G_t, S_t)`.
pub fn clstm_loss<T: Element>(g: &Graph<T>, ground: &[Tensor<T>], predicted: &[Var]) -> Result<Var> {
    if ground.len() != predicted.len() {
        return Err(Error::Usage(format!(
            "clstm_loss: {} ground-truth frames for {} predictions",
            ground.len(),
            predicted.len()
        )));
    }
    let terms = ground.iter().zip(predicted).map(|(gt, &s)| kl_loss(g, gt, s)).collect::<Result<Vec<_>>>()?;
    if terms.len() == 1 {
        return Ok(terms[0]);
    }
    g.mean_scalars(&terms)
}
