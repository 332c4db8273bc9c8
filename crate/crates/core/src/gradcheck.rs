//! Central finite-difference gradient checking at 64-bit precision.
//!
//! The checker only evaluates the forward pass; it never consults the
//! backward implementation it is checking.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{rng_from_seed, ParamStore};
use crate::tensor::Tensor;

/// Default perturbation.
pub const STEP: f64 = 1e-5;
/// Relative error is measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;
/// Central differences at `STEP` and `STEP / 2` that disagree by more than
/// this (relative) mean a non-differentiable point lies inside the
/// perturbation. The test never looks at the analytic gradient.
pub const KINK_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (input or parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Coordinates skipped because the perturbation straddles a kink.
    pub kinks: Vec<(String, usize)>,
}

enum Numeric {
    Slope(f64),
    Kink,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central difference of `eval(delta)`, the loss with one coordinate moved
/// by `delta`.
fn central(mut eval: impl FnMut(f64) -> Result<f64>) -> Result<Numeric> {
    let wide = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
    let narrow = (eval(STEP / 2.0)? - eval(-STEP / 2.0)?) / STEP;
    Ok(if rel_diff(wide, narrow) > KINK_TOL { Numeric::Kink } else { Numeric::Slope(wide) })
}

impl GradCheckReport {
    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: Numeric) {
        let numeric = match numeric {
            Numeric::Slope(v) => v,
            Numeric::Kink => {
                self.kinks.push((name.to_string(), idx));
                return;
            }
        };
        let rel = rel_diff(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    }

    /// Error below `tol` and kinks on at most 5% of the sampled coordinates.
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol && self.kinks.len() * 20 <= self.checked + self.kinks.len()
    }
}

fn pick_indices(len: usize, limit: Option<usize>, rng: &mut impl Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => (0..k).map(|_| rng.random_range(0..len)).collect(),
        _ => (0..len).collect(),
    }
}

fn perturbed(t: &Tensor<f64>, idx: usize, delta: f64) -> Tensor<f64> {
    let mut d = t.data().to_vec();
    d[idx] += delta;
    Tensor::from_parts(t.shape().to_vec(), d)
}

/// Checks `f` with respect to each of `inputs`, at up to `limit` random
/// coordinates per input (all coordinates when `None`).
pub fn check_inputs<F>(inputs: &[Tensor<f64>], limit: Option<usize>, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = rng_from_seed(seed);
    let mut report = GradCheckReport::default();
    for (i, (t, &v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get(v).map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        for idx in pick_indices(t.len(), limit, &mut rng) {
            let mut vals = inputs.to_vec();
            let numeric = central(|d| {
                vals[i] = perturbed(t, idx, d);
                eval(&vals)
            })?;
            report.record(&format!("input {i}"), idx, analytic[idx], numeric);
        }
    }
    Ok(report)
}

/// Checks a loss built from a parameter store, at up to `limit` random
/// coordinates of each trainable weight.
pub fn check_params<F>(store: &ParamStore<f64>, limit: usize, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let g = Graph::new();
    let out = f(&g, &work)?;
    let grads = g.backward(out)?;
    work.accumulate(&grads);
    let analytic: Vec<Option<Vec<f64>>> =
        work.iter().map(|(_, p)| p.grad.as_ref().map(|g| g.to_f64_vec())).collect();

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::new();
        let out = f(&g, s)?;
        Ok(g.value(out).data()[0])
    };
    let mut rng = rng_from_seed(seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = work.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let base = work.get(id).value.clone();
        let name = work.get(id).name.clone();
        let a = analytic[id.index()].clone().unwrap_or_else(|| vec![0.0; base.len()]);
        for idx in pick_indices(base.len(), Some(limit), &mut rng) {
            let numeric = central(|d| {
                work.get_mut(id).value = perturbed(&base, idx, d);
                eval(&work)
            })?;
            report.record(&name, idx, a[idx], numeric);
        }
        work.get_mut(id).value = base;
    }
    Ok(report)
}
