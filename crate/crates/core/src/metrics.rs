//! Saliency evaluation metrics: AUC-Judd, NSS, CC and KL divergence.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::KL_EPS;
use crate::map::Map;
use crate::parallel;

/// A fixated pixel `(x, y)` in map coordinates.
pub type Pixel = (usize, usize);

/// A metric value with a flag set when the input was degenerate
/// (zero variance) and the value was defined by convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub degenerate: bool,
}

fn fixated_indices(map: &Map, fixations: &[Pixel]) -> Result<Vec<usize>> {
    if fixations.is_empty() {
        return Err(Error::Usage("metric needs at least one fixation".into()));
    }
    let mut idx = Vec::with_capacity(fixations.len());
    for &(x, y) in fixations {
        if x >= map.width() || y >= map.height() {
            return Err(Error::Usage(format!(
                "fixation ({x}, {y}) outside the {}×{} map",
                map.width(),
                map.height()
            )));
        }
        idx.push(y * map.width() + x);
    }
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

/// AUC-Judd: fixated pixels (deduplicated) are positives, every other
/// pixel negative; one ROC point per distinct saliency value found at a
/// fixation, joined by trapezoids between (0, 0) and (1, 1).
pub fn auc_judd(s: &Map, fixations: &[Pixel]) -> Result<f64> {
    let fixated = fixated_indices(s, fixations)?;
    let n_pos = fixated.len();
    let n_neg = s.len() - n_pos;
    if n_neg == 0 {
        return Err(Error::Usage("AUC undefined when every pixel is fixated".into()));
    }
    let mut is_pos = vec![false; s.len()];
    for &i in &fixated {
        is_pos[i] = true;
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    let d = s.data();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut x0, mut y0) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let v = d[order[i]];
        let mut hit = false;
        while i < order.len() && d[order[i]] == v {
            if is_pos[order[i]] {
                tp += 1;
                hit = true;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if hit {
            let (x1, y1) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
            area += (x1 - x0) * (y0 + y1) / 2.0;
            (x0, y0) = (x1, y1);
        }
    }
    area += (1.0 - x0) * (y0 + 1.0) / 2.0;
    Ok(area)
}

/// Normalized scanpath saliency: mean of the standardized map over the
/// (deduplicated) fixated pixels.
pub fn nss(s: &Map, fixations: &[Pixel]) -> Result<Scored> {
    let fixated = fixated_indices(s, fixations)?;
    let (mean, std) = (s.mean(), s.std());
    if s.is_constant() || !(std > 0.0) {
        log::warn!("NSS on a constant map is defined as 0");
        return Ok(Scored {
            value: 0.0,
            degenerate: true,
        });
    }
    let d = s.data();
    let total: f64 = fixated.iter().map(|&i| (d[i] - mean) / std).sum();
    Ok(Scored {
        value: total / fixated.len() as f64,
        degenerate: false,
    })
}

/// Pearson correlation coefficient of two maps.
pub fn cc(s: &Map, g: &Map) -> Result<Scored> {
    s.check_same(g, "cc")?;
    let (ms, mg) = (s.mean(), g.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&a, &b) in s.data().iter().zip(g.data()) {
        let (a, b) = (a - ms, b - mg);
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if s.is_constant() || g.is_constant() || !(saa > 0.0 && sbb > 0.0) {
        log::warn!("CC with a constant map is defined as 0");
        return Ok(Scored {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Scored {
        value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// `KL(G, S) = Σ G·ln(G / max(S, ε))` after normalizing both maps to sum 1.
pub fn kl_divergence(g: &Map, s: &Map) -> Result<f64> {
    g.check_same(s, "kl_divergence")?;
    let (g, s) = (g.normalized()?, s.normalized()?);
    Ok(g
        .data()
        .iter()
        .zip(s.data())
        .filter(|(&gv, _)| gv > 0.0)
        .map(|(&gv, &sv)| gv * (gv / sv.max(KL_EPS)).ln())
        .sum())
}

/// The four metrics of one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub auc: f64,
    pub nss: f64,
    pub cc: f64,
    pub kl: f64,
    /// NSS or CC hit a zero-variance input.
    pub degenerate: bool,
}

/// Scores a predicted map against the ground-truth distribution and the
/// raw fixations, all at the prediction's extent.
pub fn evaluate_frame(pred: &Map, ground: &Map, fixations: &[Pixel]) -> Result<FrameMetrics> {
    let n = nss(pred, fixations)?;
    let c = cc(pred, ground)?;
    Ok(FrameMetrics {
        auc: auc_judd(pred, fixations)?,
        nss: n.value,
        cc: c.value,
        kl: kl_divergence(ground, pred)?,
        degenerate: n.degenerate || c.degenerate,
    })
}

/// Per-frame metrics plus mean and (population) standard deviation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub frames: Vec<(usize, FrameMetrics)>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    /// Evaluates frames in parallel; rows keep the input order.
    pub fn evaluate(frames: &[(usize, Map, Map, Vec<Pixel>)]) -> Result<Self> {
        let rows = parallel::map_indexed(frames.len(), |i| {
            let (id, pred, ground, fix) = &frames[i];
            evaluate_frame(pred, ground, fix).map(|m| (*id, m))
        });
        Ok(MetricReport {
            frames: rows.into_iter().collect::<Result<_>>()?,
        })
    }

    fn column(&self, f: impl Fn(&FrameMetrics) -> f64) -> Vec<f64> {
        self.frames.iter().map(|(_, m)| f(m)).collect()
    }

    pub fn auc(&self) -> (f64, f64) {
        mean_std(&self.column(|m| m.auc))
    }

    pub fn nss(&self) -> (f64, f64) {
        mean_std(&self.column(|m| m.nss))
    }

    pub fn cc(&self) -> (f64, f64) {
        mean_std(&self.column(|m| m.cc))
    }

    pub fn kl(&self) -> (f64, f64) {
        mean_std(&self.column(|m| m.kl))
    }

    /// Comma-separated table `frame,auc,nss,cc,kl` with a final
    /// `summary` row holding `mean (std)` per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,auc,nss,cc,kl\n");
        for (id, m) in &self.frames {
            out.push_str(&format!("{id},{},{},{},{}\n", m.auc, m.nss, m.cc, m.kl));
        }
        let cell = |(m, s): (f64, f64)| format!("{m} ({s})");
        out.push_str(&format!(
            "summary,{},{},{},{}\n",
            cell(self.auc()),
            cell(self.nss()),
            cell(self.cc()),
            cell(self.kl())
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}
