//! Brute-force reference metrics written without sharing code with the library.

use rand::Rng;
use vidsal::map::Map;
use vidsal::params::rng_from_seed;

/// ROC area by rescanning every pixel for each threshold.
pub fn auc(s: &[f64], fix: &[(usize, usize)], width: usize) -> f64 {
    let mut pos: Vec<usize> = fix.iter().map(|&(x, y)| y * width + x).collect();
    pos.sort_unstable();
    pos.dedup();
    let is_pos = |i: usize| pos.binary_search(&i).is_ok();
    let mut thresholds: Vec<f64> = pos.iter().map(|&i| s[i]).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let n_pos = pos.len() as f64;
    let n_neg = (s.len() - pos.len()) as f64;
    let mut pts = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let tp = (0..s.len()).filter(|&i| is_pos(i) && s[i] >= t).count() as f64;
        let fp = (0..s.len()).filter(|&i| !is_pos(i) && s[i] >= t).count() as f64;
        pts.push((fp / n_neg, tp / n_pos));
    }
    pts.push((1.0, 1.0));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

pub fn nss(s: &[f64], fix: &[(usize, usize)], width: usize) -> f64 {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let std = (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut pos: Vec<usize> = fix.iter().map(|&(x, y)| y * width + x).collect();
    pos.sort_unstable();
    pos.dedup();
    pos.iter().map(|&i| (s[i] - mean) / std).sum::<f64>() / pos.len() as f64
}

pub fn cc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = (0..a.len()).map(|i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / n;
    let sa = ((0..a.len()).map(|i| (a[i] - ma).powi(2)).sum::<f64>() / n).sqrt();
    let sb = ((0..b.len()).map(|i| (b[i] - mb).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sa * sb)
}

pub fn kl(g: &[f64], s: &[f64]) -> f64 {
    let (zg, zs) = (g.iter().sum::<f64>(), s.iter().sum::<f64>());
    let mut total = 0.0;
    for i in 0..g.len() {
        let p = g[i] / zg;
        let q = (s[i] / zs).max(1e-8);
        if p > 0.0 {
            total += p * (p.ln() - q.ln());
        }
    }
    total
}

/// A random 16×16 case: saliency map (every fourth case quantized to
/// eight levels so ties occur), ground-truth map, and 1–20 fixations.
pub fn random_case(seed: u64) -> (Map, Map, Vec<(usize, usize)>) {
    let mut rng = rng_from_seed(seed);
    let quantize = seed % 4 == 0;
    let s: Vec<f64> = (0..256)
        .map(|_| {
            let v: f64 = rng.random_range(0.0..1.0);
            if quantize {
                (v * 8.0).floor() / 8.0 + 0.01
            } else {
                v + 1e-3
            }
        })
        .collect();
    let g: Vec<f64> = (0..256).map(|_| rng.random_range(0.001..1.0)).collect();
    let n = rng.random_range(1..=20);
    let fix = (0..n).map(|_| (rng.random_range(0..16), rng.random_range(0..16))).collect();
    (Map::new(16, 16, s).unwrap(), Map::new(16, 16, g).unwrap(), fix)
}

/// Largest deviation of each library metric from its oracle over `cases`
/// random instances: (auc, nss, cc, kl).
pub fn max_metric_deviation(cases: u64) -> [f64; 4] {
    let mut worst = [0.0f64; 4];
    for seed in 0..cases {
        let (s, g, fix) = random_case(seed);
        let d = [
            (vidsal::metrics::auc_judd(&s, &fix).unwrap() - auc(s.data(), &fix, 16)).abs(),
            (vidsal::metrics::nss(&s, &fix).unwrap().value - nss(s.data(), &fix, 16)).abs(),
            (vidsal::metrics::cc(&s, &g).unwrap().value - cc(s.data(), g.data())).abs(),
            (vidsal::metrics::kl_divergence(&g, &s).unwrap() - kl(g.data(), s.data())).abs(),
        ];
        for (w, v) in worst.iter_mut().zip(d) {
            *w = w.max(v);
        }
    }
    worst
}
