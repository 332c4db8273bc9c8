use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use vidsal::autodiff::{Graph, Padding};
use vidsal::clstm::{Clstm, RunMode};
use vidsal::map::Map;
use vidsal::metrics::evaluate_frame;
use vidsal::omcnn::{ArchTable, OmCnn, OmCnnConfig, Variant};
use vidsal::parallel::sequential;
use vidsal::params::{rng_from_seed, ParamStore};
use vidsal::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Runs `f` under both dispatch modes.
fn both<F: Fn()>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("mode", "parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("mode", "sequential"), |b| b.iter(|| sequential(&f)));
    g.finish();
}

fn conv(c: &mut Criterion) {
    let x = random(&[4, 56, 56, 32], 1);
    let w = random(&[3, 3, 32, 64], 2);
    both(c, "conv2d_forward_backward", || {
        let g = Graph::new();
        let (xv, wv) = (g.variable(x.clone()), g.variable(w.clone()));
        let y = g.conv2d(xv, wv, None, 1, Padding::Same).unwrap();
        g.backward(g.sum(y)).unwrap();
    });
}

fn omcnn(c: &mut Criterion) {
    let arch = ArchTable::new(&OmCnnConfig {
        input_size: 224,
        ..OmCnnConfig::tiny()
    })
    .unwrap();
    let mut store = ParamStore::<f32>::new();
    let model = OmCnn::new(&arch, Variant::Full, &mut store, 3);
    let (prev, cur) = (random(&[2, 224, 224, 3], 4), random(&[2, 224, 224, 3], 5));
    both(c, "omcnn_inference", || {
        model.predict(&store, &prev, &cur).unwrap();
    });
}

fn mc(c: &mut Criterion) {
    let arch = ArchTable::new(&OmCnnConfig::tiny()).unwrap();
    let mut store = ParamStore::<f32>::new();
    let net = Clstm::new(&arch, &mut store, 6);
    let feats: Vec<_> = (0..8).map(|t| random(&net.state_shape(1), 10 + t)).collect();
    let mode = RunMode::MonteCarlo {
        p_h: 0.25,
        p_f: 0.25,
        samples: 8,
        seed: 1,
    };
    both(c, "clstm_monte_carlo", || {
        net.predict(&store, &feats, mode).unwrap();
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = rng_from_seed(7);
    let frames: Vec<(Map, Map, Vec<(usize, usize)>)> = (0..16)
        .map(|_| {
            let s = Map::new(112, 112, (0..112 * 112).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let g = Map::new(112, 112, (0..112 * 112).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap();
            let f = (0..20).map(|_| (rng.random_range(0..112), rng.random_range(0..112))).collect();
            (s, g, f)
        })
        .collect();
    both(c, "metrics_16_frames", || {
        vidsal::parallel::map_indexed(frames.len(), |i| evaluate_frame(&frames[i].0, &frames[i].1, &frames[i].2).unwrap());
    });
}

criterion_group!(benches, conv, omcnn, mc, metrics);
criterion_main!(benches);
