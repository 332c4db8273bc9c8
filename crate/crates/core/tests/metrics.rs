mod common;

use common::oracles::{self, random_case};
use proptest::prelude::*;
use vidsal::data::clips::{segment_clips, split_dataset, SplitRatios};
use vidsal::data::fixations::fixations_to_map;
use vidsal::map::Map;
use vidsal::metrics::{auc_judd, cc, kl_divergence, nss};

#[test]
fn metrics_match_brute_force_oracles() {
    let [auc, nss, cc, kl] = oracles::max_metric_deviation(100);
    assert!(auc <= 1e-6, "auc {auc:e}");
    assert!(nss <= 1e-10, "nss {nss:e}");
    assert!(cc <= 1e-10, "cc {cc:e}");
    assert!(kl <= 1e-10, "kl {kl:e}");
}

#[test]
fn quantized_cases_have_ties() {
    let (s, _, _) = random_case(0);
    let mut v = s.data().to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    assert!(v.len() <= 8);
}

#[test]
fn auc_hand_example() {
    // Fixated values 0.9 and 0.4 against negatives 0.8, 0.5, 0.1:
    // thresholds 0.9 -> (0, 1/2), 0.4 -> (2/3, 1).
    let s = Map::new(1, 5, vec![0.9, 0.4, 0.8, 0.5, 0.1]).unwrap();
    let expect = 0.5 * (2.0 / 3.0) * (0.5 + 1.0) + (1.0 / 3.0) * 1.0 / 2.0 * 2.0;
    assert!((auc_judd(&s, &[(0, 0), (1, 0)]).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn constant_map_nss_is_flagged() {
    let s = Map::filled(4, 4, 0.3);
    let r = nss(&s, &[(1, 1)]).unwrap();
    assert!(r.degenerate && r.value == 0.0);
}

fn map_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cc_is_symmetric_and_affine_invariant(a in map_strategy(64), b in map_strategy(64), k in 0.1f64..10.0, c in -5.0f64..5.0) {
        let ma = Map::new(8, 8, a).unwrap();
        let mb = Map::new(8, 8, b).unwrap();
        let ab = cc(&ma, &mb).unwrap().value;
        prop_assert!((ab - cc(&mb, &ma).unwrap().value).abs() < 1e-12);
        prop_assert!((ab - cc(&ma.map(|v| k * v + c), &mb).unwrap().value).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself(a in map_strategy(64), b in map_strategy(64), k in 0.1f64..10.0) {
        let ma = Map::new(8, 8, a).unwrap();
        let mb = Map::new(8, 8, b).unwrap();
        prop_assert!(kl_divergence(&ma, &mb).unwrap() >= -1e-12);
        prop_assert!(kl_divergence(&ma, &ma.map(|v| k * v)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn auc_and_nss_respect_monotone_and_affine_maps(a in map_strategy(64), fx in prop::collection::vec((0usize..8, 0usize..8), 1..10)) {
        let s = Map::new(8, 8, a).unwrap();
        let base = auc_judd(&s, &fx).unwrap();
        prop_assert!((base - auc_judd(&s.map(|v| v.powi(3) + 2.0), &fx).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
        let n = nss(&s, &fx).unwrap().value;
        prop_assert!((n - nss(&s.map(|v| 3.0 * v - 1.0), &fx).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn fixation_map_is_a_distribution(fx in prop::collection::vec((0usize..24, 0usize..16), 0..12), sigma in 0.5f64..6.0) {
        let (m, empty) = fixations_to_map(&fx, 16, 24, sigma).unwrap();
        prop_assert_eq!(empty, fx.is_empty());
        prop_assert!((m.sum() - 1.0).abs() < 1e-9);
        prop_assert!(m.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn interior_fixation_maps_translate(x in 8usize..12, y in 8usize..12, dx in 0usize..4, dy in 0usize..4) {
        // σ = 2 truncates at 6 pixels, so both blobs stay inside a 24×24 map.
        let (a, _) = fixations_to_map(&[(x, y)], 24, 24, 2.0).unwrap();
        let (b, _) = fixations_to_map(&[(x + dx, y + dy)], 24, 24, 2.0).unwrap();
        for yy in 0..24 - dy {
            for xx in 0..24 - dx {
                prop_assert!((a.get(xx, yy) - b.get(xx + dx, yy + dy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clips_stay_inside_and_keep_the_stride(len in 1usize..300, t in 1usize..40, overlap in 0usize..40) {
        match segment_clips(len, t, overlap) {
            Ok(starts) => {
                prop_assert!(overlap < t && len >= t);
                prop_assert_eq!(starts[0], 0);
                prop_assert!(starts.windows(2).all(|w| w[1] - w[0] == t - overlap));
                let last = *starts.last().unwrap();
                prop_assert!(last + t <= len && last + (t - overlap) + t > len);
            }
            Err(_) => prop_assert!(overlap >= t || len < t),
        }
    }

    #[test]
    fn splits_partition_the_ids(n in 1usize..200, v in 0.0f64..0.3, t in 0.0f64..0.3, seed in any::<u64>()) {
        let ids: Vec<usize> = (0..n).collect();
        let r = SplitRatios { train: 1.0 - v - t, validation: v, test: t };
        let s = split_dataset(&ids, r, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ids);
        prop_assert_eq!(s.validation.len(), (v * n as f64).round() as usize);
        prop_assert_eq!(s.test.len(), (t * n as f64).round() as usize);
    }
}
