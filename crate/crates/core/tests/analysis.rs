mod common;

use common::scenes::{drift_temporal_cc, speed_biased_deciles};
use proptest::prelude::*;
use vidsal::analysis::{motion_group_analysis, object_hit_analysis, temporal_cc, Window};
use vidsal::data::fixations::{Fixation, FixationSet};
use vidsal::data::video::BoxRecord;
use vidsal::map::Map;
use vidsal::metrics::cc;

#[test]
fn drifting_gaze_loses_correlation_with_distance() {
    for seed in 0..3 {
        let r = drift_temporal_cc(seed).unwrap();
        assert!(r.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {r:?}");
        assert!(r[0] > r[3]);
    }
}

#[test]
fn fast_pixels_draw_most_fixations() {
    for seed in 0..3 {
        let g = speed_biased_deciles(seed, false).unwrap();
        let sum: f64 = g.proportions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(g.proportions[0] > 0.3, "{:?}", g.proportions);
    }
}

fn fixations(pts: &[(usize, usize, usize)]) -> FixationSet {
    FixationSet::new(
        pts.iter()
            .enumerate()
            .map(|(i, &(frame, x, y))| Fixation { frame, x, y, subject: i % 3 })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decile_shares_sum_to_one(
        motion in prop::collection::vec(prop::collection::vec(0u8..4, 48), 2),
        pts in prop::collection::vec((0usize..2, 0usize..8, 0usize..6), 1..20),
    ) {
        // Few distinct levels, so ties cross decile boundaries.
        let m: Vec<Vec<f32>> = motion.iter().map(|f| f.iter().map(|&v| v as f32).collect()).collect();
        let g = motion_group_analysis(&fixations(&pts), &m, 8, 6).unwrap();
        prop_assert!((g.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(g.proportions.iter().all(|&p| p >= -1e-12));
    }

    #[test]
    fn more_candidate_boxes_never_lose_hits(
        pts in prop::collection::vec((0usize..3, 0usize..40, 0usize..30), 1..30),
        bx in prop::collection::vec((0usize..30, 0usize..20, 1usize..10, 1usize..10), 15),
        seed in any::<u64>(),
    ) {
        let boxes: Vec<BoxRecord> = bx
            .iter()
            .enumerate()
            .map(|(i, &(x0, y0, w, h))| BoxRecord { frame: i / 5, rank: i % 5 + 1, x0, y0, x1: x0 + w, y1: y0 + h })
            .collect();
        let r = object_hit_analysis(&fixations(&pts), &boxes, &[1, 2, 3, 4, 5], 40, 30, 1.0, seed).unwrap();
        prop_assert!(r.hit.windows(2).all(|w| w[1] >= w[0]), "{:?}", r.hit);
    }

    #[test]
    fn one_frame_window_is_the_mean_pairwise_cc(data in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 16), 5..9)) {
        let maps: Vec<Map> = data.into_iter().map(|d| Map::new(4, 4, d).unwrap()).collect();
        // At 1 fps the window (0, 1] holds exactly the previous frame.
        let r = temporal_cc(&maps, &[Window { start: 0.0, end: 1.0 }], 1.0).unwrap();
        let direct: f64 = (1..maps.len()).map(|c| cc(&maps[c], &maps[c - 1]).unwrap().value).sum::<f64>() / (maps.len() - 1) as f64;
        prop_assert!((r[0] - direct).abs() < 1e-12);
    }
}


#[test]
fn frame_difference_only_sees_object_edges() {
    // Flat-coloured objects change luminance only along their leading and
    // trailing edges, so gaze on object centres lands in low deciles.
    let exact = speed_biased_deciles(1, false).unwrap();
    let proxy = speed_biased_deciles(1, true).unwrap();
    assert!((proxy.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(proxy.proportions[0] < exact.proportions[0]);
}
