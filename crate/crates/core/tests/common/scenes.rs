//! Synthetic scenes with controlled gaze behaviour.

use vidsal::analysis::{frame_difference_motion, frame_maps, motion_group_analysis, temporal_cc, MotionGroups, Window};
use vidsal::data::fixations::default_sigma;
use vidsal::data::synth::{generate_synthetic, AttentionRule, ObjectSpec, ShapeKind, SyntheticSceneSpec, SyntheticVideo};
use vidsal::Result;

/// One object gliding right at a constant 0.15 px per frame, watched by
/// every subject all the time, so gaze drifts steadily with the object.
pub fn drift_scene(seed: u64) -> Result<SyntheticVideo> {
    let spec = SyntheticSceneSpec {
        width: 156,
        height: 117,
        frames: 150,
        fps: 30.0,
        texture_seed: seed,
        objects: vec![ObjectSpec {
            kind: ShapeKind::Disk,
            radius: 10.0,
            color: [230, 40, 40],
            start: (40.0, 58.0),
            heading: 0.0,
            speed: 0.15,
            toggle_prob: 0.0,
            moving_at_start: true,
        }],
        attention: AttentionRule {
            subjects: 12,
            switch_prob: 0.0,
            ..AttentionRule::default()
        },
    };
    generate_synthetic(&spec, seed)
}

/// Several objects, of which one or two move; gaze strongly prefers
/// recent motion.
pub fn speed_biased_scene(seed: u64) -> Result<SyntheticVideo> {
    let obj = |x: f64, y: f64, speed: f64, heading: f64| ObjectSpec {
        kind: ShapeKind::Square,
        radius: 9.0,
        color: [40, 200, 60],
        start: (x, y),
        heading,
        speed,
        toggle_prob: 0.0,
        moving_at_start: speed > 0.0,
    };
    let spec = SyntheticSceneSpec {
        width: 160,
        height: 120,
        frames: 40,
        fps: 30.0,
        texture_seed: seed,
        objects: vec![
            obj(30.0, 30.0, 3.0, 0.4),
            obj(120.0, 90.0, 2.0, 2.5),
            obj(120.0, 30.0, 0.0, 0.0),
            obj(30.0, 90.0, 0.0, 0.0),
            obj(80.0, 60.0, 0.0, 0.0),
        ],
        attention: AttentionRule {
            subjects: 16,
            base_weight: 0.2,
            speed_weight: 4.0,
            memory: 0.5,
            switch_prob: 0.1,
            spread: 0.35,
            background_rate: 0.05,
        },
    };
    generate_synthetic(&spec, seed)
}

/// Mean temporal CC per standard window of the drift scene.
pub fn drift_temporal_cc(seed: u64) -> Result<Vec<f64>> {
    let v = drift_scene(seed)?.video;
    let maps = frame_maps(&v.fixations, v.len(), v.height(), v.width(), default_sigma(v.width()))?;
    temporal_cc(&maps, &Window::standard(), v.fps)
}

/// Motion deciles of the speed-biased scene, using the generator's motion
/// maps or the frame-difference proxy.
pub fn speed_biased_deciles(seed: u64, frame_difference: bool) -> Result<MotionGroups> {
    let s = speed_biased_scene(seed)?;
    let motion = if frame_difference { frame_difference_motion(&s.video.frames)? } else { s.motion };
    motion_group_analysis(&s.video.fixations, &motion, s.video.width(), s.video.height())
}
