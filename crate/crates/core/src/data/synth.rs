//! Procedural videos of moving shapes with simulated viewers.
//!
//! Objects move over a smooth random texture, alternating between moving
//! and resting. Each simulated subject follows one object at a time and
//! occasionally re-picks its target with probability proportional to
//! `base_weight + speed_weight · e_j`, where `e_j` is an exponentially
//! decayed average of object `j`'s recent speed. Fixations scatter around
//! the followed object's centre.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::fixations::{Fixation, FixationSet};
use crate::data::image::Image;
use crate::data::video::{boxes_to_csv, write_motion, BoxRecord, Video};
use crate::error::{Error, Result};
use crate::params::{derive_seed, rng_from_seed, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Diamond,
}

impl ShapeKind {
    fn covers(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Disk => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            ShapeKind::Diamond => dx.abs() + dy.abs() <= r,
        }
    }
}

/// One object and its trajectory parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub kind: ShapeKind,
    /// Half-extent in pixels.
    pub radius: f64,
    pub color: [u8; 3],
    /// Centre at frame 0.
    pub start: (f64, f64),
    /// Direction of travel in radians; reflected at the frame border.
    pub heading: f64,
    /// Pixels per frame while moving.
    pub speed: f64,
    /// Per-frame probability of switching between moving and resting.
    pub toggle_prob: f64,
    pub moving_at_start: bool,
}

/// How simulated subjects distribute their gaze.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRule {
    pub subjects: usize,
    pub base_weight: f64,
    pub speed_weight: f64,
    /// Decay of the recent-speed average, in [0, 1).
    pub memory: f64,
    /// Per-frame probability that a subject re-picks its target.
    pub switch_prob: f64,
    /// Fixation scatter as a fraction of the object radius.
    pub spread: f64,
    /// Probability of a fixation at a uniformly random pixel instead.
    pub background_rate: f64,
}

impl Default for AttentionRule {
    fn default() -> Self {
        AttentionRule {
            subjects: 16,
            base_weight: 1.0,
            speed_weight: 2.0,
            memory: 0.85,
            switch_prob: 0.1,
            spread: 0.35,
            background_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub texture_seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub attention: AttentionRule,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::config("objects", "a scene needs at least one object"));
        }
        if self.width < 8 || self.height < 8 || self.frames == 0 || !(self.fps > 0.0) {
            return Err(Error::config("width", "scene extent, length and fps must be positive (extent ≥ 8)"));
        }
        let a = &self.attention;
        if a.subjects == 0 {
            return Err(Error::config("subjects", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&a.memory) {
            return Err(Error::config("memory", "must lie in [0, 1)"));
        }
        for (name, p) in [("switch_prob", a.switch_prob), ("background_rate", a.background_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if !(a.base_weight >= 0.0 && a.speed_weight >= 0.0 && a.base_weight + a.speed_weight > 0.0) {
            return Err(Error::config("base_weight", "weights must be ≥ 0 and not both zero"));
        }
        for o in &self.objects {
            if !(o.radius >= 1.0 && o.speed >= 0.0 && (0.0..=1.0).contains(&o.toggle_prob)) {
                return Err(Error::config("objects", format!("bad object {o:?}")));
            }
        }
        Ok(())
    }
}

/// Generator output.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub video: Video,
    pub boxes: Vec<BoxRecord>,
    /// Per-frame, per-pixel displacement (pixels) since the previous frame.
    pub motion: Vec<Vec<f32>>,
}

impl SyntheticVideo {
    /// Writes frames, manifest, fixations, boxes and motion maps into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.video.save(dir)?;
        let bpath = dir.join("boxes.csv");
        std::fs::write(&bpath, boxes_to_csv(&self.boxes)).map_err(|e| Error::io(&bpath, e))?;
        write_motion(dir, self.video.width(), self.video.height(), &self.motion)
    }
}

fn texture(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let rng = &mut rng_from_seed(seed);
    let cell = 32.0;
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let grid: Vec<[f64; 3]> = (0..gw * gh)
        .map(|_| {
            let base = rng.random_range(70.0..150.0);
            [0, 1, 2].map(|_| base + rng.random_range(-20.0..20.0))
        })
        .collect();
    let mut out = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let fy = y as f64 / cell;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f64 / cell;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let at = |xx: usize, yy: usize| grid[yy * gw + xx];
            let (a, b, c, d) = (at(ix, iy), at(ix + 1, iy), at(ix, iy + 1), at(ix + 1, iy + 1));
            let grain: f64 = rng.random_range(-6.0..6.0);
            for ch in 0..3 {
                let top = a[ch] * (1.0 - tx) + b[ch] * tx;
                let bot = c[ch] * (1.0 - tx) + d[ch] * tx;
                out.push(top * (1.0 - ty) + bot * ty + grain);
            }
        }
    }
    out
}

struct ObjectState {
    pos: (f64, f64),
    heading: f64,
    moving: bool,
}

fn advance(o: &ObjectSpec, s: &mut ObjectState, w: f64, h: f64, rng: &mut SeededRng) {
    if rng.random::<f64>() < o.toggle_prob {
        s.moving = !s.moving;
    }
    if !s.moving || o.speed == 0.0 {
        return;
    }
    let (mut dx, mut dy) = (s.heading.cos() * o.speed, s.heading.sin() * o.speed);
    let r = o.radius;
    let (nx, ny) = (s.pos.0 + dx, s.pos.1 + dy);
    if nx - r < 0.0 || nx + r > w - 1.0 {
        dx = -dx;
    }
    if ny - r < 0.0 || ny + r > h - 1.0 {
        dy = -dy;
    }
    s.heading = dy.atan2(dx);
    s.pos = ((s.pos.0 + dx).clamp(r, w - 1.0 - r), (s.pos.1 + dy).clamp(r, h - 1.0 - r));
}

fn object_box(o: &ObjectSpec, pos: (f64, f64), w: usize, h: usize) -> (usize, usize, usize, usize) {
    let clampi = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64) as usize;
    (
        clampi((pos.0 - o.radius).floor(), w),
        clampi((pos.1 - o.radius).floor(), h),
        clampi((pos.0 + o.radius).ceil(), w),
        clampi((pos.1 + o.radius).ceil(), h),
    )
}

fn pick_target(weights: &[f64], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (j, &w) in weights.iter().enumerate() {
        if u < w {
            return j;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Renders the scene and simulates its viewers. Output is a pure
/// function of `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticVideo> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (w as f64, h as f64);
    let background = texture(w, h, spec.texture_seed);
    let motion_rng = &mut rng_from_seed(derive_seed(seed, 0));
    let gaze_rng = &mut rng_from_seed(derive_seed(seed, 1));
    let a = &spec.attention;

    let mut states: Vec<ObjectState> = spec
        .objects
        .iter()
        .map(|o| ObjectState {
            pos: (o.start.0.clamp(o.radius, wf - 1.0 - o.radius), o.start.1.clamp(o.radius, hf - 1.0 - o.radius)),
            heading: o.heading,
            moving: o.moving_at_start,
        })
        .collect();
    // One warm-up step so frame 0 has a defined displacement.
    let mut prev: Vec<(f64, f64)> = states.iter().map(|s| s.pos).collect();
    for (o, s) in spec.objects.iter().zip(&mut states) {
        advance(o, s, wf, hf, motion_rng);
    }

    let mut recent: Vec<f64> = Vec::new();
    let mut targets: Vec<usize> = Vec::new();
    let mut frames = Vec::with_capacity(spec.frames);
    let mut motion = Vec::with_capacity(spec.frames);
    let mut fixations = Vec::new();
    let mut boxes = Vec::new();
    let scatter = Normal::new(0.0, 1.0).expect("unit normal");

    for t in 0..spec.frames {
        if t > 0 {
            prev = states.iter().map(|s| s.pos).collect();
            for (o, s) in spec.objects.iter().zip(&mut states) {
                advance(o, s, wf, hf, motion_rng);
            }
        }
        let speeds: Vec<f64> = states
            .iter()
            .zip(&prev)
            .map(|(s, p)| ((s.pos.0 - p.0).powi(2) + (s.pos.1 - p.1).powi(2)).sqrt())
            .collect();

        let mut pixels = background.clone();
        let mut mag = vec![0.0f32; w * h];
        for (j, (o, s)) in spec.objects.iter().zip(&states).enumerate() {
            let (x0, y0, x1, y1) = object_box(o, s.pos, w, h);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if o.kind.covers(x as f64 - s.pos.0, y as f64 - s.pos.1, o.radius) {
                        let i = y * w + x;
                        pixels[3 * i..3 * i + 3].copy_from_slice(&o.color.map(|c| c as f64));
                        mag[i] = speeds[j] as f32;
                    }
                }
            }
        }
        frames.push(Image::rgb(w, h, pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect())?);
        motion.push(mag);

        let mut order: Vec<usize> = (0..spec.objects.len()).collect();
        order.sort_by(|&i, &j| spec.objects[j].radius.total_cmp(&spec.objects[i].radius).then(i.cmp(&j)));
        for (rank, &j) in order.iter().enumerate() {
            let (x0, y0, x1, y1) = object_box(&spec.objects[j], states[j].pos, w, h);
            boxes.push(BoxRecord {
                frame: t,
                rank: rank + 1,
                x0,
                y0,
                x1,
                y1,
            });
        }

        if t == 0 {
            recent = speeds.clone();
        } else {
            for (e, &v) in recent.iter_mut().zip(&speeds) {
                *e = a.memory * *e + (1.0 - a.memory) * v;
            }
        }
        let weights: Vec<f64> = recent.iter().map(|&e| a.base_weight + a.speed_weight * e).collect();
        if t == 0 {
            targets = (0..a.subjects).map(|_| pick_target(&weights, gaze_rng)).collect();
        }
        for (subject, target) in targets.iter_mut().enumerate() {
            if t > 0 && gaze_rng.random::<f64>() < a.switch_prob {
                *target = pick_target(&weights, gaze_rng);
            }
            let (x, y) = if gaze_rng.random::<f64>() < a.background_rate {
                (gaze_rng.random_range(0..w), gaze_rng.random_range(0..h))
            } else {
                let o = &spec.objects[*target];
                let s = &states[*target];
                let (x0, y0, x1, y1) = object_box(o, s.pos, w, h);
                let sd = a.spread * o.radius;
                let fx = s.pos.0 + sd * scatter.sample(gaze_rng);
                let fy = s.pos.1 + sd * scatter.sample(gaze_rng);
                (
                    (fx.round().max(0.0) as usize).clamp(x0, x1),
                    (fy.round().max(0.0) as usize).clamp(y0, y1),
                )
            };
            fixations.push(Fixation {
                frame: t,
                x,
                y,
                subject,
            });
        }
    }
    Ok(SyntheticVideo {
        video: Video {
            name: String::new(),
            fps: spec.fps,
            frames,
            fixations: FixationSet::new(fixations),
        },
        boxes,
        motion,
    })
}

/// Ranges from which [`random_scene`] draws a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub toggle_prob: f64,
    pub attention: AttentionRule,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 224,
            height: 224,
            frames: 32,
            fps: 30.0,
            min_objects: 2,
            max_objects: 3,
            min_radius: 12.0,
            max_radius: 22.0,
            min_speed: 2.0,
            max_speed: 5.0,
            toggle_prob: 0.06,
            attention: AttentionRule::default(),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::config("min_objects", "need 1 ≤ min_objects ≤ max_objects"));
        }
        if !(self.min_radius >= 1.0 && self.min_radius <= self.max_radius) {
            return Err(Error::config("min_radius", "need 1 ≤ min_radius ≤ max_radius"));
        }
        if 2.0 * self.max_radius + 2.0 >= self.width.min(self.height) as f64 {
            return Err(Error::config("max_radius", "objects must fit inside the frame"));
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed) {
            return Err(Error::config("min_speed", "need 0 ≤ min_speed ≤ max_speed"));
        }
        if !(0.0..=1.0).contains(&self.toggle_prob) {
            return Err(Error::config("toggle_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

const PALETTE: [[u8; 3]; 6] = [[230, 40, 40], [40, 200, 60], [50, 90, 240], [240, 220, 40], [230, 60, 220], [40, 220, 230]];

/// Draws a scene from `params`; a pure function of `(params, seed)`.
pub fn random_scene(params: &SceneParams, seed: u64) -> Result<SyntheticSceneSpec> {
    params.validate()?;
    let rng = &mut rng_from_seed(seed);
    let count = rng.random_range(params.min_objects..=params.max_objects);
    let (w, h) = (params.width as f64, params.height as f64);
    let mut objects = Vec::with_capacity(count);
    for j in 0..count {
        let radius = rng.random_range(params.min_radius..=params.max_radius);
        let kind = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Diamond][rng.random_range(0..3)];
        objects.push(ObjectSpec {
            kind,
            radius,
            color: PALETTE[(j + rng.random_range(0..PALETTE.len())) % PALETTE.len()],
            start: (rng.random_range(radius..w - radius), rng.random_range(radius..h - radius)),
            heading: rng.random_range(0.0..std::f64::consts::TAU),
            speed: rng.random_range(params.min_speed..=params.max_speed),
            toggle_prob: params.toggle_prob,
            moving_at_start: rng.random::<bool>(),
        });
    }
    Ok(SyntheticSceneSpec {
        width: params.width,
        height: params.height,
        frames: params.frames,
        fps: params.fps,
        texture_seed: rng.random(),
        objects,
        attention: params.attention.clone(),
    })
}

/// Generates `count` random videos named `video_NNN`.
pub fn generate_dataset(params: &SceneParams, count: usize, seed: u64) -> Result<Vec<SyntheticVideo>> {
    let out = crate::parallel::map_indexed(count, |i| -> Result<SyntheticVideo> {
        let scene = random_scene(params, derive_seed(seed, 2 * i as u64))?;
        let mut v = generate_synthetic(&scene, derive_seed(seed, 2 * i as u64 + 1))?;
        v.video.name = format!("video_{i:03}");
        Ok(v)
    });
    out.into_iter().collect()
}
