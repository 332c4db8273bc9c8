//! Eye-tracking database analyses: temporal attention correlation,
//! fixation/object overlap, and fixation share per motion decile.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::data::fixations::{fixations_to_map, FixationSet};
use crate::data::image::Image;
use crate::data::video::BoxRecord;
use crate::error::{Error, Result};
use crate::map::Map;
use crate::metrics::{cc, mean_std};
use crate::parallel;
use crate::params::rng_from_seed;

/// A span of past time `(start, end]` in seconds before the current frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    /// The four half-second windows covering the two seconds before a frame.
    pub fn standard() -> Vec<Window> {
        (0..4)
            .map(|i| Window {
                start: 0.5 * i as f64,
                end: 0.5 * (i + 1) as f64,
            })
            .collect()
    }

    /// Frame offsets `d` with `start·fps < d ≤ end·fps`.
    pub fn offsets(&self, fps: f64) -> Vec<usize> {
        let lo = (self.start * fps + 1e-9).floor() as usize + 1;
        let hi = (self.end * fps + 1e-9).floor() as usize;
        (lo..=hi).collect()
    }

    pub fn label(&self) -> String {
        format!("{}-{}s", self.start, self.end)
    }
}

/// Per-frame fixation maps (Gaussian, normalized) of a whole video.
pub fn frame_maps(fix: &FixationSet, frames: usize, height: usize, width: usize, sigma: f64) -> Result<Vec<Map>> {
    let maps = parallel::map_indexed(frames, |t| {
        let px: Vec<_> = fix.for_frame(t).iter().map(|f| (f.x, f.y)).collect();
        fixations_to_map(&px, height, width, sigma).map(|m| m.0)
    });
    maps.into_iter().collect()
}

/// For each window: the mean over current frames `c` of the mean CC
/// between `maps[c]` and every `maps[c − d]` with `d` in the window.
///
/// Current frames start at the largest offset of any window so every
/// window is evaluated on the same frames.
pub fn temporal_cc(maps: &[Map], windows: &[Window], fps: f64) -> Result<Vec<f64>> {
    let offsets: Vec<Vec<usize>> = windows.iter().map(|w| w.offsets(fps)).collect();
    if let Some((i, _)) = offsets.iter().enumerate().find(|(_, o)| o.is_empty()) {
        return Err(Error::Usage(format!("window {} holds no frame at {fps} fps", windows[i].label())));
    }
    let reach = offsets.iter().flatten().copied().max().unwrap_or(0);
    if maps.len() <= reach {
        return Err(Error::Usage(format!("video of {} frames is not longer than the largest window ({reach} frames)", maps.len())));
    }
    let current: Vec<usize> = (reach..maps.len()).collect();
    offsets
        .iter()
        .map(|offs| {
            let per_frame = parallel::map_indexed(current.len(), |i| -> Result<f64> {
                let c = current[i];
                let mut s = 0.0;
                for &d in offs {
                    s += cc(&maps[c], &maps[c - d])?.value;
                }
                Ok(s / offs.len() as f64)
            });
            let per_frame = per_frame.into_iter().collect::<Result<Vec<f64>>>()?;
            Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
        })
        .collect()
}

/// Mean over subjects of CC(subject map, sum of the other subjects' maps).
pub fn one_vs_all_cc(subject_maps: &[Map]) -> Result<f64> {
    if subject_maps.len() < 2 {
        return Err(Error::Usage("one-vs-all CC needs at least two subjects".into()));
    }
    let first = &subject_maps[0];
    let mut total = vec![0.0; first.len()];
    for m in subject_maps {
        first.check_same(m, "one_vs_all_cc")?;
        for (t, v) in total.iter_mut().zip(m.data()) {
            *t += v;
        }
    }
    let mut s = 0.0;
    for m in subject_maps {
        let rest: Vec<f64> = total.iter().zip(m.data()).map(|(t, v)| t - v).collect();
        s += cc(m, &Map::new(m.height(), m.width(), rest)?)?.value;
    }
    Ok(s / subject_maps.len() as f64)
}

/// Per-subject fixation maps pooled over `frames`.
pub fn subject_maps(fix: &FixationSet, frames: std::ops::Range<usize>, height: usize, width: usize, sigma: f64) -> Result<Vec<Map>> {
    fix.subjects()
        .into_iter()
        .map(|s| {
            let px: Vec<_> = fix
                .records
                .iter()
                .filter(|f| f.subject == s && frames.contains(&f.frame))
                .map(|f| (f.x, f.y))
                .collect();
            fixations_to_map(&px, height, width, sigma).map(|m| m.0)
        })
        .collect()
}

/// Fixation/object overlap per candidate count.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectHitReport {
    pub counts: Vec<usize>,
    /// Fraction of fixations inside the union of the top-k boxes.
    pub hit: Vec<f64>,
    /// Thresholded fixation area inside the union over the union's area.
    pub area: Vec<f64>,
    /// Hit fraction for randomly placed boxes of the same sizes.
    pub random_hit: Vec<f64>,
    /// Frames with fixations but no boxes, left out of every figure.
    pub skipped_frames: usize,
}

/// Fixation-map pixels above this fraction of the maximum count as fixated area.
pub const AREA_THRESHOLD: f64 = 0.25;
/// Trials averaged for the random-box baseline.
pub const RANDOM_TRIALS: usize = 100;

fn union_mask(boxes: &[BoxRecord], width: usize, height: usize) -> Vec<bool> {
    let mut m = vec![false; width * height];
    for b in boxes {
        for y in b.y0..=b.y1.min(height - 1) {
            for x in b.x0..=b.x1.min(width - 1) {
                m[y * width + x] = true;
            }
        }
    }
    m
}

pub fn object_hit_analysis(
    fix: &FixationSet,
    boxes: &[BoxRecord],
    counts: &[usize],
    width: usize,
    height: usize,
    sigma: f64,
    seed: u64,
) -> Result<ObjectHitReport> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Usage("candidate counts must be positive".into()));
    }
    let mut frames: Vec<usize> = fix.records.iter().map(|f| f.frame).collect();
    frames.dedup();
    let by_frame = |t: usize| -> Vec<BoxRecord> {
        let mut v: Vec<BoxRecord> = boxes.iter().filter(|b| b.frame == t).copied().collect();
        v.sort_by_key(|b| b.rank);
        v
    };
    let mut skipped = 0;
    let mut used = Vec::new();
    for &t in &frames {
        let b = by_frame(t);
        if b.is_empty() {
            skipped += 1;
        } else {
            used.push((t, b));
        }
    }
    if used.is_empty() {
        return Err(Error::Data("no frame has both fixations and boxes".into()));
    }
    let regions: Vec<Vec<bool>> = used
        .iter()
        .map(|(t, _)| -> Result<Vec<bool>> {
            let px: Vec<_> = fix.for_frame(*t).iter().map(|f| (f.x, f.y)).collect();
            let (m, _) = fixations_to_map(&px, height, width, sigma)?;
            let cut = AREA_THRESHOLD * m.max();
            Ok(m.data().iter().map(|&v| v > cut).collect())
        })
        .collect::<Result<_>>()?;
    let total_fix: usize = used.iter().map(|(t, _)| fix.for_frame(*t).len()).sum();

    let mut rng = rng_from_seed(seed);
    let mut report = ObjectHitReport {
        counts: counts.to_vec(),
        hit: Vec::new(),
        area: Vec::new(),
        random_hit: Vec::new(),
        skipped_frames: skipped,
    };
    for &k in counts {
        let (mut hits, mut inter, mut union_area) = (0usize, 0usize, 0usize);
        let mut random_hits = 0usize;
        for ((t, b), region) in used.iter().zip(&regions) {
            let top = &b[..k.min(b.len())];
            let mask = union_mask(top, width, height);
            let fx = fix.for_frame(*t);
            hits += fx.iter().filter(|f| mask[f.y * width + f.x]).count();
            union_area += mask.iter().filter(|&&m| m).count();
            inter += mask.iter().zip(region).filter(|(&m, &r)| m && r).count();
            for _ in 0..RANDOM_TRIALS {
                let placed: Vec<BoxRecord> = top
                    .iter()
                    .map(|bb| {
                        let (bw, bh) = (bb.x1 - bb.x0, bb.y1 - bb.y0);
                        let x0 = rng.random_range(0..width - bw.min(width - 1));
                        let y0 = rng.random_range(0..height - bh.min(height - 1));
                        BoxRecord {
                            x0,
                            y0,
                            x1: x0 + bw,
                            y1: y0 + bh,
                            ..*bb
                        }
                    })
                    .collect();
                let rm = union_mask(&placed, width, height);
                random_hits += fx.iter().filter(|f| rm[f.y * width + f.x]).count();
            }
        }
        report.hit.push(hits as f64 / total_fix as f64);
        report.area.push(if union_area == 0 { 0.0 } else { inter as f64 / union_area as f64 });
        report.random_hit.push(random_hits as f64 / (total_fix * RANDOM_TRIALS) as f64);
    }
    Ok(report)
}

/// Share of fixations in each motion decile (decile 0 = fastest pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct MotionGroups {
    pub proportions: [f64; 10],
    /// All magnitudes were equal.
    pub degenerate: bool,
}

/// Ranks every pixel of every frame by descending magnitude and splits
/// the ranking into ten equal parts. A group of pixels with equal
/// magnitude that straddles decile boundaries is shared between those
/// deciles in proportion to its overlap with each, so ties never depend
/// on pixel order.
pub fn motion_group_analysis(fix: &FixationSet, motion: &[Vec<f32>], width: usize, height: usize) -> Result<MotionGroups> {
    let px = width * height;
    if motion.is_empty() || motion.iter().any(|m| m.len() != px) {
        return Err(Error::Data(format!("motion maps must be {width}×{height} and non-empty")));
    }
    if fix.records.is_empty() {
        return Err(Error::Usage("motion grouping needs at least one fixation".into()));
    }
    for f in &fix.records {
        if f.frame >= motion.len() || f.x >= width || f.y >= height {
            return Err(Error::Data(format!("fixation {f:?} outside the motion maps")));
        }
    }
    let all: Vec<f32> = motion.iter().flatten().copied().collect();
    let total = all.len() as f64;
    let mut values = all.clone();
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    let degenerate = values.len() == 1;
    if degenerate {
        log::warn!("constant motion magnitude; deciles are uniform");
    }
    // Rank interval [start, start + count) of each distinct value.
    let mut counts = vec![0usize; values.len()];
    let index_of = |v: f32| values.binary_search_by(|p| v.total_cmp(p)).expect("value present");
    for &v in &all {
        counts[index_of(v)] += 1;
    }
    let mut share = Vec::with_capacity(values.len());
    let mut start = 0.0;
    for &c in &counts {
        let end = start + c as f64;
        let mut s = [0.0f64; 10];
        for (d, slot) in s.iter_mut().enumerate() {
            let (lo, hi) = (d as f64 * total / 10.0, (d + 1) as f64 * total / 10.0);
            *slot = (end.min(hi) - start.max(lo)).max(0.0) / c as f64;
        }
        share.push(s);
        start = end;
    }
    let mut props = [0.0f64; 10];
    for f in &fix.records {
        let s = &share[index_of(motion[f.frame][f.y * width + f.x])];
        for (p, v) in props.iter_mut().zip(s) {
            *p += v;
        }
    }
    let n = fix.records.len() as f64;
    Ok(MotionGroups {
        proportions: props.map(|p| p / n),
        degenerate,
    })
}

/// Absolute luminance difference to the previous frame; frame 0 uses the
/// difference to frame 1.
pub fn frame_difference_motion(frames: &[Image]) -> Result<Vec<Vec<f32>>> {
    if frames.len() < 2 {
        return Err(Error::Usage("frame-difference motion needs at least two frames".into()));
    }
    let lum: Vec<Vec<f64>> = frames.iter().map(|f| f.luminance()).collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs() as f32).collect::<Vec<f32>>();
    let mut out = vec![diff(&lum[1], &lum[0])];
    for t in 1..frames.len() {
        out.push(diff(&lum[t], &lum[t - 1]));
    }
    Ok(out)
}

/// Everything `analyze` computes for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub windows: Vec<Window>,
    pub temporal_cc: Vec<f64>,
    pub one_vs_all: Option<f64>,
    pub object_hit: Option<ObjectHitReport>,
    pub motion_groups: Option<MotionGroups>,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[temporal_cc]");
        for (w, v) in self.windows.iter().zip(&self.temporal_cc) {
            let _ = writeln!(out, "{} = {v}", w.label());
        }
        if let Some(b) = self.one_vs_all {
            let _ = writeln!(out, "one_vs_all = {b}");
        }
        if let Some(o) = &self.object_hit {
            let _ = writeln!(out, "\n[object_hit]");
            let _ = writeln!(out, "skipped_frames = {}", o.skipped_frames);
            for i in 0..o.counts.len() {
                let _ = writeln!(out, "k{} = hit {} area {} random {}", o.counts[i], o.hit[i], o.area[i], o.random_hit[i]);
            }
        }
        if let Some(m) = &self.motion_groups {
            let _ = writeln!(out, "\n[motion_groups]");
            let _ = writeln!(out, "degenerate = {}", m.degenerate);
            for (d, p) in m.proportions.iter().enumerate() {
                let _ = writeln!(out, "decile{} = {p}", d + 1);
            }
        }
        out
    }

    /// Writes `report.txt` plus one CSV table per analysis into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("report.txt", self.to_text())?;
        let mut t = String::from("window,cc\n");
        for (w, v) in self.windows.iter().zip(&self.temporal_cc) {
            let _ = writeln!(t, "{},{v}", w.label());
        }
        if let Some(b) = self.one_vs_all {
            let _ = writeln!(t, "one_vs_all,{b}");
        }
        put("temporal_cc.csv", t)?;
        if let Some(o) = &self.object_hit {
            let mut t = String::from("k,hit,area,random_hit\n");
            for i in 0..o.counts.len() {
                let _ = writeln!(t, "{},{},{},{}", o.counts[i], o.hit[i], o.area[i], o.random_hit[i]);
            }
            put("object_hit.csv", t)?;
        }
        if let Some(m) = &self.motion_groups {
            let mut t = String::from("decile,proportion\n");
            for (d, p) in m.proportions.iter().enumerate() {
                let _ = writeln!(t, "{},{p}", d + 1);
            }
            put("motion_groups.csv", t)?;
        }
        Ok(())
    }
}

/// Mean and standard deviation of a per-video statistic.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    mean_std(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixations::Fixation;

    #[test]
    fn window_offsets_at_30_fps() {
        let w = Window::standard();
        assert_eq!(w[0].offsets(30.0), (1..=15).collect::<Vec<_>>());
        assert_eq!(w[3].offsets(30.0), (46..=60).collect::<Vec<_>>());
    }

    #[test]
    fn static_pattern_has_unit_temporal_cc() {
        let (m, _) = fixations_to_map(&[(3, 4), (9, 2)], 12, 12, 1.5).unwrap();
        let maps = vec![m; 10];
        let w = [Window { start: 0.0, end: 0.1 }, Window { start: 0.1, end: 0.3 }];
        for v in temporal_cc(&maps, &w, 10.0).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(temporal_cc(&maps[..3], &w, 10.0).is_err());
    }

    #[test]
    fn motion_deciles() {
        let (w, h) = (10, 10);
        let motion = vec![(0..100).map(|i| i as f32).collect::<Vec<f32>>()];
        let fast = FixationSet::new((0..5).map(|i| Fixation { frame: 0, x: 9 - i, y: 9, subject: i }).collect());
        let g = motion_group_analysis(&fast, &motion, w, h).unwrap();
        assert_eq!(g.proportions[0], 1.0);
        let flat = vec![vec![1.0f32; 100]];
        let g = motion_group_analysis(&fast, &flat, w, h).unwrap();
        assert!(g.degenerate);
        assert!(g.proportions.iter().all(|&p| (p - 0.1).abs() < 1e-12));
    }

    #[test]
    fn one_subject_is_usage_error() {
        assert!(matches!(one_vs_all_cc(&[Map::uniform(2, 2)]), Err(Error::Usage(_))));
    }
}
