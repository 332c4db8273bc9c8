//! Fixation records, their CSV form, and Gaussian fixation maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::map::Map;
use crate::metrics::Pixel;

/// One gaze sample in frame pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Fixation {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub subject: usize,
}

/// Fixations of one video, kept sorted by (frame, subject, x, y).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FixationSet {
    pub records: Vec<Fixation>,
}

impl FixationSet {
    pub fn new(mut records: Vec<Fixation>) -> Self {
        records.sort_by_key(|f| (f.frame, f.subject, f.x, f.y));
        FixationSet { records }
    }

    pub fn for_frame(&self, frame: usize) -> &[Fixation] {
        let lo = self.records.partition_point(|f| f.frame < frame);
        let hi = self.records.partition_point(|f| f.frame <= frame);
        &self.records[lo..hi]
    }

    pub fn subjects(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.records.iter().map(|f| f.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Checks the frame-bounds and frame-index invariants.
    pub fn validate(&self, width: usize, height: usize, frames: usize) -> Result<()> {
        for f in &self.records {
            if f.x >= width || f.y >= height || f.frame >= frames {
                return Err(Error::Data(format!(
                    "fixation (frame {}, x {}, y {}) outside {width}×{height}×{frames}",
                    f.frame, f.x, f.y
                )));
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?;
        if headers != vec!["frame", "x", "y", "subject"] {
            return Err(Error::format(path, format!("expected header frame,x,y,subject, got {}", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let records = rdr
            .deserialize()
            .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
            .collect::<Result<Vec<Fixation>>>()?;
        Ok(FixationSet::new(records))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,x,y,subject\n");
        for f in &self.records {
            out.push_str(&format!("{},{},{},{}\n", f.frame, f.x, f.y, f.subject));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Default Gaussian width: 1/39 of the frame width.
pub fn default_sigma(width: usize) -> f64 {
    width as f64 / 39.0
}

/// Maps a frame pixel to the pixel of a `map_w × map_h` map covering it.
pub fn scale_pixel(x: usize, y: usize, frame_w: usize, frame_h: usize, map_w: usize, map_h: usize) -> Pixel {
    (((x * map_w) / frame_w).min(map_w - 1), ((y * map_h) / frame_h).min(map_h - 1))
}

/// Fixations of one frame converted to pixels of a map of the given extent.
pub fn frame_pixels(fix: &[Fixation], frame_w: usize, frame_h: usize, map_w: usize, map_h: usize) -> Vec<Pixel> {
    fix.iter().map(|f| scale_pixel(f.x, f.y, frame_w, frame_h, map_w, map_h)).collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect()
}

/// Ground-truth attention distribution: unit impulses at `pixels`
/// blurred by an isotropic Gaussian truncated at 3σ, with mass leaving
/// the frame dropped, then normalized to sum 1.
///
/// Returns the uniform distribution and `true` when there are no
/// fixations.
pub fn fixations_to_map(pixels: &[Pixel], height: usize, width: usize, sigma: f64) -> Result<(Map, bool)> {
    if !(sigma > 0.0) {
        return Err(Error::config("sigma", format!("must be positive, got {sigma}")));
    }
    if pixels.is_empty() {
        log::warn!("no fixations; using the uniform distribution");
        return Ok((Map::uniform(height, width), true));
    }
    let mut impulses = vec![0.0f64; height * width];
    for &(x, y) in pixels {
        if x >= width || y >= height {
            return Err(Error::Data(format!("fixation ({x}, {y}) outside {width}×{height} map")));
        }
        impulses[y * width + x] += 1.0;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut rows = vec![0.0f64; height * width];
    for y in 0..height {
        for x in 0..width {
            let v = impulses[y * width + x];
            if v == 0.0 {
                continue;
            }
            for (j, &kv) in k.iter().enumerate() {
                let xx = x as i64 + j as i64 - r;
                if (0..width as i64).contains(&xx) {
                    rows[y * width + xx as usize] += v * kv;
                }
            }
        }
    }
    let mut out = vec![0.0f64; height * width];
    for y in 0..height {
        for (j, &kv) in k.iter().enumerate() {
            let yy = y as i64 + j as i64 - r;
            if !(0..height as i64).contains(&yy) {
                continue;
            }
            let src = &rows[y * width..(y + 1) * width];
            let dst = &mut out[yy as usize * width..(yy as usize + 1) * width];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s * kv;
            }
        }
    }
    Ok((Map::new(height, width, out)?.normalized()?, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_fixation_is_symmetric_peak() {
        let (m, flag) = fixations_to_map(&[(10, 10)], 21, 21, 2.0).unwrap();
        assert!(!flag);
        assert!((m.sum() - 1.0).abs() < 1e-12);
        let peak = m.get(10, 10);
        assert!(m.data().iter().all(|&v| v <= peak));
        for d in 1..8 {
            let a = m.get(10 + d, 10);
            for b in [m.get(10 - d, 10), m.get(10, 10 + d), m.get(10, 10 - d)] {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn no_fixations_is_uniform_and_flagged() {
        let (m, flag) = fixations_to_map(&[], 3, 4, 1.0).unwrap();
        assert!(flag);
        assert!(m.data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn frame_lookup_by_index() {
        let f = |frame, subject| Fixation { frame, x: 0, y: 0, subject };
        let set = FixationSet::new(vec![f(2, 0), f(0, 1), f(2, 1), f(0, 0)]);
        assert_eq!(set.for_frame(0).len(), 2);
        assert_eq!(set.for_frame(1).len(), 0);
        assert_eq!(set.for_frame(2)[1].subject, 1);
        assert_eq!(set.subjects(), [0, 1]);
    }
}
