//! Videos on disk: frame manifests, object boxes and motion maps.
//!
//! A video directory holds `manifest.txt`, the frame images it lists,
//! `fixations.csv`, and optionally `boxes.csv` and `motion/NNNNNN.pgm`.
//! A dataset directory lists its video directories in `videos.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::fixations::FixationSet;
use crate::data::image::{read_image, read_pgm_values, write_image, write_pgm16, Image};
use crate::error::{Error, Result};

/// Motion maps are stored as 16-bit PGM holding `magnitude · MOTION_SCALE`.
pub const MOTION_SCALE: f32 = 256.0;

/// Ordered frame paths plus the frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub fps: f64,
    pub frames: Vec<PathBuf>,
}

impl Manifest {
    /// Parses `fps = <rate>` and one frame path per line; `#` starts a
    /// comment. Relative paths resolve against the manifest's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut fps = None;
        let mut frames = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() != "fps" {
                    return Err(Error::format(path, format!("line {}: unknown key `{}`", no + 1, k.trim())));
                }
                let rate: f64 = v.trim().parse().map_err(|_| Error::format(path, format!("line {}: bad fps", no + 1)))?;
                if !(rate > 0.0) {
                    return Err(Error::format(path, "fps must be positive"));
                }
                fps = Some(rate);
            } else {
                frames.push(base.join(line));
            }
        }
        let fps = fps.ok_or_else(|| Error::format(path, "missing `fps = ...` line"))?;
        if frames.is_empty() {
            return Err(Error::format(path, "manifest lists no frames"));
        }
        Ok(Manifest { fps, frames })
    }

    /// Text form with paths written relative to `base` when possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = format!("fps = {}\n", self.fps);
        for f in &self.frames {
            let rel = f.strip_prefix(base).unwrap_or(f);
            out.push_str(&rel.to_string_lossy());
            out.push('\n');
        }
        out
    }
}

/// A candidate object box of one frame; rank 1 is the strongest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoxRecord {
    pub frame: usize,
    pub rank: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxRecord {
    /// Inclusive containment test.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoxRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if headers != vec!["frame", "rank", "x0", "y0", "x1", "y1"] {
        return Err(Error::format(path, "expected header frame,rank,x0,y0,x1,y1"));
    }
    let mut boxes = rdr
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
        .collect::<Result<Vec<BoxRecord>>>()?;
    for b in &boxes {
        if b.x0 > b.x1 || b.y0 > b.y1 || b.rank == 0 {
            return Err(Error::format(path, format!("bad box {b:?}")));
        }
    }
    boxes.sort_by_key(|b| (b.frame, b.rank));
    Ok(boxes)
}

pub fn boxes_to_csv(boxes: &[BoxRecord]) -> String {
    let mut out = String::from("frame,rank,x0,y0,x1,y1\n");
    for b in boxes {
        out.push_str(&format!("{},{},{},{},{},{}\n", b.frame, b.rank, b.x0, b.y0, b.x1, b.y1));
    }
    out
}

/// Frames and fixations of one video held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub name: String,
    pub fps: f64,
    pub frames: Vec<Image>,
    pub fixations: FixationSet,
}

impl Video {
    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads `dir/manifest.txt`, its frames and `dir/fixations.csv`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join("manifest.txt"))?;
        let frames = read_frames(&manifest)?;
        let fixations = FixationSet::read_csv(&dir.join("fixations.csv"))?;
        let v = Video {
            name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            fps: manifest.fps,
            frames,
            fixations,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| Error::Data(format!("video {} has no frames", self.name)))?;
        for (i, f) in self.frames.iter().enumerate() {
            if (f.width, f.height, f.channels) != (first.width, first.height, 3) {
                return Err(Error::Data(format!("video {}: frame {i} is not a {}×{} RGB image", self.name, first.width, first.height)));
            }
        }
        self.fixations.validate(first.width, first.height, self.frames.len())
    }

    /// Writes the frames, manifest and fixations into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let frame_dir = dir.join("frames");
        fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        let mut paths = Vec::with_capacity(self.frames.len());
        for (i, img) in self.frames.iter().enumerate() {
            let p = frame_dir.join(format!("{i:06}.ppm"));
            write_image(&p, img)?;
            paths.push(p);
        }
        let manifest = Manifest {
            fps: self.fps,
            frames: paths,
        };
        let mpath = dir.join("manifest.txt");
        fs::write(&mpath, manifest.to_text(dir)).map_err(|e| Error::io(&mpath, e))?;
        self.fixations.write_csv(&dir.join("fixations.csv"))
    }
}

/// Reads every frame; failures are collected into a single error listing
/// each unreadable frame.
pub fn read_frames(manifest: &Manifest) -> Result<Vec<Image>> {
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut failures = Vec::new();
    for (i, p) in manifest.frames.iter().enumerate() {
        match read_image(p) {
            Ok(img) => frames.push(img),
            Err(e) => failures.push(format!("frame {i}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Data(format!("{} unreadable frame(s):\n{}", failures.len(), failures.join("\n"))));
    }
    Ok(frames)
}

/// Writes per-frame motion magnitudes as `dir/motion/NNNNNN.pgm`.
pub fn write_motion(dir: &Path, width: usize, height: usize, maps: &[Vec<f32>]) -> Result<()> {
    let mdir = dir.join("motion");
    fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
    for (i, m) in maps.iter().enumerate() {
        write_pgm16(&mdir.join(format!("{i:06}.pgm")), width, height, m, MOTION_SCALE)?;
    }
    Ok(())
}

/// Reads `frames` motion maps from `dir/motion`.
pub fn read_motion(dir: &Path, frames: usize) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let mut out = Vec::with_capacity(frames);
    let mut dims = None;
    for i in 0..frames {
        let p = dir.join("motion").join(format!("{i:06}.pgm"));
        let (w, h, v) = read_pgm_values(&p, MOTION_SCALE)?;
        if *dims.get_or_insert((w, h)) != (w, h) {
            return Err(Error::format(&p, "motion maps differ in size"));
        }
        out.push(v);
    }
    let (w, h) = dims.ok_or_else(|| Error::Data("no motion maps requested".into()))?;
    Ok((w, h, out))
}

/// Lists the video directories of a dataset (`root/videos.txt`).
pub fn dataset_videos(root: &Path) -> Result<Vec<PathBuf>> {
    let list = root.join("videos.txt");
    let text = fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
    let dirs: Vec<PathBuf> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| root.join(l))
        .collect();
    if dirs.is_empty() {
        return Err(Error::Data(format!("{} lists no videos", list.display())));
    }
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<Video>> {
    dataset_videos(root)?.iter().map(|d| Video::load(d)).collect()
}
