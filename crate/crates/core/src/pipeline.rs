//! Inference with trained checkpoints, prediction files and evaluation.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::clstm::{Clstm, RunMode};
use crate::config::{PredictMode, RunConfig};
use crate::data::fixations::{fixations_to_map, frame_pixels};
use crate::data::image::{read_image, write_image, Image};
use crate::data::preprocess::{preprocess_frame, ChannelMean};
use crate::data::video::Video;
use crate::error::{Error, Result};
use crate::map::Map;
use crate::metrics::{MetricReport, Pixel};
use crate::omcnn::OmCnn;
use crate::parallel;
use crate::params::{derive_seed, ParamStore};
use crate::tensor::Tensor;
use crate::train::{load_clstm, load_omcnn};

/// A trained OM-CNN, optionally followed by a trained 2C-LSTM.
pub struct Predictor {
    pub config: RunConfig,
    pub mean: ChannelMean,
    omcnn: OmCnn,
    om_store: ParamStore<f32>,
    clstm: Option<(Clstm, ParamStore<f32>)>,
}

/// Dropout settings used when predicting with [`PredictMode::MonteCarlo`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub p_h: f64,
    pub p_f: f64,
    pub samples: usize,
    pub seed: u64,
}

impl McSettings {
    pub fn from_config(c: &RunConfig) -> Self {
        McSettings {
            p_h: c.p_h,
            p_f: c.p_f,
            samples: c.mc_samples,
            seed: c.seed,
        }
    }
}

impl Predictor {
    pub fn new(omcnn: &Checkpoint, clstm: Option<&Checkpoint>) -> Result<Self> {
        let (model, om_store) = load_omcnn(omcnn)?;
        let clstm = match clstm {
            Some(c) => {
                c.check_compatible(&omcnn.config)?;
                Some(load_clstm(c)?)
            }
            None => None,
        };
        Ok(Predictor {
            config: omcnn.config.clone(),
            mean: omcnn.mean,
            omcnn: model,
            om_store,
            clstm,
        })
    }

    pub fn has_clstm(&self) -> bool {
        self.clstm.is_some()
    }

    fn frames(&self, frames: &[Image], t: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let size = self.config.model.input_size;
        let prev = preprocess_frame(&frames[t.saturating_sub(1)], size, &self.mean)?;
        Ok((prev, preprocess_frame(&frames[t], size, &self.mean)?))
    }

    /// OM-CNN fine maps of every frame (frame 0 is paired with itself).
    pub fn omcnn_maps(&self, frames: &[Image]) -> Result<Vec<Map>> {
        Self::check_len(frames)?;
        let maps = parallel::map_indexed(frames.len(), |t| -> Result<Map> {
            let (prev, cur) = self.frames(frames, t)?;
            Map::from_tensor(&self.omcnn.predict(&self.om_store, &prev, &cur)?.fine_map)
        });
        maps.into_iter().collect()
    }

    fn check_len(frames: &[Image]) -> Result<()> {
        if frames.len() < 2 {
            return Err(Error::Usage(format!("prediction needs at least 2 frames, got {}", frames.len())));
        }
        Ok(())
    }

    /// One saliency distribution per frame.
    ///
    /// With a 2C-LSTM the video is cut into consecutive windows of
    /// `clip_length` frames, each run from zero state; the Monte-Carlo
    /// seed of window `w` is derived from `mc.seed` and `w`.
    pub fn predict_video(&self, frames: &[Image], mode: PredictMode, mc: McSettings) -> Result<Vec<Map>> {
        Self::check_len(frames)?;
        let Some((clstm, store)) = &self.clstm else {
            return self.omcnn_maps(frames);
        };
        let feats = parallel::map_indexed(frames.len(), |t| -> Result<Tensor<f32>> {
            let (prev, cur) = self.frames(frames, t)?;
            Ok(self.omcnn.predict(&self.om_store, &prev, &cur)?.features.expect("full variant"))
        });
        let feats = feats.into_iter().collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(frames.len());
        for (w, window) in feats.chunks(self.config.clip_length).enumerate() {
            let run = match mode {
                PredictMode::Deterministic => RunMode::Deterministic,
                PredictMode::MonteCarlo => RunMode::MonteCarlo {
                    p_h: mc.p_h,
                    p_f: mc.p_f,
                    samples: mc.samples,
                    seed: derive_seed(mc.seed, w as u64),
                },
            };
            for m in clstm.predict(store, window, run)? {
                out.push(Map::from_tensor(&m)?);
            }
        }
        Ok(out)
    }
}

/// Isotropic Gaussian centred on the map, `sigma = fraction · width`,
/// normalized to sum 1.
pub fn center_bias_map(height: usize, width: usize, fraction: f64) -> Result<Map> {
    let sigma = fraction * width as f64;
    if !(sigma > 0.0) {
        return Err(Error::config("center_sigma", "must be positive"));
    }
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let data = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Map::new(height, width, data)?.normalized()
}

/// Pairs each prediction with its ground truth at the prediction's
/// extent. Frames without fixations are skipped; their count is returned.
pub fn evaluation_frames(preds: &[Map], video: &Video, sigma_divisor: f64) -> Result<(Vec<(usize, Map, Map, Vec<Pixel>)>, usize)> {
    if preds.len() != video.len() {
        return Err(Error::Usage(format!(
            "{} predictions for the {} frames of {}",
            preds.len(),
            video.len(),
            video.name
        )));
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (t, pred) in preds.iter().enumerate() {
        let (h, w) = (pred.height(), pred.width());
        let fix = frame_pixels(video.fixations.for_frame(t), video.width(), video.height(), w, h);
        if fix.is_empty() {
            skipped += 1;
            continue;
        }
        let (ground, _) = fixations_to_map(&fix, h, w, w as f64 / sigma_divisor)?;
        rows.push((t, pred.clone(), ground, fix));
    }
    Ok((rows, skipped))
}

/// Metric report of predictions for one video.
pub fn evaluate_video(preds: &[Map], video: &Video, sigma_divisor: f64) -> Result<MetricReport> {
    let (rows, skipped) = evaluation_frames(preds, video, sigma_divisor)?;
    if skipped > 0 {
        log::warn!("{}: {skipped} frame(s) without fixations skipped", video.name);
    }
    MetricReport::evaluate(&rows)
}

/// Writes `NNNNNN.pgm` per map, values max-scaled to 255.
pub fn write_predictions(dir: &Path, maps: &[Map]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    maps.iter()
        .enumerate()
        .map(|(t, m)| {
            let p = dir.join(format!("{t:06}.pgm"));
            write_image(&p, &Image::from_map_scaled(m))?;
            Ok(p)
        })
        .collect()
}

/// Frame with the saliency map (resized to the frame) added to its red channel.
pub fn overlay(frame: &Image, map: &Map) -> Result<Image> {
    let m = map.resize(frame.height, frame.width)?;
    let heat = Image::from_map_scaled(&m);
    let mut data = frame.data.clone();
    for (px, &h) in data.chunks_mut(3).zip(&heat.data) {
        px[0] = px[0].saturating_add(h / 2);
        px[1] = (px[1] as u16 * (255 - h as u16 / 2) / 255) as u8;
        px[2] = (px[2] as u16 * (255 - h as u16 / 2) / 255) as u8;
    }
    Image::rgb(frame.width, frame.height, data)
}

/// Reads every `*.pgm` in `dir`, sorted by file name.
pub fn read_predictions(dir: &Path) -> Result<Vec<Map>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .pgm predictions in {}", dir.display())));
    }
    paths.iter().map(|p| read_image(p)?.to_map()).collect()
}
