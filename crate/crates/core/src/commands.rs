//! The operations behind each command-line subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{
    frame_difference_motion, frame_maps, motion_group_analysis, object_hit_analysis, one_vs_all_cc, subject_maps, temporal_cc,
    AnalysisReport, Window,
};
use crate::checkpoint::{Checkpoint, Stage};
use crate::config::{PredictMode, RunConfig, SynthConfig};
use crate::data::clips::{split_dataset, Split};
use crate::data::fixations::default_sigma;
use crate::data::preprocess::dataset_mean;
use crate::data::synth::generate_dataset;
use crate::data::video::{dataset_videos, read_boxes, read_frames, read_motion, Manifest, Video};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::pipeline::{evaluate_video, overlay, read_predictions, write_predictions, McSettings, Predictor};
use crate::train::{load_omcnn, ClipData, ClstmTrainer, FrameSource, OmCnnTrainer, TrainSummary};

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the dataset named by `config.data` and splits it with the run seed.
pub fn load_split(config: &RunConfig) -> Result<Split<Video>> {
    let root = config.data.as_ref().ok_or_else(|| Error::config("data", "no dataset directory given"))?;
    let dirs = dataset_videos(root)?;
    let videos = dirs.iter().map(|d| Video::load(d)).collect::<Result<Vec<_>>>()?;
    split_dataset(&videos, config.split, config.seed)
}

fn split_listing(split: &Split<Video>) -> String {
    let mut s = String::new();
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        for v in part {
            let _ = writeln!(s, "{name},{}", v.name);
        }
    }
    s
}

/// Trains the OM-CNN; `resume` continues from a `last.ckpt`.
pub fn cmd_train_omcnn(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    config.validate()?;
    let split = load_split(config)?;
    if split.train.is_empty() {
        return Err(Error::Data("the split leaves no training videos".into()));
    }
    create_dir(out)?;
    write_text(&out.join("split.csv"), &split_listing(&split))?;
    write_text(&out.join("config.txt"), &config.to_text())?;
    let mut trainer = match resume {
        Some(p) => OmCnnTrainer::resume(&Checkpoint::load_stage(p, Stage::OmCnn)?, config)?,
        None => {
            let mean = dataset_mean(split.train.iter().flat_map(|v| v.frames.iter()), config.model.input_size)?;
            OmCnnTrainer::new(config, mean)?
        }
    };
    let train = FrameSource::new(&split.train, config, trainer.mean)?;
    let val = FrameSource::new(&split.validation, config, trainer.mean)?;
    let val = if split.validation.is_empty() { None } else { Some(&val) };
    trainer.run(&train, val, out)
}

/// Trains the 2C-LSTM on features of the frozen OM-CNN named by
/// `config.omcnn_checkpoint`.
pub fn cmd_train_clstm(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    config.validate()?;
    let om_path = config
        .omcnn_checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("omcnn_checkpoint", "the 2C-LSTM stage needs a trained OM-CNN"))?;
    let om = Checkpoint::load_stage(om_path, Stage::OmCnn)?;
    om.check_compatible(config)?;
    let split = load_split(config)?;
    create_dir(out)?;
    write_text(&out.join("split.csv"), &split_listing(&split))?;
    write_text(&out.join("config.txt"), &config.to_text())?;
    let (model, store) = load_omcnn(&om)?;
    let train = ClipData::build(&model, &store, &FrameSource::new(&split.train, config, om.mean)?, config)?;
    let val = if split.validation.is_empty() {
        None
    } else {
        Some(ClipData::build(&model, &store, &FrameSource::new(&split.validation, config, om.mean)?, config)?)
    };
    let mut trainer = match resume {
        Some(p) => ClstmTrainer::resume(&Checkpoint::load_stage(p, Stage::Clstm)?, config)?,
        None => ClstmTrainer::new(config, om.mean)?,
    };
    trainer.run(&train, val.as_ref(), out)
}

/// Writes one saliency map per frame of the video in `video_dir` (and an
/// overlay per frame when asked). Returns the written map paths.
pub fn cmd_predict(
    omcnn: &Path,
    clstm: Option<&Path>,
    video_dir: &Path,
    mode: PredictMode,
    mc: McSettings,
    out: &Path,
    overlays: bool,
) -> Result<Vec<PathBuf>> {
    let om = Checkpoint::load_stage(omcnn, Stage::OmCnn)?;
    let cl = clstm.map(|p| Checkpoint::load_stage(p, Stage::Clstm)).transpose()?;
    let predictor = Predictor::new(&om, cl.as_ref())?;
    let manifest = Manifest::read(&video_dir.join("manifest.txt"))?;
    let frames = read_frames(&manifest)?;
    let maps = predictor.predict_video(&frames, mode, mc)?;
    let paths = write_predictions(out, &maps)?;
    if overlays {
        let odir = out.join("overlay");
        create_dir(&odir)?;
        for (t, (f, m)) in frames.iter().zip(&maps).enumerate() {
            crate::data::image::write_image(&odir.join(format!("{t:06}.ppm")), &overlay(f, m)?)?;
        }
    }
    Ok(paths)
}

/// Scores the maps in `pred_dir` against the fixations of `video_dir`;
/// writes `metrics.csv` into `out`.
pub fn cmd_eval(pred_dir: &Path, video_dir: &Path, sigma_divisor: f64, out: &Path) -> Result<MetricReport> {
    let preds = read_predictions(pred_dir)?;
    let video = Video::load(video_dir)?;
    let report = evaluate_video(&preds, &video, sigma_divisor)?;
    create_dir(out)?;
    report.write_csv(&out.join("metrics.csv"))?;
    Ok(report)
}

/// Candidate counts used when none are given.
pub const DEFAULT_COUNTS: [usize; 5] = [1, 2, 3, 4, 5];

/// Runs every analysis the inputs in `video_dir` allow. Object hits need
/// `boxes.csv`; motion grouping uses `motion/` when present and the
/// frame-difference proxy otherwise.
pub fn cmd_analyze(video_dir: &Path, counts: &[usize], seed: u64, out: &Path) -> Result<AnalysisReport> {
    let video = Video::load(video_dir)?;
    let (w, h) = (video.width(), video.height());
    let sigma = default_sigma(w);
    let windows = Window::standard();
    let maps = frame_maps(&video.fixations, video.len(), h, w, sigma)?;
    let temporal = temporal_cc(&maps, &windows, video.fps)?;
    let one_vs_all = if video.fixations.subjects().len() >= 2 {
        Some(one_vs_all_cc(&subject_maps(&video.fixations, 0..video.len(), h, w, sigma)?)?)
    } else {
        None
    };
    let bpath = video_dir.join("boxes.csv");
    let object_hit = if bpath.exists() {
        Some(object_hit_analysis(&video.fixations, &read_boxes(&bpath)?, counts, w, h, sigma, seed)?)
    } else {
        None
    };
    let motion = if video_dir.join("motion").is_dir() {
        let (mw, mh, m) = read_motion(video_dir, video.len())?;
        if (mw, mh) != (w, h) {
            return Err(Error::Data(format!("motion maps are {mw}×{mh}, frames {w}×{h}")));
        }
        m
    } else {
        frame_difference_motion(&video.frames)?
    };
    let report = AnalysisReport {
        windows,
        temporal_cc: temporal,
        one_vs_all,
        object_hit,
        motion_groups: Some(motion_group_analysis(&video.fixations, &motion, w, h)?),
    };
    create_dir(out)?;
    report.write(out)?;
    Ok(report)
}

/// Generates a synthetic dataset under `out` with a `videos.txt` index.
pub fn cmd_synth(config: &SynthConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let videos = generate_dataset(&config.scene, config.videos, seed)?;
    create_dir(out)?;
    let mut index = String::new();
    let mut dirs = Vec::new();
    for v in &videos {
        let dir = out.join(&v.video.name);
        create_dir(&dir)?;
        v.save(&dir)?;
        let _ = writeln!(index, "{}", v.video.name);
        dirs.push(dir);
    }
    write_text(&out.join("videos.txt"), &index)?;
    Ok(dirs)
}
