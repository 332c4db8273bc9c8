//! Small end-to-end runs through the command layer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vidsal::commands::{cmd_analyze, cmd_eval, cmd_predict, cmd_synth, cmd_train_clstm, cmd_train_omcnn, DEFAULT_COUNTS};
use vidsal::config::{PredictMode, RunConfig, SynthConfig};
use vidsal::data::clips::SplitRatios;
use vidsal::data::synth::SceneParams;
use vidsal::omcnn::OmCnnConfig;
use vidsal::pipeline::McSettings;

type Check = std::result::Result<(), String>;

pub fn small_synth() -> SynthConfig {
    SynthConfig {
        videos: 4,
        scene: SceneParams {
            width: 64,
            height: 48,
            frames: 48,
            fps: 20.0,
            min_radius: 5.0,
            max_radius: 9.0,
            ..SceneParams::default()
        },
    }
}

pub fn small_run(data: &Path, seed: u64) -> RunConfig {
    RunConfig {
        model: OmCnnConfig {
            input_size: 64,
            fn_size: 8,
            ..OmCnnConfig::tiny()
        },
        batch_size: 2,
        omcnn_epochs: 10,
        omcnn_max_steps: 50,
        clstm_max_steps: 6,
        val_every: 5,
        val_frames: 4,
        clip_length: 4,
        overlap: 2,
        mc_samples: 3,
        split: SplitRatios {
            train: 0.5,
            validation: 0.25,
            test: 0.25,
        },
        seed,
        data: Some(data.to_path_buf()),
        ..RunConfig::tiny()
    }
}

/// Every file under `dir` keyed by its relative path.
pub fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Synthesizes data, trains both stages, predicts (Monte Carlo), evaluates
/// and analyzes, all under `root`.
pub fn full_pipeline(root: &Path, seed: u64) -> Check {
    let data = root.join("data");
    cmd_synth(&small_synth(), seed, &data).map_err(s)?;
    let mut c = small_run(&data, seed);
    cmd_train_omcnn(&c, &root.join("omcnn"), None).map_err(s)?;
    c.omcnn_checkpoint = Some(root.join("omcnn/best.ckpt"));
    cmd_train_clstm(&c, &root.join("clstm"), None).map_err(s)?;
    let video = data.join("video_000");
    cmd_predict(
        &root.join("omcnn/best.ckpt"),
        Some(&root.join("clstm/best.ckpt")),
        &video,
        PredictMode::MonteCarlo,
        McSettings::from_config(&c),
        &root.join("pred"),
        true,
    )
    .map_err(s)?;
    cmd_eval(&root.join("pred"), &video, c.sigma_divisor, &root.join("eval")).map_err(s)?;
    cmd_analyze(&video, &DEFAULT_COUNTS, seed, &root.join("analysis")).map_err(s)?;
    Ok(())
}

/// Runs the pipeline twice in `root` with the same seed and compares
/// every output file byte for byte. Configs record input paths, so both
/// runs use the same location.
pub fn pipeline_is_deterministic(root: &Path, seed: u64) -> Check {
    full_pipeline(root, seed)?;
    let fa = dir_bytes(root);
    std::fs::remove_dir_all(root).map_err(s)?;
    full_pipeline(root, seed)?;
    let fb = dir_bytes(root);
    if fa.keys().ne(fb.keys()) {
        return Err(format!("file sets differ: {:?} vs {:?}", fa.keys(), fb.keys()));
    }
    for (k, v) in &fa {
        if fb[k] != *v {
            return Err(format!("{} differs between identical runs", k.display()));
        }
    }
    for needed in ["omcnn/last.ckpt", "clstm/last.ckpt", "pred/000000.pgm", "eval/metrics.csv", "analysis/report.txt"] {
        if !fa.contains_key(Path::new(needed)) {
            return Err(format!("{needed} was not written"));
        }
    }
    Ok(())
}

fn log_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

/// 50 uninterrupted OM-CNN steps against 25 steps, a checkpoint round
/// trip through disk, and 25 resumed steps.
pub fn resume_is_trajectory_identical(root: &Path, seed: u64) -> Check {
    let data = root.join("data");
    cmd_synth(&small_synth(), seed, &data).map_err(s)?;
    let whole = small_run(&data, seed);
    cmd_train_omcnn(&whole, &root.join("whole"), None).map_err(s)?;
    let half = RunConfig {
        omcnn_max_steps: 25,
        ..whole.clone()
    };
    cmd_train_omcnn(&half, &root.join("first"), None).map_err(s)?;
    cmd_train_omcnn(&whole, &root.join("second"), Some(&root.join("first/last.ckpt"))).map_err(s)?;

    let full_log = log_lines(&root.join("whole/train.log"));
    let mut split_log = log_lines(&root.join("first/train.log"));
    split_log.extend(log_lines(&root.join("second/train.log")));
    if full_log.len() != 50 || full_log != split_log {
        return Err(format!("loss trajectories differ:\n{full_log:?}\n{split_log:?}"));
    }
    let (a, b) = (std::fs::read(root.join("whole/last.ckpt")).map_err(s)?, std::fs::read(root.join("second/last.ckpt")).map_err(s)?);
    if a != b {
        return Err("final checkpoints differ".into());
    }
    Ok(())
}
