//! Run configuration: flat `key = value` text with `tiny`/`full` presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::clips::SplitRatios;
use crate::data::synth::SceneParams;
use crate::error::{Error, Result};
use crate::omcnn::{OmCnnConfig, Variant};

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", no + 1), format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

/// Architecture preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Tiny,
    Full,
    Custom,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Tiny => "tiny",
            Scale::Full => "full",
            Scale::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Scale::Tiny),
            "full" => Ok(Scale::Full),
            "custom" => Ok(Scale::Custom),
            _ => Err(Error::config("scale", format!("expected tiny, full or custom, got `{s}`"))),
        }
    }
}

/// How the 2C-LSTM is run at prediction time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictMode {
    Deterministic,
    MonteCarlo,
}

impl PredictMode {
    pub fn name(self) -> &'static str {
        match self {
            PredictMode::Deterministic => "deterministic",
            PredictMode::MonteCarlo => "mc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(PredictMode::Deterministic),
            "mc" => Ok(PredictMode::MonteCarlo),
            _ => Err(Error::config("mode", format!("expected deterministic or mc, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: Scale,
    pub model: OmCnnConfig,
    pub variant: Variant,
    pub lambda: f64,
    pub omcnn_lr: f64,
    pub omcnn_epochs: usize,
    /// Stops OM-CNN training after this many steps; 0 means no limit.
    pub omcnn_max_steps: u64,
    pub batch_size: usize,
    pub clstm_lr: f64,
    pub clstm_epochs: usize,
    pub clstm_max_steps: u64,
    pub clstm_batch_size: usize,
    pub weight_decay: f64,
    pub p_h: f64,
    pub p_f: f64,
    pub mc_samples: usize,
    pub clip_length: usize,
    pub overlap: usize,
    /// Fixation-map sigma is the map width divided by this.
    pub sigma_divisor: f64,
    pub val_every: u64,
    /// Upper bound on validation frames (evenly spaced); 0 uses all.
    pub val_frames: usize,
    pub split: SplitRatios,
    pub mode: PredictMode,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub omcnn_checkpoint: Option<PathBuf>,
    pub clstm_checkpoint: Option<PathBuf>,
}

impl RunConfig {
    /// Hyper-parameters at full scale.
    pub fn full() -> Self {
        RunConfig {
            scale: Scale::Full,
            model: OmCnnConfig::full(),
            variant: Variant::Full,
            lambda: 0.5,
            omcnn_lr: 1e-5,
            omcnn_epochs: 12,
            omcnn_max_steps: 0,
            batch_size: 12,
            clstm_lr: 1e-4,
            clstm_epochs: 15,
            clstm_max_steps: 0,
            clstm_batch_size: 1,
            weight_decay: 5e-6,
            p_h: 0.25,
            p_f: 0.25,
            mc_samples: 100,
            clip_length: 16,
            overlap: 10,
            sigma_divisor: 39.0,
            val_every: 1000,
            val_frames: 0,
            split: SplitRatios::DEFAULT,
            mode: PredictMode::MonteCarlo,
            seed: 0,
            data: None,
            omcnn_checkpoint: None,
            clstm_checkpoint: None,
        }
    }

    /// Desk-scale preset: channel counts divided by 8, higher learning
    /// rates and fewer epochs so training finishes in minutes on a CPU.
    pub fn tiny() -> Self {
        RunConfig {
            scale: Scale::Tiny,
            model: OmCnnConfig::tiny(),
            omcnn_lr: 1e-3,
            omcnn_epochs: 4,
            batch_size: 4,
            clstm_lr: 1e-3,
            clstm_epochs: 4,
            mc_samples: 20,
            val_every: 100,
            val_frames: 64,
            ..Self::full()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Full => Self::full(),
            Scale::Tiny | Scale::Custom => Self {
                scale,
                ..Self::tiny()
            },
        }
    }

    /// Reads a config file; keys not present keep the preset named by
    /// `scale` (default `tiny`).
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let scale = match pairs.iter().rev().find(|(k, _)| k == "scale") {
            Some((_, v)) => Scale::parse(v)?,
            None => Scale::Tiny,
        };
        let mut c = Self::preset(scale);
        for (k, v) in &pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Sets one field from its text form without validating ranges.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "scale" => self.scale = Scale::parse(v)?,
            "input_size" => m.input_size = parse_num(key, v)?,
            "channel_scale" => m.channel_scale = parse_num(key, v)?,
            "fn_size" => m.fn_size = parse_num(key, v)?,
            "fn_channels" => m.fn_channels = parse_num(key, v)?,
            "gamma" => m.gamma = parse_num(key, v)?,
            "variant" => self.variant = Variant::parse(v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "omcnn_lr" => self.omcnn_lr = parse_num(key, v)?,
            "omcnn_epochs" => self.omcnn_epochs = parse_num(key, v)?,
            "omcnn_max_steps" => self.omcnn_max_steps = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "clstm_lr" => self.clstm_lr = parse_num(key, v)?,
            "clstm_epochs" => self.clstm_epochs = parse_num(key, v)?,
            "clstm_max_steps" => self.clstm_max_steps = parse_num(key, v)?,
            "clstm_batch_size" => self.clstm_batch_size = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "p_h" => self.p_h = parse_num(key, v)?,
            "p_f" => self.p_f = parse_num(key, v)?,
            "mc_samples" => self.mc_samples = parse_num(key, v)?,
            "clip_length" => self.clip_length = parse_num(key, v)?,
            "overlap" => self.overlap = parse_num(key, v)?,
            "sigma_divisor" => self.sigma_divisor = parse_num(key, v)?,
            "val_every" => self.val_every = parse_num(key, v)?,
            "val_frames" => self.val_frames = parse_num(key, v)?,
            "split_train" => self.split.train = parse_num(key, v)?,
            "split_validation" => self.split.validation = parse_num(key, v)?,
            "split_test" => self.split.test = parse_num(key, v)?,
            "mode" => self.mode = PredictMode::parse(v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "data" => self.data = Some(PathBuf::from(v)),
            "omcnn_checkpoint" => self.omcnn_checkpoint = Some(PathBuf::from(v)),
            "clstm_checkpoint" => self.clstm_checkpoint = Some(PathBuf::from(v)),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Range checks; the error names the first offending field.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("must lie in [0, 1), got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be a finite value > 0, got {v}")))
            }
        };
        let at_least_one = |name: &str, v: u64| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(name, "must be at least 1"))
            }
        };
        crate::loss::loss_weights(self.lambda)?;
        positive("omcnn_lr", self.omcnn_lr)?;
        positive("clstm_lr", self.clstm_lr)?;
        at_least_one("omcnn_epochs", self.omcnn_epochs as u64)?;
        at_least_one("clstm_epochs", self.clstm_epochs as u64)?;
        at_least_one("batch_size", self.batch_size as u64)?;
        at_least_one("clstm_batch_size", self.clstm_batch_size as u64)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay * self.omcnn_lr.max(self.clstm_lr) < 1.0) {
            return Err(Error::config("weight_decay", format!("must be ≥ 0 with lr·weight_decay < 1, got {}", self.weight_decay)));
        }
        unit("p_h", self.p_h)?;
        unit("p_f", self.p_f)?;
        at_least_one("mc_samples", self.mc_samples as u64)?;
        at_least_one("clip_length", self.clip_length as u64)?;
        if self.overlap >= self.clip_length {
            return Err(Error::config("overlap", format!("must be smaller than clip_length {}, got {}", self.clip_length, self.overlap)));
        }
        positive("sigma_divisor", self.sigma_divisor)?;
        at_least_one("val_every", self.val_every)?;
        self.split.validate()?;
        Ok(())
    }

    /// Every field in canonical order; `from_text` of the result gives back
    /// an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut o = String::new();
        let _ = writeln!(o, "scale = {}", self.scale.name());
        let _ = writeln!(o, "input_size = {}", m.input_size);
        let _ = writeln!(o, "channel_scale = {}", m.channel_scale);
        let _ = writeln!(o, "fn_size = {}", m.fn_size);
        let _ = writeln!(o, "fn_channels = {}", m.fn_channels);
        let _ = writeln!(o, "gamma = {}", m.gamma);
        let _ = writeln!(o, "variant = {}", self.variant.name());
        let _ = writeln!(o, "lambda = {}", self.lambda);
        let _ = writeln!(o, "omcnn_lr = {}", self.omcnn_lr);
        let _ = writeln!(o, "omcnn_epochs = {}", self.omcnn_epochs);
        let _ = writeln!(o, "omcnn_max_steps = {}", self.omcnn_max_steps);
        let _ = writeln!(o, "batch_size = {}", self.batch_size);
        let _ = writeln!(o, "clstm_lr = {}", self.clstm_lr);
        let _ = writeln!(o, "clstm_epochs = {}", self.clstm_epochs);
        let _ = writeln!(o, "clstm_max_steps = {}", self.clstm_max_steps);
        let _ = writeln!(o, "clstm_batch_size = {}", self.clstm_batch_size);
        let _ = writeln!(o, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(o, "p_h = {}", self.p_h);
        let _ = writeln!(o, "p_f = {}", self.p_f);
        let _ = writeln!(o, "mc_samples = {}", self.mc_samples);
        let _ = writeln!(o, "clip_length = {}", self.clip_length);
        let _ = writeln!(o, "overlap = {}", self.overlap);
        let _ = writeln!(o, "sigma_divisor = {}", self.sigma_divisor);
        let _ = writeln!(o, "val_every = {}", self.val_every);
        let _ = writeln!(o, "val_frames = {}", self.val_frames);
        let _ = writeln!(o, "split_train = {}", self.split.train);
        let _ = writeln!(o, "split_validation = {}", self.split.validation);
        let _ = writeln!(o, "split_test = {}", self.split.test);
        let _ = writeln!(o, "mode = {}", self.mode.name());
        let _ = writeln!(o, "seed = {}", self.seed);
        for (k, p) in [("data", &self.data), ("omcnn_checkpoint", &self.omcnn_checkpoint), ("clstm_checkpoint", &self.clstm_checkpoint)] {
            if let Some(p) = p {
                let _ = writeln!(o, "{k} = {}", p.display());
            }
        }
        o
    }
}

/// Settings of the `synth` command: scene ranges plus the video count.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub videos: usize,
    pub scene: SceneParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 10,
            scene: SceneParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = SynthConfig::default();
        for (key, v) in parse_pairs(text)? {
            let (key, v) = (key.as_str(), v.as_str());
            let s = &mut c.scene;
            let a = &mut s.attention;
            match key {
                "videos" => c.videos = parse_num(key, v)?,
                "width" => s.width = parse_num(key, v)?,
                "height" => s.height = parse_num(key, v)?,
                "frames" => s.frames = parse_num(key, v)?,
                "fps" => s.fps = parse_num(key, v)?,
                "min_objects" => s.min_objects = parse_num(key, v)?,
                "max_objects" => s.max_objects = parse_num(key, v)?,
                "min_radius" => s.min_radius = parse_num(key, v)?,
                "max_radius" => s.max_radius = parse_num(key, v)?,
                "min_speed" => s.min_speed = parse_num(key, v)?,
                "max_speed" => s.max_speed = parse_num(key, v)?,
                "toggle_prob" => s.toggle_prob = parse_num(key, v)?,
                "subjects" => a.subjects = parse_num(key, v)?,
                "base_weight" => a.base_weight = parse_num(key, v)?,
                "speed_weight" => a.speed_weight = parse_num(key, v)?,
                "memory" => a.memory = parse_num(key, v)?,
                "switch_prob" => a.switch_prob = parse_num(key, v)?,
                "spread" => a.spread = parse_num(key, v)?,
                "background_rate" => a.background_rate = parse_num(key, v)?,
                _ => return Err(Error::config(key, "unknown key")),
            }
        }
        if c.videos == 0 {
            return Err(Error::config("videos", "must be at least 1"));
        }
        crate::data::synth::random_scene(&c.scene, 0)?.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_hyper_parameters() {
        let c = RunConfig::full();
        assert_eq!((c.lambda, c.model.gamma, c.p_h, c.p_f, c.mc_samples), (0.5, 0.5, 0.25, 0.25, 100));
        assert_eq!((c.omcnn_lr, c.clstm_lr, c.weight_decay, c.batch_size), (1e-5, 1e-4, 5e-6, 12));
        assert_eq!((c.omcnn_epochs, c.clstm_epochs, c.clip_length, c.overlap), (12, 15, 16, 10));
        assert_eq!(RunConfig::from_text("").unwrap().lambda, 0.5);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::from_text("scale = full\nseed = 9\ndata = /tmp/x # comment\n").unwrap();
        assert_eq!(c.scale, Scale::Full);
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        c.p_h = 0.125;
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        for (text, field) in [
            ("gamma = 1.5", "gamma"),
            ("lambda = -1", "lambda"),
            ("p_h = 1", "p_h"),
            ("p_f = -0.1", "p_f"),
            ("omcnn_lr = 0", "omcnn_lr"),
            ("clstm_lr = nan", "clstm_lr"),
            ("batch_size = 0", "batch_size"),
            ("mc_samples = 0", "mc_samples"),
            ("overlap = 16", "overlap"),
            ("weight_decay = -1", "weight_decay"),
            ("omcnn_epochs = 0", "omcnn_epochs"),
            ("clstm_epochs = 0", "clstm_epochs"),
            ("bogus = 1", "bogus"),
            ("seed = x", "seed"),
        ] {
            match RunConfig::from_text(text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn synth_config_keys() {
        let c = SynthConfig::from_text("videos = 3\nframes = 20\nspeed_weight = 4").unwrap();
        assert_eq!((c.videos, c.scene.frames, c.scene.attention.speed_weight), (3, 20, 4.0));
        assert!(SynthConfig::from_text("videos = 0").is_err());
    }
}
