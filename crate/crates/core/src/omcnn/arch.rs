//! Versioned layer schedule for OM-CNN and the 2C-LSTM head.
//!
//! Channel counts are given at full scale and divided by the configured
//! `channel_scale`. The table is serialized into every checkpoint header;
//! a checkpoint only loads into a model whose table text matches.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const ARCH_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    /// 2×2 max pooling applied to the layer input.
    pub pool_before: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

/// Size parameters of the intra-frame network.
#[derive(Clone, Debug, PartialEq)]
pub struct OmCnnConfig {
    pub input_size: usize,
    pub channel_scale: usize,
    pub fn_size: usize,
    pub fn_channels: usize,
    /// Mask degree: the coarse map is remapped from [0, 1] to [gamma, 1].
    pub gamma: f64,
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub class_count: usize,
}

impl OmCnnConfig {
    /// Full-size network on 448×448 frames.
    pub fn full() -> Self {
        OmCnnConfig {
            input_size: 448,
            channel_scale: 1,
            fn_size: 28,
            fn_channels: 128,
            gamma: 0.5,
            grid_size: 7,
            boxes_per_cell: 2,
            class_count: 20,
        }
    }

    /// Every channel count divided by 8.
    pub fn tiny() -> Self {
        OmCnnConfig {
            channel_scale: 8,
            fn_channels: 16,
            ..Self::full()
        }
    }

    /// Channels of the reshaped detection head.
    pub fn head_channels(&self) -> usize {
        self.boxes_per_cell * 5 + self.class_count
    }

    pub fn scaled(&self, full: usize) -> usize {
        full.div_ceil(self.channel_scale).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if self.channel_scale == 0 {
            return Err(Error::config("channel_scale", "must be at least 1"));
        }
        if self.fn_size == 0 || self.fn_channels == 0 || self.grid_size == 0 {
            return Err(Error::config("fn_size", "extents must be positive"));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::config(
                "input_size",
                format!("must be a positive multiple of 32 (five 2× poolings), got {}", self.input_size),
            ));
        }
        if self.input_size % self.fn_size != 0 {
            return Err(Error::config(
                "input_size",
                format!("must be divisible by fn_size {}, got {}", self.fn_size, self.input_size),
            ));
        }
        if self.input_size % 64 != 0 && self.input_size / 32 < 2 {
            return Err(Error::config("input_size", "too small for the motion subnet"));
        }
        Ok(())
    }
}

/// The concrete layer schedule for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchTable {
    pub config: OmCnnConfig,
    pub objectness: Vec<ConvLayer>,
    /// 1-based indices of objectness conv layers fed to feature normalization.
    pub objectness_taps: [usize; 4],
    pub fc_hidden: usize,
    pub motion: Vec<ConvLayer>,
    pub motion_taps: [usize; 4],
    /// Motion conv layers 1..=masked_layers have their outputs masked.
    pub masked_layers: usize,
    pub inference_convs: Vec<ConvLayer>,
    pub inference_deconvs: Vec<DeconvLayer>,
    pub lstm_kernel: usize,
    pub lstm_layers: usize,
    pub lstm_deconvs: Vec<DeconvLayer>,
}

fn conv(kernel: usize, stride: usize, out_channels: usize, pool_before: bool) -> ConvLayer {
    ConvLayer {
        kernel,
        stride,
        out_channels,
        pool_before,
    }
}

impl ArchTable {
    pub fn new(config: &OmCnnConfig) -> Result<Self> {
        config.validate()?;
        let s = |c: usize| config.scaled(c);
        // Fast-YOLO trunk: nine 3×3 convs, five 2×2 pools (448 → 14).
        let obj_plan = [
            (16, false),
            (32, true),
            (64, true),
            (128, true),
            (256, true),
            (512, false),
            (1024, true),
            (1024, false),
            (1024, false),
        ];
        // FlowNetS contracting part: first ten convs.
        let motion_plan = [
            (7, 2, 64),
            (5, 2, 128),
            (5, 2, 256),
            (3, 1, 256),
            (3, 2, 512),
            (3, 1, 512),
            (3, 2, 512),
            (3, 1, 512),
            (3, 2, 1024),
            (3, 1, 1024),
        ];
        Ok(ArchTable {
            config: config.clone(),
            objectness: obj_plan.iter().map(|&(c, p)| conv(3, 1, s(c), p)).collect(),
            objectness_taps: [4, 5, 6, 9],
            fc_hidden: s(256),
            motion: motion_plan.iter().map(|&(k, st, c)| conv(k, st, s(c), false)).collect(),
            motion_taps: [4, 6, 8, 10],
            masked_layers: 6,
            inference_convs: vec![
                conv(1, 1, s(256), false),
                conv(3, 1, s(128), false),
                conv(3, 1, s(128), false),
                conv(3, 1, config.fn_channels, false),
            ],
            inference_deconvs: vec![
                DeconvLayer {
                    kernel: 4,
                    stride: 2,
                    out_channels: s(64),
                },
                DeconvLayer {
                    kernel: 4,
                    stride: 2,
                    out_channels: 1,
                },
            ],
            lstm_kernel: 3,
            lstm_layers: 2,
            lstm_deconvs: vec![
                DeconvLayer {
                    kernel: 4,
                    stride: 2,
                    out_channels: (config.fn_channels / 2).max(1),
                },
                DeconvLayer {
                    kernel: 4,
                    stride: 2,
                    out_channels: 1,
                },
            ],
        })
    }

    /// Spatial extent of the objectness trunk output (after five pools).
    pub fn trunk_extent(&self) -> usize {
        self.config.input_size >> self.objectness.iter().filter(|l| l.pool_before).count()
    }

    /// Extent of the saliency maps produced by the inference heads.
    pub fn map_extent(&self) -> usize {
        self.inference_deconvs.iter().fold(self.config.fn_size, |e, d| e * d.stride)
    }

    /// Channels entering the coarse inference head.
    pub fn spatial_channels(&self) -> usize {
        4 * self.config.fn_channels + self.config.head_channels()
    }

    /// Channels entering the fine inference head.
    pub fn spatio_temporal_channels(&self) -> usize {
        self.spatial_channels() + 4 * self.config.fn_channels
    }

    /// Canonical text form stored in checkpoint headers.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "arch_version = {ARCH_VERSION}");
        let _ = writeln!(out, "input_size = {}", c.input_size);
        let _ = writeln!(out, "channel_scale = {}", c.channel_scale);
        let _ = writeln!(out, "fn_size = {}", c.fn_size);
        let _ = writeln!(out, "fn_channels = {}", c.fn_channels);
        let _ = writeln!(out, "grid_size = {}", c.grid_size);
        let _ = writeln!(out, "boxes_per_cell = {}", c.boxes_per_cell);
        let _ = writeln!(out, "class_count = {}", c.class_count);
        let layers = |v: &[ConvLayer]| {
            v.iter()
                .map(|l| format!("{}x{}/{}:{}{}", l.kernel, l.kernel, l.stride, l.out_channels, if l.pool_before { "+pool" } else { "" }))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let deconvs = |v: &[DeconvLayer]| {
            v.iter()
                .map(|l| format!("{}x{}/{}:{}", l.kernel, l.kernel, l.stride, l.out_channels))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let taps = |t: &[usize; 4]| t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "objectness = {}", layers(&self.objectness));
        let _ = writeln!(out, "objectness_taps = {}", taps(&self.objectness_taps));
        let _ = writeln!(out, "fc_hidden = {}", self.fc_hidden);
        let _ = writeln!(out, "motion = {}", layers(&self.motion));
        let _ = writeln!(out, "motion_taps = {}", taps(&self.motion_taps));
        let _ = writeln!(out, "masked_layers = {}", self.masked_layers);
        let _ = writeln!(out, "inference_convs = {}", layers(&self.inference_convs));
        let _ = writeln!(out, "inference_deconvs = {}", deconvs(&self.inference_deconvs));
        let _ = writeln!(out, "lstm = {}x{} layers:{}", self.lstm_kernel, self.lstm_kernel, self.lstm_layers);
        let _ = writeln!(out, "lstm_deconvs = {}", deconvs(&self.lstm_deconvs));
        out
    }
}
