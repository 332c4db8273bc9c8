//! Self-describing checkpoints.
//!
//! A checkpoint is a text header followed by raw little-endian `f32`
//! payloads:
//!
//! ```text
//! vidsal-checkpoint 1
//! stage = omcnn
//! step = 120
//! ...
//! [arch]
//! <architecture table>
//! [config]
//! <run config>
//! [tensors]
//! <name> <kind> <shape> <offset> <bytes>
//! [end]
//! <payload>
//! ```
//!
//! `kind` is `weight`, `buffer`, `adam_m` or `adam_v`; offsets count from
//! the first payload byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::preprocess::ChannelMean;
use crate::error::{Error, Result};
use crate::omcnn::ArchTable;
use crate::optim::{AdamConfig, AdamState};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "vidsal-checkpoint";

/// Which network a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    OmCnn,
    Clstm,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::OmCnn => "omcnn",
            Stage::Clstm => "clstm",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "omcnn" => Some(Stage::OmCnn),
            "clstm" => Some(Stage::Clstm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<f32>,
}

/// Adam moments of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub name: String,
    pub first: Tensor<f32>,
    pub second: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: RunConfig,
    /// Optimizer steps taken; also the position of the counter-based RNG.
    pub step: u64,
    /// Seed of the counter-based RNG (every draw derives from seed and step).
    pub rng_seed: u64,
    pub mean: ChannelMean,
    pub best_val: Option<f64>,
    pub params: Vec<NamedTensor>,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub moments: Vec<Moments>,
}

impl Checkpoint {
    /// Snapshot of a parameter store and its optimizer.
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        stage: Stage,
        config: &RunConfig,
        step: u64,
        mean: ChannelMean,
        best_val: Option<f64>,
        store: &ParamStore<f32>,
        adam: &AdamState<f32>,
    ) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                kind: p.kind,
                value: p.value.clone(),
            })
            .collect();
        let moments = store
            .iter()
            .filter_map(|(id, p)| {
                let i = id.index();
                match (adam.first_moment.get(i), adam.second_moment.get(i)) {
                    (Some(Some(m)), Some(Some(v))) => Some(Moments {
                        name: p.name.clone(),
                        first: m.clone(),
                        second: v.clone(),
                    }),
                    _ => None,
                }
            })
            .collect();
        Checkpoint {
            stage,
            config: config.clone(),
            step,
            rng_seed: config.seed,
            mean,
            best_val,
            params,
            adam: adam.config.clone(),
            adam_step: adam.step_count,
            moments,
        }
    }

    /// Copies the saved values into `store`, which must hold exactly the
    /// same parameter names and shapes, and returns the optimizer state.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<AdamState<f32>> {
        if store.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, the model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for t in &self.params {
            let id = store.id(&t.name).ok_or_else(|| Error::Data(format!("checkpoint tensor {} is not a model parameter", t.name)))?;
            if store.get(id).kind != t.kind {
                return Err(Error::Data(format!("parameter {} changed kind", t.name)));
            }
            store.set(&t.name, t.value.clone())?;
        }
        let mut adam = AdamState::new(self.adam.clone());
        adam.step_count = self.adam_step;
        adam.first_moment = vec![None; store.len()];
        adam.second_moment = vec![None; store.len()];
        for m in &self.moments {
            let id = store.id(&m.name).ok_or_else(|| Error::Data(format!("moments for unknown parameter {}", m.name)))?;
            if m.first.shape() != store.get(id).value.shape() || m.second.shape() != store.get(id).value.shape() {
                return Err(Error::Data(format!("moment shape mismatch for {}", m.name)));
            }
            adam.first_moment[id.index()] = Some(m.first.clone());
            adam.second_moment[id.index()] = Some(m.second.clone());
        }
        Ok(adam)
    }

    /// Rejects a checkpoint whose network differs from the one `run` asks for.
    pub fn check_compatible(&self, run: &RunConfig) -> Result<()> {
        if self.config.model != run.model {
            return Err(Error::config(
                "scale",
                format!(
                    "checkpoint was trained at input {} / channel_scale {} / fn {}×{} / gamma {}, config asks for input {} / channel_scale {} / fn {}×{} / gamma {}",
                    self.config.model.input_size,
                    self.config.model.channel_scale,
                    self.config.model.fn_size,
                    self.config.model.fn_channels,
                    self.config.model.gamma,
                    run.model.input_size,
                    run.model.channel_scale,
                    run.model.fn_size,
                    run.model.fn_channels,
                    run.model.gamma
                ),
            ));
        }
        if self.config.variant != run.variant {
            return Err(Error::config("variant", format!("checkpoint holds the `{}` variant", self.config.variant.name())));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arch = ArchTable::new(&self.config.model)?;
        let mut h = String::new();
        let _ = writeln!(h, "{MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(h, "dtype = {}", f32::DTYPE.name());
        let _ = writeln!(h, "stage = {}", self.stage.name());
        let _ = writeln!(h, "step = {}", self.step);
        let _ = writeln!(h, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(h, "mean = {} {} {}", self.mean[0], self.mean[1], self.mean[2]);
        match self.best_val {
            Some(v) => {
                let _ = writeln!(h, "best_val = {v}");
            }
            None => {
                let _ = writeln!(h, "best_val = none");
            }
        }
        let a = &self.adam;
        let _ = writeln!(h, "adam = {} {} {} {} {}", a.learning_rate, a.beta1, a.beta2, a.epsilon, a.weight_decay);
        let _ = writeln!(h, "adam_step = {}", self.adam_step);
        h.push_str("[arch]\n");
        h.push_str(&arch.to_text());
        h.push_str("[config]\n");
        h.push_str(&self.config.to_text());
        h.push_str("[tensors]\n");
        let mut payload = Vec::new();
        let mut entry = |h: &mut String, name: &str, kind: &str, t: &Tensor<f32>| {
            let bytes = f32::to_le_bytes_vec(t.data());
            let shape = t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let _ = writeln!(h, "{name} {kind} {shape} {} {}", payload.len(), bytes.len());
            payload.extend_from_slice(&bytes);
        };
        for p in &self.params {
            if p.name.contains(char::is_whitespace) {
                return Err(Error::Usage(format!("parameter name `{}` contains whitespace", p.name)));
            }
            let kind = if p.kind == ParamKind::Weight { "weight" } else { "buffer" };
            entry(&mut h, &p.name, kind, &p.value);
        }
        for m in &self.moments {
            entry(&mut h, &m.name, "adam_m", &m.first);
            entry(&mut h, &m.name, "adam_v", &m.second);
        }
        h.push_str("[end]\n");
        let mut out = h.into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let marker = b"[end]\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing [end] marker".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let payload = &bytes[end + marker.len()..];

        let mut lines = header.lines();
        let first = lines.next().unwrap_or("");
        match first.split_once(' ') {
            Some((m, v)) if m == MAGIC => {
                if v.parse::<u32>().ok() != Some(CHECKPOINT_VERSION) {
                    return Err(bad(format!("unsupported checkpoint version `{v}`")));
                }
            }
            _ => return Err(bad("not a vidsal checkpoint".into())),
        }
        let mut section = "";
        let mut fields = std::collections::BTreeMap::new();
        let (mut arch_text, mut config_text) = (String::new(), String::new());
        let mut entries = Vec::new();
        for line in lines {
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                    fields.insert(k.to_string(), v.to_string());
                }
                "[arch]" => {
                    arch_text.push_str(line);
                    arch_text.push('\n');
                }
                "[config]" => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                "[tensors]" => entries.push(line),
                _ => return Err(bad(format!("unknown section {section}"))),
            }
        }
        let field = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing header field `{k}`")));
        let num = |k: &str| -> Result<f64> { field(k)?.parse().map_err(|_| bad(format!("bad value for `{k}`"))) };
        let int = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| bad(format!("bad value for `{k}`"))) };
        if field("dtype")? != f32::DTYPE.name() {
            return Err(bad(format!("unsupported dtype {}", field("dtype")?)));
        }
        let stage = Stage::parse(field("stage")?).ok_or_else(|| bad("bad stage".into()))?;
        let floats = |k: &str, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = field(k)?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(format!("bad value for `{k}`"))))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(bad(format!("`{k}` needs {n} values")));
            }
            Ok(v)
        };
        let mean = floats("mean", 3)?;
        let adam = floats("adam", 5)?;
        let best_val = match field("best_val")?.as_str() {
            "none" => None,
            _ => Some(num("best_val")?),
        };
        let config = RunConfig::from_text(&config_text).map_err(|e| bad(format!("embedded config: {e}")))?;
        let expected = ArchTable::new(&config.model)?.to_text();
        if expected != arch_text {
            return Err(bad("architecture table does not match this build's table for the stored config".into()));
        }

        let mut params = Vec::new();
        let mut moments: Vec<Moments> = Vec::new();
        let mut pending_m: Option<(String, Tensor<f32>)> = None;
        for e in entries {
            let parts: Vec<&str> = e.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(bad(format!("bad tensor line `{e}`")));
            }
            let shape: Vec<usize> = parts[2]
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(format!("bad shape in `{e}`"))))
                .collect::<Result<_>>()?;
            let off: usize = parts[3].parse().map_err(|_| bad(format!("bad offset in `{e}`")))?;
            let len: usize = parts[4].parse().map_err(|_| bad(format!("bad length in `{e}`")))?;
            let raw = payload.get(off..off + len).ok_or_else(|| bad(format!("payload too short for {}", parts[0])))?;
            let value = Tensor::new(&shape, f32::from_le_bytes_slice(raw)).map_err(|_| bad(format!("payload size mismatch for {}", parts[0])))?;
            let name = parts[0].to_string();
            match parts[1] {
                "weight" | "buffer" => params.push(NamedTensor {
                    name,
                    kind: if parts[1] == "weight" { ParamKind::Weight } else { ParamKind::Buffer },
                    value,
                }),
                "adam_m" => pending_m = Some((name, value)),
                "adam_v" => match pending_m.take() {
                    Some((n, first)) if n == name => moments.push(Moments { name, first, second: value }),
                    _ => return Err(bad(format!("adam_v for {name} without matching adam_m"))),
                },
                k => return Err(bad(format!("unknown tensor kind `{k}`"))),
            }
        }
        Ok(Checkpoint {
            stage,
            config,
            step: int("step")?,
            rng_seed: int("rng_seed")?,
            mean: [mean[0], mean[1], mean[2]],
            best_val,
            params,
            adam: AdamConfig {
                learning_rate: adam[0],
                beta1: adam[1],
                beta2: adam[2],
                epsilon: adam[3],
                weight_decay: adam[4],
            },
            adam_step: int("adam_step")?,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the stage.
    pub fn load_stage(path: &Path, stage: Stage) -> Result<Self> {
        let c = Self::load(path)?;
        if c.stage != stage {
            return Err(Error::format(path, format!("expected a {} checkpoint, found {}", stage.name(), c.stage.name())));
        }
        Ok(c)
    }
}
