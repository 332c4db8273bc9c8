//! Two-stage training: OM-CNN on frame pairs, then the 2C-LSTM on clips
//! of frozen OM-CNN features.
//!
//! Every random draw derives from `(seed, stream, counter)` through
//! [`derive_seed`], so a run's state is fully captured by its seed and
//! step counter and a resumed run replays the uninterrupted one exactly.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, Mode};
use crate::checkpoint::{Checkpoint, Stage};
use crate::clstm::{Clstm, RunMode};
use crate::config::RunConfig;
use crate::data::clips::segment_clips;
use crate::data::fixations::{fixations_to_map, frame_pixels};
use crate::data::preprocess::{preprocess_frame, ChannelMean};
use crate::data::video::Video;
use crate::error::{Error, Result};
use crate::loss::{clstm_loss, kl_loss, om_cnn_loss};
use crate::map::Map;
use crate::metrics::{kl_divergence, Pixel};
use crate::omcnn::{ArchTable, OmCnn, Variant};
use crate::optim::{AdamConfig, AdamState};
use crate::parallel;
use crate::params::{derive_seed, rng_from_seed, ParamStore};
use crate::tensor::Tensor;

// Independent random streams under the run seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 32;
const DROPOUT_STREAM: u64 = 2 << 32;
const CLSTM_INIT_STREAM: u64 = 3 << 32;

/// Frames and ground truth of a set of videos, prepared on demand.
#[derive(Clone, Copy)]
pub struct FrameSource<'a> {
    pub videos: &'a [Video],
    pub mean: ChannelMean,
    pub input_size: usize,
    /// Extent of the predicted maps and of the ground truth.
    pub map_size: usize,
    pub sigma_divisor: f64,
}

impl<'a> FrameSource<'a> {
    pub fn new(videos: &'a [Video], config: &RunConfig, mean: ChannelMean) -> Result<Self> {
        let arch = ArchTable::new(&config.model)?;
        Ok(FrameSource {
            videos,
            mean,
            input_size: config.model.input_size,
            map_size: arch.map_extent(),
            sigma_divisor: config.sigma_divisor,
        })
    }

    pub fn frame(&self, v: usize, t: usize) -> Result<Tensor<f32>> {
        preprocess_frame(&self.videos[v].frames[t], self.input_size, &self.mean)
    }

    /// Fixations of frame `t` in map pixels.
    pub fn fixation_pixels(&self, v: usize, t: usize) -> Vec<Pixel> {
        let video = &self.videos[v];
        frame_pixels(video.fixations.for_frame(t), video.width(), video.height(), self.map_size, self.map_size)
    }

    pub fn ground_map(&self, v: usize, t: usize) -> Result<Map> {
        let sigma = self.map_size as f64 / self.sigma_divisor;
        Ok(fixations_to_map(&self.fixation_pixels(v, t), self.map_size, self.map_size, sigma)?.0)
    }

    pub fn ground(&self, v: usize, t: usize) -> Result<Tensor<f32>> {
        Ok(self.ground_map(v, t)?.to_tensor())
    }

    /// Every `(video, frame)` with a predecessor frame.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.videos
            .iter()
            .enumerate()
            .flat_map(|(v, video)| (1..video.len()).map(move |t| (v, t)))
            .collect()
    }

    /// Stacked `(prev, cur, ground)` tensors of `items`; frame 0 is paired
    /// with itself.
    pub fn batch(&self, items: &[(usize, usize)]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let parts = parallel::map_indexed(items.len(), |i| -> Result<_> {
            let (v, t) = items[i];
            Ok((self.frame(v, t.saturating_sub(1))?, self.frame(v, t)?, self.ground(v, t)?))
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        let prev: Vec<_> = parts.iter().map(|p| p.0.clone()).collect();
        let cur: Vec<_> = parts.iter().map(|p| p.1.clone()).collect();
        let ground: Vec<_> = parts.iter().map(|p| p.2.clone()).collect();
        Ok((Tensor::stack(&prev)?, Tensor::stack(&cur)?, Tensor::stack(&ground)?))
    }
}

/// At most `limit` evenly spaced items (all when `limit` is 0).
pub fn spread_subset<T: Clone>(items: &[T], limit: usize) -> Vec<T> {
    if limit == 0 || items.len() <= limit {
        return items.to_vec();
    }
    (0..limit).map(|i| items[i * items.len() / limit].clone()).collect()
}

/// Appends `step,loss,val_kl` lines; `val_kl` is empty on steps without validation.
pub struct TrainLog {
    path: PathBuf,
}

impl TrainLog {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            std::fs::write(path, "step,loss,val_kl\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(TrainLog { path: path.to_path_buf() })
    }

    pub fn append(&self, step: u64, loss: f64, val_kl: Option<f64>) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let val = val_kl.map(|v| v.to_string()).unwrap_or_default();
        writeln!(f, "{step},{loss},{val}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Outcome of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub losses: Vec<f64>,
    pub best_val: Option<f64>,
}

fn check_finite(loss: f64, step: u64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("loss became {loss} at step {step}")))
    }
}

fn adam_config(lr: f64, weight_decay: f64) -> AdamConfig {
    AdamConfig {
        learning_rate: lr,
        weight_decay,
        ..AdamConfig::default()
    }
}

/// Items of batch `step` in an epoch-wise shuffled pass over `n` items.
fn epoch_batch(seed: u64, n: usize, batch: usize, step: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch) as u64;
    let (epoch, pos) = (step / per_epoch, (step % per_epoch) as usize);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, SHUFFLE_STREAM + epoch)));
    order[pos * batch..((pos + 1) * batch).min(n)].to_vec()
}

fn total_steps(n: usize, batch: usize, epochs: usize, max_steps: u64) -> u64 {
    let t = n.div_ceil(batch) as u64 * epochs as u64;
    if max_steps > 0 {
        t.min(max_steps)
    } else {
        t
    }
}

/// First training stage.
pub struct OmCnnTrainer {
    pub config: RunConfig,
    pub model: OmCnn,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
    pub mean: ChannelMean,
    pub best_val: Option<f64>,
}

impl OmCnnTrainer {
    pub fn new(config: &RunConfig, mean: ChannelMean) -> Result<Self> {
        config.validate()?;
        let arch = ArchTable::new(&config.model)?;
        let mut store = ParamStore::new();
        let model = OmCnn::new(&arch, config.variant, &mut store, derive_seed(config.seed, INIT_STREAM));
        Ok(OmCnnTrainer {
            config: config.clone(),
            model,
            store,
            adam: AdamState::new(adam_config(config.omcnn_lr, config.weight_decay)),
            step: 0,
            mean,
            best_val: None,
        })
    }

    /// Continues from a checkpoint; `config` must describe the same network.
    pub fn resume(ckpt: &Checkpoint, config: &RunConfig) -> Result<Self> {
        ckpt.check_compatible(config)?;
        if ckpt.stage != Stage::OmCnn {
            return Err(Error::Usage("expected an OM-CNN checkpoint".into()));
        }
        let mut t = Self::new(config, ckpt.mean)?;
        t.adam = ckpt.restore_into(&mut t.store)?;
        t.adam.config = adam_config(config.omcnn_lr, config.weight_decay);
        t.step = ckpt.step;
        t.best_val = ckpt.best_val;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(Stage::OmCnn, &self.config, self.step, self.mean, self.best_val, &self.store, &self.adam)
    }

    pub fn total_steps(&self, pairs: usize) -> u64 {
        total_steps(pairs, self.config.batch_size, self.config.omcnn_epochs, self.config.omcnn_max_steps)
    }

    /// One optimizer step on `items`; returns the loss before the update.
    pub fn train_step(&mut self, src: &FrameSource, items: &[(usize, usize)]) -> Result<f64> {
        let (prev, cur, ground) = src.batch(items)?;
        let g = Graph::new();
        let (p, c) = (g.input(prev), g.input(cur));
        let out = self.model.forward(&g, &self.store, p, c, Mode::Train)?;
        let loss = match self.model.variant {
            Variant::Full => om_cnn_loss(&g, &ground, out.fine, out.coarse, self.config.lambda)?,
            Variant::ObjectnessOnly => kl_loss(&g, &ground, out.fine)?,
        };
        let value = check_finite(g.value(loss).data()[0] as f64, self.step)?;
        let grads = g.backward(loss)?;
        self.store.accumulate(&grads);
        self.store.apply_buffer_updates(g.take_buffer_updates());
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(value)
    }

    /// Predicted distributions for `items`, in order.
    pub fn predict_maps(&self, src: &FrameSource, items: &[(usize, usize)]) -> Result<Vec<Map>> {
        let mut maps = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.config.batch_size) {
            let (prev, cur, _) = src.batch(chunk)?;
            let out = self.model.predict(&self.store, &prev, &cur)?;
            for i in 0..chunk.len() {
                maps.push(Map::from_batch(&out.fine_map, i)?);
            }
        }
        Ok(maps)
    }

    /// Mean `KL(G, S)` of the evaluation-mode prediction over `items`.
    pub fn mean_kl(&self, src: &FrameSource, items: &[(usize, usize)]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::Usage("no frames to evaluate".into()));
        }
        let maps = self.predict_maps(src, items)?;
        let mut s = 0.0;
        for (m, &(v, t)) in maps.iter().zip(items) {
            s += kl_divergence(&src.ground_map(v, t)?, m)?;
        }
        Ok(s / items.len() as f64)
    }

    /// Trains until the configured step count, validating every
    /// `val_every` steps and at the end. Writes `train.log`, `last.ckpt`
    /// and `best.ckpt` (lowest validation KL, or the last state without a
    /// validation set) into `out`.
    pub fn run(&mut self, train: &FrameSource, val: Option<&FrameSource>, out: &Path) -> Result<TrainSummary> {
        let pairs = train.pairs();
        if pairs.is_empty() {
            return Err(Error::Data("training set has no frame pairs".into()));
        }
        let val_items = val.map(|v| spread_subset(&v.pairs(), self.config.val_frames));
        if let Some(items) = &val_items {
            if items.is_empty() {
                return Err(Error::Data("validation set has no frame pairs".into()));
            }
        }
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let log = TrainLog::open(&out.join("train.log"))?;
        let total = self.total_steps(pairs.len());
        let mut losses = Vec::new();
        while self.step < total {
            let idx = epoch_batch(self.config.seed, pairs.len(), self.config.batch_size, self.step);
            let items: Vec<_> = idx.iter().map(|&i| pairs[i]).collect();
            let loss = self.train_step(train, &items)?;
            losses.push(loss);
            let mut val_kl = None;
            if let (Some(src), Some(items)) = (val, &val_items) {
                if self.step % self.config.val_every == 0 || self.step == total {
                    let kl = self.mean_kl(src, items)?;
                    val_kl = Some(kl);
                    if self.best_val.is_none_or(|b| kl < b) {
                        self.best_val = Some(kl);
                        self.checkpoint().save(&out.join("best.ckpt"))?;
                    }
                }
            }
            log.append(self.step, loss, val_kl)?;
            if val_kl.is_some() {
                self.checkpoint().save(&out.join("last.ckpt"))?;
            }
            log::info!("omcnn step {}/{total} loss {loss:.5}", self.step);
        }
        let last = self.checkpoint();
        last.save(&out.join("last.ckpt"))?;
        if val.is_none() {
            last.save(&out.join("best.ckpt"))?;
        }
        Ok(TrainSummary {
            steps: self.step,
            losses,
            best_val: self.best_val,
        })
    }
}

/// Rebuilds a trained OM-CNN from its checkpoint.
pub fn load_omcnn(ckpt: &Checkpoint) -> Result<(OmCnn, ParamStore<f32>)> {
    if ckpt.stage != Stage::OmCnn {
        return Err(Error::Usage("expected an OM-CNN checkpoint".into()));
    }
    let arch = ArchTable::new(&ckpt.config.model)?;
    let mut store = ParamStore::new();
    let model = OmCnn::new(&arch, ckpt.config.variant, &mut store, 0);
    ckpt.restore_into(&mut store)?;
    store.set_trainable(crate::omcnn::PREFIX, false);
    Ok((model, store))
}

/// `F_st` of every frame of every video, computed with the frozen OM-CNN.
pub fn extract_features(model: &OmCnn, store: &ParamStore<f32>, src: &FrameSource) -> Result<Vec<Vec<Tensor<f32>>>> {
    if model.variant != Variant::Full {
        return Err(Error::Usage("the 2C-LSTM needs the full OM-CNN variant".into()));
    }
    src.videos
        .iter()
        .enumerate()
        .map(|(v, video)| {
            let frames = parallel::map_indexed(video.len(), |t| -> Result<Tensor<f32>> {
                let prev = src.frame(v, t.saturating_sub(1))?;
                let cur = src.frame(v, t)?;
                Ok(model.predict(store, &prev, &cur)?.features.expect("full variant"))
            });
            frames.into_iter().collect()
        })
        .collect()
}

/// Cached inputs of the second stage.
pub struct ClipData {
    pub features: Vec<Vec<Tensor<f32>>>,
    pub ground: Vec<Vec<Tensor<f32>>>,
    /// `(video, start)` of every clip.
    pub clips: Vec<(usize, usize)>,
}

impl ClipData {
    pub fn build(model: &OmCnn, store: &ParamStore<f32>, src: &FrameSource, config: &RunConfig) -> Result<Self> {
        let features = extract_features(model, store, src)?;
        let ground = src
            .videos
            .iter()
            .enumerate()
            .map(|(v, video)| (0..video.len()).map(|t| src.ground(v, t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut clips = Vec::new();
        for (v, video) in src.videos.iter().enumerate() {
            for s in segment_clips(video.len(), config.clip_length, config.overlap)? {
                clips.push((v, s));
            }
        }
        Ok(ClipData { features, ground, clips })
    }

    /// Per-frame `(features, ground)` of clips stacked along the batch axis.
    fn stacked(&self, clips: &[(usize, usize)], t_len: usize) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
        let mut feats = Vec::with_capacity(t_len);
        let mut grounds = Vec::with_capacity(t_len);
        for k in 0..t_len {
            let f: Vec<_> = clips.iter().map(|&(v, s)| self.features[v][s + k].clone()).collect();
            let g: Vec<_> = clips.iter().map(|&(v, s)| self.ground[v][s + k].clone()).collect();
            feats.push(Tensor::stack(&f)?);
            grounds.push(Tensor::stack(&g)?);
        }
        Ok((feats, grounds))
    }
}

/// Second training stage; the OM-CNN is not touched.
pub struct ClstmTrainer {
    pub config: RunConfig,
    pub model: Clstm,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
    pub mean: ChannelMean,
    pub best_val: Option<f64>,
}

impl ClstmTrainer {
    pub fn new(config: &RunConfig, mean: ChannelMean) -> Result<Self> {
        config.validate()?;
        let arch = ArchTable::new(&config.model)?;
        let mut store = ParamStore::new();
        let model = Clstm::new(&arch, &mut store, derive_seed(config.seed, CLSTM_INIT_STREAM));
        Ok(ClstmTrainer {
            config: config.clone(),
            model,
            store,
            adam: AdamState::new(adam_config(config.clstm_lr, config.weight_decay)),
            step: 0,
            mean,
            best_val: None,
        })
    }

    pub fn resume(ckpt: &Checkpoint, config: &RunConfig) -> Result<Self> {
        ckpt.check_compatible(config)?;
        if ckpt.stage != Stage::Clstm {
            return Err(Error::Usage("expected a 2C-LSTM checkpoint".into()));
        }
        let mut t = Self::new(config, ckpt.mean)?;
        t.adam = ckpt.restore_into(&mut t.store)?;
        t.adam.config = adam_config(config.clstm_lr, config.weight_decay);
        t.step = ckpt.step;
        t.best_val = ckpt.best_val;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(Stage::Clstm, &self.config, self.step, self.mean, self.best_val, &self.store, &self.adam)
    }

    pub fn total_steps(&self, clips: usize) -> u64 {
        total_steps(clips, self.config.clstm_batch_size, self.config.clstm_epochs, self.config.clstm_max_steps)
    }

    /// One step on a batch of clips with one dropout mask set per layer.
    pub fn train_step(&mut self, data: &ClipData, clips: &[(usize, usize)]) -> Result<f64> {
        let (feats, grounds) = data.stacked(clips, self.config.clip_length)?;
        let masks = self.model.sample_masks::<f32>(
            clips.len(),
            self.config.p_h,
            self.config.p_f,
            derive_seed(self.config.seed, DROPOUT_STREAM + self.step),
        )?;
        let g = Graph::new();
        let vars: Vec<_> = feats.into_iter().map(|f| g.input(f)).collect();
        let maps = self.model.forward(&g, &self.store, &vars, Some(&masks))?;
        let loss = clstm_loss(&g, &grounds, &maps)?;
        let value = check_finite(g.value(loss).data()[0] as f64, self.step)?;
        let grads = g.backward(loss)?;
        self.store.accumulate(&grads);
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(value)
    }

    /// Mean per-frame `KL(G, S)` over every clip, without dropout.
    pub fn mean_kl(&self, data: &ClipData) -> Result<f64> {
        if data.clips.is_empty() {
            return Err(Error::Usage("no clips to evaluate".into()));
        }
        let t_len = self.config.clip_length;
        let per_clip = parallel::map_indexed(data.clips.len(), |i| -> Result<f64> {
            let (v, s) = data.clips[i];
            let maps = self.model.predict(&self.store, &data.features[v][s..s + t_len], RunMode::Deterministic)?;
            let mut acc = 0.0;
            for (k, m) in maps.iter().enumerate() {
                acc += kl_divergence(&Map::from_tensor(&data.ground[v][s + k])?, &Map::from_tensor(m)?)?;
            }
            Ok(acc / t_len as f64)
        });
        let vals = per_clip.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn run(&mut self, train: &ClipData, val: Option<&ClipData>, out: &Path) -> Result<TrainSummary> {
        if train.clips.is_empty() {
            return Err(Error::Data("no training clips".into()));
        }
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let log = TrainLog::open(&out.join("train.log"))?;
        let total = self.total_steps(train.clips.len());
        let mut losses = Vec::new();
        while self.step < total {
            let idx = epoch_batch(derive_seed(self.config.seed, 1), train.clips.len(), self.config.clstm_batch_size, self.step);
            let clips: Vec<_> = idx.iter().map(|&i| train.clips[i]).collect();
            let loss = self.train_step(train, &clips)?;
            losses.push(loss);
            let mut val_kl = None;
            if let Some(vd) = val {
                if self.step % self.config.val_every == 0 || self.step == total {
                    let kl = self.mean_kl(vd)?;
                    val_kl = Some(kl);
                    if self.best_val.is_none_or(|b| kl < b) {
                        self.best_val = Some(kl);
                        self.checkpoint().save(&out.join("best.ckpt"))?;
                    }
                }
            }
            log.append(self.step, loss, val_kl)?;
            if val_kl.is_some() {
                self.checkpoint().save(&out.join("last.ckpt"))?;
            }
            log::info!("clstm step {}/{total} loss {loss:.5}", self.step);
        }
        let last = self.checkpoint();
        last.save(&out.join("last.ckpt"))?;
        if val.is_none() {
            last.save(&out.join("best.ckpt"))?;
        }
        Ok(TrainSummary {
            steps: self.step,
            losses,
            best_val: self.best_val,
        })
    }
}

/// Rebuilds a trained 2C-LSTM from its checkpoint.
pub fn load_clstm(ckpt: &Checkpoint) -> Result<(Clstm, ParamStore<f32>)> {
    if ckpt.stage != Stage::Clstm {
        return Err(Error::Usage("expected a 2C-LSTM checkpoint".into()));
    }
    let arch = ArchTable::new(&ckpt.config.model)?;
    let mut store = ParamStore::new();
    let model = Clstm::new(&arch, &mut store, 0);
    ckpt.restore_into(&mut store)?;
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_batches_cover_every_item_once() {
        let mut seen: Vec<usize> = (0..4).flat_map(|s| epoch_batch(3, 10, 3, s)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(epoch_batch(3, 10, 3, 5), epoch_batch(3, 10, 3, 5));
        assert_eq!(total_steps(10, 3, 2, 0), 8);
        assert_eq!(total_steps(10, 3, 2, 5), 5);
    }

    #[test]
    fn subset_is_evenly_spaced() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(spread_subset(&v, 4), [0, 2, 5, 7]);
        assert_eq!(spread_subset(&v, 0), v);
    }
}
