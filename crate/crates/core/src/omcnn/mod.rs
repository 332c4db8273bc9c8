//! The object-to-motion CNN.
//!
//! The objectness subnet sees frame `t` and yields the coarse objectness
//! map `S_c`. The motion subnet sees frames `t−1` and `t` stacked on the
//! channel axis; the outputs of its first layers are gated by `S_c`. The
//! fine inference head turns both feature sets into the saliency
//! distribution `S_f` and the spatio-temporal block `F_st`.

pub mod arch;

pub use arch::{ArchTable, ConvLayer, DeconvLayer, OmCnnConfig, ARCH_VERSION};

use crate::autodiff::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::nn::{Affine, BatchNorm, LEAK};
use crate::params::{rng_from_seed, ParamStore, SeededRng};
use crate::tensor::{Element, Tensor};

/// Which parts of the network are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Objectness and motion subnets with both inference heads.
    Full,
    /// Objectness subnet and coarse head only; the prediction is `S_c`
    /// normalized to a distribution.
    ObjectnessOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ObjectnessOnly => "objectness",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "objectness" => Ok(Variant::ObjectnessOnly),
            _ => Err(Error::config("variant", format!("expected `full` or `objectness`, got `{s}`"))),
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct OmCnnVars {
    /// `S_c`, sigmoid map in [0, 1], `(n, 4·fn, 4·fn, 1)`.
    pub coarse: Var,
    /// The saliency distribution used as the prediction.
    pub fine: Var,
    /// `F_st`; absent for [`Variant::ObjectnessOnly`].
    pub features: Option<Var>,
}

/// Concrete outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct OmCnnOutput<T> {
    pub coarse_map: Tensor<T>,
    pub fine_map: Tensor<T>,
    pub features: Option<Tensor<T>>,
}

/// Convolutions and deconvolutions of an inference head.
#[derive(Clone, Debug)]
pub struct InferenceHead {
    pub convs: Vec<Affine>,
    pub deconvs: Vec<Affine>,
}

impl InferenceHead {
    fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut SeededRng, name: &str, arch: &ArchTable, cin: usize) -> Self {
        let mut c = cin;
        let mut convs = Vec::new();
        for (i, l) in arch.inference_convs.iter().enumerate() {
            convs.push(Affine::conv(store, rng, &format!("{name}.conv{}", i + 1), l.kernel, c, l.out_channels, true));
            c = l.out_channels;
        }
        let mut deconvs = Vec::new();
        for (i, l) in arch.inference_deconvs.iter().enumerate() {
            deconvs.push(Affine::deconv(store, rng, &format!("{name}.deconv{}", i + 1), l.kernel, c, l.out_channels));
            c = l.out_channels;
        }
        InferenceHead { convs, deconvs }
    }

    /// Returns the output of the last conv layer and the sigmoid map.
    fn forward<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, arch: &ArchTable, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for (p, l) in self.convs.iter().zip(&arch.inference_convs) {
            h = g.leaky_relu(p.conv2d(g, store, h, l.stride)?, LEAK);
        }
        let last_conv = h;
        let n = self.deconvs.len();
        for (i, (p, l)) in self.deconvs.iter().zip(&arch.inference_deconvs).enumerate() {
            h = p.deconv2d(g, store, h, l.stride)?;
            if i + 1 < n {
                h = g.leaky_relu(h, LEAK);
            }
        }
        Ok((last_conv, g.sigmoid(h)))
    }
}

/// Parameter handles of an OM-CNN instance.
#[derive(Clone, Debug)]
pub struct OmCnn {
    pub arch: ArchTable,
    pub variant: Variant,
    obj_convs: Vec<(Affine, BatchNorm)>,
    fc1: Affine,
    fc2: Affine,
    fn_obj: Vec<Affine>,
    coarse: InferenceHead,
    motion: Vec<Affine>,
    fn_mot: Vec<Affine>,
    fine: Option<InferenceHead>,
}

/// Name prefix of every OM-CNN parameter.
pub const PREFIX: &str = "omcnn.";

impl OmCnn {
    /// Registers freshly initialized parameters in `store`.
    pub fn new<T: Element>(arch: &ArchTable, variant: Variant, store: &mut ParamStore<T>, seed: u64) -> Self {
        let rng = &mut rng_from_seed(seed);
        let cfg = &arch.config;
        let mut c = 3;
        let mut obj_convs = Vec::new();
        for (i, l) in arch.objectness.iter().enumerate() {
            let name = format!("omcnn.obj.conv{}", i + 1);
            let conv = Affine::conv(store, rng, &name, l.kernel, c, l.out_channels, false);
            obj_convs.push((conv, BatchNorm::new(store, &format!("{name}.bn"), l.out_channels)));
            c = l.out_channels;
        }
        let t = arch.trunk_extent();
        let fc1 = Affine::dense(store, rng, "omcnn.obj.fc1", t * t * c, arch.fc_hidden);
        let head = cfg.grid_size * cfg.grid_size * cfg.head_channels();
        let fc2 = Affine::dense(store, rng, "omcnn.obj.fc2", arch.fc_hidden, head);
        let fn_obj = arch
            .objectness_taps
            .iter()
            .enumerate()
            .map(|(k, &tap)| {
                let cin = arch.objectness[tap - 1].out_channels;
                Affine::conv(store, rng, &format!("omcnn.fn_obj{}", k + 1), 1, cin, cfg.fn_channels, true)
            })
            .collect();
        let coarse = InferenceHead::new(store, rng, "omcnn.coarse", arch, arch.spatial_channels());

        let (mut motion, mut fn_mot, mut fine) = (Vec::new(), Vec::new(), None);
        if variant == Variant::Full {
            let mut c = 6;
            for (i, l) in arch.motion.iter().enumerate() {
                motion.push(Affine::conv(store, rng, &format!("omcnn.mot.conv{}", i + 1), l.kernel, c, l.out_channels, true));
                c = l.out_channels;
            }
            for (k, &tap) in arch.motion_taps.iter().enumerate() {
                let cin = arch.motion[tap - 1].out_channels;
                fn_mot.push(Affine::conv(store, rng, &format!("omcnn.fn_mot{}", k + 1), 1, cin, cfg.fn_channels, true));
            }
            fine = Some(InferenceHead::new(store, rng, "omcnn.fine", arch, arch.spatio_temporal_channels()));
        }
        OmCnn {
            arch: arch.clone(),
            variant,
            obj_convs,
            fc1,
            fc2,
            fn_obj,
            coarse,
            motion,
            fn_mot,
            fine,
        }
    }

    fn check_frame<T: Element>(&self, g: &Graph<T>, x: Var, channels: usize, op: &'static str) -> Result<()> {
        let s = self.arch.config.input_size;
        let shape = g.shape(x);
        if shape.len() != 4 {
            return Err(Error::dim(op, "rank", 4, shape.len()));
        }
        for (axis, want, got) in [("height", s, shape[1]), ("width", s, shape[2]), ("channels", channels, shape[3])] {
            if want != got {
                return Err(Error::dim(op, axis, want, got));
            }
        }
        Ok(())
    }

    /// Outputs of the tapped conv layers and the reshaped detection head.
    pub fn objectness_subnet<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, frame: Var, mode: Mode) -> Result<([Var; 4], Var)> {
        self.check_frame(g, frame, 3, "objectness_subnet")?;
        let mut h = frame;
        let mut outputs = Vec::with_capacity(self.obj_convs.len());
        for ((conv, bn), l) in self.obj_convs.iter().zip(&self.arch.objectness) {
            if l.pool_before {
                h = g.maxpool2d(h, 2, 2)?;
            }
            h = conv.conv2d(g, store, h, l.stride)?;
            h = bn.apply(g, store, h, mode)?;
            h = g.leaky_relu(h, LEAK);
            outputs.push(h);
        }
        let hidden = g.leaky_relu(self.fc1.linear(g, store, h)?, LEAK);
        let flat = self.fc2.linear(g, store, hidden)?;
        let cfg = &self.arch.config;
        let n = g.shape(frame)[0];
        let head = g.reshape(flat, &[n, cfg.grid_size, cfg.grid_size, cfg.head_channels()])?;
        let taps = self.arch.objectness_taps.map(|t| outputs[t - 1]);
        Ok((taps, head))
    }

    /// Spatial features `FS_1..FS_5` at `fn_size`.
    fn spatial_features<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, frame: Var, mode: Mode) -> Result<[Var; 5]> {
        let (taps, head) = self.objectness_subnet(g, store, frame, mode)?;
        let fs = self.arch.config.fn_size;
        let mut out = [head; 5];
        for (k, (&tap, p)) in taps.iter().zip(&self.fn_obj).enumerate() {
            out[k] = feature_normalize(g, store, p, tap, fs)?;
        }
        out[4] = g.bilinear_resize(head, fs, fs)?;
        Ok(out)
    }

    /// `S_c` from the five spatial features.
    pub fn coarse_inference<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, fs: &[Var; 5]) -> Result<Var> {
        let x = g.concat_channels(fs)?;
        let want = self.arch.spatial_channels();
        let got = g.shape(x)[3];
        if got != want {
            return Err(Error::dim("coarse_inference", "channels", want, got));
        }
        Ok(self.coarse.forward(g, store, &self.arch, x)?.1)
    }

    /// Outputs of the tapped motion layers; the first layers are masked by `s_c`.
    pub fn motion_subnet<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, pair: Var, s_c: Var) -> Result<[Var; 4]> {
        if self.motion.is_empty() {
            return Err(Error::Usage("this OM-CNN variant has no motion subnet".into()));
        }
        self.check_frame(g, pair, 6, "motion_subnet")?;
        let gamma = self.arch.config.gamma;
        let mut h = pair;
        let mut outputs = Vec::with_capacity(self.motion.len());
        for (i, (p, l)) in self.motion.iter().zip(&self.arch.motion).enumerate() {
            h = g.leaky_relu(p.conv2d(g, store, h, l.stride)?, LEAK);
            if i < self.arch.masked_layers {
                h = mask_features(g, h, s_c, gamma)?;
            }
            outputs.push(h);
        }
        Ok(self.arch.motion_taps.map(|t| outputs[t - 1]))
    }

    /// `(S_f, F_st)` from spatial and temporal features.
    pub fn fine_inference<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, fs: &[Var; 5], ft: &[Var; 4]) -> Result<(Var, Var)> {
        let head = self.fine.as_ref().ok_or_else(|| Error::Usage("this OM-CNN variant has no fine inference head".into()))?;
        let parts: Vec<Var> = fs.iter().chain(ft).copied().collect();
        let x = g.concat_channels(&parts)?;
        let want = self.arch.spatio_temporal_channels();
        let got = g.shape(x)[3];
        if got != want {
            return Err(Error::dim("fine_inference", "channels", want, got));
        }
        let (f_st, map) = head.forward(g, store, &self.arch, x)?;
        Ok((g.normalize_samples(map)?, f_st))
    }

    /// Full forward pass on frames `t−1` (`prev`) and `t` (`cur`), each
    /// `(n, input_size, input_size, 3)`.
    pub fn forward<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>, prev: Var, cur: Var, mode: Mode) -> Result<OmCnnVars> {
        let fs = self.spatial_features(g, store, cur, mode)?;
        let s_c = self.coarse_inference(g, store, &fs)?;
        match self.variant {
            Variant::ObjectnessOnly => Ok(OmCnnVars {
                coarse: s_c,
                fine: g.normalize_samples(s_c)?,
                features: None,
            }),
            Variant::Full => {
                self.check_frame(g, prev, 3, "om_cnn_forward")?;
                let pair = g.concat_channels(&[prev, cur])?;
                let taps = self.motion_subnet(g, store, pair, s_c)?;
                let size = self.arch.config.fn_size;
                let mut ft = taps;
                for (slot, p) in ft.iter_mut().zip(&self.fn_mot) {
                    *slot = feature_normalize(g, store, p, *slot, size)?;
                }
                let (s_f, f_st) = self.fine_inference(g, store, &fs, &ft)?;
                Ok(OmCnnVars {
                    coarse: s_c,
                    fine: s_f,
                    features: Some(f_st),
                })
            }
        }
    }

    /// Evaluation-mode forward pass returning concrete tensors.
    pub fn predict<T: Element>(&self, store: &ParamStore<T>, prev: &Tensor<T>, cur: &Tensor<T>) -> Result<OmCnnOutput<T>> {
        let g = Graph::new();
        let (p, c) = (g.input(prev.clone()), g.input(cur.clone()));
        let v = self.forward(&g, store, p, c, Mode::Eval)?;
        Ok(OmCnnOutput {
            coarse_map: g.value(v.coarse),
            fine_map: g.value(v.fine),
            features: v.features.map(|f| g.value(f)),
        })
    }
}

/// 1×1 convolution to the common channel count, then bilinear resize to
/// `size × size`.
pub fn feature_normalize<T: Element>(g: &Graph<T>, store: &ParamStore<T>, p: &Affine, x: Var, size: usize) -> Result<Var> {
    let y = p.conv2d(g, store, x, 1)?;
    g.bilinear_resize(y, size, size)
}

/// `C · (S_c·(1−γ) + γ)`, with `S_c` resized to the extent of `c`.
///
/// Evaluated as `1 − (1−γ)(1−S_c)` so that `S_c = 1` and `γ = 1` give an
/// exact unit mask.
pub fn mask_features<T: Element>(g: &Graph<T>, c: Var, s_c: Var, gamma: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config("gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    let shape = g.shape(c);
    if shape.len() != 4 {
        return Err(Error::dim("mask_features", "rank", 4, shape.len()));
    }
    let s = g.bilinear_resize(s_c, shape[1], shape[2])?;
    let inv = g.affine(s, -1.0, 1.0);
    let mask = g.affine(inv, -(1.0 - gamma), 1.0);
    g.mul_channels(c, mask)
}
