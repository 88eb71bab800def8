//! The non-intrusive STOI predictor: optional learnable front-end, a
//! two-layer convolutional block, a bottleneck transformer, two dense blocks
//! with temporal pooling in between, and a final sigmoid.
//!
//! Frame features enter channel-major (`[dims, frames]`). The 2-D stages of
//! the bottleneck treat the sequence as a `[C, 1, T]` image, which in that
//! layout is the same buffer, so 1x1 convolutions are plain channel mixes and
//! attention runs over time.
//!
//! In train mode the bias of a convolution that feeds batch normalisation
//! directly is cancelled by the batch mean, so its gradient is exactly zero
//! (up to rounding). Those biases (`*.conv.bias` in the front-end and
//! convolutional block, `bottleneck.expand.bias`) are kept for parameter
//! accounting and are live in eval mode only.

mod checkpoint;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::SeedContext;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureTensor, NormStats, STD_FLOOR};
use crate::nn::{
    BatchNorm, BatchStats, Conv1d, Graph, LayerNorm, Linear, Mhsa, Mode, ParamStore, Real, Segments, Tensor, Var,
};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, TrainingMeta};

/// Learnable spectral front-end placed before the convolutional block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontEnd {
    None,
    /// Two conv layers 257 -> 256 -> 512.
    Ps2,
    /// One conv layer 257 -> 512.
    Ps3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_kind: FeatureKind,
    /// Width entering the convolutional block (after any front-end).
    pub input_dim: usize,
    pub conv_hidden: [usize; 2],
    pub kernel: usize,
    pub bot_hidden: usize,
    pub heads: usize,
    /// Dropout after bottleneck block 1, on attention weights, after block 2.
    pub bot_dropouts: [f64; 3],
    pub dense1: usize,
    pub frontend: FrontEnd,
    pub frontend_hidden: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn for_kind(kind: FeatureKind) -> Self {
        let (input_dim, frontend) = match kind {
            FeatureKind::Ps1 => (257, FrontEnd::None),
            FeatureKind::Ps2Input => (512, FrontEnd::Ps2),
            FeatureKind::Ps3Input => (512, FrontEnd::Ps3),
            FeatureKind::W2v2 => (768, FrontEnd::None),
            FeatureKind::Hubert => (1024, FrontEnd::None),
        };
        Self {
            feature_kind: kind,
            input_dim,
            conv_hidden: [256, 128],
            kernel: 3,
            bot_hidden: 64,
            heads: 8,
            bot_dropouts: [0.1, 0.2, 0.1],
            dense1: 32,
            frontend,
            frontend_hidden: 256,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.feature_kind;
        let expected_frontend = match kind {
            FeatureKind::Ps2Input => FrontEnd::Ps2,
            FeatureKind::Ps3Input => FrontEnd::Ps3,
            _ => FrontEnd::None,
        };
        if self.frontend != expected_frontend {
            return Err(Error::Config(format!(
                "{kind} features need front-end {expected_frontend:?}, got {:?}",
                self.frontend
            )));
        }
        if self.frontend == FrontEnd::None && self.input_dim != kind.dims() {
            return Err(Error::Config(format!(
                "{kind} features are {}-d but input_dim is {}",
                kind.dims(),
                self.input_dim
            )));
        }
        if self.frontend != FrontEnd::None && self.input_dim != 512 {
            return Err(Error::Config(format!(
                "learnable front-ends emit 512-d features, input_dim is {}",
                self.input_dim
            )));
        }
        let widths = [
            self.input_dim,
            self.conv_hidden[0],
            self.conv_hidden[1],
            self.bot_hidden,
            self.dense1,
            self.frontend_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive: {widths:?}")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel must be odd for same padding, got {}",
                self.kernel
            )));
        }
        if self.heads == 0 || !self.bot_hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "bottleneck width {} is not divisible by {} heads",
                self.bot_hidden, self.heads
            )));
        }
        if let Some(p) = self.bot_dropouts.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {p}")));
        }
        Ok(())
    }

    /// Width of the feature files the model consumes.
    pub fn feature_dims(&self) -> usize {
        self.feature_kind.dims()
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    conv: Conv1d,
    bn: BatchNorm,
}

#[derive(Clone, Copy, Debug)]
struct Bottleneck {
    reduce: Linear,
    bn1: BatchNorm,
    mhsa: Mhsa,
    bn2: BatchNorm,
    expand: Linear,
    bn3: BatchNorm,
}

/// A batch of utterances concatenated along time, normalised and
/// channel-major.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub input: Tensor<T>,
    pub segs: Segments,
}

/// Result of a forward pass: per-utterance predictions `[1, B]` and the batch
/// statistics to fold into running estimates after a train step.
pub struct ForwardOut<T> {
    pub prediction: Var,
    pub bn_stats: Vec<BatchStats<T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    frontend: Vec<ConvLayer>,
    conv: [ConvLayer; 2],
    bot: Bottleneck,
    dense1: Linear,
    norm1: LayerNorm,
    dense2: Linear,
}

const NORM_MEAN: &str = "input_norm.mean";
const NORM_STD: &str = "input_norm.std";

/// Trainable scalars of one named layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub layers: Vec<LayerCount>,
}

impl ParameterCount {
    /// Sum of every layer whose name starts with `prefix`.
    pub fn block(&self, prefix: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| l.layer.starts_with(prefix))
            .map(|l| l.params)
            .sum()
    }
}

/// Published parameter counts for the three configurations that have one.
pub fn reference_parameter_count(kind: FeatureKind) -> Option<usize> {
    match kind {
        FeatureKind::Ps1 => Some(314_017),
        FeatureKind::W2v2 => Some(706_465),
        FeatureKind::Hubert => Some(903_073),
        _ => None,
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedContext::new(config.init_seed, "model-init").stream();
        let mut store = ParamStore::new();
        let dims = config.feature_dims();
        store.add(NORM_MEAN, Tensor::zeros(vec![dims]), false)?;
        store.add(NORM_STD, Tensor::filled(vec![dims], T::one()), false)?;
        let k = config.kernel;
        let mut layer = |store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize| -> Result<ConvLayer> {
            Ok(ConvLayer {
                conv: Conv1d::new(store, &format!("{name}.conv"), cin, cout, k, &mut rng)?,
                bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
            })
        };
        let frontend = match config.frontend {
            FrontEnd::None => vec![],
            FrontEnd::Ps2 => vec![
                layer(&mut store, "frontend.0", dims, config.frontend_hidden)?,
                layer(&mut store, "frontend.1", config.frontend_hidden, config.input_dim)?,
            ],
            FrontEnd::Ps3 => vec![layer(&mut store, "frontend.0", dims, config.input_dim)?],
        };
        let [h1, h2] = config.conv_hidden;
        let conv = [
            layer(&mut store, "conv_block.0", config.input_dim, h1)?,
            layer(&mut store, "conv_block.1", h1, h2)?,
        ];
        let bh = config.bot_hidden;
        let bot = Bottleneck {
            reduce: Linear::new(&mut store, "bottleneck.reduce", h2, bh, &mut rng)?,
            bn1: BatchNorm::new(&mut store, "bottleneck.bn1", bh)?,
            mhsa: Mhsa::new(
                &mut store,
                "bottleneck.mhsa",
                bh,
                config.heads,
                config.bot_dropouts[1],
                &mut rng,
            )?,
            bn2: BatchNorm::new(&mut store, "bottleneck.bn2", bh)?,
            expand: Linear::new(&mut store, "bottleneck.expand", bh, h2, &mut rng)?,
            bn3: BatchNorm::new(&mut store, "bottleneck.bn3", h2)?,
        };
        let dense1 = Linear::new(&mut store, "dense1.linear", h2, config.dense1, &mut rng)?;
        let norm1 = LayerNorm::new(&mut store, "dense1.norm", config.dense1)?;
        let dense2 = Linear::new(&mut store, "dense2.linear", config.dense1, 1, &mut rng)?;
        Ok(Self {
            config,
            store,
            frontend,
            conv,
            bot,
            dense1,
            norm1,
            dense2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Install per-dimension input normalisation.
    pub fn set_normalization(&mut self, stats: &NormStats) -> Result<()> {
        if stats.dims() != self.config.feature_dims() {
            return Err(Error::Shape(format!(
                "normalization has {} dims, model consumes {}",
                stats.dims(),
                self.config.feature_dims()
            )));
        }
        for (name, vals) in [(NORM_MEAN, &stats.mean), (NORM_STD, &stats.std)] {
            let id = self.store.id(name).expect("normalization slots exist");
            for (d, &v) in self.store.get_mut(id).tensor.data_mut().iter_mut().zip(vals) {
                *d = T::of(v as f64);
            }
        }
        Ok(())
    }

    pub fn normalization(&self) -> NormStats {
        let get = |name| {
            let id = self.store.id(name).expect("normalization slots exist");
            self.store.tensor(id).data().iter().map(|v| v.f64() as f32).collect()
        };
        NormStats {
            mean: get(NORM_MEAN),
            std: get(NORM_STD),
        }
    }

    /// Normalise and concatenate utterances. With `valid`, only the first
    /// `valid[i]` frames of utterance `i` are used (trailing padding dropped).
    pub fn batch(&self, feats: &[&FeatureTensor], valid: Option<&[usize]>) -> Result<Batch<T>> {
        let mut items = Vec::with_capacity(feats.len());
        for (i, f) in feats.iter().enumerate() {
            let len = match valid {
                Some(v) => *v
                    .get(i)
                    .ok_or_else(|| Error::Shape("valid lengths shorter than batch".into()))?,
                None => f.frames(),
            };
            items.push((*f, 0..len));
        }
        self.batch_ranges(&items)
    }

    /// Normalise and concatenate the given frame range of each utterance.
    pub fn batch_ranges(&self, items: &[(&FeatureTensor, Range<usize>)]) -> Result<Batch<T>> {
        if items.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let dims = self.config.feature_dims();
        for (f, r) in items {
            if f.kind() != self.config.feature_kind || f.dims() != dims {
                return Err(Error::Shape(format!(
                    "model expects {} features ({dims}-d), got {} ({}-d)",
                    self.config.feature_kind,
                    f.kind(),
                    f.dims()
                )));
            }
            if r.is_empty() || r.end > f.frames() {
                return Err(Error::Shape(format!("frame range {r:?} outside 0..{}", f.frames())));
            }
        }
        let segs = Segments::new(items.iter().map(|(_, r)| r.len()).collect())?;
        let n = segs.total();
        let mean = self.store.tensor(self.store.id(NORM_MEAN).expect("slot")).data();
        let std = self.store.tensor(self.store.id(NORM_STD).expect("slot")).data();
        let mut data = vec![T::zero(); dims * n];
        for ((f, r), (off, _)) in items.iter().zip(segs.iter()) {
            for (t, frame) in r.clone().enumerate() {
                for (d, &v) in f.row(frame).iter().enumerate() {
                    let s = std[d].f64().max(STD_FLOOR as f64);
                    data[d * n + off + t] = T::of((v as f64 - mean[d].f64()) / s);
                }
            }
        }
        Ok(Batch {
            input: Tensor::new(vec![dims, n], data)?,
            segs,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOut<T>> {
        let s = &self.store;
        let segs = &batch.segs;
        let mut stats = Vec::new();
        let mut keep = |st: Option<BatchStats<T>>| stats.extend(st);
        let mut x = g.input(batch.input.clone())?;
        for l in self.frontend.iter().chain(&self.conv) {
            let c = l.conv.forward(g, s, x, segs)?;
            let (b, st) = l.bn.forward(g, s, c, mode)?;
            keep(st);
            x = g.gelu(b)?;
        }
        let residual = x;
        let [p1, _, p3] = self.config.bot_dropouts;
        let bot = &self.bot;
        let h = bot.reduce.forward(g, s, residual)?;
        let h = g.gelu(h)?;
        let (h, st) = bot.bn1.forward(g, s, h, mode)?;
        keep(st);
        let h = g.dropout(h, p1, mode, rng)?;
        let (h, _) = bot.mhsa.forward(g, s, h, segs, mode, rng)?;
        let pooled = g.adaptive_avg_pool(h, segs, 1)?;
        let h = g.gelu(pooled)?;
        let (h, st) = bot.bn2.forward(g, s, h, mode)?;
        keep(st);
        let h = g.dropout(h, p3, mode, rng)?;
        let h = bot.expand.forward(g, s, h)?;
        let (summary, st) = bot.bn3.forward(g, s, h, mode)?;
        keep(st);
        let joined = g.broadcast_add(residual, summary, segs)?;
        let gated = g.sigmoid(joined)?;
        let d = self.dense1.forward(g, s, gated)?;
        let d = self.norm1.forward(g, s, d)?;
        let pooled = g.adaptive_avg_pool(d, segs, 1)?;
        let logit = self.dense2.forward(g, s, pooled)?;
        let prediction = g.sigmoid(logit)?;
        Ok(ForwardOut {
            prediction,
            bn_stats: stats,
        })
    }

    /// Eval-mode scores for a batch of utterances.
    pub fn predict_batch(&self, feats: &[&FeatureTensor]) -> Result<Vec<f64>> {
        let batch = self.batch(feats, None)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(g.value(out.prediction).data().iter().map(|v| v.f64()).collect())
    }

    /// Eval-mode score of one utterance.
    pub fn predict(&self, feats: &FeatureTensor) -> Result<f64> {
        Ok(self.predict_batch(&[feats])?[0])
    }

    /// Trainable parameter count with a per-layer breakdown in build order.
    pub fn count_parameters(&self) -> ParameterCount {
        let mut layers: Vec<LayerCount> = Vec::new();
        for (_, p) in self.store.iter().filter(|(_, p)| p.trainable) {
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l).to_string();
            match layers.last_mut() {
                Some(last) if last.layer == layer => last.params += p.tensor.len(),
                _ => layers.push(LayerCount {
                    layer,
                    params: p.tensor.len(),
                }),
            }
        }
        ParameterCount {
            total: layers.iter().map(|l| l.params).sum(),
            layers,
        }
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            frontend: self.frontend.clone(),
            conv: self.conv,
            bot: self.bot,
            dense1: self.dense1,
            norm1: self.norm1,
            dense2: self.dense2,
        }
    }
}
