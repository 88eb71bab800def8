//! Seeded degradation chains and corpus synthesis.
//!
//! A [`DegradationChain`] holds one to three distinct degradation kinds in
//! the fixed order reverb, additive, channel (telephone, radio, transcode),
//! clipping. Continuous parameters are drawn when the chain is built; the
//! per-sample randomness (noise offsets, clip thresholds, radio hiss) comes
//! from per-kind child seeds at application time, so a recorded chain
//! replays exactly and a sub-chain sees the same draws as its parent.

mod bank;
mod codec;
mod corpus;
mod flac;
mod ops;

pub use bank::{list_wavs, BankClip, ClipBank, NoiseBank, RirBank};
pub use codec::{decode_aiff, encode_aiff, transcode, Codec, Transcoder};
pub use corpus::{
    label_pair, read_manifest, synthesize_corpus, write_manifest, CorpusJob, CorpusSummary, LabeledPair, ManifestRecord,
};
pub use flac::{decode as decode_flac, encode as encode_flac};
pub use ops::{
    apply_additive, apply_clipping, apply_radio, apply_reverb, apply_telephone, draw_noise, hard_clip, loop_noise,
    mix_at_snr, AdditiveDraw, RADIO_BAND_HZ, TELEPHONE_BAND_HZ, TELEPHONE_RATE,
};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, SeedContext};
use crate::error::{Error, Result};

/// Declaration order is the application order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Reverb,
    Additive,
    Telephone,
    Radio,
    Transcode,
    Clipping,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 6] = [
        DegradationKind::Reverb,
        DegradationKind::Additive,
        DegradationKind::Telephone,
        DegradationKind::Radio,
        DegradationKind::Transcode,
        DegradationKind::Clipping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Reverb => "reverb",
            DegradationKind::Additive => "additive",
            DegradationKind::Telephone => "telephone",
            DegradationKind::Radio => "radio",
            DegradationKind::Transcode => "transcode",
            DegradationKind::Clipping => "clipping",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TelephonePath {
    /// In-process band-limit, quantization and companding.
    Builtin,
    /// GSM round trip through the configured transcoder.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DegradationSpec {
    /// `rir` is the bank id; unset means draw one at application time.
    Reverb {
        rir: Option<String>,
    },
    /// `noise`/`offset` unset means draw them at application time.
    Additive {
        snr_db: f64,
        noise: Option<String>,
        offset: Option<usize>,
    },
    Telephone {
        path: TelephonePath,
    },
    Radio {
        highpass_hz: f64,
        snr_db: f64,
    },
    Transcode {
        codec: Codec,
        bitrate_kbps: u32,
    },
    Clipping {
        window_ms: f64,
        activation_p: f64,
    },
}

impl DegradationSpec {
    pub fn kind(&self) -> DegradationKind {
        match self {
            DegradationSpec::Reverb { .. } => DegradationKind::Reverb,
            DegradationSpec::Additive { .. } => DegradationKind::Additive,
            DegradationSpec::Telephone { .. } => DegradationKind::Telephone,
            DegradationSpec::Radio { .. } => DegradationKind::Radio,
            DegradationSpec::Transcode { .. } => DegradationKind::Transcode,
            DegradationSpec::Clipping { .. } => DegradationKind::Clipping,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationChain {
    pub specs: Vec<DegradationSpec>,
    pub seed: SeedContext,
    /// Hash of the run configuration that produced this chain, if known.
    pub config_hash: Option<String>,
}

impl DegradationChain {
    pub fn new(specs: Vec<DegradationSpec>, seed: SeedContext) -> Result<Self> {
        let chain = Self {
            specs,
            seed,
            config_hash: None,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.specs.len()) {
            return Err(Error::Config(format!(
                "a chain holds 1 to 3 degradations, got {}",
                self.specs.len()
            )));
        }
        let kinds = self.kinds();
        for w in kinds.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Config(format!("kind {} repeated in chain", w[0].name())));
            }
            if w[0] > w[1] {
                return Err(Error::Config(format!("{} cannot follow {}", w[1].name(), w[0].name())));
            }
        }
        Ok(())
    }

    pub fn kinds(&self) -> Vec<DegradationKind> {
        self.specs.iter().map(DegradationSpec::kind).collect()
    }

    pub(crate) fn step_seed(&self, i: usize) -> SeedContext {
        self.seed.child(self.specs[i].kind().name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditiveMode {
    /// Additive noise is one of the kinds a chain may draw.
    #[default]
    InChain,
    /// Every chain contains additive noise; the other k-1 kinds are drawn
    /// from the remaining enabled kinds.
    Always,
}

/// Sampling policy for [`build_chain`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainPolicy {
    pub enabled: Vec<DegradationKind>,
    /// Relative weights of chain lengths 1, 2 and 3.
    pub count_weights: [f64; 3],
    pub additive_mode: AdditiveMode,
    pub additive_snr_db: [f64; 2],
    /// Pins the additive SNR instead of drawing it.
    pub forced_snr_db: Option<f64>,
    pub radio_highpass_hz: [f64; 2],
    pub radio_snr_db: [f64; 2],
    pub codecs: Vec<Codec>,
    pub bitrates_kbps: Vec<u32>,
    pub clip_window_ms: f64,
    pub clip_activation_p: f64,
    pub telephone: TelephonePath,
}

impl Default for ChainPolicy {
    fn default() -> Self {
        Self {
            enabled: DegradationKind::ALL.to_vec(),
            count_weights: [1.0, 1.0, 1.0],
            additive_mode: AdditiveMode::InChain,
            additive_snr_db: [0.0, 20.0],
            forced_snr_db: None,
            radio_highpass_hz: [500.0, 1000.0],
            radio_snr_db: [30.0, 40.0],
            codecs: Codec::LOSSLESS.to_vec(),
            bitrates_kbps: vec![32, 64, 96],
            clip_window_ms: 100.0,
            clip_activation_p: 0.5,
            telephone: TelephonePath::Builtin,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name}: invalid range {r:?}")));
    }
    Ok(())
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

impl ChainPolicy {
    /// Policy producing exactly the given kinds every time.
    pub fn fixed(kinds: &[DegradationKind]) -> Self {
        let mut weights = [0.0; 3];
        if (1..=3).contains(&kinds.len()) {
            weights[kinds.len() - 1] = 1.0;
        }
        Self {
            enabled: kinds.to_vec(),
            count_weights: weights,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled.is_empty() {
            return Err(Error::Config("no degradation kinds enabled".into()));
        }
        if self.count_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.count_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(format!(
                "chain length weights {:?} must be non-negative with a positive sum",
                self.count_weights
            )));
        }
        let mut distinct = self.enabled.clone();
        distinct.sort();
        distinct.dedup();
        let longest = self.count_weights.iter().rposition(|w| *w > 0.0).map_or(0, |i| i + 1);
        let available = match self.additive_mode {
            AdditiveMode::InChain => distinct.len(),
            AdditiveMode::Always if distinct.contains(&DegradationKind::Additive) => distinct.len(),
            AdditiveMode::Always => {
                return Err(Error::Config(
                    "additive mode `always` requires additive to be enabled".into(),
                ))
            }
        };
        if longest > available {
            return Err(Error::Config(format!(
                "chains of length {longest} have positive weight but only {available} kinds are enabled"
            )));
        }
        check_range("additive_snr_db", self.additive_snr_db)?;
        check_range("radio_snr_db", self.radio_snr_db)?;
        check_range("radio_highpass_hz", self.radio_highpass_hz)?;
        if self.radio_highpass_hz[0] <= 0.0 || self.radio_highpass_hz[1] >= 8000.0 {
            return Err(Error::Config("radio highpass cutoff outside (0, 8000) Hz".into()));
        }
        if self.enabled.contains(&DegradationKind::Transcode) {
            if self.codecs.is_empty() {
                return Err(Error::Config("transcode enabled with no codecs".into()));
            }
            if self.bitrates_kbps.is_empty() && self.codecs.iter().any(|c| !c.is_lossless()) {
                return Err(Error::Config("lossy codecs enabled with no bitrates".into()));
            }
        }
        if !(self.clip_window_ms > 0.0) || !(0.0..=1.0).contains(&self.clip_activation_p) {
            return Err(Error::Config(
                "clipping window or activation probability invalid".into(),
            ));
        }
        if let Some(s) = self.forced_snr_db {
            if !s.is_finite() {
                return Err(Error::Config("forced SNR must be finite".into()));
            }
        }
        Ok(())
    }

    fn draw_spec(&self, kind: DegradationKind, rng: &mut impl Rng) -> DegradationSpec {
        match kind {
            DegradationKind::Reverb => DegradationSpec::Reverb { rir: None },
            DegradationKind::Additive => DegradationSpec::Additive {
                snr_db: self.forced_snr_db.unwrap_or_else(|| uniform(rng, self.additive_snr_db)),
                noise: None,
                offset: None,
            },
            DegradationKind::Telephone => DegradationSpec::Telephone { path: self.telephone },
            DegradationKind::Radio => DegradationSpec::Radio {
                highpass_hz: uniform(rng, self.radio_highpass_hz),
                snr_db: uniform(rng, self.radio_snr_db),
            },
            DegradationKind::Transcode => {
                let codec = self.codecs[rng.random_range(0..self.codecs.len())];
                let bitrate_kbps = if codec.is_lossless() || self.bitrates_kbps.is_empty() {
                    0
                } else {
                    self.bitrates_kbps[rng.random_range(0..self.bitrates_kbps.len())]
                };
                DegradationSpec::Transcode { codec, bitrate_kbps }
            }
            DegradationKind::Clipping => DegradationSpec::Clipping {
                window_ms: self.clip_window_ms,
                activation_p: self.clip_activation_p,
            },
        }
    }
}

/// Draws chain length, kinds and parameters from `ctx`.
pub fn build_chain(ctx: &SeedContext, policy: &ChainPolicy) -> Result<DegradationChain> {
    policy.validate()?;
    let mut rng = ctx.stream();
    let total: f64 = policy.count_weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut k = 3;
    for (i, w) in policy.count_weights.iter().enumerate() {
        if u < *w {
            k = i + 1;
            break;
        }
        u -= w;
    }
    let mut enabled = policy.enabled.clone();
    enabled.sort();
    enabled.dedup();
    let mut kinds: Vec<DegradationKind> = match policy.additive_mode {
        AdditiveMode::InChain => {
            if enabled.len() < k {
                return Err(Error::Config(format!(
                    "chain of {k} needs {k} enabled kinds, only {} enabled",
                    enabled.len()
                )));
            }
            sample(&mut rng, enabled.len(), k)
                .into_iter()
                .map(|i| enabled[i])
                .collect()
        }
        AdditiveMode::Always => {
            if !enabled.contains(&DegradationKind::Additive) {
                return Err(Error::Config(
                    "additive mode `always` requires additive to be enabled".into(),
                ));
            }
            let others: Vec<DegradationKind> = enabled
                .into_iter()
                .filter(|&x| x != DegradationKind::Additive)
                .collect();
            if others.len() < k - 1 {
                return Err(Error::Config(format!(
                    "chain of {k} needs {} non-additive kinds, only {} enabled",
                    k - 1,
                    others.len()
                )));
            }
            let mut v: Vec<DegradationKind> = sample(&mut rng, others.len(), k - 1)
                .into_iter()
                .map(|i| others[i])
                .collect();
            v.push(DegradationKind::Additive);
            v
        }
    };
    kinds.sort();
    let specs = kinds.iter().map(|&kd| policy.draw_spec(kd, &mut rng)).collect();
    DegradationChain::new(specs, ctx.clone())
}

/// External inputs a chain may need.
#[derive(Clone, Copy, Debug, Default)]
pub struct Resources<'a> {
    pub noise: Option<&'a ClipBank>,
    pub rirs: Option<&'a ClipBank>,
    pub transcoder: Option<&'a Transcoder>,
}

/// Runs the chain on `clean`. Returns the degraded clip and the chain with
/// every deferred choice (noise clip, offset, RIR) filled in.
pub fn apply_chain(
    clean: &AudioClip,
    chain: &DegradationChain,
    res: &Resources,
) -> Result<(AudioClip, DegradationChain)> {
    chain.validate()?;
    let mut resolved = chain.clone();
    let mut x = clean.clone();
    for i in 0..chain.specs.len() {
        let ctx = chain.step_seed(i);
        let spec = &mut resolved.specs[i];
        x = match spec {
            DegradationSpec::Reverb { rir } => {
                let bank = res
                    .rirs
                    .filter(|b| !b.is_empty())
                    .ok_or_else(|| Error::Config("reverb requested without an RIR bank".into()))?;
                let id = match rir {
                    Some(id) => id.clone(),
                    None => bank.by_index(ctx.stream().random_range(0..bank.len())).id.clone(),
                };
                let h = &bank
                    .get(&id)
                    .ok_or_else(|| Error::Config(format!("RIR `{id}` not in bank")))?
                    .clip;
                *rir = Some(id);
                apply_reverb(&x, h)?
            }
            DegradationSpec::Additive { snr_db, noise, offset } => {
                let bank = res
                    .noise
                    .ok_or_else(|| Error::Config("additive noise requested without a noise bank".into()))?;
                let (y, draw) = match (noise.as_deref(), *offset) {
                    (Some(id), Some(off)) => {
                        let entry = bank
                            .get(id)
                            .ok_or_else(|| Error::Config(format!("noise clip `{id}` not in bank")))?;
                        let seg = loop_noise(entry.clip.samples(), off, x.len());
                        let y = x.with_samples(mix_at_snr(x.samples(), &seg, *snr_db)?)?;
                        (
                            y,
                            AdditiveDraw {
                                noise_id: id.to_string(),
                                offset: off,
                            },
                        )
                    }
                    (id, _) => apply_additive(&x, bank, &ctx, *snr_db, id)?,
                };
                *noise = Some(draw.noise_id);
                *offset = Some(draw.offset);
                y
            }
            DegradationSpec::Telephone { path } => match path {
                TelephonePath::Builtin => apply_telephone(&x, None)?,
                TelephonePath::External => {
                    let t = res
                        .transcoder
                        .ok_or_else(|| Error::Transcoder("external telephone path needs a transcoder".into()))?;
                    apply_telephone(&x, Some(t))?
                }
            },
            DegradationSpec::Radio { highpass_hz, snr_db } => apply_radio(&x, &ctx, *highpass_hz, *snr_db)?.0,
            DegradationSpec::Transcode { codec, bitrate_kbps } => transcode(&x, *codec, *bitrate_kbps, res.transcoder)?,
            DegradationSpec::Clipping {
                window_ms,
                activation_p,
            } => apply_clipping(&x, &ctx, *window_ms, *activation_p)?,
        };
    }
    Ok((x, resolved))
}
