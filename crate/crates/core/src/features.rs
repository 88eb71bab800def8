//! Frame-level model inputs: PS-I spectrograms, ingested SSL latents and the
//! binary feature-file format shared by both.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{stft_magnitude, AudioClip, SeedContext, N_BINS};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"BSFT";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
/// Lower bound applied to every per-dimension standard deviation.
pub const STD_FLOOR: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Ps1,
    Ps2Input,
    Ps3Input,
    W2v2,
    Hubert,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Ps1,
        FeatureKind::Ps2Input,
        FeatureKind::Ps3Input,
        FeatureKind::W2v2,
        FeatureKind::Hubert,
    ];

    pub fn dims(self) -> usize {
        match self {
            FeatureKind::Ps1 | FeatureKind::Ps2Input | FeatureKind::Ps3Input => N_BINS,
            FeatureKind::W2v2 => 768,
            FeatureKind::Hubert => 1024,
        }
    }

    pub fn is_spectral(self) -> bool {
        self.dims() == N_BINS
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Ps1 => "ps1",
            FeatureKind::Ps2Input => "ps2_input",
            FeatureKind::Ps3Input => "ps3_input",
            FeatureKind::W2v2 => "w2v2",
            FeatureKind::Hubert => "hubert",
        }
    }

    fn code(self) -> u8 {
        match self {
            FeatureKind::Ps1 => 1,
            FeatureKind::Ps2Input => 2,
            FeatureKind::Ps3Input => 3,
            FeatureKind::W2v2 => 4,
            FeatureKind::Hubert => 5,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == c)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown feature kind `{s}`")))
    }
}

/// Row-major `frames x dims` matrix of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    kind: FeatureKind,
    frames: usize,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(kind: FeatureKind, frames: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Shape("feature tensor needs at least one frame".into()));
        }
        if data.len() != frames * kind.dims() {
            return Err(Error::Shape(format!(
                "{kind} tensor of {frames} frames needs {} values, got {}",
                frames * kind.dims(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{kind} features")));
        }
        Ok(Self { kind, frames, data })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.kind.dims()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dims();
        &self.data[i * d..(i + 1) * d]
    }

    /// Same values under another kind with the same width.
    pub fn retag(self, kind: FeatureKind) -> Result<Self> {
        if kind.dims() != self.dims() {
            return Err(Error::Schema(format!(
                "cannot retag {} ({} dims) as {kind} ({} dims)",
                self.kind,
                self.dims(),
                kind.dims()
            )));
        }
        Ok(Self { kind, ..self })
    }
}

/// 257-bin magnitude spectrogram tagged `Ps1`.
pub fn extract_ps1(clip: &AudioClip) -> Result<FeatureTensor> {
    let spec = stft_magnitude(clip)?;
    FeatureTensor::new(FeatureKind::Ps1, spec.frames, spec.magnitudes)
}

pub fn encode_features(t: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data.len());
    out.extend(FEATURE_MAGIC);
    out.extend(FEATURE_VERSION.to_le_bytes());
    out.push(t.kind.code());
    out.push(4);
    out.extend((t.frames as u32).to_le_bytes());
    out.extend((t.dims() as u32).to_le_bytes());
    for v in &t.data {
        out.extend(v.to_le_bytes());
    }
    out
}

/// Parses a feature file. Structural damage is a format error; a width that
/// disagrees with the tagged kind, or a kind other than `expected`, is a
/// schema error.
pub fn decode_features(bytes: &[u8], expected: Option<FeatureKind>) -> Result<FeatureTensor> {
    if bytes.len() < HEADER_LEN || bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("not a feature file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let kind = FeatureKind::from_code(bytes[6])
        .ok_or_else(|| Error::Format(format!("unknown feature kind code {}", bytes[6])))?;
    if bytes[7] != 4 {
        return Err(Error::Format(format!("unsupported scalar width {}", bytes[7])));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dims = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != frames * dims * 4 {
        return Err(Error::Format(format!(
            "payload of {} bytes, header declares {frames}x{dims} f32",
            payload.len()
        )));
    }
    if dims != kind.dims() {
        return Err(Error::Schema(format!(
            "{kind} features have {} dims, file has {dims}",
            kind.dims()
        )));
    }
    if let Some(e) = expected {
        if e != kind {
            return Err(Error::Schema(format!("expected {e} features, file holds {kind}")));
        }
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureTensor::new(kind, frames, data)
}

pub fn write_features(path: impl AsRef<Path>, t: &FeatureTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(t)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>, expected: Option<FeatureKind>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, expected)
}

/// Loads precomputed SSL latents and checks them against `expected`.
pub fn ingest_ssl(path: impl AsRef<Path>, expected: FeatureKind) -> Result<FeatureTensor> {
    if expected.is_spectral() {
        return Err(Error::Argument(format!("{expected} is not an SSL feature kind")));
    }
    read_features(path, Some(expected))
}

/// Per-dimension mean and floored standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over every frame of every tensor.
    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a FeatureTensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for t in tensors {
            if sum.is_empty() {
                sum = vec![0.0; t.dims()];
                sq = vec![0.0; t.dims()];
            } else if sum.len() != t.dims() {
                return Err(Error::Shape(format!(
                    "mixed feature widths {} and {}",
                    sum.len(),
                    t.dims()
                )));
            }
            for f in 0..t.frames() {
                for (d, &v) in t.row(f).iter().enumerate() {
                    sum[d] += v as f64;
                    sq[d] += (v as f64) * (v as f64);
                }
            }
            n += t.frames();
        }
        if n == 0 {
            return Err(Error::Statistics("no frames to fit normalization on".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt() as f32).max(STD_FLOOR))
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    fn check(&self, t: &FeatureTensor) -> Result<()> {
        if self.dims() != t.dims() || self.std.len() != t.dims() {
            return Err(Error::Shape(format!(
                "normalization stats have {} dims, features have {}",
                self.dims(),
                t.dims()
            )));
        }
        Ok(())
    }
}

pub fn normalize_features(t: &FeatureTensor, stats: &NormStats) -> Result<FeatureTensor> {
    stats.check(t)?;
    let d = t.dims();
    let data = t
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| ((v as f64 - stats.mean[i % d] as f64) / stats.std[i % d].max(STD_FLOOR) as f64) as f32)
        .collect();
    FeatureTensor::new(t.kind, t.frames, data)
}

pub fn denormalize_features(t: &FeatureTensor, stats: &NormStats) -> Result<FeatureTensor> {
    stats.check(t)?;
    let d = t.dims();
    let data = t
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as f64 * stats.std[i % d].max(STD_FLOOR) as f64 + stats.mean[i % d] as f64) as f32)
        .collect();
    FeatureTensor::new(t.kind, t.frames, data)
}

/// Stand-in for SSL latents: a fixed seeded Gaussian projection of
/// `log(1 + |X|)` frames followed by `tanh`. Same seed, same projection.
pub fn pseudo_ssl(ps: &FeatureTensor, kind: FeatureKind, seed: u64) -> Result<FeatureTensor> {
    if kind.is_spectral() || !ps.kind().is_spectral() {
        return Err(Error::Argument(format!(
            "pseudo-SSL maps spectral features to an SSL kind, got {} -> {kind}",
            ps.kind()
        )));
    }
    let (din, dout) = (ps.dims(), kind.dims());
    let mut rng = SeedContext::new(seed, format!("pseudo-ssl/{kind}")).stream();
    let scale = 1.0 / (din as f64).sqrt();
    let w: Vec<f32> = (0..din * dout)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * scale) as f32
        })
        .collect();
    let mut data = vec![0.0f32; ps.frames() * dout];
    for f in 0..ps.frames() {
        let x: Vec<f32> = ps.row(f).iter().map(|v| v.ln_1p()).collect();
        let out = &mut data[f * dout..(f + 1) * dout];
        for (i, xi) in x.iter().enumerate() {
            let wr = &w[i * dout..(i + 1) * dout];
            for (o, wv) in out.iter_mut().zip(wr) {
                *o += xi * wv;
            }
        }
        out.iter_mut().for_each(|v| *v = v.tanh());
    }
    FeatureTensor::new(kind, ps.frames(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ssl(kind: FeatureKind, frames: usize) -> FeatureTensor {
        let data = (0..frames * kind.dims()).map(|i| (i % 97) as f32 * 0.01).collect();
        FeatureTensor::new(kind, frames, data).unwrap()
    }

    #[test]
    fn ps1_shapes() {
        let t = extract_ps1(&AudioClip::zeros(16_000, 16_000)).unwrap();
        assert_eq!((t.frames(), t.dims()), (61, 257));
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert!(extract_ps1(&AudioClip::zeros(511, 16_000)).is_err());
    }

    #[test]
    fn file_errors() {
        let t = ssl(FeatureKind::W2v2, 100);
        let bytes = encode_features(&t);
        assert_eq!(decode_features(&bytes, Some(FeatureKind::W2v2)).unwrap(), t);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad, None), Err(Error::Format(_))));
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 3], None),
            Err(Error::Format(_))
        ));
        let mut hubert_tag = bytes.clone();
        hubert_tag[6] = FeatureKind::Hubert.code();
        assert!(matches!(decode_features(&hubert_tag, None), Err(Error::Schema(_))));
        assert!(matches!(
            decode_features(&bytes, Some(FeatureKind::Hubert)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.name().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn normalization_examples() {
        let t = ssl(FeatureKind::W2v2, 3);
        let id = normalize_features(&t, &NormStats::identity(768)).unwrap();
        assert_eq!(id, t);
        let constant = FeatureTensor::new(FeatureKind::W2v2, 4, vec![2.5; 4 * 768]).unwrap();
        let stats = NormStats::fit([&constant]).unwrap();
        assert!(stats.std.iter().all(|&s| s == STD_FLOOR));
        let z = normalize_features(&constant, &stats).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(normalize_features(&t, &NormStats::identity(257)).is_err());
    }

    #[test]
    fn pseudo_ssl_is_deterministic() {
        let ps = extract_ps1(&crate::synth::synth_speech(1.0, &SeedContext::new(1, "p"))).unwrap();
        let a = pseudo_ssl(&ps, FeatureKind::Hubert, 3).unwrap();
        assert_eq!(a, pseudo_ssl(&ps, FeatureKind::Hubert, 3).unwrap());
        assert_eq!((a.frames(), a.dims()), (ps.frames(), 1024));
        assert_ne!(a, pseudo_ssl(&ps, FeatureKind::Hubert, 4).unwrap());
        assert!(pseudo_ssl(&a, FeatureKind::W2v2, 3).is_err());
    }
}
