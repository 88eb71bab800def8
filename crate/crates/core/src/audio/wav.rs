use std::fs::File;
use std::io::{BufReader, Cursor, Read};
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{resample, AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

/// Reads any PCM (8/16/24/32-bit) or 32-bit float WAV, averages channels and
/// converts to the canonical rate.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let clip = decode_wav(BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    resample(&clip, CANONICAL_RATE)
}

/// Decodes WAV bytes without resampling.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    decode_wav(Cursor::new(bytes))
}

fn decode_wav<R: Read>(reader: R) -> Result<AudioClip> {
    let reader = hound::WavReader::new(reader).map_err(|e| Error::Format(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Format(format!(
                    "unsupported float width {}",
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
        }
        SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::Format(format!("unsupported PCM width {bits}")));
            }
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::Format(e.to_string()))?;

    if interleaved.is_empty() {
        return Err(Error::Format("empty audio payload".into()));
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if mono.is_empty() {
        return Err(Error::Format("payload shorter than one frame".into()));
    }
    AudioClip::new(mono, spec.sample_rate).map_err(|e| Error::Format(e.to_string()))
}

fn to_pcm16(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Rounds every sample to the nearest representable 16-bit PCM level.
pub fn quantize_pcm16(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|&x| to_pcm16(x) as f64 / PCM16_SCALE).collect()
}

fn pcm16_spec(rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Serialises a clip as mono RIFF PCM16.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, pcm16_spec(clip.sample_rate()))
            .map_err(|e| Error::Format(e.to_string()))?;
        for &s in clip.samples() {
            w.write_sample(to_pcm16(s)).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.finalize().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav_pcm16(clip)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
