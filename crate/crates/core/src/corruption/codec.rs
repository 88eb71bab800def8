//! Codec round trips: in-process lossless containers (wav, aiff, flac) and an
//! external command for everything else.

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::flac;
use crate::audio::{decode_wav_bytes, encode_wav_pcm16, quantize_pcm16, AudioClip};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Mp3,
    Ogg,
    Flac,
    Aiff,
    Wav,
}

impl Codec {
    pub const ALL: [Codec; 5] = [Codec::Mp3, Codec::Ogg, Codec::Flac, Codec::Aiff, Codec::Wav];
    pub const LOSSLESS: [Codec; 3] = [Codec::Flac, Codec::Aiff, Codec::Wav];

    pub fn is_lossless(self) -> bool {
        matches!(self, Codec::Flac | Codec::Aiff | Codec::Wav)
    }

    pub fn name(self) -> &'static str {
        match self {
            Codec::Mp3 => "mp3",
            Codec::Ogg => "ogg",
            Codec::Flac => "flac",
            Codec::Aiff => "aiff",
            Codec::Wav => "wav",
        }
    }
}

/// Counting semaphore bounding concurrent external processes.
#[derive(Debug)]
struct ProcessLimiter {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl ProcessLimiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a ProcessLimiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// External round-trip command run through `sh -c`.
///
/// The template receives a 16-bit WAV at `{in}` and must leave a RIFF WAV at
/// `{out}` after encoding and decoding with `{codec}` at `{bitrate}` kbps.
/// Example: `ffmpeg -loglevel error -y -i {in} -b:a {bitrate}k {out}.{codec} && ffmpeg -loglevel error -y -i {out}.{codec} {out}`.
#[derive(Debug)]
pub struct Transcoder {
    template: String,
    limiter: ProcessLimiter,
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

impl Transcoder {
    pub fn new(template: impl Into<String>, max_processes: usize) -> Result<Self> {
        let template = template.into();
        if !template.contains("{in}") || !template.contains("{out}") {
            return Err(Error::Config(
                "transcoder template needs {in} and {out} placeholders".into(),
            ));
        }
        Ok(Self {
            template,
            limiter: ProcessLimiter {
                cap: max_processes.max(1),
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    /// Reads the template from `BOTSTOI_TRANSCODER` if set.
    pub fn from_env(max_processes: usize) -> Result<Option<Self>> {
        match std::env::var("BOTSTOI_TRANSCODER") {
            Ok(t) if !t.trim().is_empty() => Self::new(t, max_processes).map(Some),
            _ => Ok(None),
        }
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn round_trip(&self, clip: &AudioClip, codec: &str, bitrate_kbps: u32) -> Result<AudioClip> {
        let dir = std::env::temp_dir().join(format!(
            "botstoi-{}-{}",
            std::process::id(),
            SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let result = self.run_in(&dir, clip, codec, bitrate_kbps);
        let _ = std::fs::remove_dir_all(&dir);
        result
    }

    fn run_in(&self, dir: &std::path::Path, clip: &AudioClip, codec: &str, bitrate_kbps: u32) -> Result<AudioClip> {
        let input: PathBuf = dir.join("in.wav");
        let output: PathBuf = dir.join("out.wav");
        std::fs::write(&input, encode_wav_pcm16(clip)?).map_err(|e| Error::io(&input, e))?;
        let cmd = self
            .template
            .replace("{in}", &shell_quote(&input.to_string_lossy()))
            .replace("{out}", &shell_quote(&output.to_string_lossy()))
            .replace("{codec}", codec)
            .replace("{bitrate}", &bitrate_kbps.to_string());
        let out = {
            let _slot = self.limiter.acquire();
            Command::new("sh")
                .arg("-c")
                .arg(&cmd)
                .output()
                .map_err(|e| Error::Transcoder(format!("cannot spawn `{cmd}`: {e}")))?
        };
        if !out.status.success() {
            return Err(Error::Transcoder(format!(
                "`{cmd}` exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let bytes = std::fs::read(&output)
            .map_err(|e| Error::Transcoder(format!("`{cmd}` produced no readable output: {e}")))?;
        if bytes.len() < 12 || &bytes[..4] != b"RIFF" {
            return Err(Error::Transcoder(format!("`{cmd}` did not write a RIFF WAV")));
        }
        decode_wav_bytes(&bytes)
    }
}

fn pcm16(clip: &AudioClip) -> Vec<i16> {
    quantize_pcm16(clip.samples())
        .iter()
        .map(|v| (v * 32768.0) as i16)
        .collect()
}

fn from_pcm16(samples: &[i16], sample_rate: u32) -> Result<AudioClip> {
    AudioClip::new(samples.iter().map(|&s| s as f64 / 32768.0).collect(), sample_rate)
}

/// IEEE 754 80-bit extended encoding of an integral sample rate.
fn extended_from_rate(rate: u32) -> [u8; 10] {
    let mut out = [0u8; 10];
    if rate == 0 {
        return out;
    }
    let e = 31 - rate.leading_zeros();
    let exp = 16383 + e as u16;
    let mantissa = (rate as u64) << (63 - e);
    out[..2].copy_from_slice(&exp.to_be_bytes());
    out[2..].copy_from_slice(&mantissa.to_be_bytes());
    out
}

fn rate_from_extended(b: &[u8]) -> Result<u32> {
    let exp = u16::from_be_bytes([b[0], b[1]]) & 0x7fff;
    let mantissa = u64::from_be_bytes(b[2..10].try_into().unwrap());
    let shift = exp as i32 - 16383;
    if !(0..32).contains(&shift) {
        return Err(Error::Format("aiff: unsupported sample rate".into()));
    }
    Ok((mantissa >> (63 - shift)) as u32)
}

pub fn encode_aiff(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let ssnd_len = 8 + 2 * samples.len() as u32;
    let mut out = Vec::with_capacity(54 + 2 * samples.len());
    out.extend(b"FORM");
    out.extend((4 + 26 + 8 + ssnd_len).to_be_bytes());
    out.extend(b"AIFF");
    out.extend(b"COMM");
    out.extend(18u32.to_be_bytes());
    out.extend(1i16.to_be_bytes());
    out.extend((samples.len() as u32).to_be_bytes());
    out.extend(16i16.to_be_bytes());
    out.extend(extended_from_rate(sample_rate));
    out.extend(b"SSND");
    out.extend(ssnd_len.to_be_bytes());
    out.extend(0u32.to_be_bytes());
    out.extend(0u32.to_be_bytes());
    for s in samples {
        out.extend(s.to_be_bytes());
    }
    out
}

pub fn decode_aiff(bytes: &[u8]) -> Result<(Vec<i16>, u32)> {
    let bad = |m: &str| Error::Format(format!("aiff: {m}"));
    if bytes.len() < 12 || &bytes[..4] != b"FORM" || &bytes[8..12] != b"AIFF" {
        return Err(bad("missing FORM/AIFF header"));
    }
    let mut pos = 12;
    let mut comm: Option<(usize, u32)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_be_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + len)
            .ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"COMM" if len >= 18 => {
                let channels = i16::from_be_bytes([body[0], body[1]]);
                let frames = u32::from_be_bytes(body[2..6].try_into().unwrap()) as usize;
                let bits = i16::from_be_bytes([body[6], body[7]]);
                if channels != 1 || bits != 16 {
                    return Err(bad("only mono 16-bit streams are supported"));
                }
                comm = Some((frames, rate_from_extended(&body[8..18])?));
            }
            b"SSND" if len >= 8 => {
                let offset = u32::from_be_bytes(body[..4].try_into().unwrap()) as usize;
                data = Some(body.get(8 + offset..).ok_or_else(|| bad("bad SSND offset"))?);
            }
            _ => {}
        }
        pos += 8 + len + (len & 1);
    }
    let (frames, rate) = comm.ok_or_else(|| bad("missing COMM chunk"))?;
    let data = data.ok_or_else(|| bad("missing SSND chunk"))?;
    if data.len() < 2 * frames {
        return Err(bad("sound data shorter than declared"));
    }
    let samples = data[..2 * frames]
        .chunks_exact(2)
        .map(|c| i16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((samples, rate))
}

/// Encode→decode round trip. Lossless codecs are checked for bit
/// transparency against the 16-bit quantized input.
pub fn transcode(
    clip: &AudioClip,
    codec: Codec,
    bitrate_kbps: u32,
    transcoder: Option<&Transcoder>,
) -> Result<AudioClip> {
    let rate = clip.sample_rate();
    let out = match codec {
        Codec::Wav => decode_wav_bytes(&encode_wav_pcm16(clip)?)?,
        Codec::Aiff => {
            let (s, r) = decode_aiff(&encode_aiff(&pcm16(clip), rate))?;
            from_pcm16(&s, r)?
        }
        Codec::Flac => {
            let (s, r) = flac::decode(&flac::encode(&pcm16(clip), rate))?;
            from_pcm16(&s, r)?
        }
        Codec::Mp3 | Codec::Ogg => {
            let t = transcoder.ok_or_else(|| {
                Error::Transcoder(format!(
                    "{} needs an external transcoder (set BOTSTOI_TRANSCODER)",
                    codec.name()
                ))
            })?;
            return t.round_trip(clip, codec.name(), bitrate_kbps);
        }
    };
    if out.sample_rate() != rate || pcm16(&out) != pcm16(clip) {
        return Err(Error::Integrity(format!(
            "{} round trip changed the samples",
            codec.name()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> AudioClip {
        AudioClip::canonical((0..5000).map(|i| ((i as f64) * 0.01).sin() * 0.7).collect()).unwrap()
    }

    #[test]
    fn lossless_codecs_are_transparent() {
        let x = ramp();
        let q = quantize_pcm16(x.samples());
        for c in Codec::LOSSLESS {
            let y = transcode(&x, c, 64, None).unwrap();
            assert_eq!(quantize_pcm16(y.samples()), q, "{c:?}");
            assert_eq!(y.len(), x.len());
        }
    }

    #[test]
    fn extended_rates() {
        for r in [8000u32, 16_000, 22_050, 44_100, 48_000] {
            assert_eq!(rate_from_extended(&extended_from_rate(r)).unwrap(), r);
        }
        // 44100 Hz as written by common tools
        assert_eq!(extended_from_rate(44_100), [0x40, 0x0e, 0xac, 0x44, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn lossy_without_transcoder_is_external_error() {
        let err = transcode(&ramp(), Codec::Mp3, 64, None).unwrap_err();
        assert!(err.is_external());
    }

    #[test]
    fn failing_command_reports_diagnostics() {
        let t = Transcoder::new("echo boom >&2; exit 3 # {in} {out}", 2).unwrap();
        let err = transcode(&ramp(), Codec::Ogg, 32, Some(&t)).unwrap_err();
        let msg = err.to_string();
        assert!(err.is_external() && msg.contains("boom"), "{msg}");
    }

    #[test]
    fn copying_command_round_trips() {
        let t = Transcoder::new("cp {in} {out}", 1).unwrap();
        let x = ramp();
        let y = transcode(&x, Codec::Mp3, 64, Some(&t)).unwrap();
        assert_eq!(quantize_pcm16(y.samples()), quantize_pcm16(x.samples()));
    }

    #[test]
    fn template_needs_placeholders() {
        assert!(matches!(Transcoder::new("lame x y", 1), Err(Error::Config(_))));
    }
}
