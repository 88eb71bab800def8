//! Individual degradation operators. Every random draw comes from the
//! supplied [`SeedContext`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::bank::ClipBank;
use super::codec::Transcoder;
use crate::audio::{convolve, resample_samples, AudioClip, FilterKind, SeedContext, SosFilter};
use crate::error::{Error, Result};

pub const TELEPHONE_RATE: u32 = 8000;
pub const TELEPHONE_BAND_HZ: [f64; 2] = [300.0, 3400.0];
pub const RADIO_BAND_HZ: [f64; 2] = [50.0, 2600.0];
/// Prototype order per pass; zero-phase filtering doubles the attenuation.
const FILTER_ORDER: usize = 4;
const ALAW_A: f64 = 87.6;

fn require_canonical(clip: &AudioClip, op: &str) -> Result<()> {
    if clip.sample_rate() != crate::audio::CANONICAL_RATE {
        return Err(Error::Argument(format!(
            "{op} expects 16 kHz input, got {} Hz",
            clip.sample_rate()
        )));
    }
    Ok(())
}

fn alaw_compress(x: f64) -> f64 {
    let a = x.abs().min(1.0);
    let y = if a < 1.0 / ALAW_A {
        ALAW_A * a / (1.0 + ALAW_A.ln())
    } else {
        (1.0 + (ALAW_A * a).ln()) / (1.0 + ALAW_A.ln())
    };
    y.copysign(x)
}

fn alaw_expand(y: f64) -> f64 {
    let a = y.abs();
    let k = 1.0 + ALAW_A.ln();
    let x = if a < 1.0 / k {
        a * k / ALAW_A
    } else {
        (a * k - 1.0).exp() / ALAW_A
    };
    x.copysign(y)
}

/// 13-bit linear quantization followed by an 8-bit A-law code round trip.
fn gsm_like_quantize(x: f64) -> f64 {
    let q13 = ((x * 4096.0).round() / 4096.0).clamp(-1.0, 4095.0 / 4096.0);
    let code = (alaw_compress(q13) * 127.0).round() / 127.0;
    alaw_expand(code)
}

/// Narrowband telephone channel. With a transcoder the 8 kHz band-limited
/// signal goes through its `gsm` round trip; otherwise a built-in
/// quantization and companding stage stands in for the codec.
pub fn apply_telephone(clip: &AudioClip, transcoder: Option<&Transcoder>) -> Result<AudioClip> {
    require_canonical(clip, "telephone")?;
    let rate = clip.sample_rate();
    let narrow = resample_samples(clip.samples(), rate, TELEPHONE_RATE);
    let band = SosFilter::butterworth(
        FilterKind::Bandpass,
        &TELEPHONE_BAND_HZ,
        FILTER_ORDER,
        TELEPHONE_RATE as f64,
    )?
    .apply_zero_phase(&narrow);
    let coded = match transcoder {
        Some(t) => {
            let out = t.round_trip(&AudioClip::new(band, TELEPHONE_RATE)?, "gsm", 13)?;
            resample_samples(out.samples(), out.sample_rate(), TELEPHONE_RATE)
        }
        None => band.iter().map(|&v| gsm_like_quantize(v)).collect(),
    };
    AudioClip::new(resample_samples(&coded, TELEPHONE_RATE, rate), rate)
}

/// Convolution with a room impulse response, RMS-matched to the input.
pub fn apply_reverb(clip: &AudioClip, rir: &AudioClip) -> Result<AudioClip> {
    convolve(clip, rir)
}

/// Adds `g * noise` with `g` chosen so that `10 log10(E_signal / E_added)`
/// equals `snr_db` exactly.
pub fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if signal.len() != noise.len() {
        return Err(Error::Argument("signal and noise lengths differ".into()));
    }
    let es: f64 = signal.iter().map(|v| v * v).sum();
    let en: f64 = noise.iter().map(|v| v * v).sum();
    if es == 0.0 {
        return Err(Error::UndefinedReference("signal is silent".into()));
    }
    if en == 0.0 {
        return Err(Error::Config("noise segment is silent".into()));
    }
    let g = (es / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(signal.iter().zip(noise).map(|(s, n)| s + g * n).collect())
}

/// Zero-phase highpass at `highpass_hz`, bandpass 50-2600 Hz, then white noise at
/// `snr_db` relative to the filtered signal. Also returns the filtered
/// signal before the noise.
pub fn apply_radio(
    clip: &AudioClip,
    ctx: &SeedContext,
    highpass_hz: f64,
    snr_db: f64,
) -> Result<(AudioClip, AudioClip)> {
    require_canonical(clip, "radio")?;
    let fs = clip.sample_rate() as f64;
    let hp = SosFilter::butterworth(FilterKind::Highpass, &[highpass_hz], FILTER_ORDER, fs)?;
    let bp = SosFilter::butterworth(FilterKind::Bandpass, &RADIO_BAND_HZ, FILTER_ORDER, fs)?;
    let filtered = bp.apply_zero_phase(&hp.apply_zero_phase(clip.samples()));
    let mut rng = ctx.stream();
    let noise: Vec<f64> = (0..filtered.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let out = mix_at_snr(&filtered, &noise, snr_db)?;
    Ok((clip.with_samples(out)?, clip.with_samples(filtered)?))
}

/// Hard-clips `x` to `[lo, hi]` in place.
pub fn hard_clip(x: &mut [f64], lo: f64, hi: f64) {
    for v in x {
        *v = v.clamp(lo, hi);
    }
}

/// Windowed random clipping. In each non-overlapping window of `window_ms`,
/// with probability `activation_p`, samples are clipped to
/// `[-b * peak, a * peak]` with `a, b ~ U[0.1, 0.6]` and `peak` the window's
/// largest magnitude.
pub fn apply_clipping(clip: &AudioClip, ctx: &SeedContext, window_ms: f64, activation_p: f64) -> Result<AudioClip> {
    if !(window_ms > 0.0) {
        return Err(Error::Argument(format!("window_ms must be positive, got {window_ms}")));
    }
    if !(0.0..=1.0).contains(&activation_p) {
        return Err(Error::Argument(format!(
            "activation probability {activation_p} outside [0, 1]"
        )));
    }
    let win = ((window_ms * 1e-3 * clip.sample_rate() as f64).round() as usize).max(1);
    let mut rng = ctx.stream();
    let mut y = clip.samples().to_vec();
    for w in y.chunks_mut(win) {
        let active = rng.random_bool(activation_p);
        let hi: f64 = rng.random_range(0.1..0.6);
        let lo: f64 = rng.random_range(0.1..0.6);
        if active {
            let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            hard_clip(w, -lo * peak, hi * peak);
        }
    }
    clip.with_samples(y)
}

/// Noise segment of `len` samples starting at `offset`, looping the clip.
pub fn loop_noise(noise: &[f64], offset: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveDraw {
    pub noise_id: String,
    pub offset: usize,
}

/// Resolves which bank clip and start offset to use: uniform over the bank
/// unless `noise_id` pins a clip.
pub fn draw_noise(bank: &ClipBank, ctx: &SeedContext, noise_id: Option<&str>) -> Result<AdditiveDraw> {
    if bank.is_empty() {
        return Err(Error::Config(
            "additive noise requested but the noise bank is empty".into(),
        ));
    }
    let mut rng = ctx.stream();
    let idx = rng.random_range(0..bank.len());
    let entry = match noise_id {
        Some(id) => bank
            .get(id)
            .ok_or_else(|| Error::Config(format!("noise clip `{id}` not in bank")))?,
        None => bank.by_index(idx),
    };
    let offset = rng.random_range(0..entry.clip.len().max(1));
    Ok(AdditiveDraw {
        noise_id: entry.id.clone(),
        offset,
    })
}

/// Adds a bank noise at `snr_db`. Returns the mixture and the resolved draw.
pub fn apply_additive(
    clip: &AudioClip,
    bank: &ClipBank,
    ctx: &SeedContext,
    snr_db: f64,
    noise_id: Option<&str>,
) -> Result<(AudioClip, AdditiveDraw)> {
    let draw = draw_noise(bank, ctx, noise_id)?;
    let noise = &bank.get(&draw.noise_id).expect("drawn from bank").clip;
    if noise.is_empty() {
        return Err(Error::Config(format!("noise clip `{}` is empty", draw.noise_id)));
    }
    let seg = loop_noise(noise.samples(), draw.offset, clip.len());
    let out = mix_at_snr(clip.samples(), &seg, snr_db)?;
    Ok((clip.with_samples(out)?, draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::bank::BankClip;
    use crate::stoi::reference_snr;

    fn sine(f: f64, n: usize) -> AudioClip {
        AudioClip::canonical(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn alaw_round_trip_is_monotone_and_bounded() {
        let mut prev = f64::NEG_INFINITY;
        for i in -1000..=1000 {
            let x = i as f64 / 1000.0;
            assert!((alaw_expand(alaw_compress(x)) - x).abs() < 1e-12);
            let q = gsm_like_quantize(x);
            assert!(q >= prev);
            prev = q;
            // 7-bit magnitude code: relative error bounded by the segment step
            assert!((q - x).abs() <= 0.04 * x.abs() + 2e-3, "{x} -> {q}");
        }
    }

    #[test]
    fn telephone_silence_stays_silent() {
        let y = apply_telephone(&AudioClip::zeros(16_000, 16_000), None).unwrap();
        assert!(y.peak() < 1e-3);
        assert!((y.len() as i64 - 16_000).abs() <= 960);
    }

    #[test]
    fn radio_hits_target_snr_against_filtered_signal() {
        let x = sine(1000.0, 16_000);
        let ctx = SeedContext::new(5, "radio");
        let (out, filtered) = apply_radio(&x, &ctx, 700.0, 35.0).unwrap();
        let snr = reference_snr(&filtered, &out).unwrap().value_db;
        assert!((snr - 35.0).abs() < 1e-6, "{snr}");
    }

    #[test]
    fn clipping_is_deterministic_and_bounded() {
        let x = sine(220.0, 16_000);
        let ctx = SeedContext::new(9, "clip");
        let a = apply_clipping(&x, &ctx, 100.0, 0.5).unwrap();
        assert_eq!(a, apply_clipping(&x, &ctx, 100.0, 0.5).unwrap());
        assert!(a.peak() <= x.peak());
        let changed = a
            .samples()
            .chunks(1600)
            .zip(x.samples().chunks(1600))
            .filter(|(p, q)| p != q)
            .count();
        assert!(changed > 0 && changed < 10, "{changed}");
        assert_eq!(apply_clipping(&x, &ctx, 100.0, 0.0).unwrap(), x);
        assert!(apply_clipping(&x, &ctx, 0.0, 0.5).is_err());
    }

    #[test]
    fn additive_resolves_draw_and_rejects_empty_bank() {
        let bank = ClipBank::new(vec![BankClip {
            id: "n.wav".into(),
            category: "x".into(),
            clip: sine(3000.0, 5000),
        }]);
        let x = sine(440.0, 16_000);
        let ctx = SeedContext::new(2, "add");
        let (y, draw) = apply_additive(&x, &bank, &ctx, 5.0, None).unwrap();
        assert_eq!(draw.noise_id, "n.wav");
        assert!((reference_snr(&x, &y).unwrap().value_db - 5.0).abs() < 1e-9);
        let empty = ClipBank::default();
        assert!(matches!(
            apply_additive(&x, &empty, &ctx, 5.0, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            apply_additive(&x, &bank, &ctx, 5.0, Some("other.wav")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn loop_noise_wraps() {
        assert_eq!(loop_noise(&[1.0, 2.0, 3.0], 2, 5), vec![3.0, 1.0, 2.0, 3.0, 1.0]);
    }
}
