//! Browser demo: degrade synthetic speech, label it with STOI and look at
//! the result. Everything runs client-side on the core library.

use botstoi::audio::{stft_magnitude, AudioClip, SeedContext, N_BINS};
use botstoi::corruption::{apply_radio, apply_reverb, apply_telephone, hard_clip, label_pair, mix_at_snr};
use botstoi::synth::{synth_noise, synth_rir, synth_speech, NoiseColor};
use wasm_bindgen::prelude::*;

const DEMO_SECONDS: f64 = 3.0;

fn js(e: botstoi::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn noise_color(name: &str) -> Result<NoiseColor, JsError> {
    NoiseColor::ALL
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| JsError::new(&format!("unknown noise colour {name}")))
}

fn degrade(clean: &AudioClip, kind: &str, amount: f64, seed: u64) -> Result<AudioClip, JsError> {
    let ctx = SeedContext::new(seed, "demo");
    let out = match kind {
        "reverb" => {
            let rir = synth_rir(amount.clamp(0.05, 3.0), 0.0, &ctx.child("rir"));
            apply_reverb(clean, &rir).map_err(js)?
        }
        "telephone" => apply_telephone(clean, None).map_err(js)?,
        "radio" => apply_radio(clean, &ctx, 750.0, amount).map_err(js)?.0,
        "clipping" => {
            let peak = clean.peak() * amount.clamp(0.01, 1.0);
            let mut x = clean.samples().to_vec();
            hard_clip(&mut x, -peak, peak);
            clean.with_samples(x).map_err(js)?
        }
        color => {
            let n = synth_noise(noise_color(color)?, clean.len(), &ctx.child("noise"));
            clean
                .with_samples(mix_at_snr(clean.samples(), n.samples(), amount).map_err(js)?)
                .map_err(js)?
        }
    };
    Ok(out)
}

/// Clean and degraded audio with their STOI label.
#[wasm_bindgen]
pub struct Degraded {
    clean: Vec<f32>,
    degraded: Vec<f32>,
    stoi: f64,
    snr_db: f64,
}

#[wasm_bindgen]
impl Degraded {
    #[wasm_bindgen(getter)]
    pub fn stoi(&self) -> f64 {
        self.stoi
    }

    #[wasm_bindgen(getter)]
    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    #[wasm_bindgen(getter)]
    pub fn clean(&self) -> Vec<f32> {
        self.clean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn degraded(&self) -> Vec<f32> {
        self.degraded.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        botstoi::audio::CANONICAL_RATE
    }
}

/// Synthesises three seconds of speech, applies one degradation and scores it.
///
/// `kind` is a noise colour (`white`, `pink`, `brown`, `babble`, ...) with
/// `amount` as SNR in dB, `reverb` with `amount` as T60 in seconds, `radio`
/// with `amount` as SNR, `clipping` with `amount` as the clip level relative
/// to the peak, or `telephone`.
#[wasm_bindgen]
pub fn degrade_and_score(kind: &str, amount: f64, seed: u64) -> Result<Degraded, JsError> {
    let clean = synth_speech(DEMO_SECONDS, &SeedContext::new(seed, "speech"));
    let noisy = degrade(&clean, kind, amount, seed)?;
    let pair = label_pair(&clean, &noisy).map_err(js)?;
    Ok(Degraded {
        clean: clean.samples().iter().map(|&v| v as f32).collect(),
        degraded: noisy.samples().iter().map(|&v| v as f32).collect(),
        stoi: pair.stoi,
        snr_db: pair.snr_db,
    })
}

/// Log-magnitude spectrogram, row-major `frames x bins` with `bins` from
/// [`spectrogram_bins`].
#[wasm_bindgen]
pub fn spectrogram(samples: &[f32]) -> Result<Vec<f32>, JsError> {
    let clip = AudioClip::canonical(samples.iter().map(|&v| v as f64).collect()).map_err(js)?;
    let spec = stft_magnitude(&clip).map_err(js)?;
    Ok(spec.magnitudes.iter().map(|m| 20.0 * (m + 1e-6).log10()).collect())
}

#[wasm_bindgen]
pub fn spectrogram_bins() -> usize {
    N_BINS
}

/// STOI of one utterance in `color` noise at each SNR in `snrs_db`.
#[wasm_bindgen]
pub fn stoi_vs_snr(color: &str, snrs_db: &[f64], seed: u64) -> Result<Vec<f64>, JsError> {
    let clean = synth_speech(DEMO_SECONDS, &SeedContext::new(seed, "speech"));
    snrs_db
        .iter()
        .map(|&snr| {
            let noisy = degrade(&clean, color, snr, seed)?;
            Ok(label_pair(&clean, &noisy).map_err(js)?.stoi)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_curve_is_increasing() {
        let snrs = [-10.0, 0.0, 10.0, 20.0];
        let s = stoi_vs_snr("white", &snrs, 1).unwrap();
        assert!(s.windows(2).all(|w| w[0] < w[1]), "{s:?}");
    }

    #[test]
    fn every_kind_scores_in_unit_interval() {
        for (kind, amount) in [
            ("pink", 5.0),
            ("reverb", 0.6),
            ("telephone", 0.0),
            ("radio", 10.0),
            ("clipping", 0.2),
        ] {
            let d = degrade_and_score(kind, amount, 2).unwrap();
            assert!((0.0..=1.0).contains(&d.stoi()), "{kind}: {}", d.stoi());
            assert_eq!(d.clean().len(), d.degraded().len());
        }
    }

    #[test]
    fn spectrogram_has_whole_frames() {
        let d = degrade_and_score("white", 0.0, 3).unwrap();
        let s = spectrogram(&d.degraded()).unwrap();
        assert_eq!(s.len() % spectrogram_bins(), 0);
        assert!(s.iter().all(|v| v.is_finite()));
    }
}
