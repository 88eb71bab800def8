use serde::{Deserialize, Serialize};

use super::{wada_snr, SnrEstimate, SnrMethod};
use crate::audio::{AudioClip, HOP, WINDOW};
use crate::error::{Error, Result};

/// Returned when the noise term is exactly zero.
pub const SNR_SENTINEL_DB: f64 = 100.0;

/// Decile-energy long-term SNR: mean of the loudest tenth of 32 ms frames
/// over the mean of the quietest tenth.
///
/// Constant-energy and all-zero clips give 0 dB.
pub fn longterm_snr(clip: &AudioClip) -> Result<SnrEstimate> {
    let need = clip.sample_rate() as usize;
    if clip.len() < need {
        return Err(Error::TooShort {
            needed: need,
            got: clip.len(),
        });
    }
    let x = clip.samples();
    let mut energies: Vec<f64> = (0..=(x.len() - WINDOW) / HOP)
        .map(|f| x[f * HOP..f * HOP + WINDOW].iter().map(|v| v * v).sum())
        .collect();
    energies.sort_by(f64::total_cmp);
    let decile = (energies.len() / 10).max(1);
    let noise = energies[..decile].iter().sum::<f64>() / decile as f64;
    let signal = energies[energies.len() - decile..].iter().sum::<f64>() / decile as f64;
    let value = if signal <= noise {
        0.0
    } else if noise <= 0.0 {
        SNR_SENTINEL_DB
    } else {
        (10.0 * (signal / noise).log10()).min(SNR_SENTINEL_DB)
    };
    Ok(SnrEstimate::new(value, SnrMethod::Longterm))
}

/// `10 log10(sum clean^2 / sum (noisy - clean)^2)` over an aligned pair.
pub fn reference_snr(clean: &AudioClip, noisy: &AudioClip) -> Result<SnrEstimate> {
    if clean.len() != noisy.len() {
        return Err(Error::Alignment(format!(
            "length mismatch: clean {} vs noisy {} samples",
            clean.len(),
            noisy.len()
        )));
    }
    let sig = clean.energy();
    if sig == 0.0 {
        return Err(Error::UndefinedReference("clean signal is silent".into()));
    }
    let noise: f64 = clean
        .samples()
        .iter()
        .zip(noisy.samples())
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    let value = if noise == 0.0 {
        SNR_SENTINEL_DB
    } else {
        10.0 * (sig / noise).log10()
    };
    Ok(SnrEstimate::new(value, SnrMethod::Reference))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenThresholds {
    pub longterm_db: f64,
    pub wada_db: f64,
}

impl Default for ScreenThresholds {
    fn default() -> Self {
        Self {
            longterm_db: 16.0,
            wada_db: 80.0,
        }
    }
}

impl ScreenThresholds {
    /// Strict on both: a file must be above the LT-SNR threshold and
    /// exceed the WADA threshold.
    pub fn accepts(&self, longterm_db: f64, wada_db: f64) -> bool {
        longterm_db > self.longterm_db && wada_db > self.wada_db
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub longterm_db: f64,
    pub wada_db: f64,
    pub passed: bool,
}

pub fn screen_clean(clip: &AudioClip, thresholds: &ScreenThresholds) -> Result<ScreenReport> {
    let lt = longterm_snr(clip)?.value_db;
    let wada = wada_snr(clip)?.value_db;
    Ok(ScreenReport {
        longterm_db: lt,
        wada_db: wada,
        passed: thresholds.accepts(lt, wada),
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::audio::SeedContext;

    #[test]
    fn screening_rule() {
        let t = ScreenThresholds::default();
        assert!(t.accepts(20.0, 90.0));
        assert!(!t.accepts(20.0, 70.0));
        assert!(!t.accepts(16.0, 80.0));
        assert!(!t.accepts(16.0, 90.0));
        assert!(!t.accepts(20.0, 80.0));
    }

    #[test]
    fn reference_snr_definition() {
        let clean = AudioClip::canonical(vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let n0 = AudioClip::canonical(vec![2.0, -2.0, 0.0, 0.0]).unwrap();
        assert!(reference_snr(&clean, &n0).unwrap().value_db.abs() < 1e-12);
        let g = 0.1f64.sqrt();
        let n10 = AudioClip::canonical(vec![1.0 + g, -1.0 - g, 1.0 + g, -1.0 - g]).unwrap();
        assert!((reference_snr(&clean, &n10).unwrap().value_db - 10.0).abs() < 1e-9);
        assert_eq!(reference_snr(&clean, &clean).unwrap().value_db, SNR_SENTINEL_DB);
        let z = AudioClip::zeros(4, 16_000);
        assert!(matches!(reference_snr(&z, &clean), Err(Error::UndefinedReference(_))));
    }

    #[test]
    fn longterm_bursts_over_silence_is_large() {
        let mut rng = SeedContext::new(3, "bursts").stream();
        let mut x = vec![0.0; 32_000];
        for burst in 0..4 {
            let start = burst * 8000;
            for v in &mut x[start..start + 3000] {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let est = longterm_snr(&AudioClip::canonical(x).unwrap()).unwrap();
        assert!(est.value_db > 40.0, "{est:?}");
    }

    #[test]
    fn longterm_white_noise_is_near_zero() {
        let mut rng = SeedContext::new(4, "white").stream();
        let n = Normal::new(0.0, 0.1).unwrap();
        let x: Vec<f64> = (0..48_000).map(|_| n.sample(&mut rng)).collect();
        let est = longterm_snr(&AudioClip::canonical(x).unwrap()).unwrap();
        assert!(est.value_db >= 0.0 && est.value_db < 3.0, "{est:?}");
    }

    #[test]
    fn longterm_constant_is_zero() {
        let est = longterm_snr(&AudioClip::canonical(vec![0.3; 16_000]).unwrap()).unwrap();
        assert_eq!(est.value_db, 0.0);
        let sine: Vec<f64> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        let est = longterm_snr(&AudioClip::canonical(sine).unwrap()).unwrap();
        assert!(est.value_db.abs() < 0.1, "{est:?}");
    }
}
