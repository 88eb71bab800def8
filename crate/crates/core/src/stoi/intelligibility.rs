//! Short-time objective intelligibility (Taal et al., 2010).
//!
//! Both signals are taken to 10 kHz, frames where the clean signal is more
//! than 40 dB below its loudest frame are dropped from both, and the
//! remaining signals are compared through 15 one-third-octave band envelopes
//! over 384 ms (30-frame) segments.

use num_complex::Complex;
use rustfft::FftPlanner;

use super::StoiScore;
use crate::audio::{resample_samples, AudioClip};
use crate::error::{Error, Result};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const FRAME_HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// `np.hanning(n + 2)[1:-1]`
fn hann_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Half-open FFT-bin ranges of the one-third-octave bands.
fn band_bins() -> [(usize, usize); BANDS] {
    let bin_hz = FS as f64 / NFFT as f64;
    let nearest = |f: f64| {
        (0..=NFFT / 2)
            .min_by(|&a, &b| {
                let da = (a as f64 * bin_hz - f).powi(2);
                let db = (b as f64 * bin_hz - f).powi(2);
                da.total_cmp(&db)
            })
            .unwrap()
    };
    let mut out = [(0, 0); BANDS];
    for (k, slot) in out.iter_mut().enumerate() {
        let k = k as f64;
        let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
        let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
        *slot = (nearest(lo), nearest(hi));
    }
    out
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(FRAME);
    let starts: Vec<usize> = frame_starts(x.len(), FRAME, FRAME_HOP).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = x[s..s + FRAME].iter().zip(&w).map(|(v, wi)| (v * wi).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max_e = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max_e - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if kept.is_empty() {
        0
    } else {
        (kept.len() - 1) * FRAME_HOP + FRAME
    };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        let o = j * FRAME_HOP;
        for i in 0..FRAME {
            xs[o + i] += w[i] * x[s + i];
            ys[o + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Band envelopes, `[band][frame]`.
fn third_octave_envelopes(x: &[f64], bands: &[(usize, usize); BANDS]) -> Vec<Vec<f64>> {
    let w = hann_inner(FRAME);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    let mut env: Vec<Vec<f64>> = vec![Vec::new(); BANDS];
    for s in frame_starts(x.len(), FRAME, FRAME_HOP) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i] = Complex::new(w[i] * x[s + i], 0.0);
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let p: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            env[b].push(p.sqrt());
        }
    }
    env
}

fn center_and_normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt() + EPS;
    v.iter_mut().for_each(|a| *a /= norm);
}

/// Intrusive STOI of `degraded` against `clean`. The pair must already be
/// time-aligned and of equal length (see [`super::align_pair`]).
pub fn stoi(clean: &AudioClip, degraded: &AudioClip) -> Result<StoiScore> {
    if clean.len() != degraded.len() {
        return Err(Error::Alignment(format!(
            "length mismatch: clean {} vs degraded {} samples",
            clean.len(),
            degraded.len()
        )));
    }
    if clean.sample_rate() != degraded.sample_rate() {
        return Err(Error::Alignment("sample rates differ".into()));
    }
    if clean.energy() == 0.0 {
        return Err(Error::UndefinedReference("clean signal is silent".into()));
    }
    let x = resample_samples(clean.samples(), clean.sample_rate(), FS);
    let y = resample_samples(degraded.samples(), degraded.sample_rate(), FS);
    let (x, y) = remove_silent_frames(&x, &y);

    let bands = band_bins();
    let x_env = third_octave_envelopes(&x, &bands);
    let y_env = third_octave_envelopes(&y, &bands);
    let frames = x_env[0].len();
    if frames < SEGMENT {
        return Err(Error::TooShort {
            needed: SEGMENT,
            got: frames,
        });
    }

    let clip_factor = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut xs = vec![0.0; SEGMENT];
    let mut ys = vec![0.0; SEGMENT];
    for m in SEGMENT..=frames {
        for b in 0..BANDS {
            xs.copy_from_slice(&x_env[b][m - SEGMENT..m]);
            ys.copy_from_slice(&y_env[b][m - SEGMENT..m]);
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = nx / (ny + EPS);
            for (yv, &xv) in ys.iter_mut().zip(&xs) {
                *yv = (*yv * alpha).min(xv * clip_factor);
            }
            center_and_normalize(&mut xs);
            center_and_normalize(&mut ys);
            total += xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>();
            count += 1;
        }
    }
    Ok(StoiScore::clamped(total / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_match_reference_table() {
        // bin indices of the one-third-octave edges at 10 kHz / 512-pt FFT
        let expect = [
            (7, 9),
            (9, 11),
            (11, 14),
            (14, 17),
            (17, 22),
            (22, 27),
            (27, 34),
            (34, 43),
            (43, 55),
            (55, 69),
            (69, 87),
            (87, 109),
            (109, 138),
            (138, 174),
            (174, 219),
        ];
        assert_eq!(band_bins(), expect);
    }

    #[test]
    fn unequal_lengths_are_alignment_errors() {
        let a = AudioClip::zeros(100, 16_000);
        let b = AudioClip::zeros(101, 16_000);
        assert!(matches!(stoi(&a, &b), Err(Error::Alignment(_))));
    }

    #[test]
    fn silent_reference_is_undefined() {
        let a = AudioClip::zeros(16_000, 16_000);
        assert!(matches!(stoi(&a, &a), Err(Error::UndefinedReference(_))));
    }
}
