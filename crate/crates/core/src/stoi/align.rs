use num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub const MAX_LAG_MS: f64 = 250.0;
pub const MIN_OVERLAP_S: f64 = 0.5;
pub const MIN_PEAK: f64 = 0.1;

/// Lag (in samples) of `processed` relative to `clean` and the normalised
/// cross-correlation at that lag. Positive lag: `processed` is late.
pub fn estimate_lag(clean: &[f64], processed: &[f64], max_lag: usize) -> (i64, f64) {
    let n = (clean.len() + processed.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(n, Complex::new(0.0, 0.0));
        b
    };
    let mut a = pad(clean);
    let mut b = pad(processed);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in b.iter_mut().zip(&a) {
        *p *= q.conj();
    }
    inv.process(&mut b);
    // b[l] = sum_t clean[t] * processed[t + l] (times n), negative lags wrap
    let norm =
        (clean.iter().map(|v| v * v).sum::<f64>() * processed.iter().map(|v| v * v).sum::<f64>()).sqrt() * n as f64;
    let max_pos = max_lag.min(processed.len().saturating_sub(1)) as i64;
    let max_neg = max_lag.min(clean.len().saturating_sub(1)) as i64;
    let mut best = (0i64, f64::NEG_INFINITY);
    for lag in -max_neg..=max_pos {
        let idx = lag.rem_euclid(n as i64) as usize;
        let r = b[idx].re;
        if r > best.1 {
            best = (lag, r);
        }
    }
    let peak = if norm > 0.0 { best.1 / norm } else { 0.0 };
    (best.0, peak)
}

/// Crops `clean` and `processed` to their common support at the
/// cross-correlation peak within +/-250 ms.
pub fn align_pair(clean: &AudioClip, processed: &AudioClip) -> Result<(AudioClip, AudioClip)> {
    if clean.sample_rate() != processed.sample_rate() {
        return Err(Error::Alignment("sample rates differ".into()));
    }
    let sr = clean.sample_rate() as f64;
    let max_lag = (MAX_LAG_MS * 1e-3 * sr).round() as usize;
    let (lag, peak) = estimate_lag(clean.samples(), processed.samples(), max_lag);
    if !(peak >= MIN_PEAK) {
        return Err(Error::Alignment(format!("correlation peak {peak:.3} below {MIN_PEAK}")));
    }
    let (c0, p0) = if lag >= 0 {
        (0usize, lag as usize)
    } else {
        ((-lag) as usize, 0usize)
    };
    let len = (clean.len() - c0).min(processed.len() - p0);
    let min_len = (MIN_OVERLAP_S * sr).ceil() as usize;
    if len < min_len {
        return Err(Error::Alignment(format!(
            "overlap of {len} samples shorter than {MIN_OVERLAP_S} s"
        )));
    }
    Ok((
        clean.with_samples(clean.samples()[c0..c0 + len].to_vec())?,
        processed.with_samples(processed.samples()[p0..p0 + len].to_vec())?,
    ))
}
