use num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioClip;
use crate::error::{Error, Result};

/// Full linear convolution (`len = n + m - 1`) via zero-padded FFT.
pub fn convolve_full(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if x.len().min(h.len()) <= 32 {
        let mut y = vec![0.0; out_len];
        for (i, &xi) in x.iter().enumerate() {
            for (j, &hj) in h.iter().enumerate() {
                y[i + j] += xi * hj;
            }
        }
        return y;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(n, Complex::new(0.0, 0.0));
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Convolves with `kernel`, keeps the first `clip.len()` samples and rescales
/// the result to the input RMS.
pub fn convolve(clip: &AudioClip, kernel: &AudioClip) -> Result<AudioClip> {
    if kernel.is_empty() {
        return Err(Error::Argument("empty convolution kernel".into()));
    }
    if clip.sample_rate() != kernel.sample_rate() {
        return Err(Error::Argument(format!(
            "kernel rate {} differs from signal rate {}",
            kernel.sample_rate(),
            clip.sample_rate()
        )));
    }
    let mut y = convolve_full(clip.samples(), kernel.samples());
    y.truncate(clip.len());
    let rms_in = clip.rms();
    let rms_out = (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt();
    if rms_out > 0.0 {
        let g = rms_in / rms_out;
        y.iter_mut().for_each(|v| *v *= g);
    }
    clip.with_samples(y)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::audio::SeedContext;

    #[test]
    fn delta_is_identity() {
        let mut rng = SeedContext::new(1, "delta").stream();
        let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clip = AudioClip::canonical(x.clone()).unwrap();
        let delta = AudioClip::canonical(vec![1.0]).unwrap();
        let y = convolve(&clip, &delta).unwrap();
        for (a, b) in y.samples().iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delayed_delta_shifts() {
        // zero tail, so truncation loses no energy and no rescale happens
        let mut x = vec![0.0; 2000];
        let mut rng = SeedContext::new(2, "shift").stream();
        for v in x.iter_mut().take(1500) {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut k = vec![0.0; 161];
        k[160] = 1.0;
        let y = convolve(
            &AudioClip::canonical(x.clone()).unwrap(),
            &AudioClip::canonical(k).unwrap(),
        )
        .unwrap();
        assert_eq!(y.len(), 2000);
        for i in 0..2000 {
            let expect = if i >= 160 { x[i - 160] } else { 0.0 };
            assert!((y.samples()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_kernel_rejected() {
        let clip = AudioClip::zeros(100, 16_000);
        let k = AudioClip::zeros(0, 16_000);
        assert!(matches!(convolve(&clip, &k), Err(Error::Argument(_))));
    }
}
