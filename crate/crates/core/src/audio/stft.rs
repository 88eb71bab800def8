use num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};

/// 32 ms at 16 kHz.
pub const WINDOW: usize = 512;
/// 16 ms at 16 kHz.
pub const HOP: usize = 256;
pub const FFT_SIZE: usize = 512;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

/// One-sided STFT magnitudes, row-major `frames x 257`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<f32>,
    pub frames: usize,
    pub frame_rate: f64,
}

impl Spectrogram {
    pub const WINDOW_MS: f64 = 32.0;
    pub const HOP_MS: f64 = 16.0;

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.magnitudes[i * N_BINS..(i + 1) * N_BINS]
    }

    pub fn bins(&self) -> usize {
        N_BINS
    }
}

pub fn hamming_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// 512-point STFT with a periodic Hamming window and 256-sample hop; frame
/// count is `floor((len - 512) / 256) + 1`.
pub fn stft_magnitude(clip: &AudioClip) -> Result<Spectrogram> {
    clip.require_rate(CANONICAL_RATE, "stft_magnitude")?;
    let x = clip.samples();
    if x.len() < WINDOW {
        return Err(Error::TooShort {
            needed: WINDOW,
            got: x.len(),
        });
    }
    let frames = (x.len() - WINDOW) / HOP + 1;
    let window = hamming_periodic(WINDOW);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut magnitudes = Vec::with_capacity(frames * N_BINS);
    for f in 0..frames {
        let seg = &x[f * HOP..f * HOP + WINDOW];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        magnitudes.extend(buf[..N_BINS].iter().map(|c| c.norm() as f32));
    }
    Ok(Spectrogram {
        magnitudes,
        frames,
        frame_rate: CANONICAL_RATE as f64 / HOP as f64,
    })
}
