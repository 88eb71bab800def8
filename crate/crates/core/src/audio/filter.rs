use std::f64::consts::PI;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Highpass,
    Lowpass,
    Bandpass,
}

/// Second-order section with `a0 == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex<f64>) -> Complex<f64> {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Butterworth design by bilinear transform of the analog prototype,
    /// with pre-warped edges. `order` is the prototype order, so a bandpass
    /// has `order` sections and low/high-pass have `order / 2`.
    pub fn butterworth(kind: FilterKind, cutoffs_hz: &[f64], order: usize, fs: f64) -> Result<Self> {
        if !matches!(order, 2 | 4 | 8) {
            return Err(Error::Argument(format!("filter order {order} not in {{2,4,8}}")));
        }
        let nyq = fs / 2.0;
        for &c in cutoffs_hz {
            if !(c > 0.0 && c < nyq) {
                return Err(Error::Argument(format!("cutoff {c} Hz outside (0, {nyq}) Hz")));
            }
        }
        let expected = if kind == FilterKind::Bandpass { 2 } else { 1 };
        if cutoffs_hz.len() != expected {
            return Err(Error::Argument(format!(
                "{kind:?} needs {expected} cutoff(s), got {}",
                cutoffs_hz.len()
            )));
        }
        if kind == FilterKind::Bandpass && cutoffs_hz[0] >= cutoffs_hz[1] {
            return Err(Error::Argument("bandpass low edge must be below high edge".into()));
        }

        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let proto: Vec<Complex<f64>> = (0..order)
            .map(|k| Complex::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64))
            .collect();
        let analog: Vec<Complex<f64>> = match kind {
            FilterKind::Lowpass => {
                let w = warp(cutoffs_hz[0]);
                proto.iter().map(|p| p * w).collect()
            }
            FilterKind::Highpass => {
                let w = warp(cutoffs_hz[0]);
                proto.iter().map(|p| w / p).collect()
            }
            FilterKind::Bandpass => {
                let (w1, w2) = (warp(cutoffs_hz[0]), warp(cutoffs_hz[1]));
                let bw = w2 - w1;
                let w0sq = w1 * w2;
                proto
                    .iter()
                    .flat_map(|p| {
                        let half = p * bw / 2.0;
                        let root = (half * half - w0sq).sqrt();
                        [half + root, half - root]
                    })
                    .collect()
            }
        };
        let two_fs = 2.0 * fs;
        let zeros_b = match kind {
            FilterKind::Lowpass => [1.0, 2.0, 1.0],
            FilterKind::Highpass => [1.0, -2.0, 1.0],
            FilterKind::Bandpass => [1.0, 0.0, -1.0],
        };
        let sections: Vec<Biquad> = analog
            .iter()
            .map(|s| (two_fs + s) / (two_fs - s))
            .filter(|z| z.im > 0.0)
            .map(|z| Biquad {
                b: zeros_b,
                a: [1.0, -2.0 * z.re, z.norm_sqr()],
            })
            .collect();
        let mut filt = SosFilter { sections };
        let ref_w = match kind {
            FilterKind::Lowpass => 0.0,
            FilterKind::Highpass => PI,
            FilterKind::Bandpass => {
                let w0 = (warp(cutoffs_hz[0]) * warp(cutoffs_hz[1])).sqrt();
                2.0 * (w0 / two_fs).atan()
            }
        };
        let g = filt.response_at(ref_w).norm();
        for c in filt.sections[0].b.iter_mut() {
            *c /= g;
        }
        Ok(filt)
    }

    /// Complex response at normalised angular frequency `w` (rad/sample).
    pub fn response_at(&self, w: f64) -> Complex<f64> {
        let z_inv = Complex::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn gain_at_hz(&self, f: f64, fs: f64) -> f64 {
        self.response_at(2.0 * PI * f / fs).norm()
    }

    /// Zero-initial-state cascade, transposed direct form II.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let inp = *v;
                let out = s.b[0] * inp + z1;
                z1 = s.b[1] * inp - s.a[1] * out + z2;
                z2 = s.b[2] * inp - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward filtering: squared magnitude response, zero phase.
    /// Edges are extended by odd reflection to tame start-up transients.
    pub fn apply_zero_phase(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = ZERO_PHASE_PAD.min(x.len() - 1);
        let (first, last) = (x[0], x[x.len() - 1]);
        let mut ext = Vec::with_capacity(x.len() + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));
        let mut y = self.apply(&ext);
        y.reverse();
        let mut y = self.apply(&y);
        y.reverse();
        y[pad..pad + x.len()].to_vec()
    }
}

const ZERO_PHASE_PAD: usize = 1024;

pub fn butterworth_filter(clip: &AudioClip, kind: FilterKind, cutoffs_hz: &[f64], order: usize) -> Result<AudioClip> {
    let f = SosFilter::butterworth(kind, cutoffs_hz, order, clip.sample_rate() as f64)?;
    let y = f.apply(clip.samples());
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("butterworth_filter".into()));
    }
    clip.with_samples(y)
}
