use super::AudioClip;
use crate::error::Result;

const TAPS: usize = 64;
const HALF: i64 = (TAPS / 2) as i64;
const KAISER_BETA: f64 = 8.0;
const CUTOFF_MARGIN: f64 = 0.97;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase bank: one 64-tap windowed-sinc filter per output phase.
struct PolyphaseBank {
    up: usize,
    down: usize,
    taps: Vec<f64>,
}

impl PolyphaseBank {
    fn new(up: usize, down: usize) -> Self {
        let fc = CUTOFF_MARGIN * (up as f64 / down as f64).min(1.0);
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut taps = vec![0.0; up * TAPS];
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let row = &mut taps[phase * TAPS..(phase + 1) * TAPS];
            for (slot, j) in row.iter_mut().zip(-HALF + 1..=HALF) {
                let d = frac - j as f64;
                let r = d / HALF as f64;
                let w = if r.abs() < 1.0 {
                    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                } else {
                    0.0
                };
                *slot = fc * sinc(fc * d) * w;
            }
            // unit DC gain per phase
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|t| *t /= sum);
        }
        Self { up, down, taps }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let n_out = (x.len() * self.up).div_ceil(self.down);
        let n_in = x.len() as i64;
        (0..n_out)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as i64;
                let phase = pos % self.up;
                let row = &self.taps[phase * TAPS..(phase + 1) * TAPS];
                let mut acc = 0.0;
                for (k, j) in (-HALF + 1..=HALF).enumerate() {
                    let i = base + j;
                    if (0..n_in).contains(&i) {
                        acc += row[k] * x[i as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Rational-ratio windowed-sinc resampling of a raw buffer.
pub fn resample_samples(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let up = (to as u64 / g) as usize;
    let down = (from as u64 / g) as usize;
    PolyphaseBank::new(up, down).run(x)
}

pub fn resample(clip: &AudioClip, to: u32) -> Result<AudioClip> {
    if clip.sample_rate() == to {
        return Ok(clip.clone());
    }
    AudioClip::new(resample_samples(clip.samples(), clip.sample_rate(), to), to)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn output_length_follows_ratio() {
        assert_eq!(resample_samples(&vec![0.0; 44_100], 44_100, 16_000).len(), 16_000);
        assert_eq!(resample_samples(&vec![0.0; 16_000], 16_000, 10_000).len(), 10_000);
        assert_eq!(resample_samples(&vec![0.0; 8_000], 8_000, 16_000).len(), 16_000);
    }

    #[test]
    fn passband_tone_survives() {
        let x = tone(1000.0, 16_000, 16_000);
        let y = resample_samples(&x, 16_000, 10_000);
        let expect = tone(1000.0, 10_000, 10_000);
        // ignore filter edges
        let err = y[200..9800]
            .iter()
            .zip(&expect[200..9800])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max err {err}");
    }

    #[test]
    fn stopband_tone_is_rejected() {
        // 7 kHz cannot be represented at 10 kHz
        let x = tone(7000.0, 16_000, 16_000);
        let y = resample_samples(&x, 16_000, 10_000);
        let rms = (y[200..9800].iter().map(|v| v * v).sum::<f64>() / 9600.0).sqrt();
        assert!(rms < 0.01, "rms {rms}");
    }

    #[test]
    fn upsample_interpolates() {
        let x = tone(500.0, 8_000, 8_000);
        let y = resample_samples(&x, 8_000, 16_000);
        let expect = tone(500.0, 16_000, 16_000);
        let err = y[200..15800]
            .iter()
            .zip(&expect[200..15800])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max err {err}");
    }
}
