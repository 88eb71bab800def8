//! Deterministic test signals: a formant-synthesis speech surrogate,
//! coloured noises and exponential-tail room responses.
//!
//! These stand in for real corpora in tests, examples and the browser demo.
//! The speech surrogate has syllabic (3-6 Hz) energy modulation, voiced and
//! unvoiced segments and digital-silence pauses, which is what the STOI band
//! envelopes and the clean-screening estimators respond to.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::audio::{AudioClip, SeedContext, SeedStream, CANONICAL_RATE};

const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [490.0, 1350.0, 1690.0],
];

/// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    z1: f64,
    z2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self {
            a1: 0.0,
            a2: 0.0,
            gain: 0.0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn tune(&mut self, freq: f64, bw: f64, fs: f64) {
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.z1 + self.a2 * self.z2;
        self.z2 = self.z1;
        self.z1 = y;
        y
    }
}

fn envelope(i: usize, n: usize) -> f64 {
    let ramp = (n / 5).max(1);
    let a = if i < ramp {
        i as f64 / ramp as f64
    } else if i >= n - ramp {
        (n - i) as f64 / ramp as f64
    } else {
        1.0
    };
    (0.5 - 0.5 * (PI * a).cos()).max(0.0)
}

fn voiced(out: &mut Vec<f64>, rng: &mut SeedStream, f0: f64, n: usize, fs: f64) {
    let from = VOWELS[rng.random_range(0..VOWELS.len())];
    let to = VOWELS[rng.random_range(0..VOWELS.len())];
    let bws = [
        rng.random_range(60.0..100.0),
        rng.random_range(80.0..140.0),
        rng.random_range(120.0..200.0),
    ];
    let mut res = [Resonator::new(), Resonator::new(), Resonator::new()];
    let glide = rng.random_range(0.85..1.15);
    let level = rng.random_range(0.5..1.0);
    let aspiration = Normal::new(0.0, 0.02).unwrap();
    let mut phase = 0.0;
    let mut tilt = 0.0;
    for i in 0..n {
        let t = i as f64 / n as f64;
        if i % 32 == 0 {
            for (k, r) in res.iter_mut().enumerate() {
                r.tune(from[k] + (to[k] - from[k]) * t, bws[k], fs);
            }
        }
        let pitch = f0 * (1.0 + (glide - 1.0) * t);
        phase += pitch / fs;
        let mut src = aspiration.sample(rng);
        if phase >= 1.0 {
            phase -= 1.0;
            src += 1.0;
        }
        tilt = 0.85 * tilt + src;
        let mut y = tilt;
        let mut acc = 0.0;
        for r in res.iter_mut() {
            y = r.step(y);
            acc += y;
        }
        out.push(level * envelope(i, n) * acc);
    }
}

fn fricative(out: &mut Vec<f64>, rng: &mut SeedStream, n: usize, fs: f64) {
    let mut res = Resonator::new();
    res.tune(rng.random_range(3000.0..5500.0), rng.random_range(1200.0..2500.0), fs);
    let level = rng.random_range(0.6..1.4);
    let white = Normal::new(0.0, 1.0).unwrap();
    for i in 0..n {
        out.push(level * envelope(i, n) * res.step(white.sample(rng)));
    }
}

/// Speech surrogate of exactly `duration_s` seconds at 16 kHz, peak 0.5.
pub fn synth_speech(duration_s: f64, ctx: &SeedContext) -> AudioClip {
    let fs = CANONICAL_RATE as f64;
    let total = (duration_s * fs).round() as usize;
    let mut rng = ctx.stream();
    let f0 = rng.random_range(95.0..230.0);
    let mut out: Vec<f64> = vec![0.0; rng.random_range(800..2400)];
    while out.len() < total {
        if rng.random_bool(0.22) {
            let pause = (rng.random_range(0.08..0.35) * fs) as usize;
            out.extend(std::iter::repeat_n(0.0, pause));
        }
        if rng.random_bool(0.25) {
            let n = (rng.random_range(0.06..0.14) * fs) as usize;
            fricative(&mut out, &mut rng, n, fs);
        }
        let n = (rng.random_range(0.12..0.28) * fs) as usize;
        let syl_f0 = f0 * rng.random_range(0.85..1.2);
        voiced(&mut out, &mut rng, syl_f0, n, fs);
    }
    out.truncate(total);
    // trailing silence so every clip ends cleanly
    let tail = (0.1 * fs) as usize;
    let start = total.saturating_sub(tail);
    out[start..].iter_mut().for_each(|v| *v = 0.0);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioClip::canonical(out).expect("synthesis is finite")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
    Babble,
    Modulated,
}

impl NoiseColor {
    pub const ALL: [NoiseColor; 5] = [
        NoiseColor::White,
        NoiseColor::Pink,
        NoiseColor::Brown,
        NoiseColor::Babble,
        NoiseColor::Modulated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseColor::White => "white",
            NoiseColor::Pink => "pink",
            NoiseColor::Brown => "brown",
            NoiseColor::Babble => "babble",
            NoiseColor::Modulated => "modulated",
        }
    }
}

/// Unit-RMS noise of the requested colour.
pub fn synth_noise(color: NoiseColor, len: usize, ctx: &SeedContext) -> AudioClip {
    let mut rng = ctx.stream();
    let white = Normal::new(0.0, 1.0).unwrap();
    let mut x: Vec<f64> = match color {
        NoiseColor::White => (0..len).map(|_| white.sample(&mut rng)).collect(),
        NoiseColor::Pink => {
            // Kellet's economy filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let w = white.sample(&mut rng);
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseColor::Brown => {
            let mut acc = 0.0;
            (0..len)
                .map(|_| {
                    acc = 0.995 * acc + white.sample(&mut rng);
                    acc
                })
                .collect()
        }
        NoiseColor::Babble => {
            let dur = len as f64 / CANONICAL_RATE as f64 + 0.01;
            let mut sum = vec![0.0; len];
            for talker in 0..6 {
                let s = synth_speech(dur, &ctx.child(&format!("talker{talker}")));
                for (a, b) in sum.iter_mut().zip(s.samples()) {
                    *a += b;
                }
            }
            sum
        }
        NoiseColor::Modulated => {
            let rate = rng.random_range(2.0..8.0);
            (0..len)
                .map(|i| {
                    let m = 0.6 + 0.4 * (2.0 * PI * rate * i as f64 / CANONICAL_RATE as f64).sin();
                    m * white.sample(&mut rng)
                })
                .collect()
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    AudioClip::canonical(x).expect("noise is finite")
}

/// Direct path followed by an exponentially decaying Gaussian tail whose
/// energy equals the direct-path energy scaled by `-drr_db`.
pub fn synth_rir(t60_s: f64, drr_db: f64, ctx: &SeedContext) -> AudioClip {
    let fs = CANONICAL_RATE as f64;
    let mut rng = ctx.stream();
    let len = ((t60_s * fs) as usize).max(2);
    let predelay = rng.random_range(16..80);
    let white = Normal::new(0.0, 1.0).unwrap();
    let decay = 6.908 / (t60_s * fs);
    let mut h = vec![0.0; len + predelay];
    h[0] = 1.0;
    let mut tail_energy = 0.0;
    for (i, v) in h[predelay..].iter_mut().enumerate() {
        *v = white.sample(&mut rng) * (-decay * i as f64).exp();
        tail_energy += *v * *v;
    }
    let g = (10f64.powf(-drr_db / 10.0) / tail_energy).sqrt();
    h[predelay..].iter_mut().for_each(|v| *v *= g);
    AudioClip::canonical(h).expect("rir is finite")
}

/// Symmetric gamma-distributed samples (shape 0.4), the amplitude model
/// behind the WADA estimator.
pub fn gamma_signal(len: usize, ctx: &SeedContext) -> Vec<f64> {
    let mut rng = ctx.stream();
    let g = Gamma::new(0.4, 1.0).unwrap();
    (0..len)
        .map(|_| {
            let v = g.sample(&mut rng);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_has_requested_length_and_level() {
        let s = synth_speech(2.5, &SeedContext::new(1, "utt"));
        assert_eq!(s.len(), 40_000);
        assert!((s.peak() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn speech_is_deterministic() {
        let a = synth_speech(1.0, &SeedContext::new(1, "utt"));
        let b = synth_speech(1.0, &SeedContext::new(1, "utt"));
        assert_eq!(a, b);
    }

    #[test]
    fn noises_are_unit_rms() {
        for c in NoiseColor::ALL {
            let n = synth_noise(c, 8000, &SeedContext::new(2, c.name()));
            assert!((n.rms() - 1.0).abs() < 1e-9, "{c:?}");
        }
    }
}
