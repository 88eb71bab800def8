//! Prints STOI and reference SNR of a synthetic utterance mixed with
//! white noise over an SNR sweep. With an output directory argument the
//! clean/noisy pairs are also written as WAV files.

use botstoi::audio::{write_wav, AudioClip, SeedContext};
use botstoi::stoi::{reference_snr, stoi};
use botstoi::synth::{synth_noise, synth_speech, NoiseColor};

fn main() -> botstoi::Result<()> {
    let out_dir = std::env::args().nth(1);
    let clean = synth_speech(3.0, &SeedContext::new(5, "sweep"));
    let noise = synth_noise(NoiseColor::White, clean.len(), &SeedContext::new(5, "noise"));
    let scale_for = |snr_db: f64| (clean.energy() / noise.energy() / 10f64.powf(snr_db / 10.0)).sqrt();
    if let Some(dir) = &out_dir {
        write_wav(format!("{dir}/clean.wav"), &clean)?;
    }
    for snr in [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0] {
        let g = scale_for(snr);
        let noisy: Vec<f64> = clean
            .samples()
            .iter()
            .zip(noise.samples())
            .map(|(c, n)| c + g * n)
            .collect();
        let noisy = AudioClip::canonical(noisy)?;
        let score = stoi(&clean, &noisy)?;
        let measured = reference_snr(&clean, &noisy)?;
        println!(
            "{snr:>6.1} dB  measured {:>8.4} dB  stoi {:.6}",
            measured.value_db,
            score.value()
        );
        if let Some(dir) = &out_dir {
            write_wav(format!("{dir}/noisy_{snr}.wav"), &noisy)?;
        }
    }
    Ok(())
}
