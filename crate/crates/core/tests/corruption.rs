use std::f64::consts::PI;
use std::path::Path;

use botstoi::audio::{write_wav, AudioClip, SeedContext};
use botstoi::corruption::{
    apply_additive, apply_chain, apply_clipping, apply_radio, apply_reverb, apply_telephone, build_chain, hard_clip,
    label_pair, read_manifest, synthesize_corpus, transcode, BankClip, ChainPolicy, ClipBank, Codec, CorpusJob,
    DegradationChain, DegradationKind, DegradationSpec, Resources, Transcoder,
};
use botstoi::stoi::{estimate_lag, reference_snr, stoi};
use botstoi::synth::{synth_noise, synth_rir, synth_speech, NoiseColor};
use proptest::prelude::*;

/// Periodogram energy in `[lo, hi)` Hz by direct DFT.
fn band_energy(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut e = 0.0;
    for k in 0..=n / 2 {
        let f = k as f64 * fs / n as f64;
        if f < lo || f >= hi {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let ph = -2.0 * PI * (k * t % n) as f64 / n as f64;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        e += re * re + im * im;
    }
    e
}

fn db(r: f64) -> f64 {
    10.0 * r.log10()
}

fn sine(f: f64, n: usize) -> AudioClip {
    AudioClip::canonical(
        (0..n)
            .map(|i| 0.5 * (2.0 * PI * f * i as f64 / 16_000.0).sin())
            .collect(),
    )
    .unwrap()
}

fn white(n: usize, key: &str) -> AudioClip {
    let mut c = synth_noise(NoiseColor::White, n, &SeedContext::new(77, key)).into_samples();
    c.iter_mut().for_each(|v| *v *= 0.1);
    AudioClip::canonical(c).unwrap()
}

fn mid(x: &AudioClip) -> &[f64] {
    &x.samples()[4000..8000]
}

fn noise_bank() -> ClipBank {
    ClipBank::new(
        NoiseColor::ALL
            .iter()
            .map(|&c| BankClip {
                id: format!("{}.wav", c.name()),
                category: c.name().into(),
                clip: synth_noise(c, 48_000, &SeedContext::new(5, c.name())),
            })
            .collect(),
    )
}

#[test]
fn telephone_band_limits() {
    let (lo, hi) = (300.0, 3400.0);
    let x = white(16_000, "tel");
    let y = apply_telephone(&x, None).unwrap();
    let outside = |s: &[f64]| band_energy(s, 16_000.0, 0.0, lo) + band_energy(s, 16_000.0, hi, 8001.0);
    let att = db(outside(mid(&y)) / outside(mid(&x)));
    assert!(att <= -20.0, "out-of-band attenuation {att:.1} dB");

    let s = sine(1000.0, 16_000);
    let t = apply_telephone(&s, None).unwrap();
    let gain = db(band_energy(mid(&t), 16_000.0, lo, hi) / band_energy(mid(&s), 16_000.0, lo, hi));
    assert!(gain.abs() <= 3.0, "in-band change {gain:.2} dB");
    let spill = db(outside(mid(&t)) / band_energy(mid(&s), 16_000.0, lo, hi));
    assert!(spill <= -20.0, "sine spill {spill:.1} dB");
}

#[test]
fn telephone_keeps_timing() {
    let x = synth_speech(3.0, &SeedContext::new(1, "tel-speech"));
    let y = apply_telephone(&x, None).unwrap();
    assert!((y.len() as f64 - x.len() as f64).abs() <= 0.06 * 16_000.0);
    let (lag, peak) = estimate_lag(x.samples(), y.samples(), 4000);
    assert!(lag.abs() <= 960 && peak > 0.5, "lag {lag}, peak {peak}");
}

#[test]
fn reverb_delta_is_identity() {
    let x = synth_speech(1.0, &SeedContext::new(2, "rev"));
    let mut d = vec![0.0; 10];
    d[0] = 1.0;
    let y = apply_reverb(&x, &AudioClip::canonical(d).unwrap()).unwrap();
    for (a, b) in x.samples().iter().zip(y.samples()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn reverb_tail_lowers_stoi() {
    let x = synth_speech(3.0, &SeedContext::new(3, "rev"));
    let rir = synth_rir(0.5, 0.0, &SeedContext::new(3, "rir"));
    let y = apply_reverb(&x, &rir).unwrap();
    let s = stoi(&x, &y).unwrap().value();
    assert!(s <= 0.98, "stoi {s}");
}

#[test]
fn different_rirs_change_output_not_chain_shape() {
    let x = synth_speech(2.0, &SeedContext::new(4, "rev"));
    let bank = ClipBank::new(
        ["a.wav", "b.wav"]
            .iter()
            .enumerate()
            .map(|(i, id)| BankClip {
                id: id.to_string(),
                category: "rir".into(),
                clip: synth_rir(0.3 + 0.3 * i as f64, 3.0, &SeedContext::new(4, *id)),
            })
            .collect(),
    );
    let seed = SeedContext::new(4, "item");
    let res = Resources {
        rirs: Some(&bank),
        ..Resources::default()
    };
    let run = |id: &str| {
        let c = DegradationChain::new(vec![DegradationSpec::Reverb { rir: Some(id.into()) }], seed.clone()).unwrap();
        apply_chain(&x, &c, &res).unwrap()
    };
    let (ya, ca) = run("a.wav");
    let (yb, cb) = run("b.wav");
    assert_ne!(ya, yb);
    assert_eq!(ca.kinds(), cb.kinds());
}

#[test]
fn radio_removes_dc_and_high_band() {
    let ctx = SeedContext::new(6, "radio");
    let dc = AudioClip::canonical(vec![0.5; 16_000]).unwrap();
    let (_, filtered) = apply_radio(&dc, &ctx, 500.0, 35.0).unwrap();
    let tail = &filtered.samples()[8000..];
    assert!(tail.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-3);

    let x = white(16_000, "radio");
    let (y, _) = apply_radio(&x, &ctx, 750.0, 35.0).unwrap();
    let att = db(band_energy(mid(&y), 16_000.0, 3000.0, 8001.0) / band_energy(mid(&x), 16_000.0, 3000.0, 8001.0));
    assert!(att <= -20.0, "above-3k attenuation {att:.1} dB");
}

#[test]
fn radio_snr_tracks_drawn_parameter() {
    let x = synth_speech(2.0, &SeedContext::new(7, "radio"));
    let policy = ChainPolicy::fixed(&[DegradationKind::Radio]);
    for i in 0..10 {
        let chain = build_chain(&SeedContext::new(i, "r"), &policy).unwrap();
        let DegradationSpec::Radio { highpass_hz, snr_db } = chain.specs[0] else {
            panic!("expected radio");
        };
        assert!((500.0..=1000.0).contains(&highpass_hz) && (30.0..=40.0).contains(&snr_db));
        let (y, filtered) = apply_radio(&x, &SeedContext::new(i, "rn"), highpass_hz, snr_db).unwrap();
        let m = reference_snr(&filtered, &y).unwrap().value_db;
        assert!((m - snr_db).abs() <= 0.1 && (30.0 - 0.1..=40.0 + 0.1).contains(&m));
    }
}

#[test]
fn lossless_transcodes_are_bit_exact() {
    let x = synth_speech(1.5, &SeedContext::new(8, "codec"));
    let q = x.with_samples(botstoi::audio::quantize_pcm16(x.samples())).unwrap();
    for c in [Codec::Flac, Codec::Wav, Codec::Aiff] {
        assert_eq!(transcode(&q, c, 0, None).unwrap(), q, "{c:?}");
    }
}

#[test]
fn mp3_round_trip_with_external_transcoder() {
    let Some(t) = Transcoder::from_env(2).unwrap() else {
        eprintln!("skipping: BOTSTOI_TRANSCODER not set");
        return;
    };
    let x = synth_speech(3.0, &SeedContext::new(9, "mp3"));
    let y = transcode(&x, Codec::Mp3, 64, Some(&t)).unwrap();
    let pair = label_pair(&x, &y).unwrap();
    assert!(pair.stoi < 1.0 && pair.stoi > 0.6, "{}", pair.stoi);
}

#[test]
fn clipping_examples() {
    let s = sine(200.0, 16_000);
    let mut y = s.samples().to_vec();
    hard_clip(&mut y, -s.peak(), s.peak());
    assert_eq!(y, s.samples());
    hard_clip(&mut y, -0.5 * s.peak(), 0.5 * s.peak());
    let m = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((m - 0.5 * s.peak()).abs() < 1e-12);
    let flat = y.iter().filter(|v| (v.abs() - m).abs() < 1e-12).count();
    assert!(flat > 16_000 / 3, "{flat}");

    let ctx = SeedContext::new(10, "clip");
    assert_eq!(
        apply_clipping(&s, &ctx, 100.0, 0.5).unwrap(),
        apply_clipping(&s, &ctx, 100.0, 0.5).unwrap()
    );
}

#[test]
fn additive_energy_matches_forced_snr() {
    let bank = noise_bank();
    let x = synth_speech(2.0, &SeedContext::new(11, "add"));
    let ctx = SeedContext::new(11, "mix");
    for (snr, ratio) in [(0.0, 1.0), (20.0, 0.01)] {
        let (y, _) = apply_additive(&x, &bank, &ctx, snr, None).unwrap();
        let en: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (b - a).powi(2)).sum();
        let rel = (en / x.energy() - ratio).abs() / ratio;
        assert!(rel < 1e-9, "snr {snr}: relative error {rel}");
    }
}

#[test]
fn additive_stoi_rises_with_snr() {
    let bank = noise_bank();
    let x = synth_speech(3.0, &SeedContext::new(12, "add"));
    let ctx = SeedContext::new(12, "mix");
    let scores: Vec<f64> = [0.0, 10.0, 20.0]
        .iter()
        .map(|&snr| {
            let (y, _) = apply_additive(&x, &bank, &ctx, snr, Some("pink.wav")).unwrap();
            stoi(&x, &y).unwrap().value()
        })
        .collect();
    assert!(scores[0] < scores[1] && scores[1] < scores[2], "{scores:?}");
}

#[test]
fn chain_length_frequencies_are_uniform() {
    let policy = ChainPolicy::default();
    let mut counts = [0usize; 3];
    let n = 10_000;
    for i in 0..n {
        let c = build_chain(&SeedContext::new(i, "freq"), &policy).unwrap();
        counts[c.specs.len() - 1] += 1;
    }
    for c in counts {
        let f = c as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
    }
}

fn write_clean_dir(dir: &Path, n: usize) {
    for i in 0..n {
        let clip = synth_speech(2.0 + 0.5 * i as f64, &SeedContext::new(20, format!("c{i}")));
        write_wav(dir.join(format!("utt{i}.wav")), &clip).unwrap();
    }
}

fn job<'a>(clean: &Path, out: &Path, policy: ChainPolicy, res: Resources<'a>) -> CorpusJob<'a> {
    CorpusJob {
        clean_dir: clean.to_path_buf(),
        out_dir: out.to_path_buf(),
        policy,
        master_seed: 42,
        resources: res,
        screen: None,
        variants: 1,
        jobs: 2,
        config_hash: Some("test".into()),
    }
}

#[test]
fn corpus_single_degradation_schema_and_determinism() {
    let root = tempfile::tempdir().unwrap();
    let clean = root.path().join("clean");
    std::fs::create_dir(&clean).unwrap();
    write_clean_dir(&clean, 3);
    let bank = noise_bank();
    let res = Resources {
        noise: Some(&bank),
        ..Resources::default()
    };
    let mut policy = ChainPolicy::default();
    policy.enabled.retain(|k| *k != DegradationKind::Reverb);
    policy.count_weights = [1.0, 0.0, 0.0];

    let out1 = root.path().join("o1");
    let out2 = root.path().join("o2");
    let s1 = synthesize_corpus(&job(&clean, &out1, policy.clone(), res)).unwrap();
    assert_eq!((s1.records, s1.errors), (3, 0));
    let recs = read_manifest(&s1.manifest).unwrap();
    assert_eq!(recs.len(), 3);
    for r in &recs {
        let s = r.stoi.unwrap();
        assert!((0.0..=1.0).contains(&s));
        let chain = r.chain.as_ref().unwrap();
        assert_eq!(chain.specs.len(), 1);
        let json = serde_json::to_string(chain).unwrap();
        assert_eq!(&serde_json::from_str::<DegradationChain>(&json).unwrap(), chain);
    }
    let paths: Vec<&str> = recs.iter().map(|r| r.clean.as_str()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);

    // same inputs, different output dir: manifests differ only in the noisy paths
    let s2 = synthesize_corpus(&job(&clean, &out2, policy, res)).unwrap();
    let m1 = std::fs::read_to_string(&s1.manifest).unwrap();
    let m2 = std::fs::read_to_string(&s2.manifest).unwrap();
    assert_eq!(
        m1.replace(out1.to_str().unwrap(), ""),
        m2.replace(out2.to_str().unwrap(), "")
    );
}

#[test]
fn corpus_rerun_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let clean = root.path().join("clean");
    std::fs::create_dir(&clean).unwrap();
    write_clean_dir(&clean, 2);
    let bank = noise_bank();
    let res = Resources {
        noise: Some(&bank),
        ..Resources::default()
    };
    let mut policy = ChainPolicy::default();
    policy.enabled.retain(|k| *k != DegradationKind::Reverb);
    let out = root.path().join("out");
    let m = |jobs| {
        let mut j = job(&clean, &out, policy.clone(), res);
        j.jobs = jobs;
        j.variants = 2;
        let s = synthesize_corpus(&j).unwrap();
        std::fs::read(s.manifest).unwrap()
    };
    assert_eq!(m(1), m(3));
}

#[test]
fn corpus_wav_transcode_only_is_perfect() {
    let root = tempfile::tempdir().unwrap();
    let clean = root.path().join("clean");
    std::fs::create_dir(&clean).unwrap();
    write_clean_dir(&clean, 2);
    let mut policy = ChainPolicy::fixed(&[DegradationKind::Transcode]);
    policy.codecs = vec![Codec::Wav];
    let s = synthesize_corpus(&job(&clean, &root.path().join("o"), policy, Resources::default())).unwrap();
    for r in read_manifest(&s.manifest).unwrap() {
        assert!((r.stoi.unwrap() - 1.0).abs() <= 1e-6, "{r:?}");
    }
}

#[test]
fn corpus_records_per_file_errors() {
    let root = tempfile::tempdir().unwrap();
    let clean = root.path().join("clean");
    std::fs::create_dir(&clean).unwrap();
    write_clean_dir(&clean, 2);
    std::fs::write(clean.join("broken.wav"), b"not a wav").unwrap();
    let policy = ChainPolicy::fixed(&[DegradationKind::Clipping]);
    let s = synthesize_corpus(&job(&clean, &root.path().join("o"), policy, Resources::default())).unwrap();
    assert_eq!((s.records, s.errors), (2, 1));
    let recs = read_manifest(&s.manifest).unwrap();
    assert!(recs[0].clean.ends_with("broken.wav") && recs[0].error.is_some());

    // every file failing is a hard error
    let policy = ChainPolicy::fixed(&[DegradationKind::Reverb]);
    assert!(synthesize_corpus(&job(&clean, &root.path().join("p"), policy, Resources::default())).is_err());
}

fn nested_policy() -> ChainPolicy {
    let mut p = ChainPolicy::default();
    p.enabled.retain(|k| *k != DegradationKind::Reverb);
    p.count_weights = [0.0, 0.0, 1.0];
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_chains_are_valid_and_round_trip(seed in any::<u64>(), key in "[a-z]{1,8}") {
        let ctx = SeedContext::new(seed, key);
        let c = build_chain(&ctx, &ChainPolicy::default()).unwrap();
        prop_assert!(c.validate().is_ok());
        prop_assert_eq!(&build_chain(&ctx, &ChainPolicy::default()).unwrap(), &c);
        let json = serde_json::to_string(&c).unwrap();
        prop_assert_eq!(serde_json::from_str::<DegradationChain>(&json).unwrap(), c);
    }

    #[test]
    fn forced_snr_is_reproduced(snr in -10.0f64..30.0, seed in 0u64..1000) {
        let bank = noise_bank();
        let x = synth_speech(1.0, &SeedContext::new(seed, "p"));
        let (y, _) = apply_additive(&x, &bank, &SeedContext::new(seed, "n"), snr, None).unwrap();
        let m = reference_snr(&x, &y).unwrap().value_db;
        prop_assert!((m - snr).abs() <= 1e-6);
    }

    #[test]
    fn sub_chains_degrade_no_less(seed in 0u64..10_000, drop in 0usize..3) {
        let bank = noise_bank();
        let res = Resources { noise: Some(&bank), ..Resources::default() };
        let x = synth_speech(2.5, &SeedContext::new(seed, "nest"));
        let full = build_chain(&SeedContext::new(seed, "chain"), &nested_policy()).unwrap();
        let mut sub = full.clone();
        sub.specs.remove(drop);
        let (yf, _) = apply_chain(&x, &full, &res).unwrap();
        let (ys, _) = apply_chain(&x, &sub, &res).unwrap();
        // pairs too degraded to align carry no label to compare
        let (lf, ls) = (label_pair(&x, &yf), label_pair(&x, &ys));
        prop_assume!(lf.is_ok() && ls.is_ok());
        let (sf, ss) = (lf.unwrap().stoi, ls.unwrap().stoi);
        prop_assert!(sf <= ss + 0.05, "full {} vs sub {} for {:?}", sf, ss, full.kinds());
    }
}
