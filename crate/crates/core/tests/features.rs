use botstoi::audio::{AudioClip, SeedContext};
use botstoi::features::{
    decode_features, denormalize_features, encode_features, extract_ps1, ingest_ssl, normalize_features,
    write_features, FeatureKind, FeatureTensor, NormStats,
};
use botstoi::synth::synth_speech;
use botstoi::Error;
use proptest::prelude::*;

#[test]
fn extraction_is_byte_deterministic() {
    let clip = synth_speech(1.0, &SeedContext::new(1, "feat"));
    let a = encode_features(&extract_ps1(&clip).unwrap());
    let b = encode_features(&extract_ps1(&clip).unwrap());
    assert_eq!(a, b);
}

#[test]
fn ingest_accepts_matching_ssl_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = FeatureTensor::new(FeatureKind::W2v2, 100, vec![0.25; 100 * 768]).unwrap();
    let p = dir.path().join("a.feat");
    write_features(&p, &t).unwrap();
    assert_eq!(ingest_ssl(&p, FeatureKind::W2v2).unwrap(), t);
    assert!(matches!(ingest_ssl(&p, FeatureKind::Hubert), Err(Error::Schema(_))));
    std::fs::write(&p, b"RIFF0000WAVE").unwrap();
    assert!(matches!(ingest_ssl(&p, FeatureKind::W2v2), Err(Error::Format(_))));
}

fn tensor() -> impl Strategy<Value = FeatureTensor> {
    (prop::sample::select(FeatureKind::ALL.to_vec()), 1usize..6).prop_flat_map(|(k, f)| {
        prop::collection::vec(-1e6f32..1e6, f * k.dims()).prop_map(move |d| FeatureTensor::new(k, f, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn frame_count_matches_formula(len in 512usize..20_000) {
        let t = extract_ps1(&AudioClip::zeros(len, 16_000)).unwrap();
        prop_assert_eq!(t.frames(), (len - 512) / 256 + 1);
        prop_assert_eq!(t.dims(), 257);
    }

    #[test]
    fn files_round_trip_bit_exactly(t in tensor()) {
        let bytes = encode_features(&t);
        prop_assert_eq!(bytes.len(), 16 + 4 * t.frames() * t.dims());
        let back = decode_features(&bytes, Some(t.kind())).unwrap();
        let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same && back.frames() == t.frames());
    }

    #[test]
    fn normalization_inverts(t in tensor()) {
        let stats = NormStats::fit([&t]).unwrap();
        let z = normalize_features(&t, &stats).unwrap();
        let back = denormalize_features(&z, &stats).unwrap();
        // f32 storage: the error is measured against the tensor's magnitude
        let scale = t.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * scale, "{} vs {}", a, b);
        }
    }
}
