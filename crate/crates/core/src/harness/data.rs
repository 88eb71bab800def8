use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corruption::ManifestRecord;
use crate::error::{Error, Result};
use crate::features::{read_features, FeatureKind, FeatureTensor};

/// A labelled utterance with its model input.
#[derive(Clone, Debug)]
pub struct Example {
    /// Index of the record in its manifest.
    pub record: usize,
    pub clean: String,
    pub noisy: String,
    pub stoi: f64,
    pub snr_db: f64,
    /// Number of degradations in the chain that produced the utterance.
    pub noise_count: usize,
    pub features: FeatureTensor,
}

/// Feature file name for a degraded WAV path: separators flattened, `.bsft`
/// extension.
pub fn feature_file_name(noisy: &str) -> String {
    let stem = noisy.strip_suffix(".wav").unwrap_or(noisy);
    format!("{}.bsft", stem.replace(['/', '\\'], "__"))
}

pub fn feature_path(features_dir: &Path, noisy: &str) -> PathBuf {
    features_dir.join(feature_file_name(noisy))
}

/// Labelled fields of a record, or a schema error naming what is missing.
pub fn labelled_fields(r: &ManifestRecord) -> Result<(&str, f64, f64, usize)> {
    let missing = |f: &str| Error::Schema(format!("record for {} has no {f}", r.clean));
    Ok((
        r.noisy.as_deref().ok_or_else(|| missing("noisy path"))?,
        r.stoi.ok_or_else(|| missing("stoi"))?,
        r.snr_db.ok_or_else(|| missing("snr_db"))?,
        r.chain.as_ref().map_or(0, |c| c.specs.len()),
    ))
}

/// Join labelled records with feature tensors produced by `lookup`.
pub fn examples_from(
    records: &[ManifestRecord],
    mut lookup: impl FnMut(usize, &str) -> Result<FeatureTensor>,
) -> Result<BTreeMap<usize, Example>> {
    let mut out = BTreeMap::new();
    for (i, r) in records.iter().enumerate().filter(|(_, r)| !r.is_error()) {
        let (noisy, stoi, snr_db, noise_count) = labelled_fields(r)?;
        let features = lookup(i, noisy)?;
        out.insert(
            i,
            Example {
                record: i,
                clean: r.clean.clone(),
                noisy: noisy.to_string(),
                stoi,
                snr_db,
                noise_count,
                features,
            },
        );
    }
    Ok(out)
}

/// Load the feature file of every labelled record from `features_dir`.
pub fn load_examples(
    records: &[ManifestRecord],
    features_dir: &Path,
    kind: FeatureKind,
) -> Result<BTreeMap<usize, Example>> {
    examples_from(records, |_, noisy| {
        read_features(feature_path(features_dir, noisy), Some(kind))
    })
}
