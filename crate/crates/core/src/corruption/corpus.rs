use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bank::{list_wavs, relative_id};
use super::{apply_chain, build_chain, ChainPolicy, DegradationChain, Resources};
use crate::audio::{load_wav, quantize_pcm16, write_wav, AudioClip, SeedContext};
use crate::error::{Error, Result};
use crate::stoi::{align_pair, reference_snr, screen_clean, stoi, ScreenThresholds};

/// One line of the corpus manifest. Error records carry `error` and leave
/// the label fields empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub clean: String,
    pub noisy: Option<String>,
    pub stoi: Option<f64>,
    pub snr_db: Option<f64>,
    pub chain: Option<DegradationChain>,
    pub duration_s: Option<f64>,
    pub error: Option<String>,
}

impl ManifestRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.error.is_none() {
            match rec.stoi {
                Some(s) if (0.0..=1.0).contains(&s) => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "{}:{}: record without error needs stoi in [0, 1]",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub clean: AudioClip,
    pub noisy: AudioClip,
    pub stoi: f64,
    pub snr_db: f64,
}

/// Aligns a degraded clip to its clean source and labels the aligned pair.
/// The degraded clip is first rounded to 16-bit PCM so the label matches the
/// audio that gets written.
pub fn label_pair(clean: &AudioClip, degraded: &AudioClip) -> Result<LabeledPair> {
    let degraded = degraded.with_samples(quantize_pcm16(degraded.samples()))?;
    let (c, n) = align_pair(clean, &degraded)?;
    let score = stoi(&c, &n)?.value();
    let snr = reference_snr(&c, &n)?.value_db;
    Ok(LabeledPair {
        clean: c,
        noisy: n,
        stoi: score,
        snr_db: snr,
    })
}

pub struct CorpusJob<'a> {
    pub clean_dir: PathBuf,
    pub out_dir: PathBuf,
    pub policy: ChainPolicy,
    pub master_seed: u64,
    pub resources: Resources<'a>,
    /// Skip clean files failing these thresholds; `None` disables screening.
    pub screen: Option<ScreenThresholds>,
    /// Degraded versions produced per clean file.
    pub variants: usize,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSummary {
    pub manifest: PathBuf,
    pub records: usize,
    pub errors: usize,
    pub screened_out: usize,
}

fn noisy_name(rel: &str, variant: Option<usize>) -> String {
    let stem = rel.strip_suffix(".wav").unwrap_or(rel).replace('/', "__");
    match variant {
        Some(v) => format!("{stem}_v{v}.wav"),
        None => format!("{stem}.wav"),
    }
}

fn error_record(clean: &str, chain: Option<DegradationChain>, dur: Option<f64>, e: &Error) -> ManifestRecord {
    ManifestRecord {
        clean: clean.to_string(),
        noisy: None,
        stoi: None,
        snr_db: None,
        chain,
        duration_s: dur,
        error: Some(e.to_string()),
    }
}

enum Outcome {
    Records(Vec<ManifestRecord>),
    Screened,
}

fn process_file(job: &CorpusJob, noisy_dir: &Path, path: &Path) -> Outcome {
    let rel = relative_id(&job.clean_dir, path);
    let clean_str = path.to_string_lossy().into_owned();
    let clip = match load_wav(path) {
        Ok(c) => c,
        Err(e) => return Outcome::Records(vec![error_record(&clean_str, None, None, &e)]),
    };
    if let Some(t) = &job.screen {
        match screen_clean(&clip, t) {
            Ok(r) if !r.passed => return Outcome::Screened,
            Ok(_) => {}
            Err(e) => return Outcome::Records(vec![error_record(&clean_str, None, Some(clip.duration_s()), &e)]),
        }
    }
    let variants = job.variants.max(1);
    let records = (0..variants)
        .map(|v| {
            let tag = (variants > 1).then_some(v);
            let key = match tag {
                Some(v) => format!("{rel}#{v}"),
                None => rel.clone(),
            };
            let ctx = SeedContext::new(job.master_seed, key).child("chain");
            let mut chain = match build_chain(&ctx, &job.policy) {
                Ok(c) => c,
                Err(e) => return error_record(&clean_str, None, Some(clip.duration_s()), &e),
            };
            chain.config_hash = job.config_hash.clone();
            let result = apply_chain(&clip, &chain, &job.resources).and_then(|(y, resolved)| {
                let pair = label_pair(&clip, &y)?;
                let out = noisy_dir.join(noisy_name(&rel, tag));
                write_wav(&out, &pair.noisy)?;
                Ok((pair, resolved, out))
            });
            match result {
                Ok((pair, resolved, out)) => ManifestRecord {
                    clean: clean_str.clone(),
                    noisy: Some(out.to_string_lossy().into_owned()),
                    stoi: Some(pair.stoi),
                    snr_db: Some(pair.snr_db),
                    chain: Some(resolved),
                    duration_s: Some(pair.noisy.duration_s()),
                    error: None,
                },
                Err(e) => error_record(&clean_str, Some(chain), Some(clip.duration_s()), &e),
            }
        })
        .collect();
    Outcome::Records(records)
}

/// Degrades and labels every clean WAV under `clean_dir`, writing noisy
/// audio to `out_dir/noisy/` and the manifest to `out_dir/manifest.jsonl`.
///
/// Per-file failures become error records. Fails only on setup errors or
/// when no labelled record was produced.
pub fn synthesize_corpus(job: &CorpusJob) -> Result<CorpusSummary> {
    job.policy.validate()?;
    let files = list_wavs(&job.clean_dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .wav files under {}",
            job.clean_dir.display()
        )));
    }
    let noisy_dir = job.out_dir.join("noisy");
    std::fs::create_dir_all(&noisy_dir).map_err(|e| Error::io(&noisy_dir, e))?;

    let run = || -> Vec<Outcome> { files.par_iter().map(|p| process_file(job, &noisy_dir, p)).collect() };
    let outcomes = if job.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(job.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };

    let mut screened_out = 0;
    let mut records = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Records(r) => records.extend(r),
            Outcome::Screened => screened_out += 1,
        }
    }
    records.sort_by(|a, b| (&a.clean, &a.noisy).cmp(&(&b.clean, &b.noisy)));
    let manifest = job.out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    let errors = records.iter().filter(|r| r.is_error()).count();
    if records.len() == errors {
        return Err(Error::Config(format!(
            "no labelled records produced ({errors} errors, {screened_out} screened out)"
        )));
    }
    Ok(CorpusSummary {
        manifest,
        records: records.len() - errors,
        errors,
        screened_out,
    })
}
