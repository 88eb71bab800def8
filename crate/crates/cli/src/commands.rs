use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use botstoi::audio::{load_wav, write_wav, SeedContext};
use botstoi::corruption::{
    label_pair, list_wavs, read_manifest, synthesize_corpus, write_manifest, AdditiveMode, ClipBank, CorpusJob,
    DegradationKind, ManifestRecord, Resources, TelephonePath, Transcoder,
};
use botstoi::features::{extract_ps1, pseudo_ssl, read_features, write_features, FeatureKind, FeatureTensor};
use botstoi::harness::{
    cross_validate, evaluate as evaluate_predictions, export_scatter, feature_path, load_examples, make_folds,
    predict_all, render_text, EvalReport, Example, FoldPlan, Prediction,
};
use botstoi::model::{read_checkpoint, write_checkpoint, ModelConfig, TrainingMeta};
use botstoi::stoi::screen_clean;
use botstoi::synth::{synth_noise, synth_rir, synth_speech, NoiseColor};
use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Provenance, RunConfig};
use crate::{
    CorruptArgs, EvaluateArgs, FeaturesArgs, LabelArgs, PredictArgs, ReportArgs, ReportFormat, ScreenArgs, SynthArgs,
    TrainArgs, Usage,
};

fn required(flag: &str, cli: Option<PathBuf>, cfg: &Option<PathBuf>) -> Result<PathBuf> {
    cli.or_else(|| cfg.clone())
        .ok_or_else(|| Usage(format!("--{flag} is required (or set paths.{flag} in the config)")).into())
}

fn parse_kind(s: &str) -> Result<FeatureKind> {
    s.parse::<FeatureKind>().map_err(|e| Usage(e.to_string()).into())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building thread pool")
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn synth(config: &RunConfig, a: SynthArgs) -> Result<()> {
    if !(a.minutes > 0.0) {
        return Err(Usage("--minutes must be positive".into()).into());
    }
    let seed = config.seed;
    let clean = a.out.join("clean");
    mkdir(&clean)?;
    let mut rng = SeedContext::new(seed, "synth/durations").stream();
    let (mut total, mut n) = (0.0, 0usize);
    while total < a.minutes * 60.0 {
        let secs = rng.random_range(3.0..5.0);
        let clip = synth_speech(secs, &SeedContext::new(seed, format!("clean{n}")));
        write_wav(clean.join(format!("spk{:02}_{n:04}.wav", n % 37)), &clip)?;
        total += secs;
        n += 1;
    }
    for c in NoiseColor::ALL {
        let dir = a.out.join("noise").join(c.name());
        mkdir(&dir)?;
        write_wav(
            dir.join(format!("{}.wav", c.name())),
            &synth_noise(c, 160_000, &SeedContext::new(seed, c.name())),
        )?;
    }
    let rirs = a.out.join("rirs");
    mkdir(&rirs)?;
    for i in 0..a.rirs {
        let t60 = 0.2 + 0.6 * i as f64 / a.rirs.max(2).saturating_sub(1) as f64;
        let id = format!("rir{i}.wav");
        write_wav(
            rirs.join(&id),
            &synth_rir(t60, 6.0 - 8.0 * t60, &SeedContext::new(seed, &id)),
        )?;
    }
    println!(
        "{n} clean files ({:.1} min), {} noise colours, {} RIRs under {}",
        total / 60.0,
        NoiseColor::ALL.len(),
        a.rirs,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ScreenLine {
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    longterm_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wada_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn screen(mut config: RunConfig, a: ScreenArgs) -> Result<()> {
    let clean = required("clean", a.clean, &config.paths.clean)?;
    if let Some(v) = a.longterm_db {
        config.screen.thresholds.longterm_db = v;
    }
    if let Some(v) = a.wada_db {
        config.screen.thresholds.wada_db = v;
    }
    let t = config.screen.thresholds;
    let files = list_wavs(&clean)?;
    let lines: Vec<ScreenLine> = pool(config.jobs)?.install(|| {
        files
            .par_iter()
            .map(|p| {
                let file = p.to_string_lossy().into_owned();
                match load_wav(p).and_then(|c| screen_clean(&c, &t)) {
                    Ok(r) => ScreenLine {
                        file,
                        longterm_db: Some(r.longterm_db),
                        wada_db: Some(r.wada_db),
                        passed: Some(r.passed),
                        error: None,
                    },
                    Err(e) => ScreenLine {
                        file,
                        longterm_db: None,
                        wada_db: None,
                        passed: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    for l in &lines {
        serde_json::to_writer(&mut out, l)?;
        writeln!(out)?;
    }
    let passed = lines.iter().filter(|l| l.passed == Some(true)).count();
    let errors = lines.iter().filter(|l| l.error.is_some()).count();
    info!(
        "{passed} of {} files pass (LT-SNR > {} dB, WADA > {} dB), {errors} unreadable",
        lines.len(),
        t.longterm_db,
        t.wada_db
    );
    Ok(())
}

fn parse_degradation(s: &str) -> Result<DegradationKind> {
    DegradationKind::ALL
        .into_iter()
        .find(|k| k.name() == s.trim())
        .ok_or_else(|| {
            let names: Vec<_> = DegradationKind::ALL.iter().map(|k| k.name()).collect();
            Usage(format!(
                "unknown degradation kind {s:?}; expected one of {}",
                names.join(", ")
            ))
            .into()
        })
}

fn load_bank(what: &str, dir: &Path) -> Result<ClipBank> {
    let bank = ClipBank::load(dir).with_context(|| format!("loading {what} bank {}", dir.display()))?;
    if bank.is_empty() {
        bail!("{what} bank {} contains no .wav files", dir.display());
    }
    Ok(bank)
}

pub fn corrupt(mut config: RunConfig, a: CorruptArgs) -> Result<()> {
    let clean = required("clean", a.clean, &config.paths.clean)?;
    let out = required("out", a.out, &config.paths.out)?;
    let noise = a.noise.or_else(|| config.paths.noise.clone());
    let rirs = a.rirs.or_else(|| config.paths.rirs.clone());
    if let Some(kinds) = &a.kinds {
        config.policy.enabled = kinds.iter().map(|k| parse_degradation(k)).collect::<Result<_>>()?;
        // chains cannot be longer than the number of kinds given
        config
            .policy
            .count_weights
            .iter_mut()
            .skip(kinds.len())
            .for_each(|w| *w = 0.0);
    }
    if a.additive_always {
        config.policy.additive_mode = AdditiveMode::Always;
    }
    if a.forced_snr.is_some() {
        config.policy.forced_snr_db = a.forced_snr;
    }
    if let Some(v) = a.variants {
        config.variants = v;
    }
    config.screen.enabled |= a.screen;
    config.paths.clean = Some(clean.clone());
    config.paths.out = Some(out.clone());
    config.paths.noise = noise.clone();
    config.paths.rirs = rirs.clone();
    config.policy.validate().map_err(|e| Usage(e.to_string()))?;
    if config.variants == 0 {
        return Err(Usage("variants must be at least 1".into()).into());
    }

    let enabled = |k| config.policy.enabled.contains(&k);
    let noise_bank = match (&noise, enabled(DegradationKind::Additive)) {
        (Some(d), true) => Some(load_bank("noise", d)?),
        (None, true) => bail!(
            "additive noise is enabled but no noise bank was given; pass --noise DIR or leave additive out of --kinds"
        ),
        _ => None,
    };
    let rir_bank = match (&rirs, enabled(DegradationKind::Reverb)) {
        (Some(d), true) => Some(load_bank("RIR", d)?),
        (None, true) => {
            bail!("reverb is enabled but no RIR bank was given; pass --rirs DIR or leave reverb out of --kinds")
        }
        _ => None,
    };
    let transcoder = Transcoder::from_env(config.jobs)?;
    let needs_tool = (enabled(DegradationKind::Transcode) && config.policy.codecs.iter().any(|c| !c.is_lossless()))
        || (enabled(DegradationKind::Telephone) && config.policy.telephone == TelephonePath::External);
    if needs_tool && transcoder.is_none() {
        return Err(botstoi::Error::Transcoder(
            "lossy codecs or the external telephone path need BOTSTOI_TRANSCODER to be set".into(),
        )
        .into());
    }

    let hash = config.hash()?;
    mkdir(&out)?;
    let job = CorpusJob {
        clean_dir: clean,
        out_dir: out.clone(),
        policy: config.policy.clone(),
        master_seed: config.seed,
        resources: Resources {
            noise: noise_bank.as_ref(),
            rirs: rir_bank.as_ref(),
            transcoder: transcoder.as_ref(),
        },
        screen: config.screen.enabled.then_some(config.screen.thresholds),
        variants: config.variants,
        jobs: config.jobs,
        config_hash: Some(hash.clone()),
    };
    let summary = synthesize_corpus(&job)?;
    Provenance::new("corrupt", &config)?.write(&out.join("provenance.json"))?;
    println!(
        "{} labelled, {} errors, {} screened out; manifest {} (config {hash}, seed {})",
        summary.records,
        summary.errors,
        summary.screened_out,
        summary.manifest.display(),
        config.seed
    );
    Ok(())
}

fn label_line(line: &str) -> Result<ManifestRecord> {
    let (clean, degraded) = line
        .split_once('\t')
        .ok_or_else(|| anyhow!("expected `clean<TAB>degraded`, got {line:?}"))?;
    let (clean, degraded) = (clean.trim(), degraded.trim());
    let result = load_wav(clean).and_then(|c| load_wav(degraded).and_then(|d| label_pair(&c, &d)));
    Ok(match result {
        Ok(p) => ManifestRecord {
            clean: clean.into(),
            noisy: Some(degraded.into()),
            stoi: Some(p.stoi),
            snr_db: Some(p.snr_db),
            chain: None,
            duration_s: Some(p.noisy.duration_s()),
            error: None,
        },
        Err(e) => ManifestRecord {
            clean: clean.into(),
            noisy: None,
            stoi: None,
            snr_db: None,
            chain: None,
            duration_s: None,
            error: Some(format!("{degraded}: {e}")),
        },
    })
}

pub fn label(config: &RunConfig, a: LabelArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .collect();
    let records: Vec<ManifestRecord> =
        pool(config.jobs)?.install(|| lines.par_iter().map(|l| label_line(l)).collect::<Result<_>>())?;
    write_manifest(&a.out, &records)?;
    let errors = records.iter().filter(|r| r.is_error()).count();
    println!(
        "{} labelled, {errors} errors; manifest {}",
        records.len() - errors,
        a.out.display()
    );
    Ok(())
}

/// Model input of the given kind for one clean-or-degraded WAV.
fn wav_features(path: &Path, kind: FeatureKind, seed: u64) -> botstoi::Result<FeatureTensor> {
    let ps = extract_ps1(&load_wav(path)?)?;
    match kind {
        FeatureKind::Ps1 => Ok(ps),
        k if k.is_spectral() => ps.retag(k),
        k => pseudo_ssl(&ps, k, seed),
    }
}

fn labelled(records: &[ManifestRecord]) -> Vec<&ManifestRecord> {
    records.iter().filter(|r| !r.is_error() && r.noisy.is_some()).collect()
}

pub fn features(mut config: RunConfig, a: FeaturesArgs) -> Result<()> {
    let manifest = required("manifest", a.manifest, &config.paths.manifest)?;
    let out = required("features", a.out, &config.paths.features)?;
    if let Some(k) = &a.kind {
        config.feature_kind = parse_kind(k)?;
    }
    let kind = config.feature_kind;
    let records = read_manifest(&manifest)?;
    let todo = labelled(&records);
    mkdir(&out)?;
    let failures: Vec<String> = pool(config.jobs)?.install(|| {
        todo.par_iter()
            .filter_map(|r| {
                let noisy = r.noisy.as_deref().expect("labelled");
                wav_features(Path::new(noisy), kind, config.seed)
                    .and_then(|t| write_features(feature_path(&out, noisy), &t))
                    .err()
                    .map(|e| format!("{noisy}: {e}"))
            })
            .collect()
    });
    config.paths.manifest = Some(manifest);
    config.paths.features = Some(out.clone());
    Provenance::new("features", &config)?.write(&out.join("provenance.json"))?;
    for f in &failures {
        warn!("{f}");
    }
    if !failures.is_empty() {
        bail!(
            "{} of {} feature files failed; first: {}",
            failures.len(),
            todo.len(),
            failures[0]
        );
    }
    println!("{} {kind} feature files in {}", todo.len(), out.display());
    Ok(())
}

/// Per-fold training curves written by `train`.
#[derive(Debug, Serialize, Deserialize)]
struct FoldCurve {
    fold: usize,
    best_epoch: usize,
    best_val_mse: f64,
    final_val_mse: f64,
    train_loss: Vec<f64>,
    val_mse: Vec<f64>,
}

fn checkpoint_path(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold{fold}.bsck"))
}

fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut buf = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn examples_for(records: &[ManifestRecord], features: &Path, kind: FeatureKind) -> Result<BTreeMap<usize, Example>> {
    if labelled(records).is_empty() {
        bail!("manifest has no labelled records");
    }
    load_examples(records, features, kind)
        .with_context(|| format!("loading {kind} features from {}", features.display()))
}

pub fn train(mut config: RunConfig, a: TrainArgs) -> Result<()> {
    let manifest = required("manifest", a.manifest, &config.paths.manifest)?;
    let features = required("features", a.features, &config.paths.features)?;
    let out = required("out", a.out, &config.paths.out)?;
    if let Some(k) = &a.kind {
        config.feature_kind = parse_kind(k)?;
    }
    if let Some(k) = a.folds {
        config.folds = k;
    }
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        config.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        config.train.adam.lr = lr;
    }
    config.train.validate().map_err(|e| Usage(e.to_string()))?;
    if config.folds < 3 {
        return Err(Usage(format!("--folds must be at least 3, got {}", config.folds)).into());
    }
    config.paths.manifest = Some(manifest.clone());
    config.paths.features = Some(features.clone());
    config.paths.out = Some(out.clone());

    let records = read_manifest(&manifest)?;
    let examples = examples_for(&records, &features, config.feature_kind)?;
    let plan = make_folds(&records, config.folds, config.seed)?;
    let model_config = ModelConfig::for_kind(config.feature_kind).with_seed(config.seed);
    let hash = config.hash()?;
    info!(
        "{} examples, {} folds, {} epochs, config {hash}",
        examples.len(),
        plan.k,
        config.train.epochs
    );

    let results = cross_validate(&examples, &plan, &model_config, &config.train, config.seed, config.jobs)?;
    mkdir(&out)?;
    let mut curves = Vec::new();
    let mut predictions = Vec::new();
    for r in results {
        let o = &r.outcome;
        let meta = TrainingMeta {
            epoch: Some(o.best_epoch),
            fold: Some(r.fold),
            seed: config.seed,
            config_hash: Some(hash.clone()),
            val_mse: Some(o.best_val_mse),
        };
        write_checkpoint(checkpoint_path(&out, r.fold), &o.model, &meta)?;
        println!(
            "fold {}: best epoch {} val MSE {:.6}, final val MSE {:.6}",
            r.fold,
            o.best_epoch,
            o.best_val_mse,
            o.final_val_mse()
        );
        curves.push(FoldCurve {
            fold: r.fold,
            best_epoch: o.best_epoch,
            best_val_mse: o.best_val_mse,
            final_val_mse: o.final_val_mse(),
            train_loss: o.train_loss.clone(),
            val_mse: o.val_mse.clone(),
        });
        predictions.extend(r.predictions);
    }
    write_json(&out.join("plan.json"), &plan)?;
    write_json(&out.join("curves.json"), &curves)?;
    write_predictions(&out.join("predictions.jsonl"), &predictions)?;
    Provenance::new("train", &config)?.write(&out.join("provenance.json"))?;
    println!("checkpoints in {} (config {hash}, seed {})", out.display(), config.seed);
    Ok(())
}

pub fn predict(config: &RunConfig, a: PredictArgs) -> Result<()> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let kind = ck.model.config().feature_kind;
    let mut out = std::io::stdout().lock();
    for p in &a.inputs {
        let is_wav = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        let feats = if is_wav {
            wav_features(p, kind, config.seed)
        } else {
            read_features(p, Some(kind))
        };
        let score = feats
            .and_then(|f| ck.model.predict(&f))
            .with_context(|| format!("scoring {}", p.display()))?;
        writeln!(out, "{}\t{score:.6}", p.display())?;
    }
    Ok(())
}

pub fn evaluate(config: RunConfig, a: EvaluateArgs) -> Result<()> {
    let prov: Provenance = read_json(&a.run.join("provenance.json"))?;
    let run_cfg = prov.config;
    let manifest = a
        .manifest
        .or(config.paths.manifest)
        .or(run_cfg.paths.manifest.clone())
        .ok_or_else(|| Usage("--manifest is required".into()))?;
    let features = a
        .features
        .or(config.paths.features)
        .or(run_cfg.paths.features.clone())
        .ok_or_else(|| Usage("--features is required".into()))?;
    let out = a.out.unwrap_or_else(|| a.run.clone());

    let records = read_manifest(&manifest)?;
    let plan: FoldPlan = read_json(&a.run.join("plan.json"))?;
    let examples = examples_for(&records, &features, run_cfg.feature_kind)?;
    let mut preds = Vec::new();
    for (fold, ids) in plan.folds.iter().enumerate() {
        let ck = read_checkpoint(checkpoint_path(&a.run, fold))?;
        if ck.meta.config_hash.as_deref() != Some(prov.config_hash.as_str()) {
            warn!("fold {fold} checkpoint was written by a different configuration");
        }
        let test = ids
            .iter()
            .map(|i| {
                examples
                    .get(i)
                    .ok_or_else(|| anyhow!("record {i} of fold {fold} is not labelled in {}", manifest.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = predict_all(&ck.model, &test, run_cfg.train.eval_batch)?;
        preds.extend(test.iter().zip(scores).map(|(e, predicted)| Prediction {
            noisy: e.noisy.clone(),
            clean: e.clean.clone(),
            fold,
            truth: e.stoi,
            predicted,
            snr_db: e.snr_db,
            noise_count: e.noise_count,
        }));
    }
    let report = evaluate_predictions(preds, Some(prov.seed), Some(prov.config_hash))?;
    mkdir(&out)?;
    write_json(&out.join("report.json"), &report)?;
    let text = render_text(&report);
    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("scatter.tsv"), export_scatter(&report))?;
    print!("{text}");
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let report: EvalReport = read_json(&a.report)?;
    match a.format {
        ReportFormat::Text => print!("{}", render_text(&report)),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        ReportFormat::Scatter => print!("{}", export_scatter(&report)),
    }
    Ok(())
}
