//! Cross-validated evaluation reports: per-fold metrics, mean and
//! population standard deviation over folds, SNR and noise-count strata, and
//! scatter export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics;
use crate::error::{Error, Result};

/// Labels of the six SNR bins, left-closed: `[lo, hi)`.
pub const SNR_BIN_LABELS: [&str; 6] = ["<0", "0-5", "5-10", "10-15", "15-20", ">=20"];
pub const SNR_BIN_EDGES: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];

/// Bin index of an SNR under the left-closed rule.
pub fn snr_bin(snr_db: f64) -> usize {
    SNR_BIN_EDGES.iter().take_while(|&&e| snr_db >= e).count()
}

/// One held-out prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub noisy: String,
    pub clean: String,
    pub fold: usize,
    pub truth: f64,
    pub predicted: f64,
    pub snr_db: f64,
    pub noise_count: usize,
}

/// A metric value, or the reason it is undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    pub excluded: Option<String>,
}

impl Metric {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(v) => Self {
                value: Some(v),
                excluded: None,
            },
            Err(e) => Self {
                value: None,
                excluded: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub lcc: Metric,
    pub srcc: Metric,
    pub mse: Metric,
}

impl MetricSet {
    pub fn compute(preds: &[&Prediction]) -> Self {
        let t: Vec<f64> = preds.iter().map(|p| p.truth).collect();
        let p: Vec<f64> = preds.iter().map(|p| p.predicted).collect();
        let guard = |f: fn(&[f64], &[f64]) -> Result<f64>| {
            if t.is_empty() {
                Metric {
                    value: None,
                    excluded: Some("no utterances in this group".into()),
                }
            } else {
                Metric::from(f(&t, &p))
            }
        };
        Self {
            n: t.len(),
            lcc: guard(metrics::lcc),
            srcc: guard(metrics::srcc),
            mse: guard(metrics::mse),
        }
    }
}

/// Mean and population standard deviation of the defined per-fold values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub per_fold: Vec<Option<f64>>,
}

impl FoldSummary {
    pub fn from_folds(per_fold: Vec<Option<f64>>) -> Self {
        let vals: Vec<f64> = per_fold.iter().flatten().copied().collect();
        if vals.is_empty() {
            return Self {
                mean: None,
                std: None,
                per_fold,
            };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean: Some(mean),
            std: Some(std),
            per_fold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    pub metrics: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<MetricSet>,
    pub lcc: FoldSummary,
    pub srcc: FoldSummary,
    pub mse: FoldSummary,
    /// How the ± values were computed.
    pub spread: String,
    pub snr_strata: Vec<Stratum>,
    pub noise_strata: Vec<Stratum>,
    pub predictions: Vec<Prediction>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

pub fn stratify_snr(preds: &[Prediction]) -> Vec<Stratum> {
    (0..SNR_BIN_LABELS.len())
        .map(|b| {
            let sel: Vec<&Prediction> = preds.iter().filter(|p| snr_bin(p.snr_db) == b).collect();
            Stratum {
                label: SNR_BIN_LABELS[b].to_string(),
                metrics: MetricSet::compute(&sel),
            }
        })
        .collect()
}

/// One row per chain length present.
pub fn stratify_noise_count(preds: &[Prediction]) -> Vec<Stratum> {
    let mut by: BTreeMap<usize, Vec<&Prediction>> = BTreeMap::new();
    for p in preds {
        by.entry(p.noise_count).or_default().push(p);
    }
    by.into_iter()
        .map(|(k, sel)| Stratum {
            label: k.to_string(),
            metrics: MetricSet::compute(&sel),
        })
        .collect()
}

pub fn evaluate(preds: Vec<Prediction>, seed: Option<u64>, config_hash: Option<String>) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::Argument("no predictions to evaluate".into()));
    }
    let k = preds.iter().map(|p| p.fold).max().unwrap_or(0) + 1;
    let folds: Vec<MetricSet> = (0..k)
        .map(|f| MetricSet::compute(&preds.iter().filter(|p| p.fold == f).collect::<Vec<_>>()))
        .collect();
    let summary =
        |get: fn(&MetricSet) -> &Metric| FoldSummary::from_folds(folds.iter().map(|m| get(m).value).collect());
    Ok(EvalReport {
        lcc: summary(|m| &m.lcc),
        srcc: summary(|m| &m.srcc),
        mse: summary(|m| &m.mse),
        folds,
        spread: "population standard deviation over folds".into(),
        snr_strata: stratify_snr(&preds),
        noise_strata: stratify_noise_count(&preds),
        predictions: preds,
        seed,
        config_hash,
    })
}

/// `(bin, true, predicted)` rows, tab-separated with a header, grouped by
/// SNR bin.
pub fn export_scatter(report: &EvalReport) -> String {
    let mut out = String::from("bin\ttrue\tpredicted\n");
    for (b, label) in SNR_BIN_LABELS.iter().enumerate() {
        for p in report.predictions.iter().filter(|p| snr_bin(p.snr_db) == b) {
            let _ = writeln!(out, "{label}\t{:?}\t{:?}", p.truth, p.predicted);
        }
    }
    out
}

pub fn parse_scatter(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some("bin\ttrue\tpredicted") {
        return Err(Error::Format("scatter file lacks its header".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::Format(format!("scatter line {}: `{l}`", i + 2));
            let mut it = l.split('\t');
            let (b, t, p) = (
                it.next().ok_or_else(bad)?,
                it.next().ok_or_else(bad)?,
                it.next().ok_or_else(bad)?,
            );
            if it.next().is_some() {
                return Err(bad());
            }
            Ok((
                b.to_string(),
                t.parse().map_err(|_| bad())?,
                p.parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn cell(m: &Metric, scale: f64) -> String {
    match m.value {
        Some(v) => format!("{:.2}", v * scale),
        None => "n/a".into(),
    }
}

fn pm(s: &FoldSummary, scale: f64, digits: usize) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{:.*} ± {:.*}", digits, m * scale, digits, d * scale),
        _ => "n/a".into(),
    }
}

fn strata_table(out: &mut String, title: &str, rows: &[Stratum]) {
    let _ = writeln!(
        out,
        "\n{title}\n{:<8} {:>6} {:>8} {:>8} {:>10}",
        "group", "n", "LCC", "SRCC", "MSE"
    );
    for s in rows {
        let m = &s.metrics;
        let mse = m.mse.value.map_or("n/a".into(), |v| format!("{v:.5}"));
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>8} {:>10}",
            s.label,
            m.n,
            cell(&m.lcc, 100.0),
            cell(&m.srcc, 100.0),
            mse
        );
    }
}

/// Aligned-column text rendering; correlations are shown x100.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Cross-validated results (± is the {})", report.spread);
    let _ = writeln!(out, "{:<6} {:>16} {:>16} {:>18}", "", "LCC", "SRCC", "MSE");
    let _ = writeln!(
        out,
        "{:<6} {:>16} {:>16} {:>18}",
        "all",
        pm(&report.lcc, 100.0, 2),
        pm(&report.srcc, 100.0, 2),
        pm(&report.mse, 1.0, 5)
    );
    let _ = writeln!(
        out,
        "\nPer fold\n{:<6} {:>6} {:>8} {:>8} {:>10}",
        "fold", "n", "LCC", "SRCC", "MSE"
    );
    for (f, m) in report.folds.iter().enumerate() {
        let mse = m.mse.value.map_or("n/a".into(), |v| format!("{v:.5}"));
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>8} {:>8} {:>10}",
            f,
            m.n,
            cell(&m.lcc, 100.0),
            cell(&m.srcc, 100.0),
            mse
        );
    }
    strata_table(&mut out, "By SNR bin (dB, left-closed)", &report.snr_strata);
    strata_table(&mut out, "By number of degradations", &report.noise_strata);
    let excluded: Vec<String> = report
        .snr_strata
        .iter()
        .chain(&report.noise_strata)
        .flat_map(|s| {
            [
                ("LCC", &s.metrics.lcc),
                ("SRCC", &s.metrics.srcc),
                ("MSE", &s.metrics.mse),
            ]
            .into_iter()
            .filter_map(move |(n, m)| m.excluded.as_ref().map(|r| format!("{} {n}: {r}", s.label)))
        })
        .collect();
    if !excluded.is_empty() {
        let _ = writeln!(out, "\nExcluded metrics\n{}", excluded.join("\n"));
    }
    if let Some(h) = &report.config_hash {
        let _ = writeln!(
            out,
            "\nconfig {h}, seed {}",
            report.seed.map_or("-".into(), |s| s.to_string())
        );
    }
    out
}
