//! Training, cross-validation and evaluation of the predictor.

mod data;
mod folds;
pub mod metrics;
mod report;
mod train;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::audio::SeedContext;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub use data::{examples_from, feature_file_name, feature_path, labelled_fields, load_examples, Example};
pub use folds::{make_folds, FoldPlan, FoldRound};
pub use metrics::{lcc, mean_ranks, mse, srcc};
pub use report::{
    evaluate, export_scatter, parse_scatter, render_text, snr_bin, stratify_noise_count, stratify_snr, EvalReport,
    FoldSummary, Metric, MetricSet, Prediction, Stratum, SNR_BIN_EDGES, SNR_BIN_LABELS,
};
pub use train::{predict_all, train_model, TrainConfig, TrainOutcome, Trainer};

/// Trained model and held-out predictions of one cross-validation round.
pub struct FoldResult {
    pub fold: usize,
    pub outcome: TrainOutcome,
    pub predictions: Vec<Prediction>,
}

fn select<'a>(examples: &'a BTreeMap<usize, Example>, ids: &[usize]) -> Result<Vec<&'a Example>> {
    ids.iter()
        .map(|i| {
            examples
                .get(i)
                .ok_or_else(|| Error::Schema(format!("record {i} has no features")))
        })
        .collect()
}

/// Train and test every round of `plan`. Rounds run on `jobs` threads and
/// are independent, so results do not depend on the thread count.
pub fn cross_validate(
    examples: &BTreeMap<usize, Example>,
    plan: &FoldPlan,
    config: &ModelConfig,
    tc: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<FoldResult>> {
    let run = |fold: usize| -> Result<FoldResult> {
        let round = plan.round(fold);
        let (train, val, test) = (
            select(examples, &round.train)?,
            select(examples, &round.val)?,
            select(examples, &round.test)?,
        );
        let ctx = SeedContext::new(seed, format!("fold{fold}"));
        let outcome = train_model(config, &train, &val, tc, &ctx)?;
        let scores = predict_all(&outcome.model, &test, tc.eval_batch)?;
        let predictions = test
            .iter()
            .zip(scores)
            .map(|(e, predicted)| Prediction {
                noisy: e.noisy.clone(),
                clean: e.clean.clone(),
                fold,
                truth: e.stoi,
                predicted,
                snr_db: e.snr_db,
                noise_count: e.noise_count,
            })
            .collect();
        Ok(FoldResult {
            fold,
            outcome,
            predictions,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..plan.k).into_par_iter().map(run).collect())
}
