//! Leakage-free k-fold plans grouped by clean source.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::SeedContext;
use crate::corruption::ManifestRecord;
use crate::error::{Error, Result};

/// Indices (into the manifest slice) of the labelled records in each fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
    /// Clean-source ids per fold.
    pub sources: Vec<Vec<String>>,
    /// Total duration per fold in seconds.
    pub durations_s: Vec<f64>,
}

/// Record indices used by one cross-validation round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldRound {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    /// Round `r`: fold `r` is the test set, fold `r + 1 (mod k)` selects the
    /// model, the remaining folds train it.
    pub fn round(&self, r: usize) -> FoldRound {
        let val = (r + 1) % self.k;
        let mut train: Vec<usize> = (0..self.k)
            .filter(|&f| f != r && f != val)
            .flat_map(|f| self.folds[f].iter().copied())
            .collect();
        train.sort_unstable();
        FoldRound {
            train,
            val: self.folds[val].clone(),
            test: self.folds[r].clone(),
        }
    }

    /// Fold of every assigned record index.
    pub fn fold_of(&self) -> BTreeMap<usize, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(f, ids)| ids.iter().map(move |&i| (i, f)))
            .collect()
    }
}

/// Group labelled records by clean source, shuffle the groups with `seed` and
/// deal them greedily to the currently shortest fold (fewest sources on
/// ties). Error records are left
/// out of every fold.
pub fn make_folds(records: &[ManifestRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::Argument(format!(
            "cross-validation needs k >= 3 (train/val/test), got {k}"
        )));
    }
    let mut groups: BTreeMap<&str, (Vec<usize>, f64)> = BTreeMap::new();
    for (i, r) in records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_error() && r.stoi.is_some())
    {
        let g = groups.entry(r.clean.as_str()).or_default();
        g.0.push(i);
        g.1 += r.duration_s.unwrap_or(0.0);
    }
    if groups.len() < k {
        return Err(Error::Argument(format!(
            "{} clean sources cannot fill {k} source-disjoint folds",
            groups.len()
        )));
    }
    let mut order: Vec<(&str, (Vec<usize>, f64))> = groups.into_iter().collect();
    order.shuffle(&mut SeedContext::new(seed, "folds").stream());
    let mut plan = FoldPlan {
        k,
        seed,
        folds: vec![Vec::new(); k],
        sources: vec![Vec::new(); k],
        durations_s: vec![0.0; k],
    };
    for (n, (src, (ids, dur))) in order.into_iter().enumerate() {
        // The first k groups seed one fold each so no fold stays empty.
        let f = if n < k {
            n
        } else {
            (0..k)
                .min_by(|&a, &b| {
                    plan.durations_s[a]
                        .total_cmp(&plan.durations_s[b])
                        .then(plan.sources[a].len().cmp(&plan.sources[b].len()))
                })
                .expect("k >= 3")
        };
        plan.folds[f].extend(ids);
        plan.sources[f].push(src.to_string());
        plan.durations_s[f] += dur;
    }
    for f in &mut plan.folds {
        f.sort_unstable();
    }
    Ok(plan)
}
