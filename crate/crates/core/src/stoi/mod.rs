//! Reference-based labelling: intrusive STOI, SNR estimators used for
//! clean-file screening, and pair alignment.

mod align;
mod intelligibility;
mod snr;
mod wada;

pub use align::{align_pair, estimate_lag, MAX_LAG_MS, MIN_OVERLAP_S, MIN_PEAK};
pub use intelligibility::stoi;
pub use snr::{longterm_snr, reference_snr, screen_clean, ScreenReport, ScreenThresholds, SNR_SENTINEL_DB};
pub use wada::{snr_from_statistic, wada_snr, wada_statistic, WADA_MAX_DB, WADA_MIN_DB};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StoiScore(f64);

impl StoiScore {
    pub fn clamped(v: f64) -> Self {
        Self(v.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrMethod {
    Wada,
    Longterm,
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub value_db: f64,
    pub method: SnrMethod,
}

impl SnrEstimate {
    pub fn new(value_db: f64, method: SnrMethod) -> Self {
        Self { value_db, method }
    }
}
