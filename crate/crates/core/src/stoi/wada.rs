//! Blind SNR estimation from the waveform amplitude distribution.
//!
//! Speech amplitudes are modelled as gamma distributed (shape 0.4) and the
//! noise as Gaussian; the statistic `G = ln E|x| - E ln|x|` grows
//! monotonically with SNR and is inverted through a lookup grid.

use super::{SnrEstimate, SnrMethod};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub const WADA_MIN_DB: f64 = -20.0;
pub const WADA_MAX_DB: f64 = 100.0;
const FLOOR: f64 = 1e-10;

/// `G` on a 1 dB grid from -20 to 100 dB. Regenerate with
/// `scripts/wada_table.py`.
#[rustfmt::skip]
pub(crate) const G_TABLE: [f64; 121] = [
    0.40943470, 0.40945950, 0.40949762, 0.40955585, 0.40964412, 0.40977680,
    0.40997422, 0.41026473, 0.41068699, 0.41129251, 0.41214827, 0.41333908,
    0.41496934, 0.41716371, 0.42006640, 0.42383855, 0.42865366, 0.43469103,
    0.44212755, 0.45112839, 0.46183732, 0.47436773, 0.48879504, 0.50515144,
    0.52342326, 0.54355138, 0.56543434, 0.58893370, 0.61388120, 0.64008667,
    0.66734632, 0.69545050, 0.72419070, 0.75336533, 0.78278429, 0.81227220,
    0.84167053, 0.87083865, 0.89965408, 0.92801212, 0.95582492, 0.98302037,
    1.00954067, 1.03534094, 1.06038765, 1.08465732, 1.10813505, 1.13081336,
    1.15269102, 1.17377204, 1.19406475, 1.21358106, 1.23233570, 1.25034569,
    1.26762978, 1.28420806, 1.30010156, 1.31533194, 1.32992126, 1.34389172,
    1.35726554, 1.37006476, 1.38231115, 1.39402611, 1.40523061, 1.41594510,
    1.42618950, 1.43598315, 1.44534479, 1.45429254, 1.46284393, 1.47101584,
    1.47882453, 1.48628568, 1.49341434, 1.50022498, 1.50673149, 1.51294719,
    1.51888488, 1.52455681, 1.52997471, 1.53514984, 1.54009295, 1.54481436,
    1.54932393, 1.55363110, 1.55774489, 1.56167393, 1.56542647, 1.56901042,
    1.57243332, 1.57570237, 1.57882447, 1.58180620, 1.58465387, 1.58737348,
    1.58997078, 1.59245127, 1.59482018, 1.59708253, 1.59924311, 1.60130649,
    1.60327704, 1.60515893, 1.60695615, 1.60867250, 1.61031162, 1.61187699,
    1.61337191, 1.61479957, 1.61616298, 1.61746503, 1.61870849, 1.61989599,
    1.62103005, 1.62211307, 1.62314735, 1.62413509, 1.62507837, 1.62597920,
    1.62683949,
];

/// The amplitude-distribution statistic of a raw buffer.
pub fn wada_statistic(x: &[f64]) -> Result<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::UndefinedStatistic("all-zero signal".into()));
    }
    let n = x.len() as f64;
    let (mut sum_abs, mut sum_log) = (0.0, 0.0);
    for v in x {
        let a = (v.abs() / peak).max(FLOOR);
        sum_abs += a;
        sum_log += a.ln();
    }
    let mean_abs = (sum_abs / n).max(FLOOR);
    Ok(mean_abs.ln() - sum_log / n)
}

/// Maps a statistic value onto the grid, clamping at both ends.
pub fn snr_from_statistic(g: f64) -> f64 {
    let Some(idx) = G_TABLE.iter().rposition(|&t| t < g) else {
        return WADA_MIN_DB;
    };
    if idx == G_TABLE.len() - 1 {
        return WADA_MAX_DB;
    }
    let (g0, g1) = (G_TABLE[idx], G_TABLE[idx + 1]);
    WADA_MIN_DB + idx as f64 + (g - g0) / (g1 - g0)
}

pub fn wada_snr(clip: &AudioClip) -> Result<SnrEstimate> {
    let need = clip.sample_rate() as usize;
    if clip.len() < need {
        return Err(Error::TooShort {
            needed: need,
            got: clip.len(),
        });
    }
    let g = wada_statistic(clip.samples())?;
    Ok(SnrEstimate::new(snr_from_statistic(g), SnrMethod::Wada))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_strictly_increasing() {
        assert!(G_TABLE.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn lookup_hits_grid_points_and_clamps() {
        assert_eq!(snr_from_statistic(G_TABLE[30]), 10.0);
        assert_eq!(snr_from_statistic(0.1), WADA_MIN_DB);
        assert_eq!(snr_from_statistic(5.0), WADA_MAX_DB);
        let mid = 0.5 * (G_TABLE[40] + G_TABLE[41]);
        assert!((snr_from_statistic(mid) - 20.5).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_undefined() {
        let clip = AudioClip::zeros(16_000, 16_000);
        assert!(matches!(wada_snr(&clip), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::canonical(vec![0.1; 8000]).unwrap();
        assert!(matches!(wada_snr(&clip), Err(Error::TooShort { .. })));
    }
}
