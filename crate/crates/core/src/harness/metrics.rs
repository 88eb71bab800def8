//! Utterance-level agreement metrics between true and predicted scores.

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least {min} pairs, got {}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite value {v}")));
    }
    Ok(())
}

/// Pearson linear correlation coefficient.
pub fn lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    // Tested on the raw values: the mean of a constant sequence need not
    // round back to that constant, which would leave a tiny fake variance.
    if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    // One square root of the product keeps identical inputs at exactly 1.
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn mean_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of mean ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    lcc(&mean_ranks(x), &mean_ranks(y))
}

/// Mean squared error.
pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred, 1)?;
    Ok(truth.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverse() {
        let x = [1.0, 2.0, 3.5, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((lcc(&x, &y).unwrap() - 1.0).abs() <= 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((lcc(&x, &z).unwrap() + 1.0).abs() <= 1e-12);
        let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert_eq!(srcc(&x, &e).unwrap(), 1.0);
        assert_eq!(srcc(&x, &z).unwrap(), -1.0);
    }

    #[test]
    fn hand_computed_cases() {
        // x=[1,2,3,5], y=[2,1,4,5]: means 2.75, 3; sxy=8, sxx=8.75, syy=10.
        let want = 8.0 / (8.75f64 * 10.0).sqrt();
        assert!((lcc(&[1.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 5.0]).unwrap() - want).abs() <= 1e-12);
        // Ranks [1.5,1.5,3] and [2.5,2.5,1] are exactly anti-correlated.
        assert!((srcc(&[1.0, 1.0, 2.0], &[3.0, 3.0, 1.0]).unwrap() + 1.0).abs() <= 1e-12);
        assert_eq!(mean_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mse_definition_and_errors() {
        assert_eq!(mse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert!((mse(&[0.2, 0.4], &[0.3, 0.5]).unwrap() - 0.01).abs() <= 1e-15);
        assert!(matches!(
            lcc(&[1.0, 1.0], &[2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(lcc(&[1.0], &[2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(mse(&[1.0], &[]), Err(Error::Argument(_))));
    }
}
