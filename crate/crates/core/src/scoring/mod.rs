//! Goodness-of-fit scores and the (%KNN, E_th) sweep.

mod sweep;

pub use sweep::*;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::probmodel::ProbabilisticModel;

/// Average negative log winner posterior over `points`.
pub fn anll(model: &ProbabilisticModel, points: &Matrix) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(Error::InvalidInput("ANLL needs at least one point".into()));
    }
    let a = model.allocate(points)?;
    Ok(anll_from_posteriors(&a.winner_posterior))
}

/// −mean(ln p); exactly 0 when every p is 1.
pub fn anll_from_posteriors(winner_posterior: &[f64]) -> f64 {
    let s: f64 = winner_posterior.iter().map(|p| -p.ln()).sum();
    (s / winner_posterior.len() as f64).max(0.0)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Contingency table between two labellings, with the dense relabelled sizes.
fn contingency(a: &[usize], b: &[usize]) -> Vec<Vec<u64>> {
    let ra = crate::dataio::encode_ids(a);
    let rb = crate::dataio::encode_ids(b);
    let r = ra.iter().copied().max().map_or(0, |m| m + 1);
    let c = rb.iter().copied().max().map_or(0, |m| m + 1);
    let mut t = vec![vec![0u64; c]; r];
    for (x, y) in ra.iter().zip(&rb) {
        t[*x][*y] += 1;
    }
    t
}

fn pairs(m: u64) -> u64 {
    m * m.saturating_sub(1) / 2
}

/// Pair-counting Jaccard n11 / (n11 + n10 + n01). Two labellings with no
/// co-clustered pair at all score 1.
pub fn jaccard(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    check_lengths(truth.len(), predicted.len())?;
    let t = contingency(truth, predicted);
    let n11: u64 = t.iter().flatten().map(|&m| pairs(m)).sum();
    let row: u64 = t.iter().map(|r| pairs(r.iter().sum())).sum();
    let col: u64 = (0..t.first().map_or(0, Vec::len))
        .map(|j| pairs(t.iter().map(|r| r[j]).sum()))
        .sum();
    let denom = row + col - n11;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(n11 as f64 / denom as f64)
}

/// Cramér's V of the contingency table; 1×1 gives 1, 1×c (c > 1) gives 0.
pub fn cramers_v(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let t = contingency(a, b);
    let r = t.len();
    let c = t.first().map_or(0, Vec::len);
    if r <= 1 || c <= 1 {
        return Ok(if r == c { 1.0 } else { 0.0 });
    }
    let n = a.len() as f64;
    let rows: Vec<f64> = t.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..c)
        .map(|j| t.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let mut chi2 = 0.0;
    for (i, row) in t.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / n;
            chi2 += (o as f64 - e).powi(2) / e;
        }
    }
    Ok((chi2 / (n * (r.min(c) - 1) as f64)).sqrt().min(1.0))
}

/// Sample Pearson correlation and its two-sided p-value (t with n−2 dof).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_lengths(x.len(), y.len())?;
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "correlation needs at least 3 pairs, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSeries);
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok((rho, correlation_p_value(rho, n)))
}

/// Two-sided p-value of a sample correlation `rho` over `n` pairs.
pub fn correlation_p_value(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let dof = (n - 2) as f64;
    let t = rho * (dof / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anll_constant_half() {
        assert!((anll_from_posteriors(&[0.5; 4]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(anll_from_posteriors(&[1.0, 1.0]), 0.0);
    }

    #[test]
    fn jaccard_hand_cases() {
        assert_eq!(jaccard(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(jaccard(&[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap(), 0.0);
        assert_eq!(jaccard(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap(), 0.25);
        assert!(jaccard(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn cramers_v_hand_cases() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, m) in [(0, 0, 30), (0, 1, 10), (1, 0, 10), (1, 1, 30)] {
            a.extend(std::iter::repeat_n(x, m));
            b.extend(std::iter::repeat_n(y, m));
        }
        assert!((cramers_v(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(cramers_v(&[0, 1, 0], &[5, 3, 5]).unwrap(), 1.0);
        assert_eq!(cramers_v(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert_eq!(cramers_v(&[0, 0], &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn pearson_hand_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().0 - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().0 + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ConstantSeries)
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn reported_correlation_is_significant() {
        assert!(correlation_p_value(-0.776, 20) < 1e-3);
    }

    #[test]
    fn p_value_matches_reference() {
        // rho = 0.5, n = 10: t = 1.63299, two-sided p = 0.14111328125
        let p = correlation_p_value(0.5, 10);
        assert!((p - 0.141_113_281_25).abs() < 1e-9, "{p}");
    }
}
