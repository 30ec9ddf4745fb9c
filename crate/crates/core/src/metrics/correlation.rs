//! Spearman's rho (tie-averaged ranks) and Kendall's tau-b.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("a list is constant; correlation is undefined")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieStats {
    /// Groups of two or more equal values.
    pub groups: usize,
    /// Pairs of positions holding equal values.
    pub tied_pairs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub n: usize,
    pub ties_x: TieStats,
    pub ties_y: TieStats,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite values")
}

/// Sizes of runs of equal values in `sorted`.
fn run_lengths(sorted: impl Iterator<Item = f64>) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut prev: Option<f64> = None;
    for v in sorted {
        match prev {
            Some(p) if p == v => *runs.last_mut().unwrap() += 1,
            _ => runs.push(1u64),
        }
        prev = Some(v);
    }
    runs
}

fn pairs(t: u64) -> u64 {
    t * t.saturating_sub(1) / 2
}

pub fn tie_stats(values: &[f64]) -> TieStats {
    let mut v = values.to_vec();
    v.sort_by(|a, b| cmp(*a, *b));
    let runs = run_lengths(v.into_iter());
    TieStats {
        groups: runs.iter().filter(|&&r| r > 1).count(),
        tied_pairs: runs.into_iter().map(pairs).sum(),
    }
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| cmp(values[a], values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of tie-averaged ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall's tau-b in O(n log n), after Knight (1966): sort by `(x, y)`,
/// count ties, then count discordant pairs as merge-sort inversions in `y`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x, y)?;
    let n = x.len() as u64;
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));

    let total = pairs(n);
    let x_ties: u64 = run_lengths(pts.iter().map(|p| p.0)).into_iter().map(pairs).sum();
    let mut joint_ties = 0u64;
    let mut i = 0;
    while i < pts.len() {
        let mut j = i + 1;
        while j < pts.len() && pts[j] == pts[i] {
            j += 1;
        }
        joint_ties += pairs((j - i) as u64);
        i = j;
    }

    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut buf);
    let y_ties: u64 = run_lengths(ys.iter().copied()).into_iter().map(pairs).sum();

    let not_tied_x = total - x_ties;
    let not_tied_y = total - y_ties;
    if not_tied_x == 0 || not_tied_y == 0 {
        return Err(StatsError::Degenerate);
    }
    let diff = total as i128 - x_ties as i128 - y_ties as i128 + joint_ties as i128
        - 2 * discordant as i128;
    let tau = diff as f64 / ((not_tied_x as f64) * (not_tied_y as f64)).sqrt();
    Ok(tau.clamp(-1.0, 1.0))
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Both statistics plus tie bookkeeping.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    Ok(CorrelationResult {
        spearman_rho: spearman_rho(x, y)?,
        kendall_tau: kendall_tau(x, y)?,
        n: x.len(),
        ties_x: tie_stats(x),
        ties_y: tie_stats(y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_reversal() {
        let r = correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.spearman_rho, r.kendall_tau), (1.0, 1.0));
        let r = correlate(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!((r.spearman_rho, r.kendall_tau), (-1.0, -1.0));
    }

    #[test]
    fn one_adjacent_swap() {
        // sum of squared rank differences is 2, so rho = 1 - 6*2/(4*15)
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-15);
        // 5 concordant, 1 discordant of 6 pairs
        let tau = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((tau - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        let t = tie_stats(&[1.0, 1.0, 1.0, 2.0, 2.0, 3.0]);
        assert_eq!(t, TieStats { groups: 2, tied_pairs: 4 });
        // x = [1,1,2], y = [1,2,3]: C=2, D=0, T_x=1, U=0 -> 2/sqrt(2*3)
        let tau = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((tau - 2.0 / 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(spearman_rho(&[1.0], &[1.0]), Err(StatsError::TooFew(1)));
        assert_eq!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Degenerate));
        assert_eq!(spearman_rho(&[1.0, 2.0], &[4.0, 4.0]), Err(StatsError::Degenerate));
        assert_eq!(spearman_rho(&[1.0, f64::NAN], &[1.0, 2.0]), Err(StatsError::NonFinite));
    }

    #[test]
    fn signed_zero_is_a_tie() {
        let tau = kendall_tau(&[0.0, -0.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((tau - 2.0 / 6f64.sqrt()).abs() < 1e-15);
    }
}
