//! Kendall's τ-b rank correlation.
//!
//! Both implementations reduce to the same integer pair counts and share the
//! final formula, so they agree bit for bit.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KendallError {
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite observation")]
    NonFinite,
    #[error("all observations tied on one side; tau is undefined")]
    AllTied,
}

/// Integer pair statistics: `s = concordant - discordant`, total pairs, and
/// pairs tied in `x` and in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub s: i64,
    pub pairs: u64,
    pub ties_x: u64,
    pub ties_y: u64,
}

impl PairCounts {
    pub fn tau_b(&self) -> Result<f64, KendallError> {
        let dx = self.pairs - self.ties_x;
        let dy = self.pairs - self.ties_y;
        if dx == 0 || dy == 0 {
            return Err(KendallError::AllTied);
        }
        Ok(self.s as f64 / ((dx as f64) * (dy as f64)).sqrt())
    }
}

fn check(x: &[f64], y: &[f64]) -> Result<(), KendallError> {
    if x.len() != y.len() {
        return Err(KendallError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(KendallError::TooShort(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(KendallError::NonFinite);
    }
    Ok(())
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite")
}

/// O(n²) reference over all pairs.
pub fn counts_brute(x: &[f64], y: &[f64]) -> Result<PairCounts, KendallError> {
    check(x, y)?;
    let n = x.len();
    let mut c = PairCounts {
        s: 0,
        pairs: (n * (n - 1) / 2) as u64,
        ties_x: 0,
        ties_y: 0,
    };
    for i in 0..n {
        for j in i + 1..n {
            let ox = cmp(x[i], x[j]);
            let oy = cmp(y[i], y[j]);
            c.ties_x += u64::from(ox == Ordering::Equal);
            c.ties_y += u64::from(oy == Ordering::Equal);
            if ox != Ordering::Equal && oy != Ordering::Equal {
                c.s += if ox == oy { 1 } else { -1 };
            }
        }
    }
    Ok(c)
}

/// Pairs within runs of equal values of a sorted sequence.
fn tied_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<f64> = None;
    for v in sorted {
        if prev == Some(v) {
            run += 1;
        } else {
            total += run * (run.saturating_sub(1)) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Merge sort counting inversions (pairs out of order, strict).
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]) + sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
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

/// O(n log n) counts (Knight's algorithm).
pub fn counts_fast(x: &[f64], y: &[f64]) -> Result<PairCounts, KendallError> {
    check(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));
    let ties_x = tied_pairs(order.iter().map(|&i| x[i]));
    // pairs tied in both x and y
    let mut joint = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if x[w[0]] == x[w[1]] && y[w[0]] == y[w[1]] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = sort_count_swaps(&mut ys, &mut buf);
    let ties_y = tied_pairs(ys.iter().copied());
    let pairs = (n * (n - 1) / 2) as u64;
    let s = pairs as i64 - ties_x as i64 - ties_y as i64 + joint as i64 - 2 * swaps as i64;
    Ok(PairCounts { s, pairs, ties_x, ties_y })
}

pub fn kendall_tau_brute(x: &[f64], y: &[f64]) -> Result<f64, KendallError> {
    counts_brute(x, y)?.tau_b()
}

/// Kendall's τ-b in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, KendallError> {
    counts_fast(x, y)?.tau_b()
}
