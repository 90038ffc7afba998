//! Separation statistics over score lists.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

fn check(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(invalid_arg!("{name} scores are empty"));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} score {v}")));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Mann-Whitney statistic `P(pos > neg) + 0.5 P(pos == neg)`.
///
/// Computed as `0.5 + (greater - less) / (2 n m)` with the offset rounded to
/// a multiple of `2^-53`, so both `0.5 ± offset` are exact and
/// `auroc(a, b) + auroc(b, a) == 1` holds bit for bit.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check("positive", pos)?;
    check("negative", neg)?;
    let neg = sorted(neg);
    let (mut greater, mut less) = (0u64, 0u64);
    for &p in pos {
        let below = neg.partition_point(|&q| q < p);
        let not_above = neg.partition_point(|&q| q <= p);
        greater += below as u64;
        less += (neg.len() - not_above) as u64;
    }
    let pairs = 2.0 * pos.len() as f64 * neg.len() as f64;
    let offset = (greater as f64 - less as f64) / pairs;
    let grid = (2.0f64).powi(53);
    Ok(0.5 + (offset * grid).round() / grid)
}

/// Largest gap between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check("first", a)?;
    check("second", b)?;
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    /// Equal-width bins over the data's `[min, max]`.
    Count(usize),
    /// Explicit increasing edges; every score must lie within them.
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `n` equal-width edges over `[lo, hi]`; a zero-width range is widened by 0.5 each side.
pub fn equal_width_edges(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid_arg!("histogram needs at least one bin"));
    }
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / n as f64;
    let mut edges: Vec<f64> = (0..n).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    Ok(edges)
}

/// Counts per bin; bins are `[e_i, e_{i+1})` except the last, which is closed.
pub fn histogram_with_edges(scores: &[f64], edges: &[f64]) -> Result<Histogram> {
    check("histogram", scores)?;
    if edges.len() < 2 || edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(invalid_arg!("histogram edges must be at least two increasing values"));
    }
    let last = edges.len() - 2;
    let mut counts = vec![0; edges.len() - 1];
    for &v in scores {
        if v < edges[0] || v > edges[last + 1] {
            return Err(invalid_arg!("score {v} lies outside [{}, {}]", edges[0], edges[last + 1]));
        }
        let bin = (edges.partition_point(|&e| e <= v) - 1).min(last);
        counts[bin] += 1;
    }
    Ok(Histogram { edges: edges.to_vec(), counts })
}

pub fn histogram(scores: &[f64], bins: &Bins) -> Result<Histogram> {
    check("histogram", scores)?;
    match bins {
        Bins::Edges(edges) => histogram_with_edges(scores, edges),
        Bins::Count(n) => {
            let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            histogram_with_edges(scores, &equal_width_edges(lo, hi, *n)?)
        }
    }
}

/// Mean and sample standard deviation (`n - 1`; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
