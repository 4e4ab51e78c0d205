//! Rank statistics and search-quality metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Total order on scores: NaN sorts above everything (including +∞) and ties
/// with itself; `-0.0 == 0.0`.
pub fn cmp_scores(a: f64, b: f64) -> Ordering {
    match a.partial_cmp(&b) {
        Some(o) => o,
        None => a.is_nan().cmp(&b.is_nan()),
    }
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    Ok(())
}

/// Average-tie ranks, 1 = smallest. Infinite values are ordinary (equal infinities tie).
pub fn rank(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_scores(values[a], values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && cmp_scores(values[order[i]], values[order[j]]) == Ordering::Equal {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's ρ: Pearson correlation of average-tie ranks; 0 when either
/// ranking is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    if x.len() < 2 {
        return Ok(0.0);
    }
    Ok(pearson(&rank(x), &rank(y)))
}

/// Number of tied pairs within runs of equal keys in a sorted sequence.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort counting inversions (strictly greater before smaller).
fn sort_counting_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], buf) + sort_counting_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if cmp_scores(v[j], v[i]) == Ordering::Less {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's τ-b in O(n log n); 0 when either argument is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len() as u64;
    if n < 2 {
        return Ok(0.0);
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_scores(a.0, b.0).then(cmp_scores(a.1, b.1)));
    let eq = |a: f64, b: f64| cmp_scores(a, b) == Ordering::Equal;

    let n0 = n * (n - 1) / 2;
    let tx = tied_pairs(&pairs, |a, b| eq(a.0, b.0));
    let txy = tied_pairs(&pairs, |a, b| eq(a.0, b.0) && eq(a.1, b.1));
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let ty = tied_pairs(&ys, |a, b| eq(*a, *b));

    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    let concordant_minus_discordant = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    Ok((concordant_minus_discordant / denom).clamp(-1.0, 1.0))
}

/// Indices of the `k` highest scores; boundary ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp_scores(scores[b], scores[a]));
    order.truncate(k);
    order
}

/// `K = ⌈top_fraction · n⌉`, with a small slack so `0.1 · 20` is exactly 2.
pub fn top_k_count(n: usize, top_fraction: f64) -> usize {
    ((top_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Overlap of the predicted and groundtruth top-K sets over the groundtruth
/// top-K size. Both score vectors are higher-better.
pub fn retrieving_rate(pred_scores: &[f64], gt_scores: &[f64], top_fraction: f64) -> Result<f64> {
    check_lengths(pred_scores, gt_scores)?;
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidSpec(format!("top fraction {top_fraction} outside (0, 1]")));
    }
    if pred_scores.is_empty() {
        return Err(Error::InvalidSpec("retrieving rate of an empty set".into()));
    }
    let k = top_k_count(pred_scores.len(), top_fraction);
    let gt = top_k_indices(gt_scores, k);
    let pred = top_k_indices(pred_scores, k);
    let hits = pred.iter().filter(|i| gt.contains(i)).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Pointwise `L(t) − L*`.
pub fn regret(best_metric_trace: &[f64], l_star: f64) -> Vec<f64> {
    best_metric_trace.iter().map(|l| l - l_star).collect()
}
