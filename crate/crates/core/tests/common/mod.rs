#![allow(dead_code)]

use pacekit_core::isotonic::BidValuePair;

/// Weighted L2 isotonic fit by enumerating every split of the sequence into
/// contiguous level sets. Exponential; only for n <= ~12.
pub fn brute_force_isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 1 && n <= 16);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        // bit i set => a block boundary after element i
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev_level = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 0..n {
            let boundary = end == n - 1 || mask & (1 << end) != 0;
            if !boundary {
                continue;
            }
            let w: f64 = weights[start..=end].iter().sum();
            let level = values[start..=end].iter().zip(&weights[start..=end]).map(|(v, w)| v * w).sum::<f64>() / w;
            if level < prev_level {
                ok = false;
                break;
            }
            prev_level = level;
            fit.extend(std::iter::repeat_n(level, end - start + 1));
            start = end + 1;
        }
        if !ok {
            continue;
        }
        let sse: f64 = fit.iter().zip(values).zip(weights).map(|((f, v), w)| w * (f - v).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

pub fn pairs(values: &[f64], weights: &[f64]) -> Vec<BidValuePair> {
    values
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (&v, &w))| BidValuePair::weighted(1.0 + i as f64, v, w))
        .collect()
}
