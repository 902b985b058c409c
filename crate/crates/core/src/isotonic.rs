//! Weighted pool-adjacent-violators regression over bid/value pairs and the
//! piecewise-linear monotone curve it produces.
//!
//! The curve is what the pacing strategies use as a bid landscape: `eval`
//! answers "how much will this bid spend (or convert)", `invert` answers
//! "which bid reaches this target".

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IsotonicError {
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("bids must be strictly increasing (index {0})")]
    UnsortedBids(usize),
    #[error("uninvertible landscape: curve is flat at {level} and target is {target}")]
    Uninvertible { level: f64, target: f64 },
}

/// One observed pacing cycle projected onto a single quantity (spend or
/// conversions), with the merge weight used by PAVA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidValuePair {
    pub bid: f64,
    pub value: f64,
    pub weight: f64,
}

impl BidValuePair {
    pub fn new(bid: f64, value: f64) -> Self {
        BidValuePair { bid, value, weight: 1.0 }
    }

    pub fn weighted(bid: f64, value: f64, weight: f64) -> Self {
        BidValuePair { bid, value, weight }
    }
}

/// A pooled block of consecutive input pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    /// Index of the first input pair in the block.
    pub start: usize,
    /// Number of input pairs pooled into the block.
    pub len: usize,
    pub value: f64,
    pub weight: f64,
}

/// Runs PAVA and returns the pooled blocks in input order.
///
/// A merge keeps the lower pair's bid and steps back one position, so a
/// merged block can cascade into its left neighbour. Equal adjacent values
/// are not violators.
pub fn pava_blocks(pairs: &[BidValuePair]) -> Result<Vec<Block>, IsotonicError> {
    if pairs.is_empty() {
        return Err(IsotonicError::InsufficientData("no bid/value pairs"));
    }
    for i in 1..pairs.len() {
        if !(pairs[i].bid > pairs[i - 1].bid) {
            return Err(IsotonicError::UnsortedBids(i));
        }
    }

    let mut blocks: Vec<Block> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| Block { start: k, len: 1, value: p.value, weight: p.weight })
        .collect();

    let mut i = 0;
    while i + 1 < blocks.len() {
        if blocks[i].value > blocks[i + 1].value {
            let next = blocks.remove(i + 1);
            let cur = &mut blocks[i];
            let w = cur.weight + next.weight;
            cur.value = (cur.weight * cur.value + next.weight * next.value) / w;
            cur.weight = w;
            cur.len += next.len;
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    Ok(blocks)
}

/// Expands blocks back to one fitted value per input pair.
pub fn fitted_values(blocks: &[Block]) -> Vec<f64> {
    blocks
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.value, b.len))
        .collect()
}

/// Isotonic fit of `pairs` (strictly increasing bids) as a monotone curve.
pub fn pava(pairs: &[BidValuePair]) -> Result<MonotoneCurve, IsotonicError> {
    let blocks = pava_blocks(pairs)?;
    let points = blocks
        .iter()
        .map(|b| BidValuePair::weighted(pairs[b.start].bid, b.value, b.weight))
        .collect();
    Ok(MonotoneCurve { points })
}

/// Collapses pairs sharing a bid into one pair carrying the weighted mean
/// value and the summed weight, and sorts the result by bid.
pub fn aggregate_by_bid(pairs: &[BidValuePair]) -> Vec<BidValuePair> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.bid.total_cmp(&b.bid));
    let mut out: Vec<BidValuePair> = Vec::with_capacity(sorted.len());
    for p in sorted {
        match out.last_mut() {
            Some(last) if last.bid == p.bid => {
                let w = last.weight + p.weight;
                last.value = (last.weight * last.value + p.weight * p.value) / w;
                last.weight = w;
            }
            _ => out.push(p),
        }
    }
    out
}

/// Nondecreasing piecewise-linear map from bid to value.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCurve {
    points: Vec<BidValuePair>,
}

impl MonotoneCurve {
    /// Builds a curve from breakpoints that already satisfy the curve
    /// invariants (strictly increasing bids, nondecreasing values).
    pub fn from_points(points: Vec<BidValuePair>) -> Result<Self, IsotonicError> {
        if points.is_empty() {
            return Err(IsotonicError::InsufficientData("empty curve"));
        }
        for i in 1..points.len() {
            if !(points[i].bid > points[i - 1].bid) || points[i].value < points[i - 1].value {
                return Err(IsotonicError::UnsortedBids(i));
            }
        }
        Ok(MonotoneCurve { points })
    }

    pub fn points(&self) -> &[BidValuePair] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn require_segments(&self) -> Result<(), IsotonicError> {
        if self.points.len() < 2 {
            Err(IsotonicError::InsufficientData("curve needs at least two breakpoints"))
        } else {
            Ok(())
        }
    }

    /// Linear interpolation inside the observed bids, extrapolation along the
    /// first/last segment outside them, floored at zero.
    pub fn eval(&self, bid: f64) -> Result<f64, IsotonicError> {
        self.require_segments()?;
        let p = &self.points;
        let n = p.len();
        let (a, b) = if bid <= p[0].bid {
            (p[0], p[1])
        } else if bid >= p[n - 1].bid {
            (p[n - 2], p[n - 1])
        } else {
            // first index with bid strictly above the query
            let hi = p.partition_point(|q| q.bid <= bid);
            (p[hi - 1], p[hi])
        };
        let v = a.value + (bid - a.bid) * (b.value - a.value) / (b.bid - a.bid);
        Ok(v.max(0.0))
    }

    /// Lowest bid whose predicted value reaches `target`.
    ///
    /// Below the first breakpoint the curve is extended from `(b_1, v_1)` with
    /// the slope of the first rising segment; above the last breakpoint it is
    /// extended from `(b_m, v_m)` with the slope of the last rising segment.
    /// Flat stretches resolve to their lowest bid. Result is floored at zero.
    pub fn invert(&self, target: f64) -> Result<f64, IsotonicError> {
        self.require_segments()?;
        let p = &self.points;
        let n = p.len();
        let (first, last) = (p[0], p[n - 1]);
        if first.value == last.value {
            if target == first.value {
                return Ok(first.bid.max(0.0));
            }
            return Err(IsotonicError::Uninvertible { level: first.value, target });
        }

        // exact hits (including flat segments) map to the lowest attaining bid
        if let Some(q) = p.iter().find(|q| q.value == target) {
            return Ok(q.bid.max(0.0));
        }

        let bid = if target < first.value {
            let (a, b) = p.windows(2).map(|w| (w[0], w[1])).find(|(a, b)| b.value > a.value).unwrap();
            first.bid + (target - first.value) / (b.value - a.value) * (b.bid - a.bid)
        } else if target > last.value {
            let (a, b) = p.windows(2).map(|w| (w[0], w[1])).rfind(|(a, b)| b.value > a.value).unwrap();
            last.bid + (target - last.value) / (b.value - a.value) * (b.bid - a.bid)
        } else {
            let hi = p.partition_point(|q| q.value < target);
            let (a, b) = (p[hi - 1], p[hi]);
            a.bid + (target - a.value) / (b.value - a.value) * (b.bid - a.bid)
        };
        Ok(bid.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(raw: &[(f64, f64)]) -> Vec<BidValuePair> {
        raw.iter().map(|&(b, v)| BidValuePair::new(b, v)).collect()
    }

    fn curve(raw: &[(f64, f64)]) -> MonotoneCurve {
        MonotoneCurve::from_points(pairs(raw)).unwrap()
    }

    fn bv(c: &MonotoneCurve) -> Vec<(f64, f64)> {
        c.points().iter().map(|p| (p.bid, p.value)).collect()
    }

    #[test]
    fn already_monotone_is_untouched() {
        let c = pava(&pairs(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)])).unwrap();
        assert_eq!(bv(&c), vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
    }

    #[test]
    fn single_violation_pools_and_keeps_lower_bid() {
        let c = pava(&pairs(&[(1.0, 5.0), (2.0, 3.0), (3.0, 4.0)])).unwrap();
        assert_eq!(bv(&c), vec![(1.0, 4.0), (3.0, 4.0)]);
        assert_eq!(c.points()[0].weight, 2.0);
    }

    #[test]
    fn cascading_merge_steps_back() {
        let c = pava(&pairs(&[(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)])).unwrap();
        assert_eq!(bv(&c), vec![(1.0, 2.0)]);
        assert_eq!(c.points()[0].weight, 3.0);
    }

    #[test]
    fn empty_input_is_insufficient() {
        assert!(matches!(pava(&[]), Err(IsotonicError::InsufficientData(_))));
    }

    #[test]
    fn duplicate_bids_are_rejected_until_aggregated() {
        let raw = pairs(&[(2.0, 4.0), (1.0, 1.0), (2.0, 6.0)]);
        assert!(matches!(pava(&raw), Err(IsotonicError::UnsortedBids(_))));
        let agg = aggregate_by_bid(&raw);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[1].bid, agg[1].value, agg[1].weight), (2.0, 5.0, 2.0));
        assert!(pava(&agg).is_ok());
    }

    #[test]
    fn eval_interpolates_and_extrapolates() {
        let c = curve(&[(1.0, 10.0), (3.0, 30.0)]);
        assert_eq!(c.eval(2.0).unwrap(), 20.0);
        assert_eq!(c.eval(4.0).unwrap(), 40.0);
        assert_eq!(c.eval(1.0).unwrap(), 10.0);
        // below-range extrapolation crosses zero and is floored
        assert_eq!(c.eval(-5.0).unwrap(), 0.0);
    }

    #[test]
    fn eval_needs_two_points() {
        let c = curve(&[(1.0, 10.0)]);
        assert!(c.eval(1.0).is_err());
        assert!(c.invert(10.0).is_err());
    }

    #[test]
    fn invert_three_branches() {
        let c = curve(&[(1.0, 10.0), (3.0, 30.0)]);
        assert_eq!(c.invert(20.0).unwrap(), 2.0);
        assert_eq!(c.invert(40.0).unwrap(), 4.0);
        assert_eq!(c.invert(5.0).unwrap(), 0.5);
        assert_eq!(c.invert(0.0).unwrap(), 0.0);
    }

    #[test]
    fn invert_flat_segment_returns_lowest_bid() {
        let c = curve(&[(1.0, 0.0), (2.0, 5.0), (3.0, 5.0), (4.0, 9.0)]);
        assert_eq!(c.invert(5.0).unwrap(), 2.0);
        // flat tail: extrapolate above with the last rising segment
        let c = curve(&[(1.0, 0.0), (2.0, 4.0), (3.0, 4.0)]);
        assert_eq!(c.invert(4.0).unwrap(), 2.0);
        assert_eq!(c.invert(8.0).unwrap(), 4.0);
        // flat head: extrapolate below with the first rising segment
        let c = curve(&[(1.0, 4.0), (2.0, 4.0), (3.0, 8.0)]);
        assert_eq!(c.invert(2.0).unwrap(), 0.5);
    }

    #[test]
    fn globally_flat_curve_is_uninvertible() {
        let c = curve(&[(1.0, 3.0), (2.0, 3.0)]);
        assert_eq!(c.invert(3.0).unwrap(), 1.0);
        assert!(matches!(c.invert(4.0), Err(IsotonicError::Uninvertible { .. })));
    }

    #[test]
    fn from_points_checks_invariants() {
        assert!(MonotoneCurve::from_points(pairs(&[(1.0, 2.0), (1.0, 3.0)])).is_err());
        assert!(MonotoneCurve::from_points(pairs(&[(1.0, 2.0), (2.0, 1.0)])).is_err());
        assert!(MonotoneCurve::from_points(vec![]).is_err());
    }
}
