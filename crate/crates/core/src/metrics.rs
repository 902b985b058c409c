//! Episode metrics: budget utilization, cost per view, bid variance, and
//! their aggregation over an episode batch.

use thiserror::Error;

use crate::auction::EpisodeResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("undefined BV: {0}")]
    UndefinedBidVariance(&'static str),
}

/// Budget utilization rate in percent.
pub fn bur(result: &EpisodeResult, budget: f64) -> f64 {
    if budget > 0.0 {
        100.0 * result.total_spend / budget
    } else {
        0.0
    }
}

/// Spend per credited conversion; `None` when nothing converted.
pub fn cpv(result: &EpisodeResult) -> Option<f64> {
    (result.conversions > 0.0).then(|| result.total_spend / result.conversions)
}

/// Mean squared relative deviation of bids from their mean.
pub fn bid_variance(bids: &[f64]) -> Result<f64, MetricsError> {
    if bids.is_empty() {
        return Err(MetricsError::UndefinedBidVariance("empty bid sequence"));
    }
    let mean = bids.iter().sum::<f64>() / bids.len() as f64;
    if !(mean > 0.0) {
        return Err(MetricsError::UndefinedBidVariance("mean bid is not positive"));
    }
    Ok(bids.iter().map(|b| (1.0 - b / mean).powi(2)).sum::<f64>() / bids.len() as f64)
}

/// Per-episode metric values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub bur: f64,
    pub impressions: u64,
    pub cpv: Option<f64>,
    pub bv: f64,
    pub spend: f64,
    pub conversions: f64,
}

impl EpisodeMetrics {
    pub fn of(result: &EpisodeResult) -> Self {
        let bids = result.bids();
        // an all-zero sequence is constant, so its variance is zero
        let bv = match bid_variance(&bids) {
            Ok(v) => v,
            Err(_) if bids.windows(2).all(|w| w[0] == w[1]) => 0.0,
            Err(_) => f64::NAN,
        };
        EpisodeMetrics {
            bur: bur(result, result.budget),
            impressions: result.impressions,
            cpv: cpv(result),
            bv,
            spend: result.total_spend,
            conversions: result.conversions,
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, count: values.len() })
    }
}

/// Batch aggregate. Episodes without conversions are left out of CPV and
/// counted in `zero_conversion_episodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub episodes: usize,
    pub bur: Stat,
    pub impressions: Stat,
    pub cpv: Option<Stat>,
    pub bv: Stat,
    pub zero_conversion_episodes: usize,
}

impl BatchSummary {
    pub fn of(metrics: &[EpisodeMetrics]) -> Option<Self> {
        if metrics.is_empty() {
            return None;
        }
        let collect = |f: fn(&EpisodeMetrics) -> f64| metrics.iter().map(f).collect::<Vec<_>>();
        let cpvs: Vec<f64> = metrics.iter().filter_map(|m| m.cpv).collect();
        Some(BatchSummary {
            episodes: metrics.len(),
            bur: Stat::of(&collect(|m| m.bur))?,
            impressions: Stat::of(&collect(|m| m.impressions as f64))?,
            cpv: Stat::of(&cpvs),
            bv: Stat::of(&collect(|m| m.bv))?,
            zero_conversion_episodes: metrics.len() - cpvs.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(spend: f64, conversions: f64) -> EpisodeResult {
        EpisodeResult {
            budget: 100.0,
            total_spend: spend,
            impressions: 1,
            conversions,
            remaining_budget: 100.0 - spend,
            cycles: vec![],
        }
    }

    #[test]
    fn bur_examples() {
        assert_eq!(bur(&result(100.0, 1.0), 100.0), 100.0);
        assert_eq!(bur(&result(0.0, 0.0), 100.0), 0.0);
        assert!((bur(&result(99.9, 1.0), 100.0) - 99.9).abs() < 1e-12);
    }

    #[test]
    fn cpv_examples() {
        assert_eq!(cpv(&result(10.0, 500.0)), Some(0.02));
        assert_eq!(cpv(&result(0.8, 0.5)), Some(1.6));
        assert_eq!(cpv(&result(0.0, 0.0)), None);
    }

    #[test]
    fn bv_examples() {
        assert_eq!(bid_variance(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(bid_variance(&[1.0, 3.0]).unwrap(), 0.25);
        assert!(bid_variance(&[0.0, 0.0]).is_err());
        assert!(bid_variance(&[]).is_err());
    }

    #[test]
    fn stat_of_small_samples() {
        assert_eq!(Stat::of(&[]), None);
        assert_eq!(Stat::of(&[3.0]).unwrap(), Stat { mean: 3.0, std: 0.0, count: 1 });
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batch_excludes_zero_conversion_cpv() {
        let m = [
            EpisodeMetrics { bur: 100.0, impressions: 10, cpv: Some(2.0), bv: 0.1, spend: 1.0, conversions: 0.5 },
            EpisodeMetrics { bur: 0.0, impressions: 0, cpv: None, bv: 0.0, spend: 0.0, conversions: 0.0 },
        ];
        let s = BatchSummary::of(&m).unwrap();
        assert_eq!(s.cpv.unwrap().mean, 2.0);
        assert_eq!(s.zero_conversion_episodes, 1);
        assert_eq!(s.bur.mean, 50.0);
    }
}
