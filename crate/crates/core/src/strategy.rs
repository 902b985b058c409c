//! Receding-horizon pacing: campaign state, the target-spend law, and the
//! max-delivery and cost-cap bidders built on isotonic bid landscapes.

use std::collections::VecDeque;

use thiserror::Error;

use crate::isotonic::{aggregate_by_bid, pava, BidValuePair, IsotonicError, MonotoneCurve};

/// Multipliers applied to the initial bid over the first cycles so the
/// landscape has distinct bids before the first inversion.
pub const COLD_START_MULTIPLIERS: [f64; 3] = [0.9, 1.0, 1.1];
/// Relative bid perturbation used when the window has collapsed onto one bid.
pub const JITTER: f64 = 0.05;
/// Spend floor in the proportional fallback rule.
pub const FALLBACK_SPEND_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("campaign horizon exhausted ({elapsed} of {total} requests)")]
    HorizonExhausted { elapsed: u64, total: u64 },
    #[error("strategy produced an invalid bid {0}")]
    InvalidBid(f64),
    #[error(transparent)]
    Isotonic(#[from] IsotonicError),
}

/// What happened during one pacing cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacingObservation {
    pub cycle_index: usize,
    /// Bid per conversion held during the cycle.
    pub bid: f64,
    pub spend: f64,
    pub conversions: f64,
    pub requests: u64,
    pub wins: u64,
    /// Spend the pacing law asked for at the start of the cycle.
    pub target_spend: f64,
}

/// Campaign progress plus a sliding window of recent cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignState {
    pub budget: f64,
    pub remaining_budget: f64,
    pub elapsed_requests: u64,
    pub total_requests: u64,
    pub cumulative_conversions: f64,
    pub cycles_completed: usize,
    window: VecDeque<PacingObservation>,
    window_capacity: usize,
}

impl CampaignState {
    pub fn new(budget: f64, total_requests: u64, window_capacity: usize) -> Self {
        CampaignState {
            budget,
            remaining_budget: budget,
            elapsed_requests: 0,
            total_requests,
            cumulative_conversions: 0.0,
            cycles_completed: 0,
            window: VecDeque::with_capacity(window_capacity),
            window_capacity: window_capacity.max(1),
        }
    }

    /// Folds a finished cycle into the counters and the window. The caller is
    /// responsible for `remaining_budget`, which the auction loop debits per
    /// win.
    pub fn record(&mut self, obs: PacingObservation) {
        self.elapsed_requests += obs.requests;
        self.cumulative_conversions += obs.conversions;
        self.cycles_completed += 1;
        if self.window.len() == self.window_capacity {
            self.window.pop_front();
        }
        self.window.push_back(obs);
    }

    /// Records a cycle and debits its spend; convenient outside the auction loop.
    pub fn record_with_spend(&mut self, obs: PacingObservation) {
        self.remaining_budget = (self.remaining_budget - obs.spend).max(0.0);
        self.record(obs);
    }

    pub fn window(&self) -> impl ExactSizeIterator<Item = &PacingObservation> + '_ {
        self.window.iter()
    }

    pub fn last(&self) -> Option<&PacingObservation> {
        self.window.back()
    }

    pub fn remaining_requests(&self) -> u64 {
        self.total_requests.saturating_sub(self.elapsed_requests)
    }

    fn distinct_bids(&self) -> usize {
        let mut bids: Vec<f64> = self.window.iter().map(|o| o.bid).collect();
        bids.sort_by(f64::total_cmp);
        bids.dedup();
        bids.len()
    }

    /// True when the window's bids span less than `tolerance` relative to
    /// the largest of them (`0` means all bids are identical).
    fn window_collapsed(&self, tolerance: f64) -> bool {
        let (lo, hi) = self
            .window
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.bid), hi.max(o.bid)));
        !self.window.is_empty() && (hi - lo <= tolerance * hi || self.distinct_bids() == 1)
    }

    fn pairs(&self, value: impl Fn(&PacingObservation) -> f64) -> Vec<BidValuePair> {
        let raw: Vec<BidValuePair> =
            self.window.iter().map(|o| BidValuePair::new(o.bid, value(o))).collect();
        aggregate_by_bid(&raw)
    }
}

/// Spend to aim for over the next cycle: the remaining budget spread evenly
/// over the remaining requests.
pub fn target_spend(state: &CampaignState, predicted_requests: u64) -> Result<f64, StrategyError> {
    if state.elapsed_requests >= state.total_requests {
        return Err(StrategyError::HorizonExhausted {
            elapsed: state.elapsed_requests,
            total: state.total_requests,
        });
    }
    let remaining = (state.total_requests - state.elapsed_requests) as f64;
    Ok(state.remaining_budget * predicted_requests as f64 / remaining)
}

/// Cost-per-conversion limit for the rest of the campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostCapTarget {
    Capped(f64),
    /// Enough conversions are banked that any remaining spend keeps the
    /// campaign average under the cap.
    Unconstrained,
}

impl CostCapTarget {
    pub fn admits(&self, cost_per_conversion: f64) -> bool {
        match *self {
            CostCapTarget::Capped(cap) => cost_per_conversion <= cap,
            CostCapTarget::Unconstrained => true,
        }
    }
}

/// Cap that keeps the final average cost per conversion at `cap` if the
/// whole remaining budget is spent at it.
pub fn adjusted_cost_cap(state: &CampaignState, budget: f64, cap: f64) -> CostCapTarget {
    let conversions_left = budget / cap - state.cumulative_conversions;
    if conversions_left > 0.0 {
        CostCapTarget::Capped(state.remaining_budget / conversions_left)
    } else {
        CostCapTarget::Unconstrained
    }
}

/// Proportional correction used whenever the landscape cannot be built.
///
/// A zero previous bid carries no scale, so with a positive target the rule
/// restarts from the initial bid instead of staying at zero for good.
pub fn fallback_bid(last: Option<&PacingObservation>, target: f64, initial_bid: f64, max_bid: f64) -> f64 {
    match last {
        Some(obs) if obs.bid > 0.0 || target <= 0.0 => {
            (obs.bid * target / obs.spend.max(FALLBACK_SPEND_FLOOR)).clamp(0.0, max_bid)
        }
        _ => initial_bid.clamp(0.0, max_bid),
    }
}

/// Landscape inversion for a given target spend, clamped to `[0, max_bid]`.
/// Falls back to [`fallback_bid`] when the window cannot support a curve.
pub fn max_delivery_bid(state: &CampaignState, target: f64, initial_bid: f64, max_bid: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let fallback = || fallback_bid(state.last(), target, initial_bid, max_bid);
    if state.distinct_bids() < 2 {
        return fallback();
    }
    let inverted = pava(&state.pairs(|o| o.spend)).and_then(|f| f.invert(target));
    match inverted {
        Ok(b) => b.clamp(0.0, max_bid),
        Err(_) => fallback(),
    }
}

/// Bid-to-spend and bid-to-conversion landscapes fitted on the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub spend: MonotoneCurve,
    pub conversions: MonotoneCurve,
}

impl CostModel {
    pub fn new(spend: MonotoneCurve, conversions: MonotoneCurve) -> Result<Self, StrategyError> {
        if spend.len() < 2 || conversions.len() < 2 {
            return Err(IsotonicError::InsufficientData("cost model needs two breakpoints per curve").into());
        }
        Ok(CostModel { spend, conversions })
    }

    pub fn spend_at(&self, bid: f64) -> f64 {
        self.spend.eval(bid).expect("curve has two breakpoints")
    }

    pub fn conversions_at(&self, bid: f64) -> f64 {
        self.conversions.eval(bid).expect("curve has two breakpoints")
    }

    /// Predicted cost per conversion; infinite when the model predicts spend
    /// without conversions and zero when it predicts neither.
    pub fn cost_per_conversion(&self, bid: f64) -> f64 {
        cost_ratio(self.spend_at(bid), self.conversions_at(bid))
    }
}

pub(crate) fn cost_ratio(spend: f64, conversions: f64) -> f64 {
    if conversions > 0.0 {
        spend / conversions
    } else if spend > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn build_cost_curve(state: &CampaignState) -> Result<CostModel, StrategyError> {
    if state.distinct_bids() < 2 {
        return Err(IsotonicError::InsufficientData("fewer than two distinct bids in window").into());
    }
    let spend = pava(&state.pairs(|o| o.spend))?;
    let conversions = pava(&state.pairs(|o| o.conversions))?;
    CostModel::new(spend, conversions)
}

/// Bids `0, step, 2*step, ...` up to and including `max_bid`.
pub fn bid_grid(max_bid: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = (max_bid / step + 1e-9).floor() as u64;
    let on_grid = (n as f64 * step - max_bid).abs() <= 1e-9 * max_bid.max(1.0);
    (0..=n)
        .map(move |k| (k as f64 * step).min(max_bid))
        .chain((!on_grid).then_some(max_bid))
}

/// Ascending scan keeping the last grid bid that satisfies both the spend
/// target and the cost cap. Zero when nothing qualifies.
pub fn cost_cap_grid_bid(
    model: &CostModel,
    target: f64,
    cap: CostCapTarget,
    max_bid: f64,
    step: f64,
) -> f64 {
    let mut best = 0.0;
    for b in bid_grid(max_bid, step) {
        if model.spend_at(b) <= target && cap.admits(model.cost_per_conversion(b)) {
            best = b;
        }
    }
    best
}

/// Parameters shared by both MPC bidders.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub initial_bid: f64,
    pub max_bid: f64,
    pub bid_step: f64,
    pub cold_start: bool,
    pub jitter: bool,
    /// Relative bid spread below which the window counts as collapsed.
    pub collapse_tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig { initial_bid: 0.1, max_bid: 2.0, bid_step: 0.001, cold_start: true, jitter: true, collapse_tolerance: 0.0 }
    }
}

impl MpcConfig {
    fn cold_start_bid(&self, state: &CampaignState) -> Option<f64> {
        if !self.cold_start {
            return None;
        }
        COLD_START_MULTIPLIERS
            .get(state.cycles_completed)
            .map(|m| (self.initial_bid * m).clamp(0.0, self.max_bid))
    }
}

/// Alternating ±[`JITTER`] perturbation applied while the window holds one bid.
#[derive(Debug, Clone, Default)]
struct Jitter {
    up: bool,
}

impl Jitter {
    fn apply(&mut self, config: &MpcConfig, state: &CampaignState, bid: f64) -> f64 {
        if !config.jitter || !state.window_collapsed(config.collapse_tolerance) {
            return bid;
        }
        self.up = !self.up;
        let factor = if self.up { 1.0 + JITTER } else { 1.0 - JITTER };
        (bid * factor).clamp(0.0, config.max_bid)
    }
}

/// Something that picks the bid for the next pacing cycle.
pub trait BidStrategy {
    fn name(&self) -> &str;

    /// Called at the start of every cycle, including the first (empty window).
    fn next_bid(&mut self, state: &CampaignState, predicted_requests: u64) -> Result<f64, StrategyError>;
}

impl<S: BidStrategy + ?Sized> BidStrategy for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn next_bid(&mut self, state: &CampaignState, predicted_requests: u64) -> Result<f64, StrategyError> {
        (**self).next_bid(state, predicted_requests)
    }
}

/// Budget-only MPC bidder: invert the spend landscape at the target spend.
#[derive(Debug, Clone)]
pub struct MpcMaxDelivery {
    config: MpcConfig,
    jitter: Jitter,
}

impl MpcMaxDelivery {
    pub fn new(config: MpcConfig) -> Self {
        MpcMaxDelivery { config, jitter: Jitter::default() }
    }
}

impl BidStrategy for MpcMaxDelivery {
    fn name(&self) -> &str {
        "mpc"
    }

    fn next_bid(&mut self, state: &CampaignState, predicted_requests: u64) -> Result<f64, StrategyError> {
        if let Some(b) = self.config.cold_start_bid(state) {
            return Ok(b);
        }
        let target = target_spend(state, predicted_requests)?;
        let c = &self.config;
        let bid = max_delivery_bid(state, target, c.initial_bid, c.max_bid);
        Ok(self.jitter.apply(c, state, bid))
    }
}

/// MPC bidder under a budget and an average cost-per-conversion cap.
#[derive(Debug, Clone)]
pub struct MpcCostCap {
    config: MpcConfig,
    budget: f64,
    cost_cap: f64,
    jitter: Jitter,
}

impl MpcCostCap {
    pub fn new(config: MpcConfig, budget: f64, cost_cap: f64) -> Self {
        MpcCostCap { config, budget, cost_cap, jitter: Jitter::default() }
    }

    /// The cap in force for the next cycle given the campaign state.
    pub fn cap_target(&self, state: &CampaignState) -> CostCapTarget {
        adjusted_cost_cap(state, self.budget, self.cost_cap)
    }

    fn fallback(&self, state: &CampaignState, target: f64, cap: CostCapTarget) -> f64 {
        let c = &self.config;
        let bid = fallback_bid(state.last(), target, c.initial_bid, c.max_bid);
        match (state.last(), cap) {
            (Some(last), CostCapTarget::Capped(limit)) if last.spend > 0.0 => {
                let realized = cost_ratio(last.spend, last.conversions);
                if realized > limit {
                    bid.min(last.bid * limit / realized)
                } else {
                    bid
                }
            }
            _ => bid,
        }
    }
}

impl BidStrategy for MpcCostCap {
    fn name(&self) -> &str {
        "mpc_cost_cap"
    }

    fn next_bid(&mut self, state: &CampaignState, predicted_requests: u64) -> Result<f64, StrategyError> {
        if let Some(b) = self.config.cold_start_bid(state) {
            return Ok(b);
        }
        let target = target_spend(state, predicted_requests)?;
        let cap = self.cap_target(state);
        let bid = if target <= 0.0 {
            0.0
        } else {
            match build_cost_curve(state) {
                Ok(model) => {
                    cost_cap_grid_bid(&model, target, cap, self.config.max_bid, self.config.bid_step)
                }
                Err(_) => self.fallback(state, target, cap),
            }
        };
        Ok(self.jitter.apply(&self.config, state, bid))
    }
}
