//! Reference bidders: PID pacing, dual online gradient descent, a constant
//! bid, and the hindsight-optimal constant bid found by grid search.

use rayon::prelude::*;

use crate::auction::{
    opportunity_rng, outcome_rng, run_episode_on_stream, CampaignConfig, EnvError, EpisodeSeed, MarketParams,
    OpportunitySampler,
};
use crate::metrics::{bur, cpv};
use crate::strategy::{target_spend, BidStrategy, CampaignState, StrategyError};

/// Bids are kept inside this band so multiplicative updates stay finite.
const PID_BID_FLOOR: f64 = 1e-12;
const PID_BID_CEIL: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Largest log-change of the bid per cycle.
    pub output_limit: f64,
    /// Anti-windup band for the error accumulator.
    pub integral_limit: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig { kp: 0.5, ki: 0.05, kd: 0.1, output_limit: 1.0, integral_limit: 10.0 }
    }
}

/// Multiplicative PID on the normalized spend error `1 - actual/target`.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub config: PidConfig,
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub bid: f64,
}

impl PidController {
    pub fn new(config: PidConfig, initial_bid: f64) -> Self {
        PidController {
            config,
            integral: 0.0,
            prev_error: None,
            bid: initial_bid.clamp(PID_BID_FLOOR, PID_BID_CEIL),
        }
    }

    /// Applies one update and returns the new bid. A non-positive target
    /// leaves the controller untouched.
    pub fn update(&mut self, actual: f64, target: f64) -> f64 {
        if !(target > 0.0) {
            return self.bid;
        }
        let c = &self.config;
        let error = 1.0 - actual / target;
        self.integral = (self.integral + error).clamp(-c.integral_limit, c.integral_limit);
        let derivative = self.prev_error.map_or(0.0, |prev| error - prev);
        self.prev_error = Some(error);
        let u = c.kp * error + c.ki * self.integral + c.kd * derivative;
        let u = u.clamp(-c.output_limit, c.output_limit);
        self.bid = (self.bid * u.exp()).clamp(PID_BID_FLOOR, PID_BID_CEIL);
        self.bid
    }
}

#[derive(Debug, Clone)]
pub struct PidPacer {
    controller: PidController,
}

impl PidPacer {
    pub fn new(config: PidConfig, initial_bid: f64) -> Self {
        PidPacer { controller: PidController::new(config, initial_bid) }
    }
}

impl BidStrategy for PidPacer {
    fn name(&self) -> &str {
        "pid"
    }

    fn next_bid(&mut self, state: &CampaignState, predicted_requests: u64) -> Result<f64, StrategyError> {
        if let Some(last) = state.last() {
            self.controller.update(last.spend, last.target_spend);
        }
        if target_spend(state, predicted_requests)? <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.controller.bid)
    }
}

/// Step size `ε_τ` for the dual update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    /// `ε_τ = ε_0 / sqrt(τ + 1)`.
    InverseSqrt(f64),
}

impl LearningRate {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            LearningRate::Constant(eps) => eps,
            LearningRate::InverseSqrt(eps) => eps / ((step + 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DogdConfig {
    pub learning_rate: LearningRate,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for DogdConfig {
    fn default() -> Self {
        DogdConfig { learning_rate: LearningRate::Constant(1.0), lambda_min: 1e-6, lambda_max: 1e6 }
    }
}

/// Dual variable of the budget constraint, driven by the gap between the
/// observed spend rate and the flat rate `B / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DogdController {
    pub config: DogdConfig,
    pub lambda: f64,
    pub steps: usize,
}

impl DogdController {
    pub fn new(config: DogdConfig, initial_bid: f64) -> Self {
        let lambda = (1.0 / initial_bid).clamp(config.lambda_min, config.lambda_max);
        DogdController { config, lambda, steps: 0 }
    }

    pub fn bid(&self) -> f64 {
        1.0 / self.lambda
    }

    /// Applies one update from a cycle that spent `spend` over `requests`.
    pub fn update(&mut self, spend: f64, requests: u64, budget: f64, total_requests: u64) -> f64 {
        let observed_rate = spend / requests.max(1) as f64;
        let flat_rate = budget / total_requests as f64;
        let gradient = 1.0 - observed_rate / flat_rate;
        let eps = self.config.learning_rate.at(self.steps);
        self.lambda = (self.lambda - eps * gradient).clamp(self.config.lambda_min, self.config.lambda_max);
        self.steps += 1;
        self.bid()
    }
}

#[derive(Debug, Clone)]
pub struct DogdPacer {
    controller: DogdController,
}

impl DogdPacer {
    pub fn new(config: DogdConfig, initial_bid: f64) -> Self {
        DogdPacer { controller: DogdController::new(config, initial_bid) }
    }
}

impl BidStrategy for DogdPacer {
    fn name(&self) -> &str {
        "dogd"
    }

    fn next_bid(&mut self, state: &CampaignState, _predicted_requests: u64) -> Result<f64, StrategyError> {
        if let Some(last) = state.last() {
            self.controller.update(last.spend, last.requests, state.budget, state.total_requests);
        }
        Ok(self.controller.bid())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantBid(pub f64);

impl ConstantBid {
    pub fn new(bid: f64) -> Self {
        ConstantBid(bid)
    }
}

impl BidStrategy for ConstantBid {
    fn name(&self) -> &str {
        "constant"
    }

    fn next_bid(&mut self, _state: &CampaignState, _predicted_requests: u64) -> Result<f64, StrategyError> {
        Ok(self.0)
    }
}

/// `n` log-spaced bids over `[lo, hi]`, each snapped so that `1 / (1 / b) == b`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![dual_consistent(lo)],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| dual_consistent((a + (b - a) * i as f64 / (n - 1) as f64).exp()))
                .collect()
        }
    }
}

/// Smallest perturbation of `bid` that survives a round trip through its
/// dual variable.
pub fn dual_consistent(bid: f64) -> f64 {
    let mut b = bid;
    for _ in 0..8 {
        let back = 1.0 / (1.0 / b);
        if back == b {
            return b;
        }
        b = back;
    }
    b
}

/// Default oracle grid: 50 log-spaced bids spanning two decades either side
/// of the ratio of mean price to mean utility.
pub fn default_oracle_grid(market: &MarketParams) -> Vec<f64> {
    let center = market.mean_price() / market.mean_utility();
    log_grid(0.01 * center, 100.0 * center, 50)
}

/// Threshold on mean budget utilization (percent) for a bid to count as
/// spending the budget.
pub const FULL_UTILIZATION: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridEvaluation {
    pub bid: f64,
    pub mean_bur: f64,
    pub mean_spend: f64,
    /// Mean over episodes with at least one conversion.
    pub mean_cpv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleStatus {
    BudgetBinds,
    /// No grid bid reaches full utilization; the report falls back to the
    /// largest grid bid.
    BudgetNeverBinds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub bid: f64,
    pub cpv: Option<f64>,
    pub mean_bur: f64,
    pub mean_spend: f64,
    /// `1 / bid`, the budget multiplier implied by the chosen bid.
    pub implied_dual: f64,
    pub status: OracleStatus,
    pub evaluations: Vec<GridEvaluation>,
}

impl OracleReport {
    /// Spend at the chosen bid lies in `[0.99 B, B]`.
    pub fn budget_binds(&self, budget: f64) -> bool {
        self.mean_spend >= 0.99 * budget && self.mean_spend <= budget
    }
}

/// Evaluates every grid bid as a constant strategy on the given episodes.
///
/// Each episode stream is drawn once and replayed for every bid.
pub fn evaluate_constant_bids(
    market: &MarketParams,
    campaign: &CampaignConfig,
    seeds: &[EpisodeSeed],
    grid: &[f64],
) -> Result<Vec<GridEvaluation>, EnvError> {
    let sampler = OpportunitySampler::new(market)?;
    let per_episode: Vec<Vec<(f64, f64, Option<f64>)>> = seeds
        .par_iter()
        .map(|seed| {
            let stream = sampler.stream(&mut opportunity_rng(seed.master, seed.stream), market.total_opportunities);
            grid.iter()
                .map(|&b| {
                    let mut rng = outcome_rng(seed.master, seed.stream);
                    let mut s = ConstantBid::new(b);
                    let r = run_episode_on_stream(&mut s, campaign, market, stream.iter().copied(), &mut rng)?;
                    Ok((r.total_spend, bur(&r, campaign.budget), cpv(&r)))
                })
                .collect::<Result<Vec<_>, EnvError>>()
        })
        .collect::<Result<_, _>>()?;

    let n = seeds.len().max(1) as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, &bid)| {
            let mean_spend = per_episode.iter().map(|e| e[j].0).sum::<f64>() / n;
            let mean_bur = per_episode.iter().map(|e| e[j].1).sum::<f64>() / n;
            let cpvs: Vec<f64> = per_episode.iter().filter_map(|e| e[j].2).collect();
            let mean_cpv = (!cpvs.is_empty()).then(|| cpvs.iter().sum::<f64>() / cpvs.len() as f64);
            GridEvaluation { bid, mean_bur, mean_spend, mean_cpv }
        })
        .collect())
}

/// Picks the lowest-CPV bid among those reaching full utilization; ties go
/// to the smaller bid.
pub fn select_oracle_bid(evaluations: &[GridEvaluation]) -> Option<&GridEvaluation> {
    evaluations
        .iter()
        .filter(|e| e.mean_bur >= FULL_UTILIZATION && e.mean_cpv.is_some())
        .min_by(|a, b| {
            a.mean_cpv
                .unwrap()
                .total_cmp(&b.mean_cpv.unwrap())
                .then(a.bid.total_cmp(&b.bid))
        })
}

/// Hindsight grid search for the best constant bid.
///
/// With `refine > 0`, a second linear grid of `refine` bids is laid between
/// the neighbours of the coarse optimum and the selection is repeated over
/// the union of both grids.
pub fn hindsight_optimal_constant_bid(
    market: &MarketParams,
    campaign: &CampaignConfig,
    seeds: &[EpisodeSeed],
    grid: &[f64],
    refine: usize,
) -> Result<OracleReport, EnvError> {
    if grid.is_empty() {
        return Err(EnvError::InvalidCampaign("oracle_grid", "grid is empty".into()));
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    if !(campaign.budget > 0.0) {
        let bid = *grid.last().unwrap();
        return Ok(OracleReport {
            bid,
            cpv: None,
            mean_bur: 0.0,
            mean_spend: 0.0,
            implied_dual: 1.0 / bid,
            status: OracleStatus::BudgetNeverBinds,
            evaluations: vec![],
        });
    }

    let mut evaluations = evaluate_constant_bids(market, campaign, seeds, &grid)?;
    if refine > 0 {
        if let Some(best) = select_oracle_bid(&evaluations) {
            let i = grid.iter().position(|&b| b == best.bid).unwrap();
            let lo = grid[i.saturating_sub(1)];
            let hi = grid[(i + 1).min(grid.len() - 1)];
            let fine: Vec<f64> = (1..=refine)
                .map(|k| dual_consistent(lo + (hi - lo) * k as f64 / (refine + 1) as f64))
                .filter(|b| grid.binary_search_by(|g| g.total_cmp(b)).is_err())
                .collect();
            evaluations.extend(evaluate_constant_bids(market, campaign, seeds, &fine)?);
            evaluations.sort_by(|a, b| a.bid.total_cmp(&b.bid));
        }
    }

    let report = match select_oracle_bid(&evaluations) {
        Some(best) => OracleReport {
            bid: best.bid,
            cpv: best.mean_cpv,
            mean_bur: best.mean_bur,
            mean_spend: best.mean_spend,
            implied_dual: 1.0 / best.bid,
            status: OracleStatus::BudgetBinds,
            evaluations: vec![],
        },
        None => {
            let top = evaluations.last().unwrap();
            OracleReport {
                bid: top.bid,
                cpv: top.mean_cpv,
                mean_bur: top.mean_bur,
                mean_spend: top.mean_spend,
                implied_dual: 1.0 / top.bid,
                status: OracleStatus::BudgetNeverBinds,
                evaluations: vec![],
            }
        }
    };
    Ok(OracleReport { evaluations, ..report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::PacingObservation;

    fn fresh(kp: f64, ki: f64, kd: f64) -> PidController {
        PidController::new(PidConfig { kp, ki, kd, ..Default::default() }, 1.0)
    }

    #[test]
    fn pid_examples() {
        let mut pid = PidController::new(PidConfig::default(), 1.0);
        assert_eq!(pid.update(5.0, 5.0), 1.0);

        let mut pid = fresh(1.0, 0.0, 0.0);
        assert!((pid.update(0.0, 3.0) - std::f64::consts::E).abs() < 1e-12);

        let mut pid = fresh(1.0, 0.0, 0.0);
        assert!((pid.update(6.0, 3.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn pid_output_and_integral_are_clamped() {
        let mut pid = PidController::new(PidConfig { kp: 100.0, ..Default::default() }, 1.0);
        assert!((pid.update(0.0, 1.0) - 1.0f64.exp()).abs() < 1e-12);
        for _ in 0..50 {
            pid.update(0.0, 1.0);
        }
        assert_eq!(pid.integral, 10.0);
        let mut pid = PidController::new(PidConfig::default(), 1.0);
        assert_eq!(pid.update(1.0, 0.0), 1.0);
        assert_eq!(pid.prev_error, None);
    }

    #[test]
    fn dogd_examples() {
        let cfg = DogdConfig { learning_rate: LearningRate::Constant(0.1), ..Default::default() };
        // B/T = 1: rates above/below one move the dual
        let mut d = DogdController::new(cfg.clone(), 1.0);
        d.update(100.0, 100, 1000.0, 1000);
        assert_eq!(d.lambda, 1.0);

        let mut d = DogdController::new(cfg.clone(), 1.0);
        let bid = d.update(200.0, 100, 1000.0, 1000);
        assert!((d.lambda - 1.1).abs() < 1e-12);
        assert!((bid - 1.0 / 1.1).abs() < 1e-12);

        let mut d = DogdController::new(cfg, 1.0);
        let bid = d.update(0.0, 100, 1000.0, 1000);
        assert!((d.lambda - 0.9).abs() < 1e-12);
        assert!((bid - 1.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn dogd_dual_is_clamped() {
        let cfg = DogdConfig { learning_rate: LearningRate::Constant(1e9), ..Default::default() };
        let mut d = DogdController::new(cfg, 1.0);
        d.update(0.0, 10, 1.0, 10);
        assert_eq!(d.lambda, 1e-6);
        d.update(1e9, 10, 1.0, 10);
        assert_eq!(d.lambda, 1e6);
    }

    #[test]
    fn pacers_start_from_initial_bid() {
        let state = CampaignState::new(100.0, 1000, 5);
        let mut pid = PidPacer::new(PidConfig::default(), 0.3);
        let mut dogd = DogdPacer::new(DogdConfig::default(), 0.25);
        assert_eq!(pid.next_bid(&state, 100).unwrap(), 0.3);
        assert_eq!(dogd.next_bid(&state, 100).unwrap(), 0.25);
    }

    #[test]
    fn pid_pacer_bids_zero_without_budget() {
        let mut state = CampaignState::new(100.0, 1000, 5);
        state.record_with_spend(PacingObservation {
            cycle_index: 0,
            bid: 1.0,
            spend: 100.0,
            conversions: 1.0,
            requests: 100,
            wins: 10,
            target_spend: 10.0,
        });
        let mut pid = PidPacer::new(PidConfig::default(), 1.0);
        assert_eq!(pid.next_bid(&state, 100).unwrap(), 0.0);
    }

    #[test]
    fn log_grid_spans_endpoints() {
        let g = log_grid(0.01, 100.0, 5);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[2] - 1.0).abs() < 1e-12);
        assert!((g[4] - 100.0).abs() < 1e-9);
        for b in g {
            assert_eq!(1.0 / (1.0 / b), b);
        }
    }

    #[test]
    fn oracle_on_empty_budget_never_binds() {
        let market = MarketParams { total_opportunities: 100, cycle_size: 10, ..Default::default() };
        let campaign = CampaignConfig { budget: 0.0, ..Default::default() };
        let seeds = [EpisodeSeed::evaluation(1, 0)];
        let r = hindsight_optimal_constant_bid(&market, &campaign, &seeds, &[0.1, 0.5], 0).unwrap();
        assert_eq!(r.status, OracleStatus::BudgetNeverBinds);
        assert_eq!(r.bid, 0.5);
    }

    #[test]
    fn oracle_zero_grid_never_binds() {
        let market = MarketParams { total_opportunities: 100, cycle_size: 10, ..Default::default() };
        let seeds = [EpisodeSeed::evaluation(1, 0)];
        let r = hindsight_optimal_constant_bid(&market, &CampaignConfig::default(), &seeds, &[0.0], 0).unwrap();
        assert_eq!(r.status, OracleStatus::BudgetNeverBinds);
        assert_eq!(r.bid, 0.0);
        assert_eq!(r.mean_bur, 0.0);
        assert!(r.cpv.is_none());
    }

    #[test]
    fn oracle_degenerate_market() {
        // every impression costs 0.5 and converts at 0.25, so c/r = 2
        let market = MarketParams {
            utility_mu: 0.25f64.ln(),
            utility_sigma: 0.0,
            price_mu: 0.5f64.ln(),
            price_sigma: 0.0,
            total_opportunities: 40,
            cycle_size: 10,
            ..Default::default()
        };
        let price = market.price_mu.exp();
        let utility = market.utility_mu.exp();
        let campaign = CampaignConfig { budget: 40.0 * price * 1.005, ..Default::default() };
        let grid = [1.0, 1.5, 2.0, 2.5, 3.0, 8.0];
        let seeds = [EpisodeSeed::evaluation(1, 0), EpisodeSeed::evaluation(1, 1)];
        let r = hindsight_optimal_constant_bid(&market, &campaign, &seeds, &grid, 0).unwrap();
        assert_eq!(r.status, OracleStatus::BudgetBinds);
        // 2.0 ties on eCPM and loses; 2.5 is the smallest winning bid
        assert_eq!(r.bid, 2.5);
        assert!((r.cpv.unwrap() - price / utility).abs() < 1e-12);
        assert!(r.budget_binds(campaign.budget));
        assert_eq!(r.implied_dual, 0.4);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let r = hindsight_optimal_constant_bid(
            &MarketParams::default(),
            &CampaignConfig::default(),
            &[EpisodeSeed::evaluation(0, 0)],
            &[],
            0,
        );
        assert!(r.is_err());
    }
}
