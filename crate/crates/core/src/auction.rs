//! Second-price auction environment: log-normal opportunity streams,
//! per-request auction mechanics and the per-episode pacing loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::strategy::{target_spend, BidStrategy, CampaignState, PacingObservation, StrategyError};

/// Stream offset separating tuning episodes from evaluation episodes.
pub const TUNING_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid market parameter `{0}`: {1}")]
    InvalidMarket(&'static str, String),
    #[error("invalid campaign parameter `{0}`: {1}")]
    InvalidCampaign(&'static str, String),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

/// One auction request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionOpportunity {
    /// Welfare utility of an impression (e.g. video play rate).
    pub utility: f64,
    /// Highest competing eCPM, paid on a win.
    pub price: f64,
}

/// How won impressions are credited with conversions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConversionMode {
    /// Credit the utility itself.
    #[default]
    Expected,
    /// Credit one conversion with probability `min(utility, 1)`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub utility_mu: f64,
    pub utility_sigma: f64,
    pub price_mu: f64,
    pub price_sigma: f64,
    /// Total auction requests in an episode.
    pub total_opportunities: u64,
    /// Requests per pacing cycle; the last cycle may be short.
    pub cycle_size: u64,
    pub conversion_mode: ConversionMode,
    /// Relative half-width of the uniform noise applied to the next-cycle
    /// request forecast. Zero gives a perfect forecast.
    pub request_noise: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            utility_mu: -3.0,
            utility_sigma: 0.5,
            price_mu: 0.01f64.ln(),
            price_sigma: 0.6,
            total_opportunities: 50_000,
            cycle_size: 500,
            conversion_mode: ConversionMode::Expected,
            request_noise: 0.0,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |k, msg: &str| Err(EnvError::InvalidMarket(k, msg.to_string()));
        if !self.utility_mu.is_finite() {
            return bad("mu_r", "must be finite");
        }
        if !self.price_mu.is_finite() {
            return bad("mu_c", "must be finite");
        }
        if !(self.utility_sigma >= 0.0 && self.utility_sigma.is_finite()) {
            return bad("sigma_r", "must be finite and >= 0");
        }
        if !(self.price_sigma >= 0.0 && self.price_sigma.is_finite()) {
            return bad("sigma_c", "must be finite and >= 0");
        }
        if self.total_opportunities == 0 {
            return bad("total_opportunities", "must be >= 1");
        }
        if self.cycle_size == 0 || self.cycle_size > self.total_opportunities {
            return bad("cycle_size", "must satisfy 1 <= M <= T");
        }
        if !(0.0..1.0).contains(&self.request_noise) {
            return bad("request_noise", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Mean utility of the log-normal utility distribution.
    pub fn mean_utility(&self) -> f64 {
        (self.utility_mu + 0.5 * self.utility_sigma * self.utility_sigma).exp()
    }

    /// Mean competing price.
    pub fn mean_price(&self) -> f64 {
        (self.price_mu + 0.5 * self.price_sigma * self.price_sigma).exp()
    }

    pub fn cycles(&self) -> u64 {
        self.total_opportunities.div_ceil(self.cycle_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub budget: f64,
    /// Average cost-per-conversion ceiling; `None` for max delivery.
    pub cost_cap: Option<f64>,
    /// Bid per conversion used to start the campaign.
    pub initial_bid: f64,
    /// Number of recent cycles kept for landscape fitting.
    pub window: usize,
    /// Upper end of the bid search range.
    pub max_bid: f64,
    /// Step of the cost-cap bid grid.
    pub bid_step: f64,
    /// Remaining budget below which the campaign is considered depleted.
    pub min_cost: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            budget: 300.0,
            cost_cap: None,
            initial_bid: 0.1,
            window: 20,
            max_bid: 2.0,
            bid_step: 0.001,
            min_cost: 1e-6,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |k, msg: &str| Err(EnvError::InvalidCampaign(k, msg.to_string()));
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad("budget", "must be finite and > 0");
        }
        if let Some(c) = self.cost_cap {
            if !(c > 0.0 && c.is_finite()) {
                return bad("cost_cap", "must be finite and > 0");
            }
        }
        if !(self.initial_bid > 0.0 && self.initial_bid.is_finite()) {
            return bad("initial_bid", "must be finite and > 0");
        }
        if self.window == 0 {
            return bad("window_n", "must be >= 1");
        }
        if !(self.bid_step > 0.0 && self.max_bid > self.bid_step && self.max_bid.is_finite()) {
            return bad("grid_max", "must satisfy grid_max > grid_step > 0");
        }
        if !(self.min_cost >= 0.0) {
            return bad("min_cost", "must be >= 0");
        }
        Ok(())
    }
}

/// Independent log-normal samplers for utility and price.
#[derive(Debug, Clone)]
pub struct OpportunitySampler {
    utility: LogNormal<f64>,
    price: LogNormal<f64>,
}

impl OpportunitySampler {
    pub fn new(params: &MarketParams) -> Result<Self, EnvError> {
        params.validate()?;
        let utility = LogNormal::new(params.utility_mu, params.utility_sigma)
            .map_err(|e| EnvError::InvalidMarket("sigma_r", e.to_string()))?;
        let price = LogNormal::new(params.price_mu, params.price_sigma)
            .map_err(|e| EnvError::InvalidMarket("sigma_c", e.to_string()))?;
        Ok(OpportunitySampler { utility, price })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AuctionOpportunity {
        let utility = self.utility.sample(rng);
        let price = self.price.sample(rng);
        AuctionOpportunity { utility, price }
    }

    /// Draws a full episode stream up front.
    pub fn stream<R: Rng + ?Sized>(&self, rng: &mut R, n: u64) -> Vec<AuctionOpportunity> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Draws one opportunity. Prefer [`OpportunitySampler`] in loops.
pub fn sample_opportunity<R: Rng + ?Sized>(
    rng: &mut R,
    params: &MarketParams,
) -> Result<AuctionOpportunity, EnvError> {
    Ok(OpportunitySampler::new(params)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionOutcome {
    pub won: bool,
    pub cost: f64,
    pub conversions: f64,
}

impl AuctionOutcome {
    pub const LOST: AuctionOutcome = AuctionOutcome { won: false, cost: 0.0, conversions: 0.0 };
}

/// Second-price auction under expected-value crediting.
///
/// The per-impression bid is `bid_per_conversion * utility`; it wins when it
/// strictly beats the competing price and the price fits the remaining budget.
pub fn run_auction(
    bid_per_conversion: f64,
    opp: AuctionOpportunity,
    remaining_budget: f64,
) -> AuctionOutcome {
    if bid_per_conversion * opp.utility > opp.price && opp.price <= remaining_budget {
        AuctionOutcome { won: true, cost: opp.price, conversions: opp.utility }
    } else {
        AuctionOutcome::LOST
    }
}

/// Rng for the opportunity stream of one episode.
pub fn opportunity_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.wrapping_mul(2));
    rng
}

/// Rng for everything else an episode draws (conversion sampling, forecast
/// noise), kept apart so every strategy faces the same opportunity stream.
pub fn outcome_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.wrapping_mul(2).wrapping_add(1));
    rng
}

/// Seed block of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeed {
    pub master: u64,
    pub stream: u64,
}

impl EpisodeSeed {
    pub fn evaluation(master: u64, episode: u64) -> Self {
        EpisodeSeed { master, stream: episode }
    }

    pub fn tuning(master: u64, episode: u64) -> Self {
        EpisodeSeed { master, stream: TUNING_STREAM_OFFSET + episode }
    }
}

/// One pacing cycle as seen by the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub observation: PacingObservation,
    /// Budget left after the cycle.
    pub remaining_budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub budget: f64,
    pub total_spend: f64,
    pub impressions: u64,
    pub conversions: f64,
    pub remaining_budget: f64,
    pub cycles: Vec<CycleRecord>,
}

impl EpisodeResult {
    /// Bid held during each cycle, in order.
    pub fn bids(&self) -> Vec<f64> {
        self.cycles.iter().map(|c| c.observation.bid).collect()
    }
}

/// Runs one episode with a freshly seeded opportunity stream.
pub fn run_episode<S: BidStrategy + ?Sized>(
    strategy: &mut S,
    campaign: &CampaignConfig,
    market: &MarketParams,
    seed: EpisodeSeed,
) -> Result<EpisodeResult, EnvError> {
    let sampler = OpportunitySampler::new(market)?;
    let mut opp_rng = opportunity_rng(seed.master, seed.stream);
    let stream = std::iter::repeat_with(move || sampler.sample(&mut opp_rng));
    run_episode_on_stream(strategy, campaign, market, stream, &mut outcome_rng(seed.master, seed.stream))
}

/// Runs one episode over a caller-supplied opportunity sequence.
///
/// At most `market.total_opportunities` items are consumed. Requests are
/// grouped into cycles of `market.cycle_size`; the strategy is asked for a
/// bid at the start of each cycle and that bid is held for the whole cycle.
/// The episode ends early once the remaining budget drops below
/// `campaign.min_cost`.
pub fn run_episode_on_stream<S, I, R>(
    strategy: &mut S,
    campaign: &CampaignConfig,
    market: &MarketParams,
    opportunities: I,
    rng: &mut R,
) -> Result<EpisodeResult, EnvError>
where
    S: BidStrategy + ?Sized,
    I: IntoIterator<Item = AuctionOpportunity>,
    R: Rng + ?Sized,
{
    market.validate()?;
    campaign.validate()?;
    let total = market.total_opportunities;
    let mut opportunities = opportunities.into_iter();
    let mut state = CampaignState::new(campaign.budget, total, campaign.window);
    let mut cycles = Vec::with_capacity(market.cycles() as usize);
    let mut impressions = 0u64;

    let mut start = 0u64;
    let mut cycle_index = 0usize;
    while start < total && state.remaining_budget >= campaign.min_cost.max(f64::MIN_POSITIVE) {
        let requests = market.cycle_size.min(total - start);
        let predicted = predict_requests(requests, market.request_noise, rng);
        let target = target_spend(&state, predicted)?;
        let bid = strategy.next_bid(&state, predicted)?;
        if !(bid >= 0.0 && bid.is_finite()) {
            return Err(StrategyError::InvalidBid(bid).into());
        }

        let mut spend = 0.0;
        let mut conversions = 0.0;
        let mut wins = 0u64;
        let mut served = 0u64;
        for opp in opportunities.by_ref().take(requests as usize) {
            served += 1;
            let out = run_auction(bid, opp, state.remaining_budget);
            if out.won {
                let credit = match market.conversion_mode {
                    ConversionMode::Expected => out.conversions,
                    ConversionMode::Bernoulli => {
                        if rng.random::<f64>() < opp.utility.min(1.0) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                // price <= remaining, so the difference never goes negative
                state.remaining_budget -= out.cost;
                spend += out.cost;
                conversions += credit;
                wins += 1;
            }
        }
        if served == 0 {
            break;
        }

        let observation = PacingObservation {
            cycle_index,
            bid,
            spend,
            conversions,
            requests: served,
            wins,
            target_spend: target,
        };
        state.record(observation);
        impressions += wins;
        cycles.push(CycleRecord { observation, remaining_budget: state.remaining_budget });
        start += served;
        cycle_index += 1;
    }

    Ok(EpisodeResult {
        budget: campaign.budget,
        total_spend: campaign.budget - state.remaining_budget,
        impressions,
        conversions: state.cumulative_conversions,
        remaining_budget: state.remaining_budget,
        cycles,
    })
}

/// Forecast of next-cycle requests. Arrivals are uniform, so the forecast is
/// exact unless noise is configured.
fn predict_requests<R: Rng + ?Sized>(actual: u64, noise: f64, rng: &mut R) -> u64 {
    if noise == 0.0 {
        return actual;
    }
    let factor = 1.0 + noise * (2.0 * rng.random::<f64>() - 1.0);
    ((actual as f64 * factor).round() as u64).max(1)
}
