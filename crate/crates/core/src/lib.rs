//! Lightweight receding-horizon bid pacing for brand auction campaigns.
//!
//! The crate bundles the pieces needed to study budget pacing offline:
//!
//! - [`auction`]: a seeded second-price auction simulator with log-normal
//!   utilities and competing prices, and the per-cycle episode loop.
//! - [`isotonic`]: weighted PAVA and the monotone bid landscape it produces.
//! - [`strategy`]: the MPC max-delivery and cost-cap bidders.
//! - [`baselines`]: PID, dual online gradient descent, constant bids and the
//!   hindsight-optimal constant bid.
//! - [`metrics`]: BUR, CPV and bid variance.
//! - [`config`] and [`harness`]: experiment configuration, tuning, sweeps and
//!   CSV output.

pub mod auction;
pub mod baselines;
pub mod config;
pub mod harness;
pub mod isotonic;
pub mod metrics;
pub mod strategy;

pub use auction::{
    run_auction, run_episode, run_episode_on_stream, sample_opportunity, AuctionOpportunity, AuctionOutcome,
    CampaignConfig, ConversionMode, CycleRecord, EnvError, EpisodeResult, EpisodeSeed, MarketParams,
    OpportunitySampler,
};
pub use baselines::{
    hindsight_optimal_constant_bid, ConstantBid, DogdConfig, DogdPacer, LearningRate, OracleReport, OracleStatus,
    PidConfig, PidPacer,
};
pub use config::{Algorithm, ConfigError, ExperimentConfig};
pub use harness::{run_benchmark, sweep_initial_bid, BenchmarkReport, HarnessError, TunedParams};
pub use isotonic::{pava, BidValuePair, IsotonicError, MonotoneCurve};
pub use metrics::{bid_variance, bur, cpv, BatchSummary};
pub use strategy::{
    adjusted_cost_cap, target_spend, BidStrategy, CampaignState, CostCapTarget, MpcConfig, MpcCostCap,
    MpcMaxDelivery, PacingObservation, StrategyError,
};
