//! Agent-based simulation of scale-diversified trend followers on tick
//! price series.
//!
//! Each agent watches the mid price through its own lag `l` and bets on the
//! continuation of the move it sees. Correct bets earn a unit of utility,
//! wrong ones cost a unit, and an agent whose utility reaches zero is
//! replaced at once by a newborn. The [`engine`] owns that loop, the
//! [`interaction`] module adds a merchant agent that either seeds newborn
//! scales (BM) or gates decisions with its recommendation (RM), and
//! [`stats`] turns the resulting event stream into population means and
//! lifetime and mortality distributions.
//!
//! Price code is generic over [`Price`] and statistics over [`Real`]; the
//! aliases below fix the common choices.

// Range checks are written `!(x > lo)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod engine;
pub mod interaction;
pub mod scalar;
pub mod stats;
pub mod tickdata;

pub use engine::{AgentState, PendingSettlement, RunRecord, SimConfig, Strategy, World};
pub use interaction::{MerchantMode, MerchantState};
pub use scalar::{Price, Real};
pub use stats::{DeathEvent, DistributionEstimate, TransientSample};
pub use tickdata::{MidSeries, TickQuote};

/// Exact decimal price.
pub type ExactPrice = num_rational::Ratio<i64>;

pub type Series = MidSeries<f64>;
pub type ExactSeries = MidSeries<ExactPrice>;
pub type Quote = TickQuote<f64>;
pub type ExactQuote = TickQuote<ExactPrice>;

pub type Distribution = DistributionEstimate<f64>;
pub type LifetimeDistribution = stats::LifetimeDistribution<f64>;
pub type DeathRateDistribution = stats::DeathRateDistribution<f64>;
pub type PowerLawFit = stats::PowerLawFit<f64>;
