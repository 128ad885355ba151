//! Hybrid human/agent prediction markets for forecasting whether published
//! findings replicate.
//!
//! The crate is organized bottom-up:
//!
//! - [`features`]: claim feature vectors, min-max scaling, domain splits
//! - [`lmsr`]: the binary LMSR market maker, accounts and settlement
//! - [`agents`]: geometric agents and their per-tick buy decision
//! - [`evolution`]: genetic training of an agent population
//! - [`tuning`]: grid search scored by accuracy and participation plausibility
//! - [`sim`]: the tick engine behind artificial, hybrid and human-only markets
//! - [`eval`]: predictions, MAE and per-discipline reports
//! - [`synthetic`]: generated corpora for demos and tests
//! - [`reference`]: recorded closing prices of the 30 held-out claims
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod agents;
pub mod eval;
pub mod evolution;
pub mod features;
pub mod lmsr;
pub mod reference;
pub mod sim;
pub mod synthetic;
pub mod tuning;

pub use agents::{Agent, AgentGenome, BidParams, GenomeDefaults, MutationRates, Population};
pub use eval::{final_prediction, mae, EvaluationReport};
pub use evolution::{TrainConfig, TrainedMarket};
pub use features::{ClaimRecord, ClaimSet, Domain, Outcome, Role, Scaler, FEATURE_COUNT};
pub use lmsr::{Account, Action, MarketState, Order, Owner, Side, Trade};
pub use sim::{HumanOrder, MarketEngine, MarketParams, MarketRun, Mode, SimConfig};

/// Mixes a base seed with stream identifiers (splitmix64 finalizer per step).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    let mut z = seed;
    for &s in stream {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(s);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
