//! Geometric trading agents.
//!
//! Each agent sits at a training claim's point in normalized feature space and
//! only ever buys the contract matching that claim's outcome. It bids on a
//! market when the market's claim falls inside a ball around its center whose
//! radius shrinks once its contract trades above the agent's reservation price.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ClaimSet, FEATURE_COUNT};
use crate::lmsr::{Account, Action, Order, Owner, Side};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("training claim `{0}` has no outcome label")]
    Unlabeled(String),
    #[error("training set must be normalized before spawning agents")]
    NotNormalized,
    #[error("invalid agent parameter: {0}")]
    Invalid(String),
    #[error("population io: {0}")]
    Io(#[from] std::io::Error),
    #[error("population json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGenome {
    pub center: Vec<f64>,
    pub side: Side,
    pub base_radius: f64,
    pub reservation_price: f64,
    pub price_sensitivity: f64,
    /// Claim the agent was spawned from; inherited by offspring.
    pub origin: String,
}

impl AgentGenome {
    /// Radius after shrinking for the current price of the agent's contract.
    pub fn effective_radius(&self, p_side: f64) -> f64 {
        let excess = (p_side - self.reservation_price).max(0.0);
        self.base_radius * (1.0 - self.price_sensitivity * excess).max(0.0)
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.center
            .iter()
            .zip(x)
            .map(|(c, v)| (c - v) * (c - v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn in_region(&self, x: &[f64], p_side: f64) -> bool {
        self.in_region_at(self.distance(x), p_side)
    }

    /// Same test as [`in_region`](Self::in_region) for a precomputed distance.
    pub fn in_region_at(&self, distance: f64, p_side: f64) -> bool {
        let r = self.effective_radius(p_side);
        // A collapsed region admits nothing, not even the center.
        r > 0.0 && distance <= r
    }

    /// Relative undervaluation of the agent's contract at `p_side`.
    pub fn margin(&self, p_side: f64) -> f64 {
        (self.reservation_price - p_side) / p_side
    }

    /// Region and margin conditions, without the participation draw.
    pub fn wants_to_buy(&self, distance: f64, p_side: f64, min_margin: f64) -> bool {
        self.in_region_at(distance, p_side) && self.margin(p_side) >= min_margin
    }

    fn validate(&self) -> Result<(), AgentError> {
        if self.center.len() != FEATURE_COUNT {
            return Err(AgentError::Invalid(format!(
                "center has {} coordinates",
                self.center.len()
            )));
        }
        if !(self.base_radius > 0.0) {
            return Err(AgentError::Invalid("base_radius must be positive".into()));
        }
        if !(self.reservation_price > 0.0 && self.reservation_price < 1.0) {
            return Err(AgentError::Invalid(
                "reservation_price must lie in (0, 1)".into(),
            ));
        }
        if !(self.price_sensitivity >= 0.0) {
            return Err(AgentError::Invalid(
                "price_sensitivity must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-field mutation scales. Zero leaves the field untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationRates {
    /// Standard deviation of the log-normal factor on `base_radius`.
    pub radius: f64,
    /// Standard deviation of the log-normal factor on `price_sensitivity`.
    pub sensitivity: f64,
    /// Standard deviation of the additive step on `reservation_price`.
    pub reservation: f64,
}

impl MutationRates {
    pub const ZERO: MutationRates = MutationRates {
        radius: 0.0,
        sensitivity: 0.0,
        reservation: 0.0,
    };
}

impl Default for MutationRates {
    fn default() -> Self {
        Self {
            radius: 0.15,
            sensitivity: 0.2,
            reservation: 0.03,
        }
    }
}

pub const RESERVATION_MIN: f64 = 0.01;
pub const RESERVATION_MAX: f64 = 0.99;

pub fn mutate<R: Rng + ?Sized>(
    parent: &AgentGenome,
    rates: &MutationRates,
    rng: &mut R,
) -> AgentGenome {
    let mut child = parent.clone();
    if rates.radius > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        child.base_radius *= (rates.radius * z).exp();
    }
    if rates.sensitivity > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        child.price_sensitivity *= (rates.sensitivity * z).exp();
    }
    if rates.reservation > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        child.reservation_price = (child.reservation_price + rates.reservation * z)
            .clamp(RESERVATION_MIN, RESERVATION_MAX);
    }
    child
}

/// Starting genome parameters and the jitter applied when spawning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenomeDefaults {
    pub base_radius: f64,
    pub reservation_price: f64,
    pub price_sensitivity: f64,
    pub jitter: MutationRates,
}

impl Default for GenomeDefaults {
    fn default() -> Self {
        Self {
            base_radius: 0.6,
            reservation_price: 0.75,
            price_sensitivity: 2.0,
            jitter: MutationRates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub genome: AgentGenome,
    pub account: Account,
}

impl Agent {
    pub fn new(id: u32, genome: AgentGenome, cash: f64) -> Self {
        Self {
            id,
            genome,
            account: Account::new(Owner::Agent(id), cash),
        }
    }
}

/// Per-tick trading parameters shared by all agents of a market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidParams {
    /// Per-agent, per-tick participation probability.
    pub lambda: f64,
    /// Minimum relative undervaluation required to buy.
    pub min_margin: f64,
}

/// One Bernoulli(lambda) draw. Always consumes exactly one value from `rng`.
pub fn participates<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < lambda
}

/// Whether `agent` submits a buy this tick for the claim at `x`.
pub fn decide<R: Rng + ?Sized>(
    agent: &Agent,
    x: &[f64],
    p_side: f64,
    params: BidParams,
    tick: u64,
    rng: &mut R,
) -> Option<Order> {
    let drawn = participates(params.lambda, rng);
    let genome = &agent.genome;
    (drawn && genome.wants_to_buy(genome.distance(x), p_side, params.min_margin)).then(|| Order {
        owner: Owner::Agent(agent.id),
        side: genome.side,
        action: Action::Buy,
        tick_submitted: tick,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<Agent>,
    pub generation: u32,
    pub seed: u64,
    pub next_id: u32,
    /// Agent retained unconditionally as the elite of its lineage.
    #[serde(default)]
    pub champion: Option<u32>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Sets every account back to `cash` with no holdings.
    pub fn reset_accounts(&mut self, cash: f64) {
        for a in &mut self.agents {
            a.account = Account::new(Owner::Agent(a.id), cash);
        }
    }

    pub fn to_json(&self) -> Result<String, AgentError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let pop: Population = serde_json::from_str(text)?;
        for a in &pop.agents {
            a.genome.validate()?;
        }
        Ok(pop)
    }
}

/// One agent per (training claim, clone), centered on the claim.
pub fn spawn_population(
    train: &ClaimSet,
    clones_per_point: usize,
    defaults: &GenomeDefaults,
    initial_cash: f64,
    seed: u64,
) -> Result<Population, AgentError> {
    if clones_per_point == 0 {
        return Err(AgentError::Invalid(
            "clones_per_point must be at least 1".into(),
        ));
    }
    if !train.is_normalized() {
        return Err(AgentError::NotNormalized);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity(train.len() * clones_per_point);
    for record in &train.records {
        let outcome = record
            .outcome
            .ok_or_else(|| AgentError::Unlabeled(record.claim_id.clone()))?;
        let base = AgentGenome {
            center: record.features.clone(),
            side: Side::winning(outcome),
            base_radius: defaults.base_radius,
            reservation_price: defaults.reservation_price,
            price_sensitivity: defaults.price_sensitivity,
            origin: record.claim_id.clone(),
        };
        base.validate()?;
        for _ in 0..clones_per_point {
            let genome = mutate(&base, &defaults.jitter, &mut rng);
            let id = agents.len() as u32;
            agents.push(Agent::new(id, genome, initial_cash));
        }
    }
    let next_id = agents.len() as u32;
    Ok(Population {
        agents,
        generation: 0,
        seed,
        next_id,
        champion: None,
    })
}
