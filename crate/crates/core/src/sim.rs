//! Discrete-tick market runner.
//!
//! A tick first lets every agent decide in ascending id order, executing each
//! buy immediately so the next agent sees the moved price, then drains the
//! human orders queued for the tick in arrival order. Artificial, hybrid and
//! human-only markets all run through [`MarketEngine`]; they differ only in
//! which traders are present.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{participates, Agent, BidParams, Population};
use crate::eval::final_prediction;
use crate::features::{ClaimRecord, Domain, Outcome};
use crate::lmsr::{Account, Action, MarketState, Order, Owner, Side, Trade, TradeError};
use crate::{derive_seed, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Artificial,
    Hybrid,
    HumanOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Artificial, Mode::Hybrid, Mode::HumanOnly];

    pub fn has_agents(self) -> bool {
        !matches!(self, Mode::HumanOnly)
    }

    pub fn has_humans(self) -> bool {
        !matches!(self, Mode::Artificial)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Artificial => "artificial",
            Mode::Hybrid => "hybrid",
            Mode::HumanOnly => "human-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "artificial" | "ai" => Ok(Mode::Artificial),
            "hybrid" => Ok(Mode::Hybrid),
            "human-only" | "human" => Ok(Mode::HumanOnly),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub ticks: u64,
    /// Wall-clock spacing between ticks; 0 runs back-to-back.
    pub tick_interval_ms: u64,
    /// Minimum number of ticks a live run must actually process.
    pub effective_tick_floor: u64,
    pub seed: u64,
    /// Overrides the trained participation rate for long markets.
    pub lambda: Option<f64>,
    /// Overrides the trained agent cash.
    pub agent_cash: Option<f64>,
    pub human_stake: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ticks: 43_200,
            tick_interval_ms: 0,
            effective_tick_floor: 39_000,
            seed: 0,
            lambda: None,
            agent_cash: None,
            human_stake: 25.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ticks == 0 {
            return Err("ticks must be at least 1".into());
        }
        if self.effective_tick_floor > self.ticks {
            return Err("effective_tick_floor exceeds ticks".into());
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err("lambda must lie in [0, 1]".into());
            }
        }
        if !(self.human_stake >= 0.0) {
            return Err("human_stake must be non-negative".into());
        }
        Ok(())
    }

    /// Seed of the agent participation stream for one claim's market.
    pub fn market_seed(&self, claim_id: &str) -> u64 {
        derive_seed(self.seed, &[stable_hash(claim_id)])
    }
}

/// Parameters fixed when a market opens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub liquidity: f64,
    pub bid: BidParams,
    pub agent_cash: f64,
    pub human_stake: f64,
}

/// A human order waiting in a market's queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanOrder {
    pub participant: String,
    pub side: Side,
    pub action: Action,
}

/// A human order scheduled for a given tick of a batch run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedOrder {
    pub tick: u64,
    #[serde(flatten)]
    pub order: HumanOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub order: Order,
    pub reason: String,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub tick: u64,
    pub agent_trades: u32,
    pub human_trades: u32,
    pub rejections: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunParticipation {
    pub agents: u32,
    pub agents_traded: u32,
    pub agent_trades: u64,
    pub human_trades: u64,
    pub ticks: u64,
}

impl RunParticipation {
    /// Fraction of agents that traded at least once.
    pub fn traded_fraction(&self) -> f64 {
        if self.agents == 0 {
            0.0
        } else {
            f64::from(self.agents_traded) / f64::from(self.agents)
        }
    }

    /// Mean fraction of agents trading per tick.
    pub fn active_fraction(&self) -> f64 {
        if self.agents == 0 || self.ticks == 0 {
            0.0
        } else {
            self.agent_trades as f64 / (f64::from(self.agents) * self.ticks as f64)
        }
    }
}

struct Seat {
    agent: Agent,
    distance: f64,
    traded: bool,
}

/// One market's mutable state: LMSR quantities, every trader's account and
/// the agent participation stream.
pub struct MarketEngine {
    claim_id: String,
    features: Vec<f64>,
    state: MarketState,
    seats: Vec<Seat>,
    humans: BTreeMap<String, Account>,
    params: MarketParams,
    rng: ChaCha8Rng,
    rejections: Vec<Rejection>,
    participation: RunParticipation,
}

impl MarketEngine {
    /// `agents` may be empty (human-only markets). They act in ascending id order.
    pub fn new(claim: &ClaimRecord, agents: Vec<Agent>, params: MarketParams, seed: u64) -> Self {
        let mut seats: Vec<Seat> = agents
            .into_iter()
            .map(|mut agent| {
                agent.account = Account::new(Owner::Agent(agent.id), params.agent_cash);
                Seat {
                    distance: agent.genome.distance(&claim.features),
                    agent,
                    traded: false,
                }
            })
            .collect();
        seats.sort_by_key(|s| s.agent.id);
        let participation = RunParticipation {
            agents: seats.len() as u32,
            ..Default::default()
        };
        Self {
            claim_id: claim.claim_id.clone(),
            features: claim.features.clone(),
            state: MarketState::new(params.liquidity),
            seats,
            humans: BTreeMap::new(),
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            rejections: Vec::new(),
            participation,
        }
    }

    pub fn claim_id(&self) -> &str {
        &self.claim_id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn tick_count(&self) -> u64 {
        self.state.tick
    }

    pub fn price_yes(&self) -> f64 {
        self.state.spot_price(Side::Yes)
    }

    pub fn trades(&self) -> &[Trade] {
        &self.state.log
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    pub fn participation(&self) -> RunParticipation {
        self.participation
    }

    pub fn agents(&self) -> impl Iterator<Item = &Agent> {
        self.seats.iter().map(|s| &s.agent)
    }

    pub fn human_accounts(&self) -> &BTreeMap<String, Account> {
        &self.humans
    }

    /// The participant's account, or a fresh one at the human stake.
    pub fn human_account(&self, participant: &str) -> Account {
        self.humans.get(participant).cloned().unwrap_or_else(|| {
            Account::new(
                Owner::Human(participant.to_string()),
                self.params.human_stake,
            )
        })
    }

    /// Creates the participant's account if it does not exist yet.
    pub fn open_account(&mut self, participant: &str) -> &Account {
        let stake = self.params.human_stake;
        self.humans
            .entry(participant.to_string())
            .or_insert_with(|| Account::new(Owner::Human(participant.to_string()), stake))
    }

    /// Runs one tick: agents first, then `human_orders` in the given order.
    pub fn tick<I>(&mut self, human_orders: I) -> TickReport
    where
        I: IntoIterator<Item = HumanOrder>,
    {
        self.tick_detailed(human_orders).0
    }

    /// Like [`tick`](Self::tick), also returning each human order's result in order.
    pub fn tick_detailed<I>(
        &mut self,
        human_orders: I,
    ) -> (TickReport, Vec<Result<Trade, Rejection>>)
    where
        I: IntoIterator<Item = HumanOrder>,
    {
        let tick = self.state.tick;
        let mut results = Vec::new();
        let mut report = TickReport {
            tick,
            ..Default::default()
        };
        let bid = self.params.bid;
        for seat in &mut self.seats {
            if !participates(bid.lambda, &mut self.rng) {
                continue;
            }
            let genome = &seat.agent.genome;
            let p_side = self.state.spot_price(genome.side);
            if !genome.wants_to_buy(seat.distance, p_side, bid.min_margin) {
                continue;
            }
            let order = Order {
                owner: Owner::Agent(seat.agent.id),
                side: genome.side,
                action: Action::Buy,
                tick_submitted: tick,
            };
            match self.state.execute(&mut seat.agent.account, &order) {
                Ok(_) => {
                    report.agent_trades += 1;
                    seat.traded = true;
                }
                // an agent that cannot afford the share sits the tick out
                Err(TradeError::InsufficientCash { .. }) => {}
                Err(e) => {
                    report.rejections += 1;
                    self.rejections.push(Rejection {
                        order,
                        reason: e.to_string(),
                        tick,
                    });
                }
            }
        }
        for human in human_orders {
            let order = Order {
                owner: Owner::Human(human.participant.clone()),
                side: human.side,
                action: human.action,
                tick_submitted: tick,
            };
            let stake = self.params.human_stake;
            let account = self
                .humans
                .entry(human.participant.clone())
                .or_insert_with(|| Account::new(order.owner.clone(), stake));
            match self.state.execute(account, &order) {
                Ok(trade) => {
                    report.human_trades += 1;
                    results.push(Ok(trade));
                }
                Err(e) => {
                    report.rejections += 1;
                    let rejection = Rejection {
                        order,
                        reason: e.to_string(),
                        tick,
                    };
                    results.push(Err(rejection.clone()));
                    self.rejections.push(rejection);
                }
            }
        }
        self.participation.agent_trades += u64::from(report.agent_trades);
        self.participation.human_trades += u64::from(report.human_trades);
        self.participation.agents_traded = self.seats.iter().filter(|s| s.traded).count() as u32;
        self.participation.ticks += 1;
        self.state.advance_tick();
        (report, results)
    }

    /// Settles every account and returns payouts keyed by owner.
    pub fn settle(&mut self, outcome: Outcome) -> Result<BTreeMap<Owner, f64>, TradeError> {
        let owners: Vec<Owner> = self
            .seats
            .iter()
            .map(|s| s.agent.account.owner.clone())
            .chain(self.humans.values().map(|a| a.owner.clone()))
            .collect();
        let accounts = self
            .seats
            .iter_mut()
            .map(|s| &mut s.agent.account)
            .chain(self.humans.values_mut());
        let payouts = self.state.settle(accounts, outcome)?;
        Ok(owners.into_iter().zip(payouts).collect())
    }

    /// Total cash all traders have paid in, net of what they hold now.
    pub fn trader_cash_out(&self) -> f64 {
        let agents: f64 = self
            .seats
            .iter()
            .map(|s| self.params.agent_cash - s.agent.account.cash)
            .sum();
        let humans: f64 = self
            .humans
            .values()
            .map(|a| self.params.human_stake - a.cash)
            .sum();
        agents + humans
    }

    pub fn into_run(self, mode: Mode, domain: Domain, ticks_dropped: u64) -> MarketRun {
        let price = self.price_yes();
        MarketRun {
            summary: RunSummary {
                claim_id: self.claim_id,
                domain,
                mode,
                closing_price_yes: price,
                prediction: final_prediction(price),
                participation: self.participation,
                ticks_processed: self.state.tick,
                ticks_dropped,
                rejections: self.rejections.len() as u64,
            },
            trades: self.state.log,
            rejections: self.rejections,
        }
    }
}

/// Per-market result written next to the trade log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub claim_id: String,
    pub domain: Domain,
    pub mode: Mode,
    pub closing_price_yes: f64,
    pub prediction: Outcome,
    pub participation: RunParticipation,
    pub ticks_processed: u64,
    pub ticks_dropped: u64,
    pub rejections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRun {
    pub summary: RunSummary,
    pub trades: Vec<Trade>,
    pub rejections: Vec<Rejection>,
}

impl MarketRun {
    pub fn closing_price(&self) -> f64 {
        self.summary.closing_price_yes
    }
}

/// Runs a batch market for `claim` with the traders `mode` admits.
///
/// `trace` must be sorted by tick; orders sharing a tick keep their order.
pub fn run_market(
    population: Option<&Population>,
    claim: &ClaimRecord,
    params: MarketParams,
    sim: &SimConfig,
    mode: Mode,
    trace: &[ScriptedOrder],
) -> MarketRun {
    let agents = match (mode.has_agents(), population) {
        (true, Some(pop)) => pop.agents.clone(),
        _ => Vec::new(),
    };
    let mut engine = MarketEngine::new(claim, agents, params, sim.market_seed(&claim.claim_id));
    let mut pending = if mode.has_humans() { trace } else { &[] };
    for t in 0..sim.ticks {
        let split = pending.partition_point(|o| o.tick <= t);
        let (due, rest) = pending.split_at(split);
        pending = rest;
        engine.tick(due.iter().map(|o| o.order.clone()));
    }
    engine.into_run(mode, claim.domain, 0)
}

/// Agents alone, no human queue.
pub fn run_artificial(
    population: &Population,
    claim: &ClaimRecord,
    params: MarketParams,
    sim: &SimConfig,
) -> MarketRun {
    run_market(Some(population), claim, params, sim, Mode::Artificial, &[])
}
