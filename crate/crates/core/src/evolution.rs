//! Genetic training of an agent population on labeled claims.
//!
//! Each generation runs one short agent-only market per training claim,
//! settles it at the claim's outcome and scores every agent by its total cash
//! change across those markets. The best fraction survives unchanged and
//! refills the population with mutated offspring.
//!
//! Alongside the market fitness, each agent is also scored alone (one agent
//! per market, fixed participation streams). The agent with the best solo
//! score is the champion and always survives, so the best solo fitness never
//! decreases from one generation to the next.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    mutate, spawn_population, Agent, AgentError, AgentGenome, BidParams, GenomeDefaults,
    MutationRates, Population,
};
use crate::derive_seed;
use crate::eval::final_prediction;
use crate::features::{ClaimRecord, ClaimSet, Scaler};
use crate::sim::{MarketEngine, MarketParams, RunParticipation, SimConfig};

const SPAWN_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
const SOLO_STREAM: u64 = 3;
const EVOLVE_STREAM: u64 = 4;
const HOLDOUT_STREAM: u64 = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Per-agent, per-tick participation probability.
    pub lambda: f64,
    /// LMSR depth `b`.
    pub liquidity: f64,
    /// Minimum relative undervaluation an agent needs before it buys.
    pub percent_difference: f64,
    pub initial_agent_cash: f64,
    /// Ticks per training market.
    pub market_duration: u64,
    pub clones_per_point: usize,
    pub generations: u32,
    pub genome: GenomeDefaults,
    pub mutation: MutationRates,
    pub selection_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            liquidity: 20.0,
            percent_difference: 0.05,
            initial_agent_cash: 100.0,
            market_duration: 60,
            clones_per_point: 1,
            generations: 20,
            genome: GenomeDefaults::default(),
            mutation: MutationRates::default(),
            selection_fraction: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must lie in [0, 1]");
        }
        if !(self.liquidity.is_finite() && self.liquidity > 0.0) {
            return fail("liquidity must be positive");
        }
        if !(self.percent_difference >= 0.0) {
            return fail("percent_difference must be non-negative");
        }
        if !(self.initial_agent_cash >= 0.0) {
            return fail("initial_agent_cash must be non-negative");
        }
        if self.market_duration == 0 {
            return fail("market_duration must be at least 1");
        }
        if self.clones_per_point == 0 {
            return fail("clones_per_point must be at least 1");
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return fail("selection_fraction must lie in (0, 1]");
        }
        let g = &self.genome;
        if !(g.base_radius > 0.0) {
            return fail("genome.base_radius must be positive");
        }
        if !(g.reservation_price > 0.0 && g.reservation_price < 1.0) {
            return fail("genome.reservation_price must lie in (0, 1)");
        }
        if !(g.price_sensitivity >= 0.0) {
            return fail("genome.price_sensitivity must be non-negative");
        }
        for rates in [&self.mutation, &g.jitter] {
            if !(rates.radius >= 0.0 && rates.sensitivity >= 0.0 && rates.reservation >= 0.0) {
                return fail("mutation rates must be non-negative");
            }
        }
        Ok(())
    }

    pub fn market_params(&self) -> MarketParams {
        MarketParams {
            liquidity: self.liquidity,
            bid: BidParams {
                lambda: self.lambda,
                min_margin: self.percent_difference,
            },
            agent_cash: self.initial_agent_cash,
            human_stake: 0.0,
        }
    }
}

/// Result of one agent-only training market.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimMarketResult {
    pub claim_id: String,
    pub closing_price: f64,
    /// Cash change per agent, aligned with the population; zero for agents
    /// that were not seated.
    pub pnl: Vec<f64>,
    pub participation: RunParticipation,
}

impl ClaimMarketResult {
    pub fn correct(&self, claim: &ClaimRecord) -> bool {
        claim.outcome == Some(final_prediction(self.closing_price))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticipationStats {
    /// Per claim, fraction of seated agents that traded at least once.
    pub per_claim: Vec<f64>,
    /// Per claim, mean fraction of seated agents trading per tick.
    pub per_claim_active: Vec<f64>,
    pub mean: f64,
    /// Population variance of `per_claim`.
    pub variance: f64,
}

impl ParticipationStats {
    pub fn from_runs<'a, I>(runs: I) -> Self
    where
        I: IntoIterator<Item = &'a RunParticipation>,
    {
        let (per_claim, per_claim_active): (Vec<f64>, Vec<f64>) = runs
            .into_iter()
            .map(|r| (r.traded_fraction(), r.active_fraction()))
            .unzip();
        Self::from_fractions(per_claim, per_claim_active)
    }

    pub fn from_fractions(per_claim: Vec<f64>, per_claim_active: Vec<f64>) -> Self {
        let n = per_claim.len();
        let (mean, variance) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = per_claim.iter().sum::<f64>() / n as f64;
            let var = per_claim
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n as f64;
            (mean, var)
        };
        Self {
            per_claim,
            per_claim_active,
            mean,
            variance,
        }
    }
}

fn claim_outcome(claim: &ClaimRecord) -> Result<crate::features::Outcome, TrainError> {
    claim
        .outcome
        .ok_or_else(|| TrainError::Corpus(format!("claim `{}` is unlabeled", claim.claim_id)))
}

fn run_seated(
    population: &Population,
    seated: Vec<Agent>,
    claim: &ClaimRecord,
    config: &TrainConfig,
    seed: u64,
) -> Result<ClaimMarketResult, TrainError> {
    let outcome = claim_outcome(claim)?;
    let mut engine = MarketEngine::new(claim, seated, config.market_params(), seed);
    for _ in 0..config.market_duration {
        engine.tick(std::iter::empty());
    }
    let closing_price = engine.price_yes();
    let participation = engine.participation();
    engine
        .settle(outcome)
        .map_err(|e| TrainError::Corpus(e.to_string()))?;
    let mut pnl = vec![0.0; population.len()];
    for agent in engine.agents() {
        if let Ok(pos) = population.agents.binary_search_by_key(&agent.id, |a| a.id) {
            pnl[pos] = agent.account.cash - config.initial_agent_cash;
        }
    }
    Ok(ClaimMarketResult {
        claim_id: claim.claim_id.clone(),
        closing_price,
        pnl,
        participation,
    })
}

/// One agent-only market on `claim`, settled at its outcome.
pub fn run_training_market(
    population: &Population,
    claim: &ClaimRecord,
    config: &TrainConfig,
    seed: u64,
) -> Result<ClaimMarketResult, TrainError> {
    if population.is_empty() {
        return Err(TrainError::Corpus("population is empty".into()));
    }
    run_seated(population, population.agents.clone(), claim, config, seed)
}

/// Runs one market per claim; claims run in parallel, results keep corpus order.
///
/// With `leave_one_out`, agents spawned from a claim sit out that claim's market.
pub fn run_epoch(
    population: &Population,
    corpus: &ClaimSet,
    config: &TrainConfig,
    stream: u64,
    leave_one_out: bool,
) -> Result<Vec<ClaimMarketResult>, TrainError> {
    corpus
        .records
        .par_iter()
        .enumerate()
        .map(|(i, claim)| {
            let seed = derive_seed(config.seed, &[stream, i as u64]);
            let seated = population
                .agents
                .iter()
                .filter(|a| !leave_one_out || a.genome.origin != claim.claim_id)
                .cloned()
                .collect();
            run_seated(population, seated, claim, config, seed)
        })
        .collect()
}

/// Total cash change per agent across an epoch, summed in corpus order.
pub fn fitness(results: &[ClaimMarketResult], population_size: usize) -> Vec<f64> {
    let mut total = vec![0.0; population_size];
    for r in results {
        for (t, p) in total.iter_mut().zip(&r.pnl) {
            *t += p;
        }
    }
    total
}

/// Fitness of `genome` trading alone in every training market.
pub fn solo_fitness(
    genome: &AgentGenome,
    corpus: &ClaimSet,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (i, claim) in corpus.records.iter().enumerate() {
        let outcome = claim_outcome(claim)?;
        // the region never exceeds base_radius, so distant claims are never traded
        if genome.distance(&claim.features) > genome.base_radius {
            continue;
        }
        let seed = derive_seed(config.seed, &[SOLO_STREAM, i as u64]);
        let agent = Agent::new(0, genome.clone(), config.initial_agent_cash);
        let mut engine = MarketEngine::new(claim, vec![agent], config.market_params(), seed);
        for _ in 0..config.market_duration {
            engine.tick(std::iter::empty());
        }
        engine
            .settle(outcome)
            .map_err(|e| TrainError::Corpus(e.to_string()))?;
        let cash = engine.agents().next().map_or(0.0, |a| a.account.cash);
        total += cash - config.initial_agent_cash;
    }
    Ok(total)
}

/// Elitist truncation: the top `selection_fraction` with non-negative fitness
/// (plus the champion) survive untouched; mutated offspring refill the rest.
pub fn evolve_generation<R: rand::Rng + ?Sized>(
    population: &Population,
    fitness: &[f64],
    selection_fraction: f64,
    rates: &MutationRates,
    initial_cash: f64,
    rng: &mut R,
) -> Result<Population, TrainError> {
    let n = population.len();
    if n == 0 {
        return Err(TrainError::Corpus(
            "cannot evolve an empty population".into(),
        ));
    }
    if fitness.len() != n {
        return Err(TrainError::Config(format!(
            "{} fitness values for {n} agents",
            fitness.len()
        )));
    }
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        fitness[b]
            .total_cmp(&fitness[a])
            .then(population.agents[a].id.cmp(&population.agents[b].id))
    });
    let quota = ((selection_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut survivors: Vec<usize> = ranked[..quota]
        .iter()
        .copied()
        .filter(|&i| fitness[i] >= 0.0)
        .collect();
    if survivors.is_empty() {
        survivors.push(ranked[0]);
    }
    if let Some(champ) = population.champion {
        if let Some(pos) = population.agents.iter().position(|a| a.id == champ) {
            if !survivors.contains(&pos) {
                survivors.push(pos);
            }
        }
    }

    let mut next_id = population.next_id;
    let mut agents: Vec<Agent> = survivors
        .iter()
        .map(|&i| {
            Agent::new(
                population.agents[i].id,
                population.agents[i].genome.clone(),
                initial_cash,
            )
        })
        .collect();
    agents.sort_by_key(|a| a.id);
    let offspring = n.saturating_sub(agents.len());
    for k in 0..offspring {
        let parent = &population.agents[survivors[k % survivors.len()]];
        let child = mutate(&parent.genome, rates, rng);
        agents.push(Agent::new(next_id, child, initial_cash));
        next_id += 1;
    }
    Ok(Population {
        agents,
        generation: population.generation + 1,
        seed: population.seed,
        next_id,
        champion: population.champion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub generation: u32,
    /// Best solo fitness in the population (the champion's).
    pub best_fitness: f64,
    pub champion: Option<u32>,
    /// Best and mean fitness from the shared training markets.
    pub best_market_fitness: f64,
    pub mean_market_fitness: f64,
    /// Fraction of training claims whose closing price classifies correctly.
    pub accuracy: f64,
    pub mean_participation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedMarket {
    pub population: Population,
    pub config: TrainConfig,
    pub scaler: Option<Scaler>,
    /// One entry per evaluated generation, including the final population.
    pub history: Vec<GenerationMetrics>,
    /// Participation of the spawned population with each claim's own agents
    /// held out of its market.
    pub initial_participation: ParticipationStats,
    /// Same measurement for the final population.
    pub participation: ParticipationStats,
}

impl TrainedMarket {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.accuracy)
    }

    /// Market parameters for a simulation or live run, applying its overrides.
    pub fn market_params(&self, sim: &SimConfig) -> MarketParams {
        MarketParams {
            liquidity: self.config.liquidity,
            bid: BidParams {
                lambda: sim.lambda.unwrap_or(self.config.lambda),
                min_margin: self.config.percent_difference,
            },
            agent_cash: sim.agent_cash.unwrap_or(self.config.initial_agent_cash),
            human_stake: sim.human_stake,
        }
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let market: TrainedMarket = serde_json::from_str(text)?;
        market.config.validate()?;
        Ok(market)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn check_corpus(corpus: &ClaimSet) -> Result<(), TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::Corpus("training corpus is empty".into()));
    }
    if !corpus.is_normalized() {
        return Err(TrainError::Corpus(
            "training corpus must be normalized".into(),
        ));
    }
    if let Some(r) = corpus.records.iter().find(|r| r.outcome.is_none()) {
        return Err(TrainError::Corpus(format!(
            "claim `{}` is unlabeled",
            r.claim_id
        )));
    }
    Ok(())
}

/// Trains a population: spawn, then `generations` rounds of epoch, score and evolve.
pub fn train(corpus: &ClaimSet, config: &TrainConfig) -> Result<TrainedMarket, TrainError> {
    config.validate()?;
    check_corpus(corpus)?;
    let mut population = spawn_population(
        corpus,
        config.clones_per_point,
        &config.genome,
        config.initial_agent_cash,
        derive_seed(config.seed, &[SPAWN_STREAM]),
    )?;
    population.seed = config.seed;
    let initial = run_epoch(&population, corpus, config, HOLDOUT_STREAM, true)?;
    let initial_participation =
        ParticipationStats::from_runs(initial.iter().map(|r| &r.participation));
    let mut solo_cache: BTreeMap<u32, f64> = BTreeMap::new();
    let mut history = Vec::with_capacity(config.generations as usize + 1);

    loop {
        let results = run_epoch(&population, corpus, config, EPOCH_STREAM, false)?;
        let scores = fitness(&results, population.len());

        let pending: Vec<&Agent> = population
            .agents
            .iter()
            .filter(|a| !solo_cache.contains_key(&a.id))
            .collect();
        let fresh = pending
            .par_iter()
            .map(|a| solo_fitness(&a.genome, corpus, config).map(|f| (a.id, f)))
            .collect::<Result<Vec<_>, _>>()?;
        solo_cache.extend(fresh);
        let (champion, best_fitness) = population
            .agents
            .iter()
            .map(|a| (a.id, solo_cache[&a.id]))
            .fold((None, f64::NEG_INFINITY), |(best_id, best), (id, f)| {
                if f > best {
                    (Some(id), f)
                } else {
                    (best_id, best)
                }
            });
        population.champion = champion;

        let correct = results
            .iter()
            .zip(&corpus.records)
            .filter(|(r, c)| r.correct(c))
            .count();
        let participation = ParticipationStats::from_runs(results.iter().map(|r| &r.participation));
        history.push(GenerationMetrics {
            generation: population.generation,
            best_fitness,
            champion,
            best_market_fitness: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_market_fitness: scores.iter().sum::<f64>() / scores.len() as f64,
            accuracy: correct as f64 / corpus.len() as f64,
            mean_participation: participation.mean,
        });

        if population.generation >= config.generations {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[EVOLVE_STREAM, u64::from(population.generation)],
        ));
        population = evolve_generation(
            &population,
            &scores,
            config.selection_fraction,
            &config.mutation,
            config.initial_agent_cash,
            &mut rng,
        )?;
        let alive: std::collections::BTreeSet<u32> =
            population.agents.iter().map(|a| a.id).collect();
        solo_cache.retain(|id, _| alive.contains(id));
    }

    let holdout = run_epoch(&population, corpus, config, HOLDOUT_STREAM, true)?;
    let participation = ParticipationStats::from_runs(holdout.iter().map(|r| &r.participation));
    Ok(TrainedMarket {
        population,
        config: config.clone(),
        scaler: corpus.scaler.clone(),
        history,
        initial_participation,
        participation,
    })
}

/// Acceptable range of mean participation plus a floor on its spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlausibilityBounds {
    pub lower: f64,
    pub upper: f64,
    pub min_variance: f64,
}

impl Default for PlausibilityBounds {
    fn default() -> Self {
        Self {
            lower: 0.05,
            upper: 0.95,
            min_variance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Implausibility {
    /// Almost no agent trades: regions too small to reach any claim.
    Negligible,
    /// Almost every agent trades everywhere: regions too large to discriminate.
    Universal,
    /// Participation is the same on every claim.
    Undifferentiated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityVerdict {
    pub passed: bool,
    pub score: f64,
    pub failure: Option<Implausibility>,
}

/// Judges a trained market on both its spawned and its final population.
///
/// Radii that are far too small or too large show up at spawn time; evolution
/// can prune a degenerate population into something that looks ordinary, so
/// the final population alone is not enough.
pub fn market_plausibility(
    market: &TrainedMarket,
    bounds: &PlausibilityBounds,
) -> PlausibilityVerdict {
    let initial = participation_plausibility(&market.initial_participation, bounds);
    let last = participation_plausibility(&market.participation, bounds);
    PlausibilityVerdict {
        passed: initial.passed && last.passed,
        score: initial.score.min(last.score),
        failure: initial.failure.or(last.failure),
    }
}

/// Scores a participation pattern: mid-range mean with spread across claims.
pub fn participation_plausibility(
    stats: &ParticipationStats,
    bounds: &PlausibilityBounds,
) -> PlausibilityVerdict {
    let m = stats.mean;
    // 1 at m = 0.5, 0 at both extremes; damped when claims look alike.
    let score = 4.0 * m * (1.0 - m) * (1.0 - (-stats.variance / 0.01).exp());
    let failure = if m < bounds.lower {
        Some(Implausibility::Negligible)
    } else if m > bounds.upper {
        Some(Implausibility::Universal)
    } else if stats.variance <= bounds.min_variance {
        Some(Implausibility::Undifferentiated)
    } else {
        None
    };
    PlausibilityVerdict {
        passed: failure.is_none(),
        score,
        failure,
    }
}
