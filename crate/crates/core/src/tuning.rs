//! Grid search over training hyperparameters.
//!
//! Every configuration is trained and judged twice: by training accuracy and
//! by whether its agents participate plausibly on claims they were not
//! spawned from. The most accurate plausible configuration wins.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::evolution::{
    market_plausibility, train, ParticipationStats, PlausibilityBounds, PlausibilityVerdict,
    TrainConfig, TrainError,
};
use crate::features::ClaimSet;

/// Candidate values per field; an empty list keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterGrid {
    pub lambda: Vec<f64>,
    pub liquidity: Vec<f64>,
    pub percent_difference: Vec<f64>,
    pub base_radius: Vec<f64>,
    pub initial_agent_cash: Vec<f64>,
    pub market_duration: Vec<u64>,
}

fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl ParameterGrid {
    /// Cartesian product in field order, last field varying fastest.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lambda in &or_base(&self.lambda, base.lambda) {
            for &liquidity in &or_base(&self.liquidity, base.liquidity) {
                for &pd in &or_base(&self.percent_difference, base.percent_difference) {
                    for &radius in &or_base(&self.base_radius, base.genome.base_radius) {
                        for &cash in &or_base(&self.initial_agent_cash, base.initial_agent_cash) {
                            for &duration in &or_base(&self.market_duration, base.market_duration) {
                                let mut c = base.clone();
                                c.lambda = lambda;
                                c.liquidity = liquidity;
                                c.percent_difference = pd;
                                c.genome.base_radius = radius;
                                c.initial_agent_cash = cash;
                                c.market_duration = duration;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub config: TrainConfig,
    pub accuracy: f64,
    pub initial_participation: ParticipationStats,
    pub participation: ParticipationStats,
    pub verdict: PlausibilityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub results: Vec<SearchResult>,
    pub selected: usize,
    /// False when no configuration passed the plausibility gate.
    pub plausible: bool,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrainConfig {
        &self.results[self.selected].config
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "lambda",
            "liquidity",
            "percent_difference",
            "base_radius",
            "initial_agent_cash",
            "market_duration",
            "accuracy",
            "initial_mean_participation",
            "initial_participation_variance",
            "mean_participation",
            "participation_variance",
            "plausibility_score",
            "plausible",
            "failure",
            "selected",
        ])?;
        for (i, r) in self.results.iter().enumerate() {
            let c = &r.config;
            wtr.write_record([
                c.lambda.to_string(),
                c.liquidity.to_string(),
                c.percent_difference.to_string(),
                c.genome.base_radius.to_string(),
                c.initial_agent_cash.to_string(),
                c.market_duration.to_string(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.initial_participation.mean),
                format!("{:.6}", r.initial_participation.variance),
                format!("{:.6}", r.participation.mean),
                format!("{:.6}", r.participation.variance),
                format!("{:.6}", r.verdict.score),
                r.verdict.passed.to_string(),
                r.verdict
                    .failure
                    .map(|f| format!("{f:?}").to_lowercase())
                    .unwrap_or_default(),
                (i == self.selected).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn preference(a: &SearchResult, b: &SearchResult) -> Ordering {
    // Higher accuracy first, then the smaller lambda, then the smaller liquidity.
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.config.lambda.total_cmp(&b.config.lambda))
        .then(a.config.liquidity.total_cmp(&b.config.liquidity))
}

/// Trains every grid cell and picks the most accurate plausible one.
pub fn hyperparameter_search(
    grid: &ParameterGrid,
    base: &TrainConfig,
    corpus: &ClaimSet,
    bounds: &PlausibilityBounds,
) -> Result<SearchOutcome, TrainError> {
    let mut results = Vec::new();
    for config in grid.configs(base) {
        let trained = train(corpus, &config)?;
        let verdict = market_plausibility(&trained, bounds);
        results.push(SearchResult {
            accuracy: trained.final_accuracy(),
            initial_participation: trained.initial_participation,
            participation: trained.participation,
            verdict,
            config,
        });
    }
    let pick = |only_plausible: bool| {
        results
            .iter()
            .enumerate()
            .filter(|(_, r)| !only_plausible || r.verdict.passed)
            .min_by(|(i, a), (j, b)| preference(a, b).then(i.cmp(j)))
            .map(|(i, _)| i)
    };
    let (selected, plausible) = match pick(true) {
        Some(i) => (i, true),
        None => (pick(false).expect("grid has at least one cell"), false),
    };
    Ok(SearchOutcome {
        results,
        selected,
        plausible,
    })
}
