//! Closing prices recorded for the 30 held-out claims, five per discipline
//! event, with each arm's stated prediction and the replication outcome.
//!
//! Used to check evaluation end to end and as fixture data for the examples.

use serde::Deserialize;

use crate::eval::final_prediction;
use crate::features::{ClaimSet, Domain, Outcome};
use crate::sim::{Mode, RunParticipation, RunSummary};
use crate::synthetic;

const SCORE_MARKETS_CSV: &str = include_str!("../data/score_markets.csv");

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct Row {
    claim_id: String,
    domain: String,
    outcome: String,
    price_artificial: Option<f64>,
    price_hybrid: Option<f64>,
    price_human: Option<f64>,
    pred_artificial: String,
    pred_hybrid: String,
    pred_human: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMarket {
    pub claim_id: String,
    pub domain: Domain,
    pub outcome: Outcome,
    prices: [Option<f64>; 3],
    predictions: [Option<Outcome>; 3],
}

fn mode_index(mode: Mode) -> usize {
    match mode {
        Mode::Artificial => 0,
        Mode::Hybrid => 1,
        Mode::HumanOnly => 2,
    }
}

impl ReferenceMarket {
    pub fn price(&self, mode: Mode) -> Option<f64> {
        self.prices[mode_index(mode)]
    }

    /// The prediction listed alongside the price.
    pub fn stated_prediction(&self, mode: Mode) -> Option<Outcome> {
        self.predictions[mode_index(mode)]
    }
}

fn parse_pred(s: &str) -> Option<Outcome> {
    s.parse().ok()
}

/// All 30 markets in listing order.
pub fn score_markets() -> Vec<ReferenceMarket> {
    let mut rdr = csv::Reader::from_reader(SCORE_MARKETS_CSV.as_bytes());
    rdr.deserialize::<Row>()
        .map(|row| {
            let row = row.expect("embedded table is well formed");
            ReferenceMarket {
                domain: row.domain.parse().expect("known domain"),
                outcome: row.outcome.parse().expect("R or NR"),
                prices: [row.price_artificial, row.price_hybrid, row.price_human],
                predictions: [
                    parse_pred(&row.pred_artificial),
                    parse_pred(&row.pred_hybrid),
                    parse_pred(&row.pred_human),
                ],
                claim_id: row.claim_id,
            }
        })
        .collect()
}

/// Run summaries carrying the recorded closing prices of one arm.
pub fn runs(mode: Mode) -> Vec<RunSummary> {
    score_markets()
        .into_iter()
        .filter_map(|m| {
            let price = m.price(mode)?;
            Some(RunSummary {
                claim_id: m.claim_id,
                domain: m.domain,
                mode,
                closing_price_yes: price,
                prediction: final_prediction(price),
                participation: RunParticipation::default(),
                ticks_processed: 0,
                ticks_dropped: 0,
                rejections: 0,
            })
        })
        .collect()
}

/// The 30 claims as a labeled test set with generated features.
pub fn test_claims(seed: u64) -> ClaimSet {
    let claims: Vec<(String, Domain, Option<Outcome>)> = score_markets()
        .into_iter()
        .map(|m| (m.claim_id, m.domain, Some(m.outcome)))
        .collect();
    synthetic::test_claims(&claims, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_markets_five_per_discipline() {
        let markets = score_markets();
        assert_eq!(markets.len(), 30);
        let set = test_claims(0);
        for d in [
            Domain::Economics,
            Domain::Sociology,
            Domain::Psychology,
            Domain::Marketing,
            Domain::PoliticalScience,
            Domain::Education,
        ] {
            assert_eq!(set.split_by_domain(d).len(), 5, "{d}");
        }
        assert_eq!(runs(Mode::HumanOnly).len(), 15);
        assert_eq!(runs(Mode::Hybrid).len(), 30);
    }
}
