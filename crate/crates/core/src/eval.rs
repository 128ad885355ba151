//! Closing prices to predictions, and prediction error by discipline.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ClaimSet, Domain, Outcome};
use crate::sim::{Mode, RunSummary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {prices} prices but {outcomes} outcomes")]
    LengthMismatch { prices: usize, outcomes: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("no ground truth for claim `{0}`")]
    MissingTruth(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A market predicts replication iff its yes price is at least one half.
pub fn final_prediction(closing_price_yes: f64) -> Outcome {
    if closing_price_yes >= 0.5 {
        Outcome::Replicated
    } else {
        Outcome::NotReplicated
    }
}

/// Mean of `|price - outcome|` with R encoded as 1 and NR as 0.
pub fn mae(prices: &[f64], outcomes: &[Outcome]) -> Result<f64, EvalError> {
    check_lengths(prices, outcomes)?;
    let total: f64 = prices
        .iter()
        .zip(outcomes)
        .map(|(p, o)| (p - o.as_f64()).abs())
        .sum();
    Ok(total / prices.len() as f64)
}

pub fn accuracy(prices: &[f64], outcomes: &[Outcome]) -> Result<f64, EvalError> {
    check_lengths(prices, outcomes)?;
    let hits = prices
        .iter()
        .zip(outcomes)
        .filter(|(p, o)| final_prediction(**p) == **o)
        .count();
    Ok(hits as f64 / prices.len() as f64)
}

fn check_lengths(prices: &[f64], outcomes: &[Outcome]) -> Result<(), EvalError> {
    if prices.len() != outcomes.len() {
        return Err(EvalError::LengthMismatch {
            prices: prices.len(),
            outcomes: outcomes.len(),
        });
    }
    if prices.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub claim_id: String,
    pub domain: Domain,
    pub mode: Mode,
    pub closing_price: f64,
    pub prediction: Outcome,
    pub outcome: Outcome,
}

impl EvalRow {
    pub fn correct(&self) -> bool {
        self.prediction == self.outcome
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub domain: Domain,
    pub mode: Mode,
    pub markets: usize,
    pub mae: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvalRow>,
    /// One entry per (discipline, mode) present in the runs.
    pub groups: Vec<GroupMetrics>,
}

/// Joins run results to ground truth and scores them per discipline and mode.
pub fn evaluate(runs: &[RunSummary], truth: &ClaimSet) -> Result<EvaluationReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let outcome = truth
            .get(&run.claim_id)
            .and_then(|r| r.outcome)
            .ok_or_else(|| EvalError::MissingTruth(run.claim_id.clone()))?;
        let domain = truth.get(&run.claim_id).map_or(run.domain, |r| r.domain);
        rows.push(EvalRow {
            claim_id: run.claim_id.clone(),
            domain,
            mode: run.mode,
            closing_price: run.closing_price_yes,
            prediction: final_prediction(run.closing_price_yes),
            outcome,
        });
    }
    let mut grouped: BTreeMap<(Domain, Mode), (Vec<f64>, Vec<Outcome>)> = BTreeMap::new();
    for row in &rows {
        let entry = grouped.entry((row.domain, row.mode)).or_default();
        entry.0.push(row.closing_price);
        entry.1.push(row.outcome);
    }
    let groups = grouped
        .into_iter()
        .map(|((domain, mode), (prices, outcomes))| {
            Ok(GroupMetrics {
                domain,
                mode,
                markets: prices.len(),
                mae: mae(&prices, &outcomes)?,
                accuracy: accuracy(&prices, &outcomes)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvaluationReport { rows, groups })
}

impl EvaluationReport {
    pub fn group(&self, domain: Domain, mode: Mode) -> Option<&GroupMetrics> {
        self.groups
            .iter()
            .find(|g| g.domain == domain && g.mode == mode)
    }

    /// Discipline rows with one MAE column per mode, `-` where a mode did not run.
    pub fn write_mae_table<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "discipline",
            "mae_artificial",
            "mae_hybrid",
            "mae_human_only",
        ])?;
        let mut domains: Vec<Domain> = self.groups.iter().map(|g| g.domain).collect();
        domains.dedup();
        for domain in domains {
            let mut record = vec![domain.to_string()];
            for mode in Mode::ALL {
                record.push(
                    self.group(domain, mode)
                        .map_or_else(|| "-".to_string(), |g| format!("{:.3}", g.mae)),
                );
            }
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_rows<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "claim_id",
            "domain",
            "mode",
            "closing_price",
            "prediction",
            "outcome",
            "correct",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                r.claim_id.clone(),
                r.domain.to_string(),
                r.mode.to_string(),
                format!("{:.3}", r.closing_price),
                r.prediction.to_string(),
                r.outcome.to_string(),
                r.correct().to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
