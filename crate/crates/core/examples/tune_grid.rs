//! Grid search with the plausibility gate: degenerate radii are trained but
//! rejected, and the most accurate plausible cell is selected.
//!
//!     cargo run --release -p replimarket --example tune_grid

use replimarket::evolution::PlausibilityBounds;
use replimarket::synthetic::two_cluster_corpus;
use replimarket::tuning::{hyperparameter_search, ParameterGrid};
use replimarket::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, _) = two_cluster_corpus(20, 7).fit_normalize()?;
    let grid = ParameterGrid {
        lambda: vec![0.1, 0.3],
        base_radius: vec![1e-6, 0.6, 1.5, 1e6],
        ..Default::default()
    };
    let base = TrainConfig {
        generations: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let outcome = hyperparameter_search(&grid, &base, &corpus, &PlausibilityBounds::default())?;
    outcome.write_csv(std::io::stdout())?;
    let best = outcome.best();
    println!(
        "\nselected lambda={} radius={} (plausible={})",
        best.lambda, best.genome.base_radius, outcome.plausible
    );
    Ok(())
}
