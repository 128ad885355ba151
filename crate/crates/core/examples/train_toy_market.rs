//! Evolves a population on two separable clusters and prints the learning curve.
//!
//!     cargo run --release -p replimarket --example train_toy_market

use replimarket::evolution::train;
use replimarket::synthetic::two_cluster_corpus;
use replimarket::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, _) = two_cluster_corpus(20, 7).fit_normalize()?;
    let config = TrainConfig {
        generations: 20,
        seed: 11,
        ..TrainConfig::default()
    };
    let trained = train(&corpus, &config)?;

    println!("gen  accuracy  best-solo  best-market  mean-market  participation");
    for m in &trained.history {
        println!(
            "{:>3}  {:>8.2}  {:>9.3}  {:>11.3}  {:>11.3}  {:>13.3}",
            m.generation,
            m.accuracy,
            m.best_fitness,
            m.best_market_fitness,
            m.mean_market_fitness,
            m.mean_participation
        );
    }
    let yes = trained
        .population
        .agents
        .iter()
        .filter(|a| a.genome.side == replimarket::Side::Yes)
        .count();
    println!(
        "final population: {} agents ({yes} yes / {} no), champion {:?}",
        trained.population.len(),
        trained.population.len() - yes,
        trained.population.champion
    );
    println!(
        "held-out participation: spawned {:.3}, trained {:.3}",
        trained.initial_participation.mean, trained.participation.mean
    );
    Ok(())
}
