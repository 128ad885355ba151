//! Trains on the generated 402-claim corpus, then runs agent-only markets on
//! the five held-out economics claims.
//!
//!     cargo run --release -p replimarket --example artificial_market

use replimarket::evolution::train;
use replimarket::reference;
use replimarket::sim::run_artificial;
use replimarket::synthetic::training_corpus;
use replimarket::{Domain, SimConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, scaler) = training_corpus(1).fit_normalize()?;
    // 41 noisy dimensions put unseen claims about 1.3 away from their neighbours
    let mut config = TrainConfig {
        generations: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    config.genome.base_radius = 1.3;
    let trained = train(&corpus, &config)?;
    println!(
        "trained {} agents, training accuracy {:.3}",
        trained.population.len(),
        trained.final_accuracy()
    );

    let test = reference::test_claims(1)
        .apply_normalize(&scaler)?
        .split_by_domain(Domain::Economics);
    let sim = SimConfig {
        ticks: 60,
        effective_tick_floor: 0,
        ..SimConfig::default()
    };
    let params = trained.market_params(&sim);
    for claim in &test.records {
        let run = run_artificial(&trained.population, claim, params, &sim);
        let p = run.summary.participation;
        println!(
            "{:<5} close {:.3} -> {}  ({} agent trades, {} agents active)",
            claim.claim_id,
            run.closing_price(),
            run.summary.prediction,
            p.agent_trades,
            p.agents_traded
        );
    }
    Ok(())
}
