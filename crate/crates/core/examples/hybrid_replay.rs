//! A full-length hybrid market: a trained population plus a scripted human
//! order trace, run back-to-back for 43,200 ticks.
//!
//!     cargo run --release -p replimarket --example hybrid_replay

use std::time::Instant;

use replimarket::evolution::train;
use replimarket::reference;
use replimarket::sim::{run_market, ScriptedOrder};
use replimarket::synthetic::training_corpus;
use replimarket::{Action, HumanOrder, Mode, Side, SimConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, scaler) = training_corpus(5).fit_normalize()?;
    // 41 noisy dimensions put unseen claims about 1.3 away from their neighbours
    let mut config = TrainConfig {
        generations: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    config.genome.base_radius = 1.3;
    let trained = train(&corpus, &config)?;
    let test = reference::test_claims(5).apply_normalize(&scaler)?;
    let claim = test.get("QIIV").expect("reference claim");

    // long markets trade far less often per agent than training markets
    let sim = SimConfig {
        lambda: Some(0.002),
        seed: 5,
        ..SimConfig::default()
    };
    let trace: Vec<ScriptedOrder> = (0..sim.ticks)
        .step_by(600)
        .enumerate()
        .map(|(i, tick)| ScriptedOrder {
            tick,
            order: HumanOrder {
                participant: format!("p{}", i % 4),
                side: if i % 3 == 0 { Side::No } else { Side::Yes },
                action: if i % 5 == 4 {
                    Action::Sell
                } else {
                    Action::Buy
                },
            },
        })
        .collect();

    let started = Instant::now();
    let run = run_market(
        Some(&trained.population),
        claim,
        trained.market_params(&sim),
        &sim,
        Mode::Hybrid,
        &trace,
    );
    let elapsed = started.elapsed();
    let p = run.summary.participation;
    println!(
        "{} ticks in {:.2?}: {} agent trades, {} human trades, {} rejections",
        p.ticks,
        elapsed,
        p.agent_trades,
        p.human_trades,
        run.rejections.len()
    );
    println!(
        "closing price {:.3} -> {}",
        run.closing_price(),
        run.summary.prediction
    );

    let again = run_market(
        Some(&trained.population),
        claim,
        trained.market_params(&sim),
        &sim,
        Mode::Hybrid,
        &trace,
    );
    assert_eq!(
        run.closing_price().to_bits(),
        again.closing_price().to_bits()
    );
    println!("rerun matches bit for bit");
    Ok(())
}
