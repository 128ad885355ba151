//! One hybrid event driven in-process: three humans trade against a trained
//! population, the admin advances the clock, closes and reads the payouts.
//!
//!     cargo run -p replimarket-service --example live_event

use replimarket::evolution::train;
use replimarket::synthetic::training_corpus;
use replimarket::{reference, Action, Domain, Mode, Side, SimConfig, TrainConfig};
use replimarket_service::exchange::{Catalog, CreateEvent};
use replimarket_service::{Service, ServiceConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, scaler) = training_corpus(3).fit_normalize()?;
    let mut config = TrainConfig {
        generations: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    config.genome.base_radius = 1.3;
    let market = train(&corpus, &config)?;
    let catalog = Catalog {
        market: Some(market),
        claims: Some(reference::test_claims(3).apply_normalize(&scaler)?),
        // no wall clock: ticks only move when the admin advances them
        sim: SimConfig {
            ticks: 600,
            effective_tick_floor: 600,
            lambda: Some(0.01),
            ..SimConfig::default()
        },
    };
    let service = Service::new(ServiceConfig::default(), catalog);

    let meta = service
        .create_event(&CreateEvent {
            discipline: Some(Domain::Psychology),
            mode: Some(Mode::Hybrid),
            participants: vec!["ann".into(), "bo".into(), "cy".into()],
            seed: Some(42),
            ..CreateEvent::default()
        })
        .await?;
    let id = meta.id().to_string();
    service.open_event(&id).await?;
    let mut feed = service.subscribe(&id)?;

    let markets = meta.market_ids();
    for round in 0..6 {
        for (k, p) in meta.spec.participants.iter().enumerate() {
            let market = &markets[(round + k) % markets.len()];
            let side = if (round + k) % 3 == 0 {
                Side::No
            } else {
                Side::Yes
            };
            service.submit(&p.token, market, side, Action::Buy).await?;
        }
        service.advance(&id, 100).await?;
    }

    let views = service.close_event(&id, None).await?;
    let mut human_fills = 0;
    while let Ok(event) = feed.try_recv() {
        if let replimarket_service::live::StreamEvent::Trade { trader, .. } = event {
            human_fills += usize::from(trader == "human");
        }
    }
    for v in &views {
        println!(
            "{} {:<5} tick {} price {:.3}  {} agent / {} human trades",
            v.id, v.claim_id, v.tick, v.price_yes, v.agent_trades, v.human_trades
        );
    }
    println!("{human_fills} human fills streamed");
    println!("money market: {}", service.money_market(&id)?);
    for p in service.payouts(&id)? {
        println!(
            "{:<4} {} trades, eligible {:<5} payout {:.4} + {:.2} flat",
            p.participant_id, p.trades, p.eligible, p.payout, p.flat_compensation
        );
    }
    Ok(())
}
