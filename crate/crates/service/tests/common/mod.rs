#![allow(dead_code)]

use std::sync::OnceLock;

use replimarket::evolution::train;
use replimarket::reference::test_claims;
use replimarket::sim::ScriptedOrder;
use replimarket::synthetic::training_corpus;
use replimarket::{
    Action, ClaimSet, HumanOrder, Mode, Side, SimConfig, TrainConfig, TrainedMarket,
};
use replimarket_service::exchange::{Catalog, CreateEvent};

pub const ECONOMICS: [&str; 5] = ["1574", "AgO1", "PIDa", "QIIV", "VB9K"];

pub fn trained() -> &'static (TrainedMarket, ClaimSet) {
    static CELL: OnceLock<(TrainedMarket, ClaimSet)> = OnceLock::new();
    CELL.get_or_init(|| {
        let (corpus, scaler) = training_corpus(5).fit_normalize().unwrap();
        let mut config = TrainConfig {
            generations: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        config.genome.base_radius = 1.3;
        let market = train(&corpus, &config).unwrap();
        let claims = test_claims(5).apply_normalize(&scaler).unwrap();
        (market, claims)
    })
}

pub fn sim(ticks: u64) -> SimConfig {
    SimConfig {
        ticks,
        effective_tick_floor: 0,
        lambda: Some(0.05),
        ..SimConfig::default()
    }
}

pub fn catalog(ticks: u64) -> Catalog {
    let (market, claims) = trained().clone();
    Catalog {
        market: Some(market),
        claims: Some(claims),
        sim: sim(ticks),
    }
}

pub fn human_catalog(ticks: u64) -> Catalog {
    Catalog {
        market: None,
        ..catalog(ticks)
    }
}

pub fn request(mode: Mode, participants: &[&str], seed: u64) -> CreateEvent {
    CreateEvent {
        claim_ids: ECONOMICS.map(String::from).to_vec(),
        mode: Some(mode),
        participants: participants.iter().map(|s| s.to_string()).collect(),
        seed: Some(seed),
        ..CreateEvent::default()
    }
}

/// A few orders every seventh tick, including sells that will be rejected.
pub fn trace(ticks: u64, who: &[&str]) -> Vec<ScriptedOrder> {
    let who: Vec<String> = who.iter().map(|s| s.to_string()).collect();
    (0..ticks)
        .step_by(7)
        .flat_map(|t| {
            who.clone()
                .into_iter()
                .enumerate()
                .map(move |(k, p)| ScriptedOrder {
                    tick: t,
                    order: HumanOrder {
                        participant: p,
                        side: if (t / 7 + k as u64) % 3 == 0 {
                            Side::No
                        } else {
                            Side::Yes
                        },
                        action: if t % 5 == 0 {
                            Action::Sell
                        } else {
                            Action::Buy
                        },
                    },
                })
        })
        .collect()
}
