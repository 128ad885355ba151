//! Crash recovery: journal a human-only event, tear the last line as a crash
//! would, and rebuild the exchange from what survived.
//!
//!     cargo run -p replimarket-service --example journal_recovery

use replimarket::{reference, Action, Domain, Mode, Side, SimConfig};
use replimarket_service::exchange::{Catalog, CreateEvent};
use replimarket_service::{Exchange, ServiceConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("replimarket-journal-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("journal.jsonl");
    let catalog = Catalog {
        market: None,
        claims: Some(reference::test_claims(0)),
        sim: SimConfig {
            ticks: 200,
            effective_tick_floor: 0,
            ..SimConfig::default()
        },
    };

    let (mut x, _) = Exchange::recover(ServiceConfig::default(), catalog.clone(), &path)?;
    let meta = x.create_event(
        &CreateEvent {
            discipline: Some(Domain::Sociology),
            mode: Some(Mode::HumanOnly),
            participants: vec!["ann".into()],
            ..CreateEvent::default()
        },
        0,
    )?;
    let (id, token) = (
        meta.id().to_string(),
        meta.spec.participants[0].token.clone(),
    );
    let market = meta.market_ids()[0].clone();
    x.open(&id, 0)?;
    for _ in 0..8 {
        x.submit(&token, &market, Side::Yes, Action::Buy)?;
        x.advance(&id, 10)?;
    }
    let before = x.views(&id)?;
    drop(x);

    // a write cut short by the crash
    let mut bytes = std::fs::read(&path)?;
    let intact = bytes.len();
    bytes.extend_from_slice(br#"{"type":"tick","event":"ev-1","mark"#);
    std::fs::write(&path, bytes)?;

    let (y, report) = Exchange::recover(ServiceConfig::default(), catalog, &path)?;
    println!(
        "replayed {} records, {} bytes kept, halted: {:?}",
        report.records_applied, report.valid_bytes, report.halted
    );
    assert_eq!(report.valid_bytes as usize, intact);
    assert_eq!(y.views(&id)?, before);
    let v = &y.views(&id)?[0];
    println!(
        "{} at tick {}: price {:.4}, ann holds {} yes shares",
        v.id,
        v.tick,
        v.price_yes,
        v.account("ann").holdings_yes
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
