mod common;

use std::time::Duration;

use common::{human_catalog, request};
use replimarket::{Mode, SimConfig};
use replimarket_service::exchange::{Catalog, Exchange};
use replimarket_service::{journal, EventStatus, Record, Service, ServiceConfig};

fn clocked(ticks: u64, interval_ms: u64) -> Catalog {
    let mut catalog = human_catalog(ticks);
    catalog.sim = SimConfig {
        tick_interval_ms: interval_ms,
        ..catalog.sim
    };
    catalog
}

async fn wait_closed(svc: &Service, id: &str) {
    for _ in 0..400 {
        if svc.event_summary(id).unwrap().status.is_closed() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("event {id} never closed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn wall_clock_runs_the_budget_then_closes() {
    let svc = Service::new(ServiceConfig::default(), clocked(20, 5));
    let id = svc
        .create_event(&request(Mode::HumanOnly, &["a"], 1))
        .await
        .unwrap()
        .id()
        .to_string();
    svc.open_event(&id).await.unwrap();
    wait_closed(&svc, &id).await;
    let summary = svc.event_summary(&id).unwrap();
    assert_eq!(summary.status, EventStatus::Closed);
    assert_eq!(summary.ticks_processed + summary.ticks_dropped, 20);
    assert!(svc.money_market(&id).is_ok());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn downtime_is_journaled_as_skipped_slots() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    // opened two seconds ago at 100 ms per tick, then the process died
    {
        let (mut x, _) =
            Exchange::recover(ServiceConfig::default(), clocked(60, 100), &path).unwrap();
        let id = x
            .create_event(&request(Mode::HumanOnly, &["a"], 1), 0)
            .unwrap()
            .id()
            .to_string();
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_millis() as u64;
        x.open(&id, now - 2_000).unwrap();
        x.advance(&id, 3).unwrap();
    }

    let (svc, _) = Service::open(ServiceConfig::default(), clocked(60, 100), &path).unwrap();
    tokio::time::sleep(Duration::from_millis(150)).await;
    let s = svc.event_summary("ev-1").unwrap();
    assert_eq!(s.status, EventStatus::Open);
    assert!(s.ticks_dropped >= 16, "{s:?}");
    assert!(s.ticks_processed >= 4, "{s:?}");
    svc.flush_journal().await.unwrap();

    let records = journal::recover(&path).unwrap().records;
    let skipped: u64 = records
        .iter()
        .map(|r| match r {
            Record::Skipped { count, .. } => *count,
            _ => 0,
        })
        .sum();
    assert_eq!(skipped, svc.event_summary("ev-1").unwrap().ticks_dropped);
    svc.close_event("ev-1", None).await.unwrap();
}
