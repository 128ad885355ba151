//! One market inside an event: its engine, its FIFO of human orders and the
//! append-only log that readers see.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use parking_lot::RwLock;
use replimarket::sim::Rejection;
use replimarket::{
    Account, Agent, ClaimRecord, HumanOrder, MarketEngine, MarketParams, Outcome, Owner, Trade,
};
use serde::{Deserialize, Serialize};

use crate::journal::Record;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedOrder {
    pub id: u64,
    #[serde(flatten)]
    pub order: HumanOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OrderStatus {
    Executed {
        cash_delta: f64,
        price_yes_after: f64,
    },
    Rejected {
        reason: String,
    },
}

/// What became of one queued human order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub order_id: u64,
    pub participant: String,
    pub tick: u64,
    #[serde(flatten)]
    pub status: OrderStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub tick: u64,
    pub price_yes: f64,
}

/// Grows only; a reader trusts the first `MarketView::trades` (etc.) entries.
#[derive(Debug, Default)]
pub struct MarketLog {
    pub trades: Vec<Trade>,
    pub history: Vec<PricePoint>,
    pub results: Vec<OrderResult>,
}

/// State of a market as of its last completed tick.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketView {
    pub id: String,
    pub event: String,
    pub claim_id: String,
    pub title: String,
    pub tick: u64,
    pub price_yes: f64,
    pub q_yes: f64,
    pub q_no: f64,
    pub trades: usize,
    pub history: usize,
    pub results: usize,
    pub pending: usize,
    pub agent_trades: u64,
    pub human_trades: u64,
    pub accounts: BTreeMap<String, Account>,
    pub stake: f64,
    pub closed: bool,
    pub settled: Option<Outcome>,
}

impl MarketView {
    /// The participant's account, or an untouched one at the stake.
    pub fn account(&self, participant: &str) -> Account {
        self.accounts
            .get(participant)
            .cloned()
            .unwrap_or_else(|| Account::new(Owner::Human(participant.to_string()), self.stake))
    }
}

pub struct TickOutput {
    pub tick: u64,
    pub price_yes: f64,
    /// Journal lines for this tick: the tick itself and maybe a checkpoint.
    pub records: Vec<Record>,
    pub trades: Vec<Trade>,
    pub results: Vec<OrderResult>,
}

pub struct MarketBook {
    pub id: String,
    pub event: String,
    pub index: usize,
    claim: ClaimRecord,
    engine: MarketEngine,
    queue: VecDeque<QueuedOrder>,
    next_order: u64,
    log: Arc<RwLock<MarketLog>>,
    checkpoint_every: u64,
    closed: bool,
}

impl MarketBook {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        event: &str,
        index: usize,
        id: String,
        claim: ClaimRecord,
        agents: Vec<Agent>,
        params: MarketParams,
        seed: u64,
        checkpoint_every: u64,
    ) -> Self {
        let engine = MarketEngine::new(&claim, agents, params, seed);
        let log = MarketLog {
            history: vec![PricePoint {
                tick: 0,
                price_yes: engine.price_yes(),
            }],
            ..Default::default()
        };
        Self {
            id,
            event: event.to_string(),
            index,
            claim,
            engine,
            queue: VecDeque::new(),
            next_order: 1,
            log: Arc::new(RwLock::new(log)),
            checkpoint_every,
            closed: false,
        }
    }

    pub fn claim(&self) -> &ClaimRecord {
        &self.claim
    }

    pub fn engine(&self) -> &MarketEngine {
        &self.engine
    }

    pub fn log(&self) -> Arc<RwLock<MarketLog>> {
        Arc::clone(&self.log)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Creates the participant's account so snapshots show their stake.
    pub fn open_account(&mut self, participant: &str) {
        self.engine.open_account(participant);
    }

    /// Queues an order for the next tick; returns it with its 1-based place in line.
    pub fn enqueue(&mut self, order: HumanOrder) -> (QueuedOrder, usize) {
        let queued = QueuedOrder {
            id: self.next_order,
            order,
        };
        self.next_order += 1;
        self.queue.push_back(queued.clone());
        (queued, self.queue.len())
    }

    /// Processes one tick with everything queued so far.
    pub fn tick(&mut self) -> TickOutput {
        let drained: Vec<QueuedOrder> = self.queue.drain(..).collect();
        self.run(drained)
    }

    fn run(&mut self, orders: Vec<QueuedOrder>) -> TickOutput {
        let tick = self.engine.tick_count();
        let before = self.engine.trades().len();
        let (_, outcomes) = self
            .engine
            .tick_detailed(orders.iter().map(|q| q.order.clone()));
        let price_yes = self.engine.price_yes();
        let trades = self.engine.trades()[before..].to_vec();
        let results: Vec<OrderResult> = orders
            .iter()
            .zip(outcomes)
            .map(|(q, outcome)| OrderResult {
                order_id: q.id,
                participant: q.order.participant.clone(),
                tick,
                status: match outcome {
                    Ok(t) => OrderStatus::Executed {
                        cash_delta: t.cash_delta,
                        price_yes_after: t.spot_price_after,
                    },
                    Err(Rejection { reason, .. }) => OrderStatus::Rejected { reason },
                },
            })
            .collect();

        let mut records = vec![Record::Tick {
            event: self.event.clone(),
            market: self.index,
            tick,
            orders,
        }];
        let done = self.engine.tick_count();
        if self.checkpoint_every > 0 && done % self.checkpoint_every == 0 {
            let state = self.engine.state();
            records.push(Record::Checkpoint {
                event: self.event.clone(),
                market: self.index,
                tick: done,
                q_yes: state.q_yes,
                q_no: state.q_no,
                trades: state.log.len(),
            });
        }

        let mut log = self.log.write();
        log.trades.extend_from_slice(&trades);
        if log.history.last().is_none_or(|p| p.price_yes != price_yes) {
            log.history.push(PricePoint {
                tick: done,
                price_yes,
            });
        }
        log.results.extend_from_slice(&results);
        drop(log);

        TickOutput {
            tick,
            price_yes,
            records,
            trades,
            results,
        }
    }

    /// Re-executes a journaled tick.
    pub fn replay_tick(&mut self, tick: u64, orders: Vec<QueuedOrder>) -> Result<(), String> {
        if tick != self.engine.tick_count() {
            return Err(format!(
                "market {} expected tick {}, journal has {tick}",
                self.id,
                self.engine.tick_count()
            ));
        }
        if let Some(last) = orders.last() {
            self.next_order = self.next_order.max(last.id + 1);
        }
        self.run(orders);
        Ok(())
    }

    /// Compares against a journaled checkpoint, bit for bit.
    pub fn verify(&self, tick: u64, q_yes: f64, q_no: f64, trades: usize) -> Result<(), String> {
        let s = self.engine.state();
        if s.tick != tick
            || s.q_yes.to_bits() != q_yes.to_bits()
            || s.q_no.to_bits() != q_no.to_bits()
            || s.log.len() != trades
        {
            return Err(format!(
                "market {} at tick {} holds ({}, {}, {} trades), checkpoint says tick {tick} ({q_yes}, {q_no}, {trades} trades)",
                self.id,
                s.tick,
                s.q_yes,
                s.q_no,
                s.log.len()
            ));
        }
        Ok(())
    }

    /// Stops trading and optionally pays $1 per winning share. Orders still
    /// queued are returned unexecuted.
    pub fn close(&mut self, outcome: Option<Outcome>) -> Vec<QueuedOrder> {
        self.closed = true;
        if let Some(o) = outcome {
            // a fresh book is never settled twice: close runs once per event
            let _ = self.engine.settle(o);
        }
        let dropped: Vec<QueuedOrder> = self.queue.drain(..).collect();
        let mut log = self.log.write();
        for q in &dropped {
            log.results.push(OrderResult {
                order_id: q.id,
                participant: q.order.participant.clone(),
                tick: self.engine.tick_count(),
                status: OrderStatus::Rejected {
                    reason: "market closed before the order's tick".into(),
                },
            });
        }
        dropped
    }

    pub fn view(&self) -> MarketView {
        let state = self.engine.state();
        let log = self.log.read();
        MarketView {
            id: self.id.clone(),
            event: self.event.clone(),
            claim_id: self.claim.claim_id.clone(),
            title: self.claim.title.clone(),
            tick: state.tick,
            price_yes: self.engine.price_yes(),
            q_yes: state.q_yes,
            q_no: state.q_no,
            trades: log.trades.len(),
            history: log.history.len(),
            results: log.results.len(),
            pending: self.queue.len(),
            agent_trades: self.engine.participation().agent_trades,
            human_trades: self.engine.participation().human_trades,
            accounts: self.engine.human_accounts().clone(),
            stake: self.engine.params().human_stake,
            closed: self.closed,
            settled: state.settled,
        }
    }
}
