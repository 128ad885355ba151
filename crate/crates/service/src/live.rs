//! The exchange on tokio.
//!
//! Each market is a task that alone owns its book and drains a command
//! channel, so orders and ticks are applied in arrival order without locks on
//! the engine. Readers see the last published [`MarketView`] through a watch
//! channel and the append-only log behind a read lock. Journal lines go to a
//! single writer task that fsyncs once per batch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use replimarket::{Action, HumanOrder, Outcome, Owner, Side, Trade};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot, watch, Mutex};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::book::{MarketBook, MarketLog, MarketView, OrderResult, PricePoint, QueuedOrder};
use crate::exchange::{
    self, prepare_event, Catalog, CreateEvent, EventMeta, EventStatus, EventSummary, Exchange,
    OrderAck, PayoutRecord, RecoveryReport, Session,
};
use crate::journal::{self, JournalWriter, Record};
use crate::{now_ms, ServiceConfig, ServiceError};

const FEED_CAPACITY: usize = 4096;
const MARKET_QUEUE: usize = 1024;

/// Pushed to subscribers of an event's stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    /// Sent after every processed tick.
    Price {
        market: String,
        tick: u64,
        price_yes: f64,
    },
    Trade {
        market: String,
        tick: u64,
        side: Side,
        action: Action,
        /// `agent` or `human`; identities are not broadcast.
        trader: String,
        price_yes_after: f64,
    },
    Status {
        event: String,
        status: EventStatus,
    },
    Closed {
        event: String,
        money_market: String,
    },
}

/// Journal lines and per-market results of a closed event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub journal: String,
    pub results_csv: String,
}

enum Command {
    Order {
        order: HumanOrder,
        reply: oneshot::Sender<(QueuedOrder, usize)>,
    },
    Tick {
        reply: oneshot::Sender<()>,
    },
    Close {
        outcome: Option<Outcome>,
        reply: oneshot::Sender<Vec<QueuedOrder>>,
    },
}

struct MarketHandle {
    tx: mpsc::Sender<Command>,
    view: watch::Receiver<Arc<MarketView>>,
    log: Arc<RwLock<MarketLog>>,
}

struct LiveEvent {
    meta: RwLock<EventMeta>,
    markets: Vec<MarketHandle>,
    /// Held across every state change; owns the running clock.
    lifecycle: Mutex<Option<JoinHandle<()>>>,
    feed: broadcast::Sender<StreamEvent>,
}

impl LiveEvent {
    fn id(&self) -> String {
        self.meta.read().id().to_string()
    }

    fn ticks_processed(&self) -> u64 {
        self.markets
            .iter()
            .map(|m| m.view.borrow().tick)
            .max()
            .unwrap_or(0)
    }

    fn slots_used(&self) -> u64 {
        self.ticks_processed() + self.meta.read().dropped_ticks
    }

    fn views(&self) -> Vec<MarketView> {
        self.markets
            .iter()
            .map(|m| (**m.view.borrow()).clone())
            .collect()
    }
}

enum JournalCommand {
    Append(Record),
    Sync(oneshot::Sender<Result<(), String>>),
}

struct Inner {
    config: ServiceConfig,
    catalog: Catalog,
    events: RwLock<BTreeMap<String, Arc<LiveEvent>>>,
    /// Next event number; locked for the whole of a create.
    next_event: Mutex<u64>,
    journal: mpsc::UnboundedSender<JournalCommand>,
    journal_path: Option<PathBuf>,
}

/// Handle to the running exchange; cheap to clone.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

impl Service {
    /// An exchange without a journal. Must be called inside a tokio runtime.
    pub fn new(config: ServiceConfig, catalog: Catalog) -> Self {
        Self::start(Exchange::new(config, catalog))
    }

    /// Replays the journal at `path`, then keeps appending to it.
    pub fn open(
        config: ServiceConfig,
        catalog: Catalog,
        path: &Path,
    ) -> Result<(Self, RecoveryReport), ServiceError> {
        let (exchange, report) = Exchange::recover(config, catalog, path)?;
        Ok((Self::start(exchange), report))
    }

    /// Takes over a replayed exchange: spawns market tasks and resumes the
    /// clocks of open events.
    pub fn start(exchange: Exchange) -> Self {
        let (config, catalog, events, next_event, writer) = exchange.into_parts();
        let journal_path = writer.as_ref().map(|w| w.path().to_path_buf());
        let (journal_tx, journal_rx) = mpsc::unbounded_channel();
        tokio::spawn(write_journal(writer, journal_rx));
        let service = Self {
            inner: Arc::new(Inner {
                config,
                catalog,
                events: RwLock::new(BTreeMap::new()),
                next_event: Mutex::new(next_event),
                journal: journal_tx,
                journal_path,
            }),
        };
        for (meta, books) in events {
            let open = meta.status == EventStatus::Open;
            let event = service.install(meta, books);
            if open {
                let clock = service.start_clock(&event);
                *event.lifecycle.try_lock().expect("fresh event") = clock;
            }
        }
        service
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.inner.journal_path.as_deref()
    }

    fn install(&self, meta: EventMeta, books: Vec<MarketBook>) -> Arc<LiveEvent> {
        let (feed, _) = broadcast::channel(FEED_CAPACITY);
        let closed = meta.status.is_closed();
        let markets = books
            .into_iter()
            .map(|book| {
                let (tx, rx) = mpsc::channel(MARKET_QUEUE);
                let (view_tx, view) = watch::channel(Arc::new(book.view()));
                let handle = MarketHandle {
                    tx,
                    view,
                    log: book.log(),
                };
                if !closed {
                    tokio::spawn(run_market(
                        book,
                        rx,
                        view_tx,
                        self.inner.journal.clone(),
                        feed.clone(),
                    ));
                }
                handle
            })
            .collect();
        let event = Arc::new(LiveEvent {
            meta: RwLock::new(meta),
            markets,
            lifecycle: Mutex::new(None),
            feed,
        });
        self.inner.events.write().insert(event.id(), event.clone());
        event
    }

    fn start_clock(&self, event: &Arc<LiveEvent>) -> Option<JoinHandle<()>> {
        let interval = event.meta.read().spec.sim.tick_interval_ms;
        (interval > 0).then(|| tokio::spawn(run_clock(self.clone(), event.clone(), interval)))
    }

    fn event(&self, id: &str) -> Result<Arc<LiveEvent>, ServiceError> {
        self.inner
            .events
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownEvent(id.into()))
    }

    fn market(&self, market_id: &str) -> Result<(Arc<LiveEvent>, usize), ServiceError> {
        self.inner
            .events
            .read()
            .values()
            .find_map(|e| {
                let index = e.meta.read().market_index(market_id)?;
                Some((e.clone(), index))
            })
            .ok_or_else(|| ServiceError::UnknownMarket(market_id.into()))
    }

    fn append(&self, record: Record) {
        // the writer only stops with the runtime
        let _ = self.inner.journal.send(JournalCommand::Append(record));
    }

    /// Waits until every journal line sent so far is on disk.
    pub async fn flush_journal(&self) -> Result<(), ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.inner
            .journal
            .send(JournalCommand::Sync(tx))
            .map_err(|_| ServiceError::Stopped)?;
        rx.await
            .map_err(|_| ServiceError::Stopped)?
            .map_err(|e| ServiceError::Io(std::io::Error::other(e)))
    }

    pub async fn create_event(&self, req: &CreateEvent) -> Result<EventMeta, ServiceError> {
        let mut next = self.inner.next_event.lock().await;
        let spec = prepare_event(&self.inner.catalog, &self.inner.config, req, *next)?;
        let at_ms = now_ms();
        self.append(Record::EventCreated {
            event: Box::new(spec.clone()),
            at_ms,
        });
        self.flush_journal().await?;
        *next += 1;
        let books = spec.books(self.inner.config.checkpoint_every);
        let meta = EventMeta::new(spec, at_ms);
        self.install(meta.clone(), books);
        tracing::info!(event = %meta.id(), mode = %meta.spec.mode, "event created");
        Ok(meta)
    }

    pub async fn open_event(&self, id: &str) -> Result<(), ServiceError> {
        let event = self.event(id)?;
        let mut clock = event.lifecycle.lock().await;
        match event.meta.read().status {
            EventStatus::Scheduled => {}
            EventStatus::Open => return Err(ServiceError::AlreadyOpen(id.into())),
            _ => return Err(ServiceError::AlreadyClosed(id.into())),
        }
        let at_ms = now_ms();
        self.append(Record::EventOpened {
            event: id.into(),
            at_ms,
        });
        self.flush_journal().await?;
        event.meta.write().mark_open(at_ms);
        let _ = event.feed.send(StreamEvent::Status {
            event: id.into(),
            status: EventStatus::Open,
        });
        *clock = self.start_clock(&event);
        tracing::info!(event = %id, "event open");
        Ok(())
    }

    /// Processes up to `ticks` ticks now, within the event's tick budget.
    pub async fn advance(&self, id: &str, ticks: u64) -> Result<u64, ServiceError> {
        let event = self.event(id)?;
        let _guard = event.lifecycle.lock().await;
        event.meta.read().check_open()?;
        let n = self.step(&event, ticks).await?;
        self.flush_journal().await?;
        Ok(n)
    }

    /// Runs ticks on every market in lockstep. Caller holds the lifecycle lock.
    async fn step(&self, event: &LiveEvent, ticks: u64) -> Result<u64, ServiceError> {
        let budget = event.meta.read().spec.sim.ticks;
        let n = ticks.min(budget.saturating_sub(event.slots_used()));
        for _ in 0..n {
            let mut replies = Vec::with_capacity(event.markets.len());
            for m in &event.markets {
                let (reply, rx) = oneshot::channel();
                m.tx.send(Command::Tick { reply })
                    .await
                    .map_err(|_| ServiceError::Stopped)?;
                replies.push(rx);
            }
            for rx in replies {
                rx.await.map_err(|_| ServiceError::Stopped)?;
            }
        }
        Ok(n)
    }

    fn skip(&self, event: &LiveEvent, count: u64) {
        let slot = event.slots_used();
        self.append(Record::Skipped {
            event: event.id(),
            slot,
            count,
        });
        event.meta.write().dropped_ticks += count;
        tracing::warn!(event = %event.id(), slot, count, "clock slots dropped");
    }

    pub async fn close_event(
        &self,
        id: &str,
        outcomes: Option<BTreeMap<String, Outcome>>,
    ) -> Result<Vec<MarketView>, ServiceError> {
        let event = self.event(id)?;
        let mut clock = event.lifecycle.lock().await;
        let outcomes = {
            let meta = event.meta.read();
            meta.check_open()?;
            meta.close_outcomes(outcomes, &self.inner.config)?
        };
        if let Some(handle) = clock.take() {
            handle.abort();
        }
        let at_ms = now_ms();
        self.append(Record::EventClosed {
            event: id.into(),
            outcomes: outcomes.clone(),
            at_ms,
        });
        self.flush_journal().await?;
        event.meta.write().mark_closed(outcomes, at_ms);

        let mut dropped = 0;
        for (i, m) in event.markets.iter().enumerate() {
            let outcome = event.meta.read().outcome_for(i);
            let (reply, rx) = oneshot::channel();
            if m.tx.send(Command::Close { outcome, reply }).await.is_ok() {
                dropped += rx.await.map_or(0, |d| d.len());
            }
        }
        let processed = event.ticks_processed();
        let (floor, money_market) = {
            let meta = event.meta.read();
            (meta.spec.sim.effective_tick_floor, meta.money_market()?)
        };
        if processed < floor {
            tracing::warn!(event = %id, processed, floor, "event closed below the effective tick floor");
        }
        tracing::info!(event = %id, processed, dropped_orders = dropped, "event closed");
        let _ = event.feed.send(StreamEvent::Closed {
            event: id.into(),
            money_market,
        });
        Ok(event.views())
    }

    pub fn login(&self, token: &str) -> Result<Session, ServiceError> {
        self.inner
            .events
            .read()
            .values()
            .find_map(|e| {
                let meta = e.meta.read();
                meta.participant(token).map(|p| Session {
                    participant_id: p.to_string(),
                    event_id: meta.id().to_string(),
                    markets: meta.market_ids(),
                })
            })
            .ok_or(ServiceError::Unauthorized)
    }

    /// The participant behind `token`, if it belongs to the market's event.
    pub fn participant(&self, token: &str, market_id: &str) -> Result<String, ServiceError> {
        let (event, _) = self.market(market_id)?;
        let meta = event.meta.read();
        meta.participant(token)
            .map(str::to_string)
            .ok_or(ServiceError::Unauthorized)
    }

    pub async fn submit(
        &self,
        token: &str,
        market_id: &str,
        side: Side,
        action: Action,
    ) -> Result<OrderAck, ServiceError> {
        let (event, index) = self.market(market_id)?;
        let participant = {
            let meta = event.meta.read();
            let p = meta
                .participant(token)
                .ok_or(ServiceError::Unauthorized)?
                .to_string();
            meta.check_open()?;
            if !meta.spec.mode.has_humans() {
                return Err(ServiceError::AgentsOnly(meta.id().into()));
            }
            p
        };
        let (reply, rx) = oneshot::channel();
        let order = HumanOrder {
            participant,
            side,
            action,
        };
        let closed = || ServiceError::AlreadyClosed(event.id());
        event.markets[index]
            .tx
            .send(Command::Order { order, reply })
            .await
            .map_err(|_| closed())?;
        let (queued, position) = rx.await.map_err(|_| closed())?;
        Ok(OrderAck {
            market_id: market_id.into(),
            order_id: queued.id,
            position,
        })
    }

    pub fn events(&self) -> Vec<EventSummary> {
        self.inner
            .events
            .read()
            .values()
            .map(|e| e.meta.read().summary(e.ticks_processed()))
            .collect()
    }

    pub fn event_summary(&self, id: &str) -> Result<EventSummary, ServiceError> {
        let event = self.event(id)?;
        let processed = event.ticks_processed();
        let summary = event.meta.read().summary(processed);
        Ok(summary)
    }

    /// The event's metadata including participant tokens; for admins.
    pub fn event_meta(&self, id: &str) -> Result<EventMeta, ServiceError> {
        Ok(self.event(id)?.meta.read().clone())
    }

    pub fn markets(&self, event: &str) -> Result<Vec<Arc<MarketView>>, ServiceError> {
        Ok(self
            .event(event)?
            .markets
            .iter()
            .map(|m| m.view.borrow().clone())
            .collect())
    }

    pub fn view(&self, market_id: &str) -> Result<Arc<MarketView>, ServiceError> {
        let (event, index) = self.market(market_id)?;
        let view = event.markets[index].view.borrow().clone();
        Ok(view)
    }

    /// Trades from index `since` up to the published view.
    pub fn trades_since(&self, market_id: &str, since: usize) -> Result<Vec<Trade>, ServiceError> {
        let (event, index) = self.market(market_id)?;
        let m = &event.markets[index];
        let upto = m.view.borrow().trades;
        let log = m.log.read();
        Ok(log.trades[since.min(upto)..upto].to_vec())
    }

    pub fn history(&self, market_id: &str) -> Result<Vec<PricePoint>, ServiceError> {
        let (event, index) = self.market(market_id)?;
        let m = &event.markets[index];
        let upto = m.view.borrow().history;
        let history = m.log.read().history[..upto].to_vec();
        Ok(history)
    }

    pub fn results_for(
        &self,
        market_id: &str,
        participant: &str,
    ) -> Result<Vec<OrderResult>, ServiceError> {
        let (event, index) = self.market(market_id)?;
        let m = &event.markets[index];
        let upto = m.view.borrow().results;
        let results = m.log.read().results[..upto]
            .iter()
            .filter(|r| r.participant == participant)
            .cloned()
            .collect();
        Ok(results)
    }

    pub fn subscribe(&self, event: &str) -> Result<broadcast::Receiver<StreamEvent>, ServiceError> {
        Ok(self.event(event)?.feed.subscribe())
    }

    pub fn money_market(&self, event: &str) -> Result<String, ServiceError> {
        self.event(event)?.meta.read().money_market()
    }

    pub fn payouts(&self, id: &str) -> Result<Vec<PayoutRecord>, ServiceError> {
        let event = self.event(id)?;
        let views = event.views();
        let meta = event.meta.read();
        exchange::payouts(&meta, &views, &self.inner.config)
    }

    pub async fn export(&self, id: &str) -> Result<Export, ServiceError> {
        let event = self.event(id)?;
        if !event.meta.read().status.is_closed() {
            return Err(ServiceError::Sealed);
        }
        self.flush_journal().await?;
        let journal = match &self.inner.journal_path {
            Some(path) => journal::event_lines(path, id)?,
            None => String::new(),
        };
        let views = event.views();
        let results_csv = exchange::results_csv(&event.meta.read(), &views);
        Ok(Export {
            journal,
            results_csv,
        })
    }

    /// Stops every clock and flushes the journal.
    pub async fn shutdown(&self) -> Result<(), ServiceError> {
        let events: Vec<_> = self.inner.events.read().values().cloned().collect();
        for e in events {
            if let Some(clock) = e.lifecycle.lock().await.take() {
                clock.abort();
            }
        }
        self.flush_journal().await
    }
}

async fn run_market(
    mut book: MarketBook,
    mut rx: mpsc::Receiver<Command>,
    view: watch::Sender<Arc<MarketView>>,
    journal: mpsc::UnboundedSender<JournalCommand>,
    feed: broadcast::Sender<StreamEvent>,
) {
    while let Some(cmd) = rx.recv().await {
        match cmd {
            Command::Order { order, reply } => {
                let queued = book.enqueue(order);
                view.send_replace(Arc::new(book.view()));
                let _ = reply.send(queued);
            }
            Command::Tick { reply } => {
                let out = book.tick();
                for r in out.records {
                    let _ = journal.send(JournalCommand::Append(r));
                }
                for t in &out.trades {
                    let _ = feed.send(StreamEvent::Trade {
                        market: book.id.clone(),
                        tick: out.tick,
                        side: t.order.side,
                        action: t.order.action,
                        trader: match t.order.owner {
                            Owner::Agent(_) => "agent".into(),
                            Owner::Human(_) => "human".into(),
                        },
                        price_yes_after: t.spot_price_after,
                    });
                }
                let _ = feed.send(StreamEvent::Price {
                    market: book.id.clone(),
                    tick: out.tick + 1,
                    price_yes: out.price_yes,
                });
                view.send_replace(Arc::new(book.view()));
                let _ = reply.send(());
            }
            Command::Close { outcome, reply } => {
                let dropped = book.close(outcome);
                view.send_replace(Arc::new(book.view()));
                let _ = reply.send(dropped);
                break;
            }
        }
    }
}

/// Ticks an open event on the wall clock, anchored at its opening time.
/// Slots that passed without a tick (a stall, or downtime before a restart)
/// are journaled as skipped and count against the budget.
async fn run_clock(service: Service, event: Arc<LiveEvent>, interval_ms: u64) {
    let mut clock = tokio::time::interval(Duration::from_millis(interval_ms));
    clock.set_missed_tick_behavior(MissedTickBehavior::Skip);
    loop {
        clock.tick().await;
        let guard = event.lifecycle.lock().await;
        let (opened, budget) = {
            let meta = event.meta.read();
            if meta.status != EventStatus::Open {
                return;
            }
            (meta.opened_ms.unwrap_or(0), meta.spec.sim.ticks)
        };
        let due = (now_ms().saturating_sub(opened) / interval_ms + 1).min(budget);
        let used = event.slots_used();
        if used < due {
            if due - used > 1 {
                service.skip(&event, due - used - 1);
            }
            if let Err(e) = service.step(&event, 1).await {
                tracing::error!(event = %event.id(), error = %e, "tick failed");
                return;
            }
        }
        drop(guard);
        if event.slots_used() >= budget {
            let id = event.id();
            let service = service.clone();
            // closing aborts this task, so hand it off
            tokio::spawn(async move {
                if let Err(e) = service.close_event(&id, None).await {
                    tracing::error!(event = %id, error = %e, "auto-close failed");
                }
            });
            return;
        }
    }
}

/// Appends whatever is queued, then fsyncs once for the whole batch.
async fn write_journal(
    mut writer: Option<JournalWriter>,
    mut rx: mpsc::UnboundedReceiver<JournalCommand>,
) {
    let mut waiters = Vec::new();
    while let Some(first) = rx.recv().await {
        let mut failure: Option<String> = None;
        let mut next = Some(first);
        while let Some(cmd) = next {
            match cmd {
                JournalCommand::Append(record) => {
                    if let Some(w) = &mut writer {
                        if let Err(e) = w.append(&record) {
                            failure = Some(e.to_string());
                        }
                    }
                }
                JournalCommand::Sync(tx) => waiters.push(tx),
            }
            next = rx.try_recv().ok();
        }
        if let Some(w) = &mut writer {
            if let Err(e) = w.sync() {
                failure = Some(e.to_string());
            }
        }
        if let Some(e) = &failure {
            tracing::error!(error = %e, "journal write failed");
        }
        for tx in waiters.drain(..) {
            let _ = tx.send(failure.clone().map_or(Ok(()), Err));
        }
    }
}
