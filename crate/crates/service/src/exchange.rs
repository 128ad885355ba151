//! Event lifecycle, sessions, ticking and payouts as a plain state machine.
//!
//! [`Exchange`] owns every market book directly and is fully deterministic
//! given the journal it writes: [`Exchange::recover`] rebuilds the same state
//! from that journal. The live service runs the same books on tokio tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replimarket::agents::BidParams;
use replimarket::{
    derive_seed, final_prediction, Action, ClaimRecord, ClaimSet, Domain, HumanOrder, MarketParams,
    Mode, Outcome, Population, Side, SimConfig, TrainedMarket,
};
use serde::{Deserialize, Serialize};

use crate::book::{MarketBook, MarketView, QueuedOrder};
use crate::journal::{self, Defect, JournalWriter, Record, Recovery};
use crate::{ServiceConfig, ServiceError, MARKETS_PER_EVENT};

const MONEY_MARKET_STREAM: u64 = 0x6d6d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Scheduled,
    Open,
    Closed,
    /// Closed and paid out at known outcomes.
    Settled,
}

impl EventStatus {
    pub fn is_closed(self) -> bool {
        matches!(self, EventStatus::Closed | EventStatus::Settled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub token: String,
}

/// Everything needed to rebuild an event's markets, as journaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub id: String,
    pub discipline: Domain,
    pub mode: Mode,
    pub seed: u64,
    pub claims: Vec<ClaimRecord>,
    pub population: Option<Population>,
    pub params: MarketParams,
    pub sim: SimConfig,
    pub participants: Vec<Participant>,
}

impl EventSpec {
    pub fn market_id(&self, index: usize) -> String {
        format!("{}-m{}", self.id, index + 1)
    }

    pub(crate) fn books(&self, checkpoint_every: u64) -> Vec<MarketBook> {
        self.claims
            .iter()
            .enumerate()
            .map(|(i, claim)| {
                let agents = match (&self.population, self.mode.has_agents()) {
                    (Some(p), true) => p.agents.clone(),
                    _ => Vec::new(),
                };
                let mut book = MarketBook::new(
                    &self.id,
                    i,
                    self.market_id(i),
                    claim.clone(),
                    agents,
                    self.params,
                    self.sim.market_seed(&claim.claim_id),
                    checkpoint_every,
                );
                for p in &self.participants {
                    book.open_account(&p.id);
                }
                book
            })
            .collect()
    }
}

/// Admin request to schedule an event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateEvent {
    /// Defaults to the first claim's discipline. Without `claim_ids`, picks
    /// the first five catalog claims of this discipline.
    pub discipline: Option<Domain>,
    pub claim_ids: Vec<String>,
    pub mode: Option<Mode>,
    pub participants: Vec<String>,
    pub seed: Option<u64>,
    /// Overrides the configured tick budget.
    pub ticks: Option<u64>,
}

/// Lifecycle data of one event; the money market stays private until close.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMeta {
    pub spec: EventSpec,
    pub status: EventStatus,
    money_market: Option<usize>,
    pub created_ms: u64,
    pub opened_ms: Option<u64>,
    pub closed_ms: Option<u64>,
    pub dropped_ticks: u64,
    pub outcomes: Option<BTreeMap<String, Outcome>>,
}

impl EventMeta {
    pub(crate) fn new(spec: EventSpec, created_ms: u64) -> Self {
        Self {
            spec,
            status: EventStatus::Scheduled,
            money_market: None,
            created_ms,
            opened_ms: None,
            closed_ms: None,
            dropped_ticks: 0,
            outcomes: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn market_ids(&self) -> Vec<String> {
        (0..self.spec.claims.len())
            .map(|i| self.spec.market_id(i))
            .collect()
    }

    pub fn market_index(&self, market_id: &str) -> Option<usize> {
        (0..self.spec.claims.len()).find(|&i| self.spec.market_id(i) == market_id)
    }

    pub fn participant(&self, token: &str) -> Option<&str> {
        self.spec
            .participants
            .iter()
            .find(|p| p.token == token)
            .map(|p| p.id.as_str())
    }

    /// The money market's id, once the event has closed.
    pub fn money_market(&self) -> Result<String, ServiceError> {
        match (self.status.is_closed(), self.money_market) {
            (true, Some(i)) => Ok(self.spec.market_id(i)),
            _ => Err(ServiceError::Sealed),
        }
    }

    pub(crate) fn mark_open(&mut self, at_ms: u64) {
        self.status = EventStatus::Open;
        self.opened_ms = Some(at_ms);
        self.money_market = Some(draw_money_market(self.spec.seed));
    }

    pub(crate) fn mark_closed(&mut self, outcomes: Option<BTreeMap<String, Outcome>>, at_ms: u64) {
        self.status = if outcomes.is_some() {
            EventStatus::Settled
        } else {
            EventStatus::Closed
        };
        self.outcomes = outcomes;
        self.closed_ms = Some(at_ms);
    }

    pub(crate) fn check_open(&self) -> Result<(), ServiceError> {
        match self.status {
            EventStatus::Open => Ok(()),
            s if s.is_closed() => Err(ServiceError::AlreadyClosed(self.spec.id.clone())),
            _ => Err(ServiceError::NotOpen(self.spec.id.clone())),
        }
    }

    /// Per-market outcome for closing: explicit ones, else the recorded
    /// truth when configured and complete.
    pub fn close_outcomes(
        &self,
        explicit: Option<BTreeMap<String, Outcome>>,
        config: &ServiceConfig,
    ) -> Result<Option<BTreeMap<String, Outcome>>, ServiceError> {
        if let Some(map) = explicit {
            for id in map.keys() {
                if !self.spec.claims.iter().any(|c| &c.claim_id == id) {
                    return Err(ServiceError::UnknownClaim(id.clone()));
                }
            }
            return Ok(Some(map));
        }
        if config.settle_with_truth && self.spec.claims.iter().all(|c| c.outcome.is_some()) {
            return Ok(Some(
                self.spec
                    .claims
                    .iter()
                    .map(|c| (c.claim_id.clone(), c.outcome.expect("checked")))
                    .collect(),
            ));
        }
        Ok(None)
    }

    pub(crate) fn outcome_for(&self, index: usize) -> Option<Outcome> {
        let claim = &self.spec.claims[index].claim_id;
        self.outcomes.as_ref().and_then(|m| m.get(claim).copied())
    }
}

/// Index of the money market, uniform over the five markets for a given seed.
pub fn draw_money_market(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[MONEY_MARKET_STREAM]));
    rng.random_range(0..MARKETS_PER_EVENT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoutRecord {
    pub participant_id: String,
    pub trades: u32,
    pub eligible: bool,
    pub money_market: String,
    /// Cash held in the money market at close, after settlement if any.
    pub money_market_cash: f64,
    /// What the participant is paid from the money market (0 when ineligible).
    pub payout: f64,
    pub flat_compensation: f64,
}

/// Payouts from views taken after close.
pub fn payouts(
    meta: &EventMeta,
    views: &[MarketView],
    config: &ServiceConfig,
) -> Result<Vec<PayoutRecord>, ServiceError> {
    let money_market = meta.money_market()?;
    let mm = meta
        .market_index(&money_market)
        .expect("drawn from this event");
    Ok(meta
        .spec
        .participants
        .iter()
        .map(|p| {
            let trades: u32 = views.iter().map(|v| v.account(&p.id).trade_count).sum();
            let eligible = trades >= config.min_trades;
            let cash = views[mm].account(&p.id).cash;
            PayoutRecord {
                participant_id: p.id.clone(),
                trades,
                eligible,
                money_market: money_market.clone(),
                money_market_cash: cash,
                payout: if eligible { cash } else { 0.0 },
                flat_compensation: config.flat_compensation,
            }
        })
        .collect())
}

/// One line per market: closing price and activity.
pub fn results_csv(meta: &EventMeta, views: &[MarketView]) -> String {
    let mut out = String::from(
        "market_id,claim_id,discipline,mode,closing_price,prediction,outcome,ticks_processed,ticks_dropped,agent_trades,human_trades\n",
    );
    for v in views {
        let outcome = meta
            .market_index(&v.id)
            .and_then(|i| meta.outcome_for(i))
            .map_or(String::new(), |o| o.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{},{},{},{},{},{}",
            v.id,
            v.claim_id,
            meta.spec.discipline,
            meta.spec.mode,
            v.price_yes,
            final_prediction(v.price_yes),
            outcome,
            v.tick,
            meta.dropped_ticks,
            v.agent_trades,
            v.human_trades
        );
    }
    out
}

/// Public description of an event; never includes tokens or the money market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub id: String,
    pub discipline: Domain,
    pub mode: Mode,
    pub status: EventStatus,
    pub markets: Vec<String>,
    pub ticks: u64,
    pub tick_interval_ms: u64,
    pub ticks_processed: u64,
    pub ticks_dropped: u64,
    pub created_ms: u64,
    pub opened_ms: Option<u64>,
    pub closed_ms: Option<u64>,
}

impl EventMeta {
    pub fn summary(&self, ticks_processed: u64) -> EventSummary {
        EventSummary {
            id: self.spec.id.clone(),
            discipline: self.spec.discipline,
            mode: self.spec.mode,
            status: self.status,
            markets: self.market_ids(),
            ticks: self.spec.sim.ticks,
            tick_interval_ms: self.spec.sim.tick_interval_ms,
            ticks_processed,
            ticks_dropped: self.dropped_ticks,
            created_ms: self.created_ms,
            opened_ms: self.opened_ms,
            closed_ms: self.closed_ms,
        }
    }
}

/// A participant's view after logging in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub participant_id: String,
    pub event_id: String,
    pub markets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderAck {
    pub market_id: String,
    pub order_id: u64,
    /// 1-based place in the market's queue for the next tick.
    pub position: usize,
}

pub struct CloseReport {
    pub views: Vec<MarketView>,
    pub dropped_orders: Vec<(String, QueuedOrder)>,
}

struct EventState {
    meta: EventMeta,
    books: Vec<MarketBook>,
}

/// Outcome of rebuilding an exchange from its journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub records_applied: usize,
    pub valid_bytes: u64,
    /// Set when replay stopped before the end of the journal.
    pub halted: Option<Defect>,
    /// Copy of the journal as found, kept when a defect other than a torn
    /// final line forced truncation.
    pub preserved_copy: Option<PathBuf>,
}

/// Resolved inputs for new events.
#[derive(Clone, Default)]
pub struct Catalog {
    pub market: Option<TrainedMarket>,
    /// Claims events may be created on, normalized like the training set.
    pub claims: Option<ClaimSet>,
    pub sim: SimConfig,
}

pub struct Exchange {
    config: ServiceConfig,
    catalog: Catalog,
    events: BTreeMap<String, EventState>,
    next_event: u64,
    journal: Option<JournalWriter>,
}

fn event_number(id: &str) -> Option<u64> {
    id.strip_prefix("ev-")?.parse().ok()
}

fn new_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Exchange {
    pub fn new(config: ServiceConfig, catalog: Catalog) -> Self {
        Self {
            config,
            catalog,
            events: BTreeMap::new(),
            next_event: 1,
            journal: None,
        }
    }

    /// Rebuilds state from `path` and keeps appending to it.
    pub fn recover(
        config: ServiceConfig,
        catalog: Catalog,
        path: &Path,
    ) -> Result<(Self, RecoveryReport), ServiceError> {
        let (mut exchange, mut report) = Self::replay(config, catalog, journal::recover(path)?);
        if report.halted.as_ref().is_some_and(|d| !d.torn) && path.exists() {
            let copy = path.with_extension(format!("corrupt-{}", crate::now_ms()));
            std::fs::copy(path, &copy)?;
            report.preserved_copy = Some(copy);
        }
        exchange.journal = Some(JournalWriter::open(path, report.valid_bytes)?);
        Ok((exchange, report))
    }

    /// Applies parsed journal records in order, stopping at the first one
    /// that does not fit the state built so far. Touches no files.
    pub fn replay(
        config: ServiceConfig,
        catalog: Catalog,
        found: Recovery,
    ) -> (Self, RecoveryReport) {
        let mut exchange = Self::new(config, catalog);
        let mut report = RecoveryReport {
            records_applied: 0,
            valid_bytes: 0,
            halted: found.defect.clone(),
            preserved_copy: None,
        };
        for (i, record) in found.records.into_iter().enumerate() {
            if let Err(message) = exchange.apply(record) {
                report.halted = Some(Defect {
                    line: i + 1,
                    reason: message,
                    torn: false,
                });
                break;
            }
            report.records_applied += 1;
            report.valid_bytes = found.ends[i];
        }
        if report.halted.is_none() {
            report.valid_bytes = found.valid_bytes;
        }
        (exchange, report)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path())
    }

    fn log(&mut self, record: &Record) -> Result<(), ServiceError> {
        if let Some(j) = &mut self.journal {
            j.append(record)?;
        }
        Ok(())
    }

    fn sync(&mut self) -> Result<(), ServiceError> {
        if let Some(j) = &mut self.journal {
            j.sync()?;
        }
        Ok(())
    }

    /// Validates a request against the catalog and issues participant tokens.
    pub fn prepare(&self, req: &CreateEvent) -> Result<EventSpec, ServiceError> {
        prepare_event(&self.catalog, &self.config, req, self.next_event)
    }

    pub fn create(&mut self, spec: EventSpec, at_ms: u64) -> Result<&EventMeta, ServiceError> {
        let record = Record::EventCreated {
            event: Box::new(spec),
            at_ms,
        };
        self.log(&record)?;
        self.sync()?;
        let id = record.event_id().to_string();
        self.apply(record).map_err(ServiceError::InvalidEvent)?;
        Ok(&self.events[&id].meta)
    }

    pub fn create_event(
        &mut self,
        req: &CreateEvent,
        at_ms: u64,
    ) -> Result<&EventMeta, ServiceError> {
        let spec = self.prepare(req)?;
        self.create(spec, at_ms)
    }

    pub fn open(&mut self, event: &str, at_ms: u64) -> Result<(), ServiceError> {
        let meta = &self.state(event)?.meta;
        match meta.status {
            EventStatus::Scheduled => {}
            s if s.is_closed() => return Err(ServiceError::AlreadyClosed(event.into())),
            _ => return Err(ServiceError::AlreadyOpen(event.into())),
        }
        let record = Record::EventOpened {
            event: event.into(),
            at_ms,
        };
        self.log(&record)?;
        self.sync()?;
        self.state_mut(event)?.meta.mark_open(at_ms);
        Ok(())
    }

    pub fn login(&self, token: &str) -> Result<Session, ServiceError> {
        self.events
            .values()
            .find_map(|e| {
                e.meta.participant(token).map(|p| Session {
                    participant_id: p.to_string(),
                    event_id: e.meta.id().to_string(),
                    markets: e.meta.market_ids(),
                })
            })
            .ok_or(ServiceError::Unauthorized)
    }

    /// Queues a human order for the market's next tick.
    pub fn submit(
        &mut self,
        token: &str,
        market_id: &str,
        side: Side,
        action: Action,
    ) -> Result<OrderAck, ServiceError> {
        let (event, index) = self.locate(market_id)?;
        let state = self.state_mut(&event)?;
        let participant = state
            .meta
            .participant(token)
            .ok_or(ServiceError::Unauthorized)?
            .to_string();
        state.meta.check_open()?;
        if !state.meta.spec.mode.has_humans() {
            return Err(ServiceError::AgentsOnly(event));
        }
        let (queued, position) = state.books[index].enqueue(HumanOrder {
            participant,
            side,
            action,
        });
        Ok(OrderAck {
            market_id: market_id.to_string(),
            order_id: queued.id,
            position,
        })
    }

    /// Runs up to `ticks` ticks on every market of an open event, within the
    /// tick budget, then syncs the journal once. Returns ticks run.
    pub fn advance(&mut self, event: &str, ticks: u64) -> Result<u64, ServiceError> {
        let state = self.state(event)?;
        state.meta.check_open()?;
        let remaining = state.meta.spec.sim.ticks.saturating_sub(slots_used(state));
        let n = ticks.min(remaining);
        for _ in 0..n {
            let state = self.state_mut(event)?;
            let mut records = Vec::new();
            for book in &mut state.books {
                records.extend(book.tick().records);
            }
            for r in &records {
                self.log(r)?;
            }
        }
        self.sync()?;
        Ok(n)
    }

    /// Records clock slots that passed unprocessed.
    pub fn skip(&mut self, event: &str, count: u64) -> Result<(), ServiceError> {
        let state = self.state(event)?;
        state.meta.check_open()?;
        let record = Record::Skipped {
            event: event.into(),
            slot: slots_used(state),
            count,
        };
        self.log(&record)?;
        self.state_mut(event)?.meta.dropped_ticks += count;
        Ok(())
    }

    pub fn close(
        &mut self,
        event: &str,
        outcomes: Option<BTreeMap<String, Outcome>>,
        at_ms: u64,
    ) -> Result<CloseReport, ServiceError> {
        let state = self.state(event)?;
        state.meta.check_open()?;
        let outcomes = state.meta.close_outcomes(outcomes, &self.config)?;
        let record = Record::EventClosed {
            event: event.into(),
            outcomes: outcomes.clone(),
            at_ms,
        };
        self.log(&record)?;
        self.sync()?;
        let state = self.state_mut(event)?;
        state.meta.mark_closed(outcomes, at_ms);
        let mut dropped_orders = Vec::new();
        for i in 0..state.books.len() {
            let outcome = state.meta.outcome_for(i);
            let book = &mut state.books[i];
            let dropped = book.close(outcome);
            dropped_orders.extend(dropped.into_iter().map(|q| (book.id.clone(), q)));
        }
        Ok(CloseReport {
            views: state.books.iter().map(MarketBook::view).collect(),
            dropped_orders,
        })
    }

    pub fn payouts(&self, event: &str) -> Result<Vec<PayoutRecord>, ServiceError> {
        let state = self.state(event)?;
        payouts(&state.meta, &self.views(event)?, &self.config)
    }

    /// Applies a journal record without writing it.
    pub fn apply(&mut self, record: Record) -> Result<(), String> {
        match record {
            Record::EventCreated { event, at_ms } => {
                let spec = *event;
                if self.events.contains_key(&spec.id) {
                    return Err(format!("event `{}` created twice", spec.id));
                }
                if let Some(n) = event_number(&spec.id) {
                    self.next_event = self.next_event.max(n + 1);
                }
                let books = spec.books(self.config.checkpoint_every);
                self.events.insert(
                    spec.id.clone(),
                    EventState {
                        meta: EventMeta::new(spec, at_ms),
                        books,
                    },
                );
            }
            Record::EventOpened { event, at_ms } => {
                let meta = &mut self.state_mut(&event).map_err(|e| e.to_string())?.meta;
                if meta.status != EventStatus::Scheduled {
                    return Err(format!("event `{event}` opened twice"));
                }
                meta.mark_open(at_ms);
            }
            Record::Tick {
                event,
                market,
                tick,
                orders,
            } => {
                let state = self.state_mut(&event).map_err(|e| e.to_string())?;
                if state.meta.status != EventStatus::Open {
                    return Err(format!("tick for event `{event}` while not open"));
                }
                let book = state
                    .books
                    .get_mut(market)
                    .ok_or_else(|| format!("event `{event}` has no market {market}"))?;
                book.replay_tick(tick, orders)?;
            }
            Record::Skipped { event, count, .. } => {
                let state = self.state_mut(&event).map_err(|e| e.to_string())?;
                state.meta.dropped_ticks += count;
            }
            Record::Checkpoint {
                event,
                market,
                tick,
                q_yes,
                q_no,
                trades,
            } => {
                let state = self.state(&event).map_err(|e| e.to_string())?;
                let book = state
                    .books
                    .get(market)
                    .ok_or_else(|| format!("event `{event}` has no market {market}"))?;
                book.verify(tick, q_yes, q_no, trades)?;
            }
            Record::EventClosed {
                event,
                outcomes,
                at_ms,
            } => {
                let state = self.state_mut(&event).map_err(|e| e.to_string())?;
                if state.meta.status != EventStatus::Open {
                    return Err(format!("event `{event}` closed while not open"));
                }
                state.meta.mark_closed(outcomes, at_ms);
                for i in 0..state.books.len() {
                    let outcome = state.meta.outcome_for(i);
                    state.books[i].close(outcome);
                }
            }
        }
        Ok(())
    }

    fn state(&self, event: &str) -> Result<&EventState, ServiceError> {
        self.events
            .get(event)
            .ok_or_else(|| ServiceError::UnknownEvent(event.into()))
    }

    fn state_mut(&mut self, event: &str) -> Result<&mut EventState, ServiceError> {
        self.events
            .get_mut(event)
            .ok_or_else(|| ServiceError::UnknownEvent(event.into()))
    }

    fn locate(&self, market_id: &str) -> Result<(String, usize), ServiceError> {
        self.events
            .values()
            .find_map(|e| {
                e.meta
                    .market_index(market_id)
                    .map(|i| (e.meta.id().to_string(), i))
            })
            .ok_or_else(|| ServiceError::UnknownMarket(market_id.into()))
    }

    pub fn events(&self) -> impl Iterator<Item = &EventMeta> {
        self.events.values().map(|e| &e.meta)
    }

    pub fn event(&self, event: &str) -> Result<&EventMeta, ServiceError> {
        Ok(&self.state(event)?.meta)
    }

    pub fn books(&self, event: &str) -> Result<&[MarketBook], ServiceError> {
        Ok(&self.state(event)?.books)
    }

    pub fn book(&self, market_id: &str) -> Result<&MarketBook, ServiceError> {
        let (event, index) = self.locate(market_id)?;
        Ok(&self.state(&event)?.books[index])
    }

    pub fn views(&self, event: &str) -> Result<Vec<MarketView>, ServiceError> {
        Ok(self
            .state(event)?
            .books
            .iter()
            .map(MarketBook::view)
            .collect())
    }

    /// Splits into per-event parts for the live service.
    pub(crate) fn into_parts(
        self,
    ) -> (
        ServiceConfig,
        Catalog,
        Vec<(EventMeta, Vec<MarketBook>)>,
        u64,
        Option<JournalWriter>,
    ) {
        let events = self
            .events
            .into_values()
            .map(|e| (e.meta, e.books))
            .collect();
        (
            self.config,
            self.catalog,
            events,
            self.next_event,
            self.journal,
        )
    }
}

/// Clock slots an event has consumed: processed ticks plus dropped ones.
fn slots_used(state: &EventState) -> u64 {
    let processed = state
        .books
        .iter()
        .map(|b| b.engine().tick_count())
        .max()
        .unwrap_or(0);
    processed + state.meta.dropped_ticks
}

pub(crate) fn prepare_event(
    catalog: &Catalog,
    config: &ServiceConfig,
    req: &CreateEvent,
    number: u64,
) -> Result<EventSpec, ServiceError> {
    let set = catalog
        .claims
        .as_ref()
        .ok_or_else(|| ServiceError::InvalidEvent("no claims loaded".into()))?;
    // a discipline alone picks its first five catalog claims
    let claim_ids: Vec<String> = match (req.claim_ids.is_empty(), req.discipline) {
        (true, Some(d)) => set
            .records
            .iter()
            .filter(|r| r.domain == d)
            .take(MARKETS_PER_EVENT)
            .map(|r| r.claim_id.clone())
            .collect(),
        _ => req.claim_ids.clone(),
    };
    if claim_ids.len() != MARKETS_PER_EVENT {
        return Err(ServiceError::InvalidEvent(format!(
            "an event needs exactly {MARKETS_PER_EVENT} claims, got {}",
            claim_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = claim_ids.iter().collect();
    if unique.len() != claim_ids.len() {
        return Err(ServiceError::InvalidEvent("duplicate claim id".into()));
    }
    let people: BTreeSet<&String> = req.participants.iter().collect();
    if people.len() != req.participants.len() {
        return Err(ServiceError::InvalidEvent(
            "duplicate participant id".into(),
        ));
    }
    let claims = claim_ids
        .iter()
        .map(|id| {
            set.get(id)
                .cloned()
                .ok_or_else(|| ServiceError::UnknownClaim(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mode = req.mode.unwrap_or(Mode::Hybrid);
    if mode.has_agents() && catalog.market.is_none() {
        return Err(ServiceError::InvalidEvent(format!(
            "{mode} events need a trained market"
        )));
    }
    let mut sim = catalog.sim.clone();
    if let Some(t) = req.ticks {
        sim.ticks = t;
        sim.effective_tick_floor = sim.effective_tick_floor.min(t);
    }
    let seed = req
        .seed
        .unwrap_or_else(|| derive_seed(catalog.sim.seed, &[number]));
    sim.seed = seed;
    sim.validate().map_err(ServiceError::InvalidEvent)?;
    let params = match &catalog.market {
        Some(m) => m.market_params(&sim),
        None => MarketParams {
            liquidity: config.liquidity,
            bid: BidParams {
                lambda: 0.0,
                min_margin: 0.0,
            },
            agent_cash: 0.0,
            human_stake: sim.human_stake,
        },
    };
    Ok(EventSpec {
        id: format!("ev-{number}"),
        discipline: req.discipline.unwrap_or(claims[0].domain),
        mode,
        seed,
        population: mode
            .has_agents()
            .then(|| catalog.market.as_ref().map(|m| m.population.clone()))
            .flatten(),
        claims,
        params,
        sim,
        participants: req
            .participants
            .iter()
            .map(|id| Participant {
                id: id.clone(),
                token: new_token(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        Catalog {
            market: None,
            claims: Some(replimarket::reference::test_claims(1)),
            sim: SimConfig {
                ticks: 100,
                effective_tick_floor: 0,
                ..SimConfig::default()
            },
        }
    }

    fn econ(participants: &[&str]) -> CreateEvent {
        CreateEvent {
            claim_ids: ["1574", "AgO1", "PIDa", "QIIV", "VB9K"]
                .map(String::from)
                .to_vec(),
            mode: Some(Mode::HumanOnly),
            participants: participants.iter().map(|s| s.to_string()).collect(),
            seed: Some(3),
            ..Default::default()
        }
    }

    fn token(x: &Exchange, event: &str, who: &str) -> String {
        x.event(event)
            .unwrap()
            .spec
            .participants
            .iter()
            .find(|p| p.id == who)
            .unwrap()
            .token
            .clone()
    }

    #[test]
    fn cardinality_and_duplicates_rejected() {
        let mut x = Exchange::new(ServiceConfig::default(), catalog());
        let mut four = econ(&[]);
        four.claim_ids.pop();
        assert!(matches!(
            x.create_event(&four, 0),
            Err(ServiceError::InvalidEvent(_))
        ));
        let mut dup = econ(&[]);
        dup.claim_ids[4] = "1574".into();
        assert!(matches!(
            x.create_event(&dup, 0),
            Err(ServiceError::InvalidEvent(_))
        ));
        let mut unknown = econ(&[]);
        unknown.claim_ids[0] = "zzzz".into();
        assert!(matches!(
            x.create_event(&unknown, 0),
            Err(ServiceError::UnknownClaim(_))
        ));
        let hybrid = CreateEvent {
            mode: Some(Mode::Hybrid),
            ..econ(&[])
        };
        assert!(x.create_event(&hybrid, 0).is_err(), "hybrid needs agents");
        let meta = x.create_event(&econ(&["a"]), 0).unwrap();
        assert_eq!(meta.market_ids().len(), 5);
        assert_eq!(meta.status, EventStatus::Scheduled);
    }

    #[test]
    fn lifecycle_and_sealing() {
        let mut x = Exchange::new(ServiceConfig::default(), catalog());
        let id = x.create_event(&econ(&["a"]), 0).unwrap().id().to_string();
        let t = token(&x, &id, "a");
        assert!(matches!(
            x.submit(&t, "ev-1-m1", Side::Yes, Action::Buy),
            Err(ServiceError::NotOpen(_))
        ));
        x.open(&id, 1).unwrap();
        assert!(matches!(x.open(&id, 1), Err(ServiceError::AlreadyOpen(_))));
        assert!(matches!(
            x.event(&id).unwrap().money_market(),
            Err(ServiceError::Sealed)
        ));
        assert!(matches!(x.payouts(&id), Err(ServiceError::Sealed)));
        assert!(matches!(
            x.submit("bogus", "ev-1-m1", Side::Yes, Action::Buy),
            Err(ServiceError::Unauthorized)
        ));
        assert!(matches!(
            x.submit(&t, "ev-9-m1", Side::Yes, Action::Buy),
            Err(ServiceError::UnknownMarket(_))
        ));
        let ack = x.submit(&t, "ev-1-m1", Side::Yes, Action::Buy).unwrap();
        assert_eq!((ack.order_id, ack.position), (1, 1));
        x.advance(&id, 1).unwrap();
        assert!(x.views(&id).unwrap()[0].price_yes > 0.5);
        x.close(&id, None, 2).unwrap();
        assert!(matches!(
            x.close(&id, None, 3),
            Err(ServiceError::AlreadyClosed(_))
        ));
        assert!(x.event(&id).unwrap().money_market().is_ok());
        assert!(matches!(
            x.submit(&t, "ev-1-m1", Side::Yes, Action::Buy),
            Err(ServiceError::AlreadyClosed(_))
        ));
    }

    #[test]
    fn tick_budget_is_enforced() {
        let mut x = Exchange::new(ServiceConfig::default(), catalog());
        let id = x.create_event(&econ(&[]), 0).unwrap().id().to_string();
        x.open(&id, 0).unwrap();
        x.skip(&id, 30).unwrap();
        assert_eq!(x.advance(&id, 500).unwrap(), 70);
        assert_eq!(x.advance(&id, 1).unwrap(), 0);
        assert!(x.views(&id).unwrap().iter().all(|v| v.tick == 70));
    }

    #[test]
    fn money_market_is_a_function_of_the_seed() {
        assert_eq!(draw_money_market(7), draw_money_market(7));
        let seen: BTreeSet<usize> = (0..100).map(draw_money_market).collect();
        assert_eq!(seen.len(), MARKETS_PER_EVENT);
    }
}
