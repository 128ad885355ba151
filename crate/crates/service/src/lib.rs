//! Live trading service for hybrid replication markets.
//!
//! An event bundles five markets on claims from one discipline. Humans log
//! in with pre-issued tokens, queue single-share orders and are paid from one
//! market drawn at random and kept sealed until the event closes.
//!
//! - [`book`]: one market's engine, order queue and published view
//! - [`exchange`]: the deterministic event state machine, also used for replay
//! - [`journal`]: append-only JSON-lines journal and crash recovery
//! - [`live`]: per-market tasks, wall clock and journal writer on tokio
//! - [`api`]: the HTTP + JSON routes and server-sent event stream

pub mod api;
pub mod book;
pub mod exchange;
pub mod journal;
pub mod live;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use book::{MarketBook, MarketView};
pub use exchange::{EventStatus, Exchange, PayoutRecord};
pub use journal::{recover, Record, Recovery};
pub use live::Service;

pub const MARKETS_PER_EVENT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Trades across an event's markets needed to be paid from the money market.
    pub min_trades: u32,
    pub flat_compensation: f64,
    /// Ticks between checkpoint records in the journal.
    pub checkpoint_every: u64,
    /// Required in the `x-admin-token` header of admin routes when set.
    pub admin_token: Option<String>,
    /// LMSR depth for events created without a trained market.
    pub liquidity: f64,
    /// Settle at the claims' recorded outcomes when closing without explicit ones.
    pub settle_with_truth: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            min_trades: 3,
            flat_compensation: 40.0,
            checkpoint_every: 60,
            admin_token: None,
            liquidity: 20.0,
            settle_with_truth: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("unknown market `{0}`")]
    UnknownMarket(String),
    #[error("unknown claim `{0}`")]
    UnknownClaim(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid or missing session token")]
    Unauthorized,
    #[error("admin token required")]
    Forbidden,
    #[error("event `{0}` is not open")]
    NotOpen(String),
    #[error("event `{0}` was already opened")]
    AlreadyOpen(String),
    #[error("event `{0}` is already closed")]
    AlreadyClosed(String),
    #[error("event `{0}` admits no human traders")]
    AgentsOnly(String),
    #[error("sealed until the event closes")]
    Sealed,
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("replay diverged at line {line}: {message}")]
    Replay { line: usize, message: String },
    #[error("service stopped")]
    Stopped,
}

pub(crate) fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
