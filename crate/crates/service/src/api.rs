//! HTTP + JSON routes and the per-event server-sent event stream.
//!
//! Money is rendered as strings with 4 decimals and prices with 3, so clients
//! never re-round floats. Participant routes take `Authorization: Bearer
//! <token>`; admin routes take `x-admin-token` when one is configured.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use replimarket::{final_prediction, Account, Action, Outcome, Owner, Side, Trade};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::book::{MarketView, OrderResult, OrderStatus};
use crate::exchange::{CreateEvent, EventSummary, OrderAck, PayoutRecord, Session};
use crate::live::{Export, StreamEvent};
use crate::{Service, ServiceError};

pub fn money(x: f64) -> String {
    format!("{x:.4}")
}

pub fn price(x: f64) -> String {
    format!("{x:.3}")
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use ServiceError::*;
        match self {
            UnknownEvent(_) | UnknownMarket(_) | UnknownClaim(_) => StatusCode::NOT_FOUND,
            InvalidEvent(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Unauthorized => StatusCode::UNAUTHORIZED,
            Forbidden | Sealed => StatusCode::FORBIDDEN,
            NotOpen(_) | AlreadyOpen(_) | AlreadyClosed(_) | AgentsOnly(_) => StatusCode::CONFLICT,
            Io(_) | Json(_) | Replay { .. } | Stopped => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        use ServiceError::*;
        match self {
            UnknownEvent(_) => "unknown_event",
            UnknownMarket(_) => "unknown_market",
            UnknownClaim(_) => "unknown_claim",
            InvalidEvent(_) => "invalid_event",
            Unauthorized => "unauthorized",
            Forbidden => "forbidden",
            NotOpen(_) => "not_open",
            AlreadyOpen(_) => "already_open",
            AlreadyClosed(_) => "already_closed",
            AgentsOnly(_) => "agents_only",
            Sealed => "sealed",
            Io(_) | Json(_) | Replay { .. } | Stopped => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (
            status,
            Json(json!({ "error": self.to_string(), "code": self.code() })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountDto {
    pub cash: String,
    pub holdings_yes: u32,
    pub holdings_no: u32,
    pub trade_count: u32,
}

impl From<&Account> for AccountDto {
    fn from(a: &Account) -> Self {
        Self {
            cash: money(a.cash),
            holdings_yes: a.holdings_yes,
            holdings_no: a.holdings_no,
            trade_count: a.trade_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDto {
    pub id: String,
    pub event: String,
    pub claim_id: String,
    pub title: String,
    pub tick: u64,
    pub price_yes: String,
    pub price_no: String,
    pub prediction: Outcome,
    pub trades: usize,
    pub closed: bool,
    pub settled: Option<Outcome>,
}

impl From<&MarketView> for MarketDto {
    fn from(v: &MarketView) -> Self {
        Self {
            id: v.id.clone(),
            event: v.event.clone(),
            claim_id: v.claim_id.clone(),
            title: v.title.clone(),
            tick: v.tick,
            price_yes: price(v.price_yes),
            price_no: price(1.0 - v.price_yes),
            prediction: final_prediction(v.price_yes),
            trades: v.trades,
            closed: v.closed,
            settled: v.settled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDto {
    pub order_id: u64,
    pub tick: u64,
    pub status: String,
    pub cash_delta: Option<String>,
    pub price_yes_after: Option<String>,
    pub reason: Option<String>,
}

impl From<&OrderResult> for ResultDto {
    fn from(r: &OrderResult) -> Self {
        let (status, cash_delta, price_yes_after, reason) = match &r.status {
            OrderStatus::Executed {
                cash_delta,
                price_yes_after,
            } => (
                "executed",
                Some(money(*cash_delta)),
                Some(price(*price_yes_after)),
                None,
            ),
            OrderStatus::Rejected { reason } => ("rejected", None, None, Some(reason.clone())),
        };
        Self {
            order_id: r.order_id,
            tick: r.tick,
            status: status.into(),
            cash_delta,
            price_yes_after,
            reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDto {
    pub tick: u64,
    pub price_yes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDto {
    pub market: MarketDto,
    pub ticks_total: u64,
    pub participant_id: String,
    pub account: AccountDto,
    pub pending_orders: usize,
    pub results: Vec<ResultDto>,
    pub history: Vec<PointDto>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeDto {
    pub tick: u64,
    pub side: Side,
    pub action: Action,
    pub trader: String,
    /// True when the caller's token placed the trade.
    pub mine: bool,
    pub cash_delta: String,
    pub price_yes_after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradesDto {
    pub trades: Vec<TradeDto>,
    /// Pass as `since` to fetch only newer trades.
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoutDto {
    pub participant_id: String,
    pub trades: u32,
    pub eligible: bool,
    pub money_market: String,
    pub money_market_cash: String,
    pub payout: String,
    pub flat_compensation: String,
    pub total: String,
}

impl From<&PayoutRecord> for PayoutDto {
    fn from(p: &PayoutRecord) -> Self {
        Self {
            participant_id: p.participant_id.clone(),
            trades: p.trades,
            eligible: p.eligible,
            money_market: p.money_market.clone(),
            money_market_cash: money(p.money_market_cash),
            payout: money(p.payout),
            flat_compensation: money(p.flat_compensation),
            total: money(p.payout + p.flat_compensation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedDto {
    pub event: EventSummary,
    /// Issued session tokens, by participant id.
    pub tokens: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct LoginBody {
    token: String,
}

#[derive(Debug, Deserialize)]
struct OrderBody {
    side: Side,
    action: Action,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct CloseBody {
    outcomes: Option<BTreeMap<String, Outcome>>,
}

#[derive(Debug, Deserialize)]
struct AdvanceBody {
    ticks: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SinceQuery {
    since: usize,
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/session/login", post(login))
        .route("/events", get(events))
        .route("/event", post(create_event))
        .route("/event/{id}/markets", get(event_markets))
        .route("/event/{id}/stream", get(stream))
        .route("/event/{id}/open", post(open_event))
        .route("/event/{id}/close", post(close_event))
        .route("/event/{id}/advance", post(advance))
        .route("/event/{id}/payouts", get(payouts))
        .route("/event/{id}/export", get(export))
        .route("/event/{id}/money_market", get(money_market))
        .route("/market/{id}/snapshot", get(snapshot))
        .route("/market/{id}/order", post(order))
        .route("/market/{id}/trades", get(trades))
        .with_state(service)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn admin(service: &Service, headers: &HeaderMap) -> ApiResult<()> {
    match &service.config().admin_token {
        None => Ok(()),
        Some(expected) => match headers.get("x-admin-token").and_then(|v| v.to_str().ok()) {
            Some(given) if given == expected => Ok(()),
            _ => Err(ServiceError::Forbidden),
        },
    }
}

async fn login(
    State(service): State<Service>,
    Json(body): Json<LoginBody>,
) -> ApiResult<Json<Session>> {
    Ok(Json(service.login(&body.token)?))
}

async fn events(State(service): State<Service>) -> Json<Vec<EventSummary>> {
    Json(service.events())
}

async fn event_markets(
    State(service): State<Service>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<MarketDto>>> {
    let views = service.markets(&id)?;
    Ok(Json(views.iter().map(|v| MarketDto::from(&**v)).collect()))
}

async fn snapshot(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<SnapshotDto>> {
    let token = bearer(&headers).ok_or(ServiceError::Unauthorized)?;
    let participant = service.participant(token, &id)?;
    let view = service.view(&id)?;
    let ticks_total = service.event_summary(&view.event)?.ticks;
    Ok(Json(SnapshotDto {
        market: MarketDto::from(&*view),
        ticks_total,
        account: AccountDto::from(&view.account(&participant)),
        pending_orders: view.pending,
        results: service
            .results_for(&id, &participant)?
            .iter()
            .map(ResultDto::from)
            .collect(),
        history: service
            .history(&id)?
            .into_iter()
            .map(|p| PointDto {
                tick: p.tick,
                price_yes: price(p.price_yes),
            })
            .collect(),
        participant_id: participant,
    }))
}

async fn order(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<OrderBody>,
) -> ApiResult<(StatusCode, Json<OrderAck>)> {
    let token = bearer(&headers).ok_or(ServiceError::Unauthorized)?;
    let ack = service.submit(token, &id, body.side, body.action).await?;
    Ok((StatusCode::ACCEPTED, Json(ack)))
}

async fn trades(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
    headers: HeaderMap,
) -> ApiResult<Json<TradesDto>> {
    let me = bearer(&headers).and_then(|t| service.participant(t, &id).ok());
    let list = service.trades_since(&id, q.since)?;
    let next = q.since + list.len();
    let trades = list
        .iter()
        .map(|t: &Trade| TradeDto {
            tick: t.tick_executed,
            side: t.order.side,
            action: t.order.action,
            trader: match &t.order.owner {
                Owner::Agent(_) => "agent".into(),
                Owner::Human(_) => "human".into(),
            },
            mine: matches!((&t.order.owner, &me), (Owner::Human(h), Some(m)) if h == m),
            cash_delta: money(t.cash_delta),
            price_yes_after: price(t.spot_price_after),
        })
        .collect();
    Ok(Json(TradesDto { trades, next }))
}

async fn stream(
    State(service): State<Service>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let rx = service.subscribe(&id)?;
    let opening: Vec<StreamEvent> = service
        .markets(&id)?
        .iter()
        .map(|v| StreamEvent::Price {
            market: v.id.clone(),
            tick: v.tick,
            price_yes: v.price_yes,
        })
        .collect();
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => return Some((sse_event(&ev), rx)),
                Err(RecvError::Lagged(n)) => {
                    let ev = SseEvent::default().event("lagged").data(n.to_string());
                    return Some((ev, rx));
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::iter(opening.iter().map(sse_event).collect::<Vec<_>>())
        .chain(live)
        .map(Ok);
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

fn sse_event(ev: &StreamEvent) -> SseEvent {
    let (name, data) = match ev {
        StreamEvent::Price {
            market,
            tick,
            price_yes,
        } => (
            "price",
            json!({ "market": market, "tick": tick, "price_yes": price(*price_yes) }),
        ),
        StreamEvent::Trade {
            market,
            tick,
            side,
            action,
            trader,
            price_yes_after,
        } => (
            "trade",
            json!({
                "market": market, "tick": tick, "side": side, "action": action,
                "trader": trader, "price_yes_after": price(*price_yes_after),
            }),
        ),
        StreamEvent::Status { event, status } => {
            ("status", json!({ "event": event, "status": status }))
        }
        StreamEvent::Closed {
            event,
            money_market,
        } => (
            "closed",
            json!({ "event": event, "money_market": money_market }),
        ),
    };
    SseEvent::default().event(name).data(data.to_string())
}

async fn create_event(
    State(service): State<Service>,
    headers: HeaderMap,
    Json(req): Json<CreateEvent>,
) -> ApiResult<(StatusCode, Json<CreatedDto>)> {
    admin(&service, &headers)?;
    let meta = service.create_event(&req).await?;
    Ok((
        StatusCode::CREATED,
        Json(CreatedDto {
            event: meta.summary(0),
            tokens: meta
                .spec
                .participants
                .iter()
                .map(|p| (p.id.clone(), p.token.clone()))
                .collect(),
        }),
    ))
}

async fn open_event(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<EventSummary>> {
    admin(&service, &headers)?;
    service.open_event(&id).await?;
    Ok(Json(service.event_summary(&id)?))
}

async fn close_event(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Option<Json<CloseBody>>,
) -> ApiResult<Json<serde_json::Value>> {
    admin(&service, &headers)?;
    let outcomes = body.and_then(|Json(b)| b.outcomes);
    let views = service.close_event(&id, outcomes).await?;
    Ok(Json(json!({
        "event": service.event_summary(&id)?,
        "markets": views.iter().map(MarketDto::from).collect::<Vec<_>>(),
    })))
}

async fn advance(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<AdvanceBody>,
) -> ApiResult<Json<serde_json::Value>> {
    admin(&service, &headers)?;
    let ran = service.advance(&id, body.ticks).await?;
    Ok(Json(
        json!({ "ticks_run": ran, "event": service.event_summary(&id)? }),
    ))
}

async fn payouts(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<PayoutDto>>> {
    admin(&service, &headers)?;
    Ok(Json(
        service.payouts(&id)?.iter().map(PayoutDto::from).collect(),
    ))
}

async fn export(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Export>> {
    admin(&service, &headers)?;
    Ok(Json(service.export(&id).await?))
}

async fn money_market(
    State(service): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    admin(&service, &headers)?;
    Ok(Json(
        json!({ "event": id, "money_market": service.money_market(&id)? }),
    ))
}

/// Serves until ctrl-c, then stops clocks and flushes the journal.
pub async fn serve(service: Service, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let app = router(service.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    service.shutdown().await.map_err(std::io::Error::other)
}
