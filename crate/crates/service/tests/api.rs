mod common;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use common::{catalog, human_catalog, request};
use http_body_util::BodyExt;
use replimarket::Mode;
use replimarket_service::{api, Service, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const ADMIN: &str = "s3cret";

fn config() -> ServiceConfig {
    ServiceConfig {
        admin_token: Some(ADMIN.into()),
        ..ServiceConfig::default()
    }
}

struct Client {
    app: Router,
}

impl Client {
    async fn call(
        &self,
        method: Method,
        uri: &str,
        auth: Option<(&str, &str)>,
        body: Option<Value>,
    ) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some((name, value)) = auth {
            req = req.header(name, value);
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn json(
        &self,
        method: Method,
        uri: &str,
        auth: Option<(&str, &str)>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let (s, text) = self.call(method, uri, auth, body).await;
        (
            s,
            serde_json::from_str(&text).unwrap_or(Value::String(text)),
        )
    }
}

fn admin() -> Option<(&'static str, &'static str)> {
    Some(("x-admin-token", ADMIN))
}

fn bearer(token: &str) -> String {
    format!("Bearer {token}")
}

async fn setup(mode: Mode) -> (Client, Service, String, Value) {
    let cat = if mode.has_agents() {
        catalog(100)
    } else {
        human_catalog(100)
    };
    let service = Service::new(config(), cat);
    let client = Client {
        app: api::router(service.clone()),
    };
    let mut req = serde_json::to_value(request(mode, &["ann", "bo"], 12)).unwrap();
    req["mode"] = json!(mode.as_str());
    let (s, created) = client
        .json(Method::POST, "/event", admin(), Some(req))
        .await;
    assert_eq!(s, StatusCode::CREATED, "{created}");
    let id = created["event"]["id"].as_str().unwrap().to_string();
    (client, service, id, created["tokens"].clone())
}

#[tokio::test]
async fn participant_flow_end_to_end() {
    let (c, _svc, id, tokens) = setup(Mode::Hybrid).await;
    let ann = tokens["ann"].as_str().unwrap().to_string();
    let m1 = format!("{id}-m1");

    let (s, session) = c
        .json(
            Method::POST,
            "/session/login",
            None,
            Some(json!({ "token": ann })),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(session["participant_id"], "ann");
    assert_eq!(session["markets"].as_array().unwrap().len(), 5);
    let (s, _) = c
        .json(
            Method::POST,
            "/session/login",
            None,
            Some(json!({ "token": "nope" })),
        )
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    // not open yet
    let auth = bearer(&ann);
    let order = json!({ "side": "yes", "action": "buy" });
    let (s, body) = c
        .json(
            Method::POST,
            &format!("/market/{m1}/order"),
            Some(("authorization", &auth)),
            Some(order.clone()),
        )
        .await;
    assert_eq!(
        (s, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("not_open"))
    );

    let (s, _) = c
        .json(Method::POST, &format!("/event/{id}/open"), admin(), None)
        .await;
    assert_eq!(s, StatusCode::OK);

    let (s, ack) = c
        .json(
            Method::POST,
            &format!("/market/{m1}/order"),
            Some(("authorization", &auth)),
            Some(order.clone()),
        )
        .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(ack["position"], 1);
    let (s, _) = c
        .json(
            Method::POST,
            &format!("/market/{m1}/order"),
            None,
            Some(order.clone()),
        )
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let (s, adv) = c
        .json(
            Method::POST,
            &format!("/event/{id}/advance"),
            admin(),
            Some(json!({ "ticks": 30 })),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(adv["ticks_run"], 30);

    let (s, snap) = c
        .json(
            Method::GET,
            &format!("/market/{m1}/snapshot"),
            Some(("authorization", &auth)),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(snap["participant_id"], "ann");
    assert_eq!(snap["market"]["tick"], 30);
    assert_eq!(snap["ticks_total"], 100);
    assert_eq!(snap["account"]["holdings_yes"], 1);
    assert_eq!(snap["account"]["trade_count"], 1);
    let cash = snap["account"]["cash"].as_str().unwrap();
    assert_eq!(cash.split('.').nth(1).unwrap().len(), 4, "{cash}");
    let p = snap["market"]["price_yes"].as_str().unwrap();
    assert_eq!(p.split('.').nth(1).unwrap().len(), 3, "{p}");
    assert_eq!(snap["results"][0]["status"], "executed");

    let (s, trades) = c
        .json(
            Method::GET,
            &format!("/market/{m1}/trades?since=0"),
            Some(("authorization", &auth)),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let list = trades["trades"].as_array().unwrap();
    assert_eq!(trades["next"].as_u64().unwrap() as usize, list.len());
    assert_eq!(list.iter().filter(|t| t["mine"] == true).count(), 1);
    let (_, later) = c
        .json(
            Method::GET,
            &format!("/market/{m1}/trades?since={}", list.len()),
            None,
            None,
        )
        .await;
    assert!(later["trades"].as_array().unwrap().is_empty());

    // markets of other events are unknown, not forbidden
    let (s, _) = c
        .json(
            Method::GET,
            "/market/ev-9-m1/snapshot",
            Some(("authorization", &auth)),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, closed) = c
        .json(Method::POST, &format!("/event/{id}/close"), admin(), None)
        .await;
    assert_eq!(s, StatusCode::OK, "{closed}");
    assert_eq!(closed["event"]["status"], "closed");
    let (s, body) = c
        .json(
            Method::POST,
            &format!("/market/{m1}/order"),
            Some(("authorization", &auth)),
            Some(order),
        )
        .await;
    assert_eq!(
        (s, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("already_closed"))
    );

    let (s, payouts) = c
        .json(Method::GET, &format!("/event/{id}/payouts"), admin(), None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(payouts.as_array().unwrap().len(), 2);
    assert_eq!(payouts[0]["flat_compensation"], "40.0000");
    assert_eq!(payouts[0]["eligible"], false);

    let (s, export) = c
        .json(Method::GET, &format!("/event/{id}/export"), admin(), None)
        .await;
    assert_eq!(s, StatusCode::OK);
    let csv = export["results_csv"].as_str().unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with(&format!("{m1},1574,economics,hybrid,")));
}

#[tokio::test]
async fn admin_routes_require_the_admin_token() {
    let (c, _svc, id, _) = setup(Mode::HumanOnly).await;
    for (method, path) in [
        (Method::POST, format!("/event/{id}/open")),
        (Method::POST, format!("/event/{id}/close")),
        (Method::GET, format!("/event/{id}/payouts")),
        (Method::GET, format!("/event/{id}/export")),
        (Method::GET, format!("/event/{id}/money_market")),
    ] {
        let (s, _) = c.json(method.clone(), &path, None, None).await;
        assert_eq!(s, StatusCode::FORBIDDEN, "{path}");
        let (s, _) = c
            .json(method, &path, Some(("x-admin-token", "guess")), None)
            .await;
        assert_eq!(s, StatusCode::FORBIDDEN, "{path}");
    }
    let (s, _) = c
        .json(
            Method::POST,
            "/event",
            None,
            Some(serde_json::to_value(request(Mode::HumanOnly, &[], 1)).unwrap()),
        )
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn event_validation_errors() {
    let (c, _svc, _, _) = setup(Mode::HumanOnly).await;
    let mut four = request(Mode::HumanOnly, &[], 1);
    four.claim_ids.pop();
    let (s, body) = c
        .json(
            Method::POST,
            "/event",
            admin(),
            Some(serde_json::to_value(four).unwrap()),
        )
        .await;
    assert_eq!(
        (s, body["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_event"))
    );
    let mut unknown = request(Mode::HumanOnly, &[], 1);
    unknown.claim_ids[2] = "nope".into();
    let (s, _) = c
        .json(
            Method::POST,
            "/event",
            admin(),
            Some(serde_json::to_value(unknown).unwrap()),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = c
        .json(Method::GET, "/event/ev-404/markets", None, None)
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn artificial_events_refuse_human_orders() {
    let (c, _svc, id, tokens) = setup(Mode::Artificial).await;
    c.json(Method::POST, &format!("/event/{id}/open"), admin(), None)
        .await;
    let auth = bearer(tokens["ann"].as_str().unwrap());
    let (s, body) = c
        .json(
            Method::POST,
            &format!("/market/{id}-m3/order"),
            Some(("authorization", &auth)),
            Some(json!({ "side": "no", "action": "buy" })),
        )
        .await;
    assert_eq!(
        (s, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("agents_only"))
    );
}

async fn sweep(c: &Client, id: &str, auth: &str) -> Vec<(String, StatusCode, String)> {
    let a = Some(("authorization", auth));
    let mut reqs: Vec<(Method, String, Option<(&str, &str)>)> = vec![
        (Method::GET, "/events".into(), None),
        (Method::GET, format!("/event/{id}/markets"), None),
        (Method::GET, format!("/event/{id}/payouts"), admin()),
        (Method::GET, format!("/event/{id}/money_market"), admin()),
        (Method::GET, format!("/event/{id}/export"), admin()),
    ];
    for k in 1..=5 {
        reqs.push((Method::GET, format!("/market/{id}-m{k}/snapshot"), a));
        reqs.push((Method::GET, format!("/market/{id}-m{k}/trades"), a));
    }
    let mut out = Vec::new();
    for (m, path, auth) in reqs {
        let (s, text) = c.call(m, &path, auth, None).await;
        out.push((path, s, text));
    }
    out
}

/// Nothing a client can read before close reveals which market pays.
#[tokio::test]
async fn money_market_stays_sealed_until_close() {
    let (c, _svc, id, tokens) = setup(Mode::Hybrid).await;
    let auth = bearer(tokens["ann"].as_str().unwrap());
    let mut seen = Vec::new();
    for phase in 0..3 {
        if phase == 1 {
            c.json(Method::POST, &format!("/event/{id}/open"), admin(), None)
                .await;
            c.json(
                Method::POST,
                &format!("/event/{id}/advance"),
                admin(),
                Some(json!({ "ticks": 20 })),
            )
            .await;
        }
        if phase == 2 {
            // the login answer is also swept
            let (_, text) = c
                .call(
                    Method::POST,
                    "/session/login",
                    None,
                    Some(json!({ "token": tokens["ann"] })),
                )
                .await;
            seen.push(("/session/login".to_string(), StatusCode::OK, text));
        }
        seen.extend(sweep(&c, &id, &auth).await);
    }
    for (path, status, text) in &seen {
        if path.ends_with("/payouts")
            || path.ends_with("/money_market")
            || path.ends_with("/export")
        {
            assert_eq!(*status, StatusCode::FORBIDDEN, "{path}");
            assert!(text.contains("\"sealed\""), "{path}: {text}");
        } else {
            assert_eq!(*status, StatusCode::OK, "{path}: {text}");
            assert!(!text.contains("money_market"), "{path} leaks: {text}");
        }
    }

    c.json(Method::POST, &format!("/event/{id}/close"), admin(), None)
        .await;
    let (s, mm) = c
        .json(
            Method::GET,
            &format!("/event/{id}/money_market"),
            admin(),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert!(mm["money_market"]
        .as_str()
        .unwrap()
        .starts_with(&format!("{id}-m")));
}

#[tokio::test]
async fn stream_opens_with_prices_then_follows_ticks() {
    let (c, svc, id, _) = setup(Mode::HumanOnly).await;
    let req = Request::get(format!("/event/{id}/stream"))
        .body(Body::empty())
        .unwrap();
    let resp = c.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();

    let mut text = String::new();
    while text.matches("event: price").count() < 5 {
        let frame = body.frame().await.unwrap().unwrap();
        text.push_str(std::str::from_utf8(frame.data_ref().unwrap()).unwrap());
    }
    assert!(text.contains(&format!("\"market\":\"{id}-m1\"")));
    assert!(text.contains("\"price_yes\":\"0.500\""));

    svc.open_event(&id).await.unwrap();
    svc.advance(&id, 1).await.unwrap();
    let mut more = String::new();
    while !more.contains("\"tick\":1") {
        let frame = body.frame().await.unwrap().unwrap();
        more.push_str(std::str::from_utf8(frame.data_ref().unwrap()).unwrap());
    }
    assert!(more.contains("event: status") || more.contains("event: price"));
}
