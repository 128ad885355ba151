use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use replimarket::sim::RunSummary;
use replimarket::{reference, synthetic, TrainedMarket};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn replimarket(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_replimarket"))
        .current_dir(dir)
        .args(args)
        .env_remove("REPLIMARKET_BIND")
        .env_remove("REPLIMARKET_JOURNAL_DIR")
        .output()
        .unwrap();
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = replimarket(dir, args);
    assert_eq!(out.code, 0, "{args:?}\n{}\n{}", out.stdout, out.stderr);
    out.stdout
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Synthetic corpus plus a small trained market in `dir/out`.
fn trained(dir: &Path) {
    ok(dir, &["ingest", "--synthetic", "training", "--seed", "5"]);
    ok(
        dir,
        &[
            "train",
            "--seed",
            "5",
            "--set",
            "train.generations=2",
            "--set",
            "train.genome.base_radius=1.3",
        ],
    );
}

#[test]
fn ingest_stores_normalized_sets_and_scaler() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic::training_corpus(1)
        .save(&d.join("train.csv"))
        .unwrap();
    reference::test_claims(1)
        .save(&d.join("test.jsonl"))
        .unwrap();

    let stdout = ok(d, &["ingest", "train.csv", "test.jsonl"]);
    assert!(stdout.contains("train: 402 claims"), "{stdout}");
    assert!(stdout.contains("test: 30 claims"), "{stdout}");
    let train: replimarket::ClaimSet =
        serde_json::from_str(&read(d.join("out/train.json"))).unwrap();
    let test: replimarket::ClaimSet = serde_json::from_str(&read(d.join("out/test.json"))).unwrap();
    assert!(train.is_normalized() && test.is_normalized());
    assert_eq!(train.scaler, test.scaler);
    assert!(train
        .records
        .iter()
        .flat_map(|r| &r.features)
        .all(|v| (0.0..=1.0).contains(v)));
    assert!(d.join("out/scaler.json").exists());
    assert!(read(d.join("out/ingest.config.toml")).contains("[train]"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = replimarket(dir.path(), &["ingest", "nope.csv"]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("nope.csv"), "{}", out.stderr);

    let out = replimarket(dir.path(), &["train"]);
    assert_eq!(out.code, 3, "no stored training set");
    let out = replimarket(dir.path(), &["replay", "missing.jsonl"]);
    assert_eq!(out.code, 3);
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("typo.toml"), "[trian]\nlambda = 0.1\n").unwrap();
    std::fs::write(d.join("broken.toml"), "[train\n").unwrap();
    for args in [
        &["train", "--config", "typo.toml"][..],
        &["train", "--config", "broken.toml"],
        &["train", "--config", "absent.toml"],
        &["train", "--set", "train.lambda=1.5"],
        &["train", "--set", "sim.effective_tick_floor=99999999"],
        &["ingest"],
    ] {
        let out = replimarket(d, args);
        assert_eq!(out.code, 2, "{args:?}: {}", out.stderr);
    }
    assert_ne!(replimarket(d, &["train", "--mode", "robots"]).code, 0);
}

#[test]
fn zero_generations_keep_the_spawned_population() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["ingest", "--synthetic", "two-cluster", "--seed", "7"]);
    ok(d, &["train", "--set", "train.generations=0"]);
    let market = TrainedMarket::load(&d.join("out/market.json")).unwrap();
    assert_eq!(market.population.agents.len(), 20);
    assert_eq!(market.history.len(), 1);
    assert_eq!(market.initial_participation, market.participation);
    assert!(market.scaler.is_some());
}

#[test]
fn separable_corpus_trains_to_full_accuracy_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["ingest", "--synthetic", "two-cluster", "--seed", "7"]);
    let args = ["train", "--seed", "11", "--set", "train.generations=20"];
    ok(d, &args);
    let first = read(d.join("out/market.json"));
    let market = TrainedMarket::from_json(&first).unwrap();
    assert_eq!(market.final_accuracy(), 1.0);
    assert_eq!(read(d.join("out/history.csv")).lines().count(), 22);

    ok(d, &args);
    assert_eq!(
        read(d.join("out/market.json")),
        first,
        "same seed, same bytes"
    );
}

#[test]
fn tune_flags_degenerate_radii_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["ingest", "--synthetic", "two-cluster", "--seed", "7"]);
    let args = [
        "tune",
        "--seed",
        "2",
        "--set",
        "train.generations=5",
        "--set",
        "grid.base_radius=[1e-6, 0.6, 1e6]",
    ];
    let stdout = ok(d, &args);
    assert!(stdout.contains("3 configurations"), "{stdout}");
    let csv = read(d.join("out/tuning.csv"));
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    // plausible, failure, selected are the last three columns
    let flag = |r: &Vec<&str>| r[r.len() - 3].to_string();
    assert_eq!(flag(&rows[0]), "false");
    assert_eq!(flag(&rows[2]), "false");
    assert_eq!(flag(&rows[1]), "true");
    assert_eq!(
        rows[1][rows[1].len() - 1],
        "true",
        "the plausible cell is selected"
    );
    let best = read(d.join("out/best.toml"));
    assert!(best.contains("base_radius = 0.6"), "{best}");

    ok(d, &args);
    assert_eq!(read(d.join("out/tuning.csv")), csv);

    // a one-cell grid selects the base config itself
    ok(
        d,
        &[
            "tune",
            "--set",
            "train.generations=1",
            "--set",
            "data.train=out/train.json",
            "--out",
            "one",
        ],
    );
    let best: toml::Table = read(d.join("one/best.toml")).parse().unwrap();
    let chosen: replimarket::TrainConfig = best["train"].clone().try_into().unwrap();
    assert_eq!(
        chosen,
        replimarket::TrainConfig {
            generations: 1,
            ..Default::default()
        }
    );
    // the best config feeds straight back in
    ok(
        d,
        &[
            "train",
            "--config",
            "one/best.toml",
            "--set",
            "data.train=out/train.json",
            "--out",
            "one",
        ],
    );
}

fn runs(path: impl AsRef<Path>) -> Vec<RunSummary> {
    read(path)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn simulate_economics_markets_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let args = [
        "simulate",
        "--mode",
        "artificial",
        "--seed",
        "5",
        "--set",
        "data.discipline=economics",
        "--set",
        "sim.lambda=0.002",
    ];
    ok(d, &args);
    let first = runs(d.join("out/runs.jsonl"));
    let ids: Vec<&str> = first.iter().map(|r| r.claim_id.as_str()).collect();
    assert_eq!(ids, ["1574", "AgO1", "PIDa", "QIIV", "VB9K"]);
    for r in &first {
        assert_eq!(r.ticks_processed, 43_200);
        assert_eq!(r.participation.human_trades, 0);
        assert!(r.participation.agent_trades > 0);
        let log = d.join(format!("out/trades/{}.artificial.jsonl", r.claim_id));
        assert_eq!(
            read(log).lines().count() as u64,
            r.participation.agent_trades
        );
    }
    ok(d, &args);
    let again = runs(d.join("out/runs.jsonl"));
    for (a, b) in first.iter().zip(&again) {
        assert_eq!(a.closing_price_yes.to_bits(), b.closing_price_yes.to_bits());
    }

    // the run files score against the stored test set
    let table = ok(d, &["evaluate"]);
    assert!(table.starts_with("discipline,mae_artificial"), "{table}");
    assert_eq!(read(d.join("out/evaluation.csv")).lines().count(), 6);
}

#[test]
fn human_only_and_hybrid_simulation_use_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let trace: String = (0..40)
        .map(|i| {
            let side = if i % 3 == 0 { "no" } else { "yes" };
            format!(
                "{{\"tick\":{},\"participant\":\"p{}\",\"side\":\"{side}\",\"action\":\"buy\"}}\n",
                i * 7,
                i % 4
            )
        })
        .collect();
    std::fs::write(d.join("trace.jsonl"), trace).unwrap();
    let common = [
        "--ticks",
        "400",
        "--set",
        "data.trace=trace.jsonl",
        "--set",
        "data.claims=[\"QIIV\"]",
    ];

    ok(
        d,
        &[&["simulate", "--mode", "human-only"][..], &common].concat(),
    );
    let human = runs(d.join("out/runs.jsonl"));
    assert_eq!(human.len(), 1);
    assert_eq!(human[0].participation.agent_trades, 0);
    assert_eq!(human[0].participation.human_trades, 40);

    ok(
        d,
        &[&["simulate", "--mode", "hybrid"][..], &common].concat(),
    );
    let hybrid = runs(d.join("out/runs.jsonl"));
    assert!(hybrid[0].participation.agent_trades > 0);
    assert_eq!(hybrid[0].participation.human_trades, 40);
}

#[test]
fn evaluate_reference_prices() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = ok(d, &["evaluate", "--reference"]);
    assert!(table.contains("economics,0.452,0.411,0.414"), "{table}");
    let polisci = table
        .lines()
        .find(|l| l.starts_with("political-science"))
        .unwrap();
    assert_eq!(polisci.split(',').nth(2), Some("0.386"));
    assert_eq!(read(d.join("out/mae.csv")), table);

    std::fs::create_dir_all(d.join("out")).unwrap();
    std::fs::write(d.join("out/runs.jsonl"), "").unwrap();
    reference::test_claims(0)
        .save(&d.join("truth.csv"))
        .unwrap();
    let out = replimarket(d, &["evaluate", "--set", "data.test=truth.csv"]);
    assert_eq!(out.code, 3, "{}", out.stderr);
    assert!(out.stderr.contains("nothing to evaluate"), "{}", out.stderr);
}

struct Server {
    child: Child,
    port: u16,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(dir: &Path, args: &[&str]) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_replimarket"))
        .current_dir(dir)
        .arg("serve")
        .args(args)
        .env("REPLIMARKET_BIND", "127.0.0.1:0")
        .env("REPLIMARKET_JOURNAL_DIR", dir.join("journal"))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let port = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(addr) = line.strip_prefix("listening on http://") {
            break addr.rsplit(':').next().unwrap().parse().unwrap();
        }
    };
    Server { child, port }
}

fn http(port: u16, method: &str, path: &str, token: Option<&str>, body: &str) -> serde_json::Value {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    let auth = token
        .map(|t| format!("Authorization: Bearer {t}\r\n"))
        .unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n{auth}\
         Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    let (head, body) = response.split_once("\r\n\r\n").unwrap();
    assert!(
        head.starts_with("HTTP/1.1 2"),
        "{method} {path}: {head}\n{body}"
    );
    serde_json::from_str(body).unwrap()
}

fn wait_closed(port: u16) -> Vec<serde_json::Value> {
    let start = Instant::now();
    loop {
        let markets = http(port, "GET", "/event/ev-1/markets", None, "");
        let markets = markets.as_array().unwrap().clone();
        if markets.iter().all(|m| m["closed"] == true) {
            return markets;
        }
        assert!(
            start.elapsed() < Duration::from_secs(60),
            "event never closed"
        );
        std::thread::sleep(Duration::from_millis(50));
    }
}

const EVENT: &str = r#"
[sim]
ticks = 300
tick_interval_ms = 4
effective_tick_floor = 0
lambda = 0.01

[event]
discipline = "economics"
participants = ["ann", "bo"]
seed = 11
"#;

#[test]
fn served_hybrid_event_replays_to_the_same_prices() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    std::fs::write(d.join("event.toml"), EVENT).unwrap();
    let server = serve(d, &["--config", "event.toml"]);

    let markets = wait_closed(server.port);
    assert_eq!(markets.len(), 5);
    let claims: Vec<&str> = markets
        .iter()
        .map(|m| m["claim_id"].as_str().unwrap())
        .collect();
    assert_eq!(claims, ["1574", "AgO1", "PIDa", "QIIV", "VB9K"]);

    let export = http(server.port, "GET", "/event/ev-1/export", None, "");
    let live_results = export["results_csv"].as_str().unwrap();
    let mut agent_trades = 0;
    for line in live_results.lines().skip(1) {
        let n: Vec<u64> = line
            .split(',')
            .skip(7)
            .map(|c| c.parse().unwrap())
            .collect();
        // a loaded machine may skip clock slots; they count as dropped
        assert_eq!(n[0] + n[1], 300, "{line}");
        agent_trades += n[2];
    }
    assert!(agent_trades > 0);
    std::fs::write(
        d.join("exported.jsonl"),
        export["journal"].as_str().unwrap(),
    )
    .unwrap();
    drop(server);

    let before = read(d.join("exported.jsonl"));
    let stdout = ok(d, &["replay", "exported.jsonl", "--out", "rp"]);
    assert!(stdout.contains("ev-1 Closed"), "{stdout}");
    assert_eq!(read(d.join("rp/replay/ev-1.results.csv")), live_results);
    assert!(d.join("rp/replay/ev-1.payouts.csv").exists());
    assert_eq!(
        read(d.join("exported.jsonl")),
        before,
        "replay leaves the journal alone"
    );
}

#[test]
fn human_only_event_has_no_agent_trades() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    std::fs::write(d.join("event.toml"), EVENT.replace("= 4", "= 10")).unwrap();
    // the mode flag applies to the configured event
    let server = serve(d, &["--config", "event.toml", "--mode", "human-only"]);
    let tokens: std::collections::BTreeMap<String, String> =
        serde_json::from_str(&read(d.join("out/tokens.json"))).unwrap();
    for m in 1..=5 {
        let path = format!("/market/ev-1-m{m}/order");
        http(
            server.port,
            "POST",
            &path,
            Some(&tokens["ann"]),
            r#"{"side":"yes","action":"buy"}"#,
        );
    }
    wait_closed(server.port);
    let export = http(server.port, "GET", "/event/ev-1/export", None, "");
    for line in export["results_csv"].as_str().unwrap().lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "human-only");
        assert_eq!((cols[9], cols[10]), ("0", "1"), "{line}");
    }
}
