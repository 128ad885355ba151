use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use replimarket::eval::evaluate as score;
use replimarket::evolution::{market_plausibility, train as evolve};
use replimarket::lmsr::write_trade_log;
use replimarket::sim::{run_market, RunSummary, ScriptedOrder};
use replimarket::synthetic::{training_corpus, two_cluster_corpus};
use replimarket::tuning::hyperparameter_search;
use replimarket::{
    reference, ClaimSet, MarketParams, Mode, Role, Scaler, TrainConfig, TrainedMarket,
};
use replimarket_service::exchange::{results_csv, Catalog};
use replimarket_service::{api, journal, Exchange, Service};
use serde::Serialize;

use crate::{CliError, Config, SyntheticCorpus};

type Result<T> = std::result::Result<T, CliError>;

const TRAIN_SET: &str = "train.json";
const TEST_SET: &str = "test.json";
const SCALER: &str = "scaler.json";
const MARKET: &str = "market.json";
const RUNS: &str = "runs.jsonl";

/// Reads a claim file. `.json` files are stored sets written by `ingest`
/// and keep their normalization; csv and jsonl are raw.
pub fn load_set(path: &Path, role: Role) -> Result<ClaimSet> {
    if !path.exists() {
        return Err(CliError::Data(format!("{}: no such file", path.display())));
    }
    if path.extension().is_some_and(|e| e == "json") {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let set: ClaimSet =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::input(path, e))?;
        if set.role != role {
            return Err(CliError::input(path, format!("expected a {role:?} set")));
        }
        return Ok(set);
    }
    ClaimSet::ingest(path, role).map_err(|e| CliError::input(path, e))
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.flush().map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn input_path(explicit: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(default))
}

/// The normalized training corpus; raw files are normalized on the fly.
fn training_set(config: &Config, out: &Path) -> Result<ClaimSet> {
    let set = load_set(&input_path(&config.data.train, out, TRAIN_SET), Role::Train)?;
    if set.is_normalized() {
        Ok(set)
    } else {
        Ok(set.fit_normalize()?.0)
    }
}

/// The test claims, normalized with `scaler` when they are still raw.
fn test_set(config: &Config, out: &Path, scaler: Option<&Scaler>) -> Result<ClaimSet> {
    let set = load_set(&input_path(&config.data.test, out, TEST_SET), Role::Test)?;
    match scaler {
        Some(s) if !set.is_normalized() => Ok(set.apply_normalize(s)?),
        _ => Ok(set),
    }
}

/// Loads the trained market; a missing default file is `None` unless required.
fn load_market(config: &Config, out: &Path, required: bool) -> Result<Option<TrainedMarket>> {
    let path = input_path(&config.data.market, out, MARKET);
    if !path.exists() && config.data.market.is_none() && !required {
        return Ok(None);
    }
    if !path.exists() {
        return Err(CliError::Data(format!(
            "{}: no trained market (run `replimarket train` first)",
            path.display()
        )));
    }
    TrainedMarket::load(&path)
        .map(Some)
        .map_err(|e| CliError::input(&path, e))
}

pub fn ingest(
    config: &Config,
    out: &Path,
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    synthetic: Option<SyntheticCorpus>,
) -> Result<()> {
    let seed = config.train.seed;
    let (raw_train, raw_test) = match synthetic.or(config.data.synthetic) {
        Some(SyntheticCorpus::Training) => {
            (training_corpus(seed), Some(reference::test_claims(seed)))
        }
        Some(SyntheticCorpus::TwoCluster) => (two_cluster_corpus(20, seed), None),
        None => {
            let path = train.or_else(|| config.data.train.clone()).ok_or_else(|| {
                CliError::Config("no training file: pass one or set data.train".into())
            })?;
            let test = test.or_else(|| config.data.test.clone());
            let test = test.map(|p| load_set(&p, Role::Test)).transpose()?;
            (load_set(&path, Role::Train)?, test)
        }
    };
    let (train_set, scaler) = raw_train.fit_normalize()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    save_json(&train_set, &out.join(TRAIN_SET))?;
    scaler.save(&out.join(SCALER))?;
    println!(
        "train: {} claims -> {}",
        train_set.len(),
        out.join(TRAIN_SET).display()
    );
    if let Some(test) = raw_test {
        let test_set = test.apply_normalize(&scaler)?;
        save_json(&test_set, &out.join(TEST_SET))?;
        println!(
            "test: {} claims -> {}",
            test_set.len(),
            out.join(TEST_SET).display()
        );
    }
    Ok(())
}

pub fn train(config: &Config, out: &Path) -> Result<()> {
    let corpus = training_set(config, out)?;
    let market = evolve(&corpus, &config.train)?;
    let path = out.join(MARKET);
    market.save(&path)?;

    let mut history = csv::Writer::from_writer(create(&out.join("history.csv"))?);
    for m in &market.history {
        history.serialize(m)?;
    }
    history.flush().map_err(|e| CliError::io(out, e))?;

    let verdict = market_plausibility(&market, &config.plausibility);
    println!(
        "{} agents, {} generations: accuracy {:.3}, mean participation {:.3} (spawned {:.3})",
        market.population.agents.len(),
        config.train.generations,
        market.final_accuracy(),
        market.participation.mean,
        market.initial_participation.mean
    );
    match verdict.failure {
        None => println!("plausible (score {:.3})", verdict.score),
        Some(why) => tracing::warn!(?why, score = verdict.score, "participation is implausible"),
    }
    println!("market -> {}", path.display());
    Ok(())
}

pub fn tune(config: &Config, out: &Path) -> Result<()> {
    let corpus = training_set(config, out)?;
    let outcome =
        hyperparameter_search(&config.grid, &config.train, &corpus, &config.plausibility)?;
    let csv_path = out.join("tuning.csv");
    outcome.write_csv(create(&csv_path)?)?;

    #[derive(Serialize)]
    struct Best<'a> {
        train: &'a TrainConfig,
    }
    let best_path = out.join("best.toml");
    let text = toml::to_string_pretty(&Best {
        train: outcome.best(),
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&best_path, text).map_err(|e| CliError::io(&best_path, e))?;

    let passed = outcome.results.iter().filter(|r| r.verdict.passed).count();
    let best = &outcome.results[outcome.selected];
    println!(
        "{} configurations, {} plausible; selected #{}: lambda {} radius {} accuracy {:.3}",
        outcome.results.len(),
        passed,
        outcome.selected,
        best.config.lambda,
        best.config.genome.base_radius,
        best.accuracy
    );
    if !outcome.plausible {
        tracing::warn!("no configuration passed the plausibility gate; selected by accuracy alone");
    }
    println!(
        "results -> {}\nbest config -> {}",
        csv_path.display(),
        best_path.display()
    );
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::input(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::input(path, format!("line {}: {e}", i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

fn select_claims(config: &Config, set: ClaimSet) -> Result<ClaimSet> {
    let mut set = match config.data.discipline {
        Some(d) => set.split_by_domain(d),
        None => set,
    };
    if !config.data.claims.is_empty() {
        for id in &config.data.claims {
            if set.get(id).is_none() {
                return Err(CliError::Data(format!(
                    "claim `{id}` is not in the test set"
                )));
            }
        }
        set.records
            .retain(|r| config.data.claims.contains(&r.claim_id));
    }
    if set.is_empty() {
        return Err(CliError::Data("no claims selected".into()));
    }
    Ok(set)
}

pub fn simulate(config: &Config, out: &Path) -> Result<()> {
    let mode = config.mode;
    let sim = &config.sim;
    let market = load_market(config, out, mode.has_agents())?;
    let scaler = market.as_ref().and_then(|m| m.scaler.as_ref());
    let claims = select_claims(config, test_set(config, out, scaler)?)?;
    if mode.has_agents() && !claims.is_normalized() {
        return Err(CliError::Data(
            "test claims are raw and the trained market carries no scaler".into(),
        ));
    }
    let params = match &market {
        Some(m) => m.market_params(sim),
        None => MarketParams {
            human_stake: sim.human_stake,
            ..config.train.market_params()
        },
    };
    let mut trace: Vec<ScriptedOrder> = match (&config.data.trace, mode.has_humans()) {
        (Some(path), true) => read_jsonl(path)?,
        _ => Vec::new(),
    };
    trace.sort_by_key(|o| o.tick);

    let mut summaries = create(&out.join(RUNS))?;
    let population = market.as_ref().map(|m| &m.population);
    for claim in &claims.records {
        let run = run_market(population, claim, params, sim, mode, &trace);
        let log = out
            .join("trades")
            .join(format!("{}.{}.jsonl", claim.claim_id, mode));
        write_trade_log(create(&log)?, &run.trades, |t| {
            t.tick_executed * sim.tick_interval_ms
        })
        .map_err(|e| CliError::io(&log, e))?;
        serde_json::to_writer(&mut summaries, &run.summary)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        summaries
            .write_all(b"\n")
            .map_err(|e| CliError::io(out, e))?;
        let p = run.summary.participation;
        println!(
            "{:<5} {:<21} {:<10} price {:.3} -> {:<2}  {} agent / {} human trades",
            claim.claim_id,
            claim.domain,
            mode,
            run.closing_price(),
            run.summary.prediction,
            p.agent_trades,
            p.human_trades
        );
    }
    summaries.flush().map_err(|e| CliError::io(out, e))?;
    println!("{} runs -> {}", claims.len(), out.join(RUNS).display());
    Ok(())
}

pub fn evaluate(config: &Config, out: &Path, use_reference: bool) -> Result<()> {
    let (runs, truth): (Vec<RunSummary>, ClaimSet) = if use_reference {
        let runs = Mode::ALL.into_iter().flat_map(reference::runs).collect();
        (runs, reference::test_claims(0))
    } else {
        let path = input_path(&config.data.runs, out, RUNS);
        if !path.exists() {
            return Err(CliError::Data(format!("{}: no such file", path.display())));
        }
        (read_jsonl(&path)?, test_set(config, out, None)?)
    };
    let report = score(&runs, &truth)?;
    report.write_mae_table(create(&out.join("mae.csv"))?)?;
    report.write_rows(create(&out.join("evaluation.csv"))?)?;
    report.write_mae_table(std::io::stdout().lock())?;
    Ok(())
}

/// Claims events can be created on: the test set when present, else the
/// 30 held-out claims.
fn serve_catalog(config: &Config, out: &Path) -> Result<Catalog> {
    let market = load_market(config, out, false)?;
    let scaler = market.as_ref().and_then(|m| m.scaler.as_ref());
    let path = input_path(&config.data.test, out, TEST_SET);
    let claims = if path.exists() || config.data.test.is_some() {
        test_set(config, out, scaler)?
    } else {
        let set = reference::test_claims(config.sim.seed);
        match scaler {
            Some(s) => set.apply_normalize(s)?,
            None => set,
        }
    };
    if market.is_some() && !claims.is_normalized() {
        return Err(CliError::Data(
            "test claims are raw and the trained market carries no scaler".into(),
        ));
    }
    Ok(Catalog {
        market,
        claims: Some(claims),
        sim: config.sim.clone(),
    })
}

pub fn serve(config: &Config, out: &Path, bind: &str, journal_dir: &Path) -> Result<()> {
    let catalog = serve_catalog(config, out)?;
    std::fs::create_dir_all(journal_dir).map_err(|e| CliError::io(journal_dir, e))?;
    let path = journal_dir.join("journal.jsonl");
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let (service, report) = Service::open(config.service.clone(), catalog, &path)?;
        if let Some(defect) = &report.halted {
            tracing::warn!(line = defect.line, reason = %defect.reason, copy = ?report.preserved_copy, "journal replay stopped early");
        }
        tracing::info!(records = report.records_applied, journal = %path.display(), "journal replayed");

        if let (Some(req), true) = (&config.event, service.events().is_empty()) {
            let mut req = req.clone();
            req.mode.get_or_insert(config.mode);
            let meta = service.create_event(&req).await?;
            service.open_event(meta.id()).await?;
            let tokens: BTreeMap<&str, &str> = meta
                .spec
                .participants
                .iter()
                .map(|p| (p.id.as_str(), p.token.as_str()))
                .collect();
            let tokens_path = out.join("tokens.json");
            std::fs::write(&tokens_path, serde_json::to_string_pretty(&tokens).unwrap_or_default())
                .map_err(|e| CliError::io(&tokens_path, e))?;
            println!(
                "event {} open: {} {} markets, tokens -> {}",
                meta.id(),
                meta.spec.claims.len(),
                meta.spec.mode,
                tokens_path.display()
            );
        }

        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        api::serve(service, listener)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

pub fn replay(config: &Config, out: &Path, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "{}: no such journal",
            path.display()
        )));
    }
    let found = journal::recover(path).map_err(|e| CliError::io(path, e))?;
    let (exchange, report) = Exchange::replay(config.service.clone(), Catalog::default(), found);
    let dir = out.join("replay");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    println!("{} records applied", report.records_applied);

    for meta in exchange.events() {
        let id = meta.id();
        let views = exchange.views(id)?;
        let results = dir.join(format!("{id}.results.csv"));
        std::fs::write(&results, results_csv(meta, &views))
            .map_err(|e| CliError::io(&results, e))?;
        let ticks = views.iter().map(|v| v.tick).max().unwrap_or(0);
        print!(
            "{id} {:?}: {} markets, {ticks} ticks",
            meta.status,
            views.len()
        );
        if meta.status.is_closed() {
            let payouts = exchange.payouts(id)?;
            let mut w = csv::Writer::from_writer(create(&dir.join(format!("{id}.payouts.csv")))?);
            for p in &payouts {
                w.serialize(p)?;
            }
            w.flush().map_err(|e| CliError::io(&dir, e))?;
            print!(", money market {}", meta.money_market()?);
        }
        println!();
        for v in &views {
            println!("  {} {} price {:.6}", v.id, v.claim_id, v.price_yes);
        }
    }
    match report.halted {
        Some(d) if d.torn => {
            tracing::warn!(line = d.line, "journal ends in a partial line; ignored");
            Ok(())
        }
        Some(d) => Err(CliError::Data(format!(
            "{}: replay stopped at line {}: {}",
            path.display(),
            d.line,
            d.reason
        ))),
        None => Ok(()),
    }
}
