use proptest::prelude::*;
use replimarket::features::Format;
use replimarket::synthetic::{test_claims, training_corpus};
use replimarket::{ClaimRecord, ClaimSet, Domain, Outcome, Role, Scaler, FEATURE_COUNT};

fn record(i: usize, features: Vec<f64>) -> ClaimRecord {
    ClaimRecord {
        claim_id: format!("c{i}"),
        domain: Domain::Economics,
        features,
        outcome: Some(if i % 2 == 0 {
            Outcome::Replicated
        } else {
            Outcome::NotReplicated
        }),
        title: String::new(),
    }
}

fn cell() -> impl Strategy<Value = f64> {
    prop_oneof![9 => -1e6f64..1e6, 1 => Just(f64::NAN)]
}

fn raw_set() -> impl Strategy<Value = ClaimSet> {
    prop::collection::vec(prop::collection::vec(cell(), FEATURE_COUNT), 1..12).prop_map(|rows| {
        let mut records: Vec<ClaimRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, f)| record(i, f))
            .collect();
        // guarantee every column has at least one observation
        for v in records[0].features.iter_mut() {
            if v.is_nan() {
                *v = 0.0;
            }
        }
        ClaimSet::new(records, Role::Train).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalized_features_are_finite_unit_interval(set in raw_set()) {
        let (norm, scaler) = set.fit_normalize().unwrap();
        prop_assert_eq!(scaler.dim(), FEATURE_COUNT);
        for r in &norm.records {
            prop_assert!(r.features.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
        prop_assert_eq!(norm.len(), set.len());
    }

    #[test]
    fn normalization_is_idempotent(set in raw_set()) {
        let (norm, scaler) = set.fit_normalize().unwrap();
        prop_assert_eq!(norm.apply_normalize(&scaler).unwrap(), norm);
    }

    #[test]
    fn csv_and_jsonl_round_trip(set in raw_set()) {
        let mut csv = Vec::new();
        set.write_csv(&mut csv).unwrap();
        prop_assert_eq!(ClaimSet::read_csv(csv.as_slice(), Role::Train).unwrap(), set.clone());
        let mut jsonl = Vec::new();
        set.write_jsonl(&mut jsonl).unwrap();
        prop_assert_eq!(ClaimSet::read_jsonl(jsonl.as_slice(), Role::Train).unwrap(), set);
    }
}

#[test]
fn test_set_uses_training_scaler() {
    let (train, scaler) = training_corpus(4).fit_normalize().unwrap();
    let raw_test = test_claims(
        &[
            ("5Kgq".into(), Domain::Psychology, None),
            ("1574".into(), Domain::Economics, None),
        ],
        8,
    );
    assert!(raw_test.fit_normalize().is_err());
    let test = raw_test.apply_normalize(&scaler).unwrap();
    assert_eq!(test.scaler.as_ref(), Some(&scaler));
    assert_eq!(test.scaler, train.scaler);
    for r in &test.records {
        assert!(r.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let other = training_corpus(5).fit_normalize().unwrap().1;
    assert!(test.apply_normalize(&other).is_err());
}

#[test]
fn files_and_scaler_persist() {
    let dir = tempfile::tempdir().unwrap();
    let (train, scaler) = training_corpus(2).fit_normalize().unwrap();
    let raw = training_corpus(2);
    for name in ["train.csv", "train.jsonl"] {
        let path = dir.path().join(name);
        raw.save(&path).unwrap();
        assert_eq!(Format::from_path(&path).is_ok(), true);
        let back = ClaimSet::ingest(&path, Role::Train).unwrap();
        assert_eq!(back, raw, "{name}");
        assert_eq!(back.len(), 402);
    }
    let spath = dir.path().join("scaler.json");
    scaler.save(&spath).unwrap();
    let loaded = Scaler::load(&spath).unwrap();
    assert_eq!(loaded, scaler);
    assert_eq!(raw.apply_normalize(&loaded).unwrap(), train);
}

#[test]
fn ingest_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let header: Vec<String> = std::iter::once("claim_id".to_string())
        .chain(std::iter::once("domain".into()))
        .chain((1..=FEATURE_COUNT).map(|j| format!("f{j:02}")))
        .chain(std::iter::once("outcome".into()))
        .collect();
    let good: Vec<String> = (0..FEATURE_COUNT).map(|j| j.to_string()).collect();
    let mut bad = good.clone();
    bad[6] = "seven".into();
    let body = format!(
        "{}\na,economics,{},R\nb,economics,{},NR\n",
        header.join(","),
        good.join(","),
        bad.join(",")
    );
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, body).unwrap();
    let msg = ClaimSet::ingest(&path, Role::Train)
        .unwrap_err()
        .to_string();
    assert!(msg.contains("row 2") && msg.contains("f07"), "{msg}");

    let short = format!("claim_id,domain,f01,f02\n");
    let path = dir.path().join("short.csv");
    std::fs::write(&path, short).unwrap();
    assert!(ClaimSet::ingest(&path, Role::Train).is_err());

    assert!(ClaimSet::ingest(&dir.path().join("missing.csv"), Role::Train).is_err());
}
