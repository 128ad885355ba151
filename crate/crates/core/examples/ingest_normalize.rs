//! Writes a generated corpus to CSV, ingests it back, fits the scaler on the
//! training set and applies it to the held-out claims.
//!
//!     cargo run -p replimarket --example ingest_normalize

use replimarket::reference;
use replimarket::synthetic::training_corpus;
use replimarket::{ClaimSet, Domain, Role};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let train_path = dir.path().join("train.csv");
    let test_path = dir.path().join("test.jsonl");
    training_corpus(42).save(&train_path)?;
    reference::test_claims(42).save(&test_path)?;

    let train = ClaimSet::ingest(&train_path, Role::Train)?;
    let test = ClaimSet::ingest(&test_path, Role::Test)?;
    println!(
        "ingested {} training and {} test claims",
        train.len(),
        test.len()
    );
    for d in Domain::ALL {
        let n = train.split_by_domain(d).len();
        if n > 0 {
            println!("  {d:<22} {n:>3}");
        }
    }

    let missing = train
        .records
        .iter()
        .flat_map(|r| &r.features)
        .filter(|v| v.is_nan())
        .count();
    let (train, scaler) = train.fit_normalize()?;
    let test = test.apply_normalize(&scaler)?;
    println!("imputed {missing} missing cells with column medians");
    println!(
        "feature f02 spans [{:.3}, {:.3}] before scaling",
        scaler.mins[1], scaler.maxs[1]
    );
    let first = &test.records[0];
    println!(
        "test claim {} ({}) first features: {:.3?}",
        first.claim_id,
        first.domain,
        &first.features[..5]
    );
    assert!(train.is_normalized() && test.scaler == train.scaler);
    Ok(())
}
