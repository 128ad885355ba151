//! Generated claim corpora.
//!
//! Real feature files are produced by an external extraction pipeline; these
//! generators give demos and tests something with the same shape.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::features::{ClaimRecord, ClaimSet, Domain, Outcome, Role, FEATURE_COUNT};

/// Training-corpus size per discipline (402 claims in total).
pub const TRAINING_DOMAIN_COUNTS: [(Domain, usize); 10] = [
    (Domain::Psychology, 252),
    (Domain::Economics, 99),
    (Domain::Marketing, 20),
    (Domain::Sociology, 8),
    (Domain::PoliticalScience, 6),
    (Domain::Education, 5),
    (Domain::Management, 5),
    (Domain::Health, 4),
    (Domain::Criminology, 2),
    (Domain::PublicAdministration, 1),
];

const TEST_STREAM: u64 = 1;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Two well-separated clusters: the first half replicates, the second does not.
///
/// Features are raw (unnormalized) values around 0.3 and 0.7.
pub fn two_cluster_corpus(n: usize, seed: u64) -> ClaimSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let replicated = i < n / 2;
            let center = if replicated { 0.3 } else { 0.7 };
            ClaimRecord {
                claim_id: format!("toy-{i:02}"),
                domain: Domain::Psychology,
                features: (0..FEATURE_COUNT)
                    .map(|_| center + 0.03 * gaussian(&mut rng))
                    .collect(),
                outcome: Some(if replicated {
                    Outcome::Replicated
                } else {
                    Outcome::NotReplicated
                }),
                title: String::new(),
            }
        })
        .collect();
    ClaimSet::new(records, Role::Train).expect("generated ids are unique")
}

/// Label-correlated features: a latent replicability score shifts the first
/// eight features, the rest is noise. Roughly 2% of cells are missing.
fn correlated_record(rng: &mut ChaCha8Rng, claim_id: String, domain: Domain) -> ClaimRecord {
    let latent = gaussian(rng);
    let replicated = latent + 0.5 * gaussian(rng) > -0.2;
    let features = (0..FEATURE_COUNT)
        .map(|j| {
            if rng.random::<f64>() < 0.02 {
                return f64::NAN;
            }
            let signal = if j < 8 { 0.8 * latent } else { 0.0 };
            // mixed scales, like counts, ratios and p-values side by side
            let scale = [1.0, 10.0, 0.05, 100.0][j % 4];
            (signal + gaussian(rng)) * scale
        })
        .collect();
    ClaimRecord {
        claim_id,
        domain,
        features,
        outcome: Some(if replicated {
            Outcome::Replicated
        } else {
            Outcome::NotReplicated
        }),
        title: String::new(),
    }
}

/// A 402-claim training corpus with the discipline mix of the replication record.
pub fn training_corpus(seed: u64) -> ClaimSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(402);
    for (domain, count) in TRAINING_DOMAIN_COUNTS {
        for k in 0..count {
            let id = format!("{}-{k:03}", &domain.as_str()[..4]);
            records.push(correlated_record(&mut rng, id, domain));
        }
    }
    ClaimSet::new(records, Role::Train).expect("generated ids are unique")
}

/// Test claims with generated features for the given ids, domains and outcomes.
pub fn test_claims(claims: &[(String, Domain, Option<Outcome>)], seed: u64) -> ClaimSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // same seed as a training corpus must not replay its rows
    rng.set_stream(TEST_STREAM);
    let records = claims
        .iter()
        .map(|(id, domain, outcome)| ClaimRecord {
            outcome: *outcome,
            ..correlated_record(&mut rng, id.clone(), *domain)
        })
        .collect();
    ClaimSet::new(records, Role::Test).expect("caller supplies unique ids")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_corpus_matches_domain_mix() {
        let set = training_corpus(1);
        assert_eq!(set.len(), 402);
        for (domain, count) in TRAINING_DOMAIN_COUNTS {
            assert_eq!(set.split_by_domain(domain).len(), count);
        }
        assert!(set.is_labeled());
        let replicated = set
            .records
            .iter()
            .filter(|r| r.outcome == Some(Outcome::Replicated))
            .count();
        assert!(replicated > 100 && replicated < 350, "{replicated}");
    }

    #[test]
    fn clusters_are_separated() {
        let set = two_cluster_corpus(20, 3);
        assert_eq!(set.len(), 20);
        let mean = |r: &ClaimRecord| r.features.iter().sum::<f64>() / FEATURE_COUNT as f64;
        assert!(set.records[..10].iter().all(|r| mean(r) < 0.4));
        assert!(set.records[10..].iter().all(|r| mean(r) > 0.6));
    }

    #[test]
    fn test_claims_do_not_repeat_training_rows() {
        let train = training_corpus(3);
        let test = test_claims(&[("x".into(), Domain::Economics, None)], 3);
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(train
            .records
            .iter()
            .all(|r| !same(&r.features, &test.records[0].features)));
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(training_corpus(9), training_corpus(9));
        assert_ne!(training_corpus(9), training_corpus(10));
    }
}
