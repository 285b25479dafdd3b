mod common;

use common::*;
use proptest::prelude::*;
use s2s_core::data::{Dataset, Record};
use s2s_core::loss::{PairSign, SampleRef, SetBatch};
use s2s_core::mining::*;
use s2s_core::tensor::sq_dist;
use s2s_core::{Tensor, View};

fn dataset(n: u32, m: usize) -> Dataset {
    let mut records = Vec::new();
    for id in 0..n {
        for v in View::BOTH {
            for j in 0..m {
                records.push(Record {
                    identity: id,
                    view: v,
                    sample: Tensor::from_vec(vec![id as f64, j as f64]),
                });
            }
        }
    }
    Dataset::new(records).unwrap()
}

fn config(ids: usize, m: usize, k: usize) -> MiningConfig {
    MiningConfig {
        ids_per_batch: ids,
        samples_per_view: m,
        triplets_per_anchor: 2,
        k_marginal: k,
        symmetric_views: false,
        seed: 0,
    }
}

// At 1000 draws the per-identity standard deviation is 0.0095, so a 0.02 band
// on all 100 identities at once holds only a few percent of the time. The band
// is kept and the draw count raised until it holds with overwhelming odds.
const DRAWS: usize = 10_000;

#[test]
fn identity_frequencies_are_uniform() {
    let d = dataset(100, 1);
    let c = config(10, 1, 1);
    let mut r = rng(2024);
    let mut counts = vec![0usize; 100];
    for _ in 0..DRAWS {
        let mb = build_minibatch(&d, &c, &mut r).unwrap();
        assert_eq!(mb.identities.len(), 10);
        for id in mb.identities {
            counts[id as usize] += 1;
        }
    }
    for (id, &c) in counts.iter().enumerate() {
        let f = c as f64 / DRAWS as f64;
        assert!(
            (f - 0.1).abs() <= 0.02,
            "identity {id} drawn with frequency {f}"
        );
    }
}

#[test]
fn batches_have_m_distinct_samples_per_view() {
    let d = dataset(8, 5);
    let c = config(4, 3, 2);
    let mut r = rng(1);
    for _ in 0..50 {
        let mb = build_minibatch(&d, &c, &mut r).unwrap();
        for (id, views) in mb.identities.iter().zip(&mb.samples) {
            for (v, idx) in View::BOTH.iter().zip(views) {
                assert_eq!(idx.len(), 3);
                let mut u = idx.clone();
                u.dedup();
                assert_eq!(u.len(), 3);
                assert!(idx
                    .iter()
                    .all(|&k| d.record(k).identity == *id && d.record(k).view == *v));
            }
        }
    }
}

#[test]
fn triplet_invariants_over_many_draws() {
    let mut r = rng(77);
    let b = random_batch(&mut r, 4, 3, 2, 1.0);
    let c = config(4, 3, 1);
    let mut units = 0;
    while units < 10_000 {
        let t = sample_triplets(&b, &c, &mut r).unwrap();
        for u in &t {
            u.validate(&b).unwrap();
            assert_eq!(u.anchor.view, View::A);
            assert_eq!(u.positive.view, View::B);
            assert_eq!(u.negative.view, View::B);
        }
        units += t.len();
    }
}

#[test]
fn triplets_are_seed_deterministic() {
    let mut r = rng(5);
    let b = random_batch(&mut r, 3, 2, 2, 1.0);
    let c = config(3, 2, 1);
    assert_eq!(
        sample_triplets(&b, &c, &mut rng(9)).unwrap(),
        sample_triplets(&b, &c, &mut rng(9)).unwrap()
    );
}

/// Sorted distances of every candidate for identity `i`, split by sign.
fn candidates(b: &SetBatch, i: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (b.num_identities(), b.samples_per_view());
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for l in 0..m {
        for k in 0..n {
            for j in 0..m {
                let d = sq_dist(
                    b.row(SampleRef::new(i, View::A, l)),
                    b.row(SampleRef::new(k, View::B, j)),
                );
                if k == i {
                    pos.push(d);
                } else {
                    neg.push(d);
                }
            }
        }
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(f64::total_cmp);
    (pos, neg)
}

#[test]
fn nearest_negatives_match_full_enumeration() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let m = 3;
        let b = random_batch(&mut r, 2, m, 3, 1.0);
        let (pairs, _) = select_marginal_pairs(&b, &config(2, m, m));
        for i in 0..2 {
            let (_, neg) = candidates(&b, i);
            let mut got: Vec<f64> = pairs
                .iter()
                .filter(|p| p.sign == PairSign::Negative && p.a.identity == i)
                .map(|p| sq_dist(b.row(p.a), b.row(p.b)))
                .collect();
            got.sort_by(f64::total_cmp);
            assert_eq!(got, neg[..m].to_vec());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selected_pairs_are_extremal(seed in any::<u64>(), n in 2usize..4, m in 1usize..4, k in 1usize..4) {
        let k = k.min(m);
        let mut r = rng(seed);
        let b = random_batch(&mut r, n, m, 2, 1.0);
        let (pairs, prov) = select_marginal_pairs(&b, &config(n, m, k));
        prop_assert_eq!(pairs.len(), 2 * n * k);
        for (p, pr) in pairs.iter().zip(&prov) {
            p.validate(&b).unwrap();
            let rule = if p.sign == PairSign::Positive { PairRule::FarthestPositive } else { PairRule::NearestNegative };
            prop_assert_eq!(pr.rule, rule);
            prop_assert_eq!(pr.identity, b.identity_ids()[p.a.identity]);
        }
        for i in 0..n {
            let (pos, neg) = candidates(&b, i);
            let sel = |s: PairSign| -> Vec<f64> {
                pairs.iter().filter(|p| p.sign == s && p.a.identity == i).map(|p| sq_dist(b.row(p.a), b.row(p.b))).collect()
            };
            let sp = sel(PairSign::Positive);
            let sn = sel(PairSign::Negative);
            // Selected positives are at least as far as every unselected one.
            let min_sel = sp.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(pos[k..].iter().all(|&d| d <= min_sel));
            let max_sel = sn.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(neg[k..].iter().all(|&d| d >= max_sel));
        }
    }

    #[test]
    fn mining_is_a_pure_function_of_its_inputs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let b = random_batch(&mut r, 3, 2, 2, 1.0);
        let c = MiningConfig { symmetric_views: seed % 2 == 0, ..config(3, 2, 2) };
        let a = mine(&b, &c, &mut rng(seed)).unwrap();
        let again = mine(&b, &c, &mut rng(seed)).unwrap();
        prop_assert_eq!(a, again);
    }
}

#[test]
fn forced_selection_takes_every_sample_once() {
    let d = dataset(4, 3);
    let mb = build_minibatch(&d, &config(4, 3, 1), &mut rng(3)).unwrap();
    let mut order = mb.record_order();
    order.sort_unstable();
    assert_eq!(order, (0..d.len()).collect::<Vec<_>>());
}
