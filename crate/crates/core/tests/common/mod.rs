//! Fixtures and oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2s_core::eval::{EmbeddedSet, RankingResult};
use s2s_core::loss::{MarginalPair, PairSign, SampleRef, SetBatch, TripletUnit};
use s2s_core::{Tensor, View};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize, std: f64) -> SetBatch {
    let data = (0..n * 2 * m * d)
        .map(|_| rng.random_range(-1.0..1.0) * std)
        .collect();
    SetBatch::new(
        Tensor::new(vec![n, 2, m, d], data).unwrap(),
        (0..n as u32).collect(),
    )
    .unwrap()
}

pub fn random_triplets(rng: &mut ChaCha8Rng, batch: &SetBatch, count: usize) -> Vec<TripletUnit> {
    let (n, m) = (batch.num_identities(), batch.samples_per_view());
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut k = rng.random_range(0..n - 1);
            if k >= i {
                k += 1;
            }
            TripletUnit {
                anchor: SampleRef::new(i, View::A, rng.random_range(0..m)),
                positive: SampleRef::new(i, View::B, rng.random_range(0..m)),
                negative: SampleRef::new(k, View::B, rng.random_range(0..m)),
            }
        })
        .collect()
}

/// Tight clusters far apart: with the default margins every hinge is
/// inactive.
pub fn separated_batch() -> SetBatch {
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let jitter = [[0.01, -0.02], [-0.015, 0.01]];
    let rows: Vec<[Vec<Vec<f64>>; 2]> = centers
        .iter()
        .map(|c| {
            let set = |s: f64| {
                jitter
                    .iter()
                    .map(|j| vec![c[0] + s * j[0], c[1] + s * j[1]])
                    .collect()
            };
            [set(1.0), set(-1.0)]
        })
        .collect();
    SetBatch::from_rows(&rows, vec![0, 1, 2]).unwrap()
}

/// Every valid triplet unit of the batch.
pub fn all_triplets(batch: &SetBatch) -> Vec<TripletUnit> {
    let (n, m) = (batch.num_identities(), batch.samples_per_view());
    let mut out = Vec::new();
    for i in 0..n {
        for k in (0..n).filter(|&k| k != i) {
            for l in 0..m {
                for s in 0..m {
                    for r in 0..m {
                        out.push(TripletUnit {
                            anchor: SampleRef::new(i, View::A, l),
                            positive: SampleRef::new(i, View::B, s),
                            negative: SampleRef::new(k, View::B, r),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Every cross-view (A, B) pair of the batch, positive and negative.
pub fn all_cross_pairs(batch: &SetBatch) -> Vec<MarginalPair> {
    let (n, m) = (batch.num_identities(), batch.samples_per_view());
    let mut out = Vec::new();
    for i in 0..n {
        for k in 0..n {
            for l in 0..m {
                for j in 0..m {
                    out.push(MarginalPair {
                        a: SampleRef::new(i, View::A, l),
                        b: SampleRef::new(k, View::B, j),
                        sign: if i == k {
                            PairSign::Positive
                        } else {
                            PairSign::Negative
                        },
                    });
                }
            }
        }
    }
    out
}

/// Random probe/gallery instance with identities drawn from a small pool so
/// that several gallery entries can share an identity. Every probe identity
/// appears in the gallery.
pub fn random_retrieval(rng: &mut ChaCha8Rng, max_gallery: usize) -> (EmbeddedSet, EmbeddedSet) {
    let g_len = rng.random_range(2..=max_gallery);
    let ids = rng.random_range(1..=g_len.min(5)) as u32;
    let d = rng.random_range(1..=4);
    let mut gallery = EmbeddedSet::default();
    for g in 0..g_len {
        // The first entries cover every identity.
        let id = if (g as u32) < ids {
            g as u32
        } else {
            rng.random_range(0..ids)
        };
        // Coarse grid values make distance ties common.
        gallery.push(
            id,
            View::B,
            (0..d).map(|_| rng.random_range(0..3) as f64).collect(),
        );
    }
    let mut probe = EmbeddedSet::default();
    for _ in 0..rng.random_range(1..=6) {
        probe.push(
            rng.random_range(0..ids),
            View::A,
            (0..d).map(|_| rng.random_range(0..3) as f64).collect(),
        );
    }
    (probe, gallery)
}

/// Brute-force rank of the first match: one plus the number of gallery
/// entries strictly closer, or equally close with a lower index, than the
/// best match.
pub fn oracle_first_match(query: &[f64], qid: u32, gallery: &EmbeddedSet) -> usize {
    let d = |g: usize| -> f64 {
        gallery.rows[g]
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let best = (0..gallery.len())
        .filter(|&g| gallery.identities[g] == qid)
        .min_by(|&x, &y| d(x).total_cmp(&d(y)).then(x.cmp(&y)))
        .unwrap();
    1 + (0..gallery.len())
        .filter(|&g| d(g) < d(best) || (d(g) == d(best) && g < best))
        .count()
}

/// Brute-force average precision: for each relevant entry, count how many
/// entries precede it in (distance, index) order.
pub fn oracle_ap(query: &[f64], qid: u32, gallery: &EmbeddedSet) -> f64 {
    let d = |g: usize| -> f64 {
        gallery.rows[g]
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let before = |x: usize, y: usize| d(x) < d(y) || (d(x) == d(y) && x < y);
    let relevant: Vec<usize> = (0..gallery.len())
        .filter(|&g| gallery.identities[g] == qid)
        .collect();
    let mut terms: Vec<(usize, f64)> = relevant
        .iter()
        .map(|&r| {
            let rank = 1 + (0..gallery.len()).filter(|&g| before(g, r)).count();
            let hits = 1 + relevant.iter().filter(|&&o| before(o, r)).count();
            (rank, hits as f64 / rank as f64)
        })
        .collect();
    // Summed best rank first so the float result is reproducible.
    terms.sort_by_key(|t| t.0);
    terms.iter().map(|t| t.1).sum::<f64>() / relevant.len() as f64
}

pub fn ranks_of(results: &[RankingResult]) -> Vec<usize> {
    results.iter().map(|r| r.first_match.unwrap()).collect()
}
