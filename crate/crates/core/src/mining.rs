//! Set-structured mini-batches, random triplet units and marginal pairs.
//!
//! Anchors come from view A, positives and negatives from view B. The
//! symmetric mode adds the mirrored units with the views swapped.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{MarginalPair, PairSign, SampleRef, SetBatch, TripletUnit};
use crate::tensor::sq_dist;
use crate::view::View;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MiningConfig {
    pub ids_per_batch: usize,
    /// Samples per view and identity, `M`.
    pub samples_per_view: usize,
    pub triplets_per_anchor: usize,
    /// Pairs selected per identity and rule.
    pub k_marginal: usize,
    /// Also mine with view B as the anchor view.
    pub symmetric_views: bool,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            ids_per_batch: 10,
            samples_per_view: 4,
            triplets_per_anchor: 2,
            k_marginal: 2,
            symmetric_views: false,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config("mining", m));
        if self.ids_per_batch < 2 {
            return bad(format!(
                "ids_per_batch must be >= 2, got {}",
                self.ids_per_batch
            ));
        }
        if self.samples_per_view < 1 || self.triplets_per_anchor < 1 || self.k_marginal < 1 {
            return bad("samples_per_view, triplets_per_anchor and k_marginal must be >= 1".into());
        }
        if self.k_marginal > self.samples_per_view {
            return bad(format!(
                "k_marginal ({}) must not exceed samples_per_view ({})",
                self.k_marginal, self.samples_per_view
            ));
        }
        Ok(())
    }

    fn anchor_views(&self) -> &'static [View] {
        if self.symmetric_views {
            &View::BOTH
        } else {
            &[View::A]
        }
    }
}

/// Record indices of a mini-batch, `samples[i][view][j]` for batch identity `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniBatch {
    pub identities: Vec<u32>,
    pub samples: Vec<[Vec<usize>; 2]>,
}

impl MiniBatch {
    /// Record indices in identity-major order (identity, view, sample), the
    /// row order of the corresponding [`SetBatch`].
    pub fn record_order(&self) -> Vec<usize> {
        self.samples
            .iter()
            .flat_map(|v| v.iter().flatten().copied())
            .collect()
    }
}

/// Draws `ids_per_batch` identities and `M` samples per view of each, all
/// without replacement. Chosen indices are kept in ascending order.
pub fn build_minibatch<R: Rng + ?Sized>(
    dataset: &Dataset,
    config: &MiningConfig,
    rng: &mut R,
) -> Result<MiniBatch> {
    config.validate()?;
    let ids = dataset.identities();
    let m = config.samples_per_view;
    for &id in &ids {
        for v in View::BOTH {
            let have = dataset.count(id, v);
            if have < m {
                return Err(Error::Data(format!(
                    "identity {id} has {have} samples in view {v}, the batch needs {m}"
                )));
            }
        }
    }
    if ids.len() < config.ids_per_batch {
        return Err(Error::Data(format!(
            "dataset has {} identities, the batch needs {}",
            ids.len(),
            config.ids_per_batch
        )));
    }
    let mut chosen = sample(rng, ids.len(), config.ids_per_batch).into_vec();
    chosen.sort_unstable();
    let identities: Vec<u32> = chosen.iter().map(|&k| ids[k]).collect();
    let samples = identities
        .iter()
        .map(|&id| {
            View::BOTH.map(|v| {
                let pool = dataset.indices(id, v);
                let mut pick = sample(rng, pool.len(), m).into_vec();
                pick.sort_unstable();
                pick.into_iter().map(|k| pool[k]).collect()
            })
        })
        .collect();
    Ok(MiniBatch {
        identities,
        samples,
    })
}

/// For every anchor, `triplets_per_anchor` units with a uniform positive of
/// the same identity and a uniform negative of another identity, both from
/// the other view.
pub fn sample_triplets<R: Rng + ?Sized>(
    batch: &SetBatch,
    config: &MiningConfig,
    rng: &mut R,
) -> Result<Vec<TripletUnit>> {
    let n = batch.num_identities();
    let m = batch.samples_per_view();
    if n < 2 {
        return Err(Error::Usage(format!(
            "triplet sampling needs at least 2 identities, got {n}"
        )));
    }
    let mut out =
        Vec::with_capacity(config.anchor_views().len() * n * m * config.triplets_per_anchor);
    for &av in config.anchor_views() {
        let ov = av.other();
        for i in 0..n {
            for l in 0..m {
                for _ in 0..config.triplets_per_anchor {
                    let positive = SampleRef::new(i, ov, rng.random_range(0..m));
                    // Uniform over the other identities.
                    let mut k = rng.random_range(0..n - 1);
                    if k >= i {
                        k += 1;
                    }
                    let negative = SampleRef::new(k, ov, rng.random_range(0..m));
                    out.push(TripletUnit {
                        anchor: SampleRef::new(i, av, l),
                        positive,
                        negative,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Which selection rule produced a marginal pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairRule {
    FarthestPositive,
    NearestNegative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairProvenance {
    pub rule: PairRule,
    /// Dataset identity of the anchor set.
    pub identity: u32,
    /// Dataset identity of the partner sample.
    pub partner_identity: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MiningOutput {
    pub triplets: Vec<TripletUnit>,
    pub pairs: Vec<MarginalPair>,
    /// One entry per pair, same order.
    pub provenance: Vec<PairProvenance>,
}

/// Indices of the `k` best candidates; `farthest` picks the largest distances.
/// Candidates are in enumeration order and the sort is stable, so ties go to
/// the earliest candidate.
fn top_k(dists: &[f64], k: usize, farthest: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    if farthest {
        order.sort_by(|&x, &y| dists[y].total_cmp(&dists[x]));
    } else {
        order.sort_by(|&x, &y| dists[x].total_cmp(&dists[y]));
    }
    order.truncate(k);
    order
}

/// Per identity and anchor view: the `k_marginal` cross-view same-identity
/// pairs with the largest squared distance (g = +1) and the `k_marginal`
/// pairs against other identities with the smallest (g = -1).
///
/// Candidates are enumerated by anchor sample, then partner identity, then
/// partner sample; ties keep that order.
pub fn select_marginal_pairs(
    batch: &SetBatch,
    config: &MiningConfig,
) -> (Vec<MarginalPair>, Vec<PairProvenance>) {
    let n = batch.num_identities();
    let m = batch.samples_per_view();
    let k = config.k_marginal;
    let ids = batch.identity_ids();
    let mut pairs = Vec::new();
    let mut prov = Vec::new();
    for &av in config.anchor_views() {
        let ov = av.other();
        for i in 0..n {
            let mut pos = Vec::with_capacity(m * m);
            let mut neg = Vec::with_capacity(m * (n - 1) * m);
            for l in 0..m {
                let a = SampleRef::new(i, av, l);
                for other in 0..n {
                    for j in 0..m {
                        let b = SampleRef::new(other, ov, j);
                        let d = sq_dist(batch.row(a), batch.row(b));
                        if other == i {
                            pos.push((a, b, d));
                        } else {
                            neg.push((a, b, d));
                        }
                    }
                }
            }
            let pd: Vec<f64> = pos.iter().map(|c| c.2).collect();
            for c in top_k(&pd, k, true) {
                let (a, b, _) = pos[c];
                pairs.push(MarginalPair {
                    a,
                    b,
                    sign: PairSign::Positive,
                });
                prov.push(PairProvenance {
                    rule: PairRule::FarthestPositive,
                    identity: ids[i],
                    partner_identity: ids[i],
                });
            }
            let nd: Vec<f64> = neg.iter().map(|c| c.2).collect();
            for c in top_k(&nd, k, false) {
                let (a, b, _) = neg[c];
                pairs.push(MarginalPair {
                    a,
                    b,
                    sign: PairSign::Negative,
                });
                prov.push(PairProvenance {
                    rule: PairRule::NearestNegative,
                    identity: ids[i],
                    partner_identity: ids[b.identity],
                });
            }
        }
    }
    (pairs, prov)
}

/// Triplets then marginal pairs for one batch.
pub fn mine<R: Rng + ?Sized>(
    batch: &SetBatch,
    config: &MiningConfig,
    rng: &mut R,
) -> Result<MiningOutput> {
    let triplets = sample_triplets(batch, config, rng)?;
    let (pairs, provenance) = select_marginal_pairs(batch, config);
    Ok(MiningOutput {
        triplets,
        pairs,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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

    fn cfg(ids: usize, m: usize) -> MiningConfig {
        MiningConfig {
            ids_per_batch: ids,
            samples_per_view: m,
            ..MiningConfig::default()
        }
        .with_k(1)
    }

    impl MiningConfig {
        fn with_k(mut self, k: usize) -> Self {
            self.k_marginal = k;
            self
        }
    }

    #[test]
    fn forced_selection_uses_every_sample() {
        let d = dataset(3, 2);
        let mb = build_minibatch(&d, &cfg(3, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut order = mb.record_order();
        order.sort_unstable();
        assert_eq!(order, (0..d.len()).collect::<Vec<_>>());
    }

    #[test]
    fn batches_are_deterministic() {
        let d = dataset(12, 5);
        let c = cfg(4, 3);
        let a = build_minibatch(&d, &c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_minibatch(&d, &c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_identity_is_named() {
        let mut records = dataset(3, 2).records().to_vec();
        records.retain(|r| !(r.identity == 1 && r.view == View::B && r.sample.data()[1] == 1.0));
        let d = Dataset::new(records).unwrap();
        let err = build_minibatch(&d, &cfg(2, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("identity 1"), "{err}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(cfg(1, 2).validate().is_err());
        assert!(cfg(2, 2).with_k(3).validate().is_err());
    }

    fn batch_from(rows: Vec<[Vec<Vec<f64>>; 2]>) -> SetBatch {
        let ids = (0..rows.len() as u32).collect();
        SetBatch::from_rows(&rows, ids).unwrap()
    }

    #[test]
    fn two_identities_one_sample_gives_two_forced_triplets() {
        let b = batch_from(vec![
            [vec![vec![0.0]], vec![vec![1.0]]],
            [vec![vec![2.0]], vec![vec![3.0]]],
        ]);
        let c = MiningConfig {
            triplets_per_anchor: 1,
            ..cfg(2, 1)
        };
        let t = sample_triplets(&b, &c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(
            t,
            vec![
                TripletUnit {
                    anchor: SampleRef::new(0, View::A, 0),
                    positive: SampleRef::new(0, View::B, 0),
                    negative: SampleRef::new(1, View::B, 0),
                },
                TripletUnit {
                    anchor: SampleRef::new(1, View::A, 0),
                    positive: SampleRef::new(1, View::B, 0),
                    negative: SampleRef::new(0, View::B, 0),
                },
            ]
        );
    }

    #[test]
    fn farthest_positive_is_selected() {
        // Identity 0: anchor at 0, positives at 0, 0 and 5.
        let b = batch_from(vec![
            [
                vec![vec![0.0], vec![0.0], vec![0.0]],
                vec![vec![0.0], vec![0.0], vec![5.0]],
            ],
            [
                vec![vec![9.0], vec![9.0], vec![9.0]],
                vec![vec![9.0], vec![9.0], vec![9.0]],
            ],
        ]);
        let (pairs, prov) = select_marginal_pairs(&b, &cfg(2, 3));
        assert_eq!(pairs[0].b, SampleRef::new(0, View::B, 2));
        assert_eq!(pairs[0].sign, PairSign::Positive);
        assert_eq!(prov[0].rule, PairRule::FarthestPositive);
        assert_eq!(prov[1].rule, PairRule::NearestNegative);
        assert_eq!(prov[1].partner_identity, 1);
    }

    #[test]
    fn identical_embeddings_fall_back_to_index_order() {
        let row = vec![vec![1.0, 1.0]; 2];
        let b = batch_from(vec![[row.clone(), row.clone()], [row.clone(), row]]);
        let (pairs, _) = select_marginal_pairs(&b, &cfg(2, 2).with_k(2));
        assert_eq!(pairs.len(), 8);
        assert_eq!(pairs[0].a, SampleRef::new(0, View::A, 0));
        assert_eq!(pairs[0].b, SampleRef::new(0, View::B, 0));
        assert_eq!(pairs[1].b, SampleRef::new(0, View::B, 1));
        assert_eq!(pairs[2].b, SampleRef::new(1, View::B, 0));
        assert_eq!(pairs[3].b, SampleRef::new(1, View::B, 1));
    }

    #[test]
    fn symmetric_mode_doubles_units() {
        let b = batch_from(vec![
            [vec![vec![0.0]], vec![vec![1.0]]],
            [vec![vec![2.0]], vec![vec![3.0]]],
        ]);
        let c = MiningConfig {
            symmetric_views: true,
            ..cfg(2, 1)
        };
        let out = mine(&b, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.triplets.len(), 2 * 2 * c.triplets_per_anchor);
        assert_eq!(out.pairs.len(), 2 * 2 * 2);
        assert!(out.triplets.iter().any(|t| t.anchor.view == View::B));
        assert_eq!(out.pairs.len(), out.provenance.len());
    }
}
