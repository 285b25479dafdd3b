//! Cross-view retrieval metrics: ranking by squared Euclidean distance, CMC
//! curves and mean average precision.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::{sq_dist, Tensor};
use crate::view::View;

/// Anything that maps a sample to an embedding.
pub trait Embedder: Sync {
    fn embed(&self, sample: &Tensor) -> Result<Vec<f64>>;
}

impl Embedder for Network {
    fn embed(&self, sample: &Tensor) -> Result<Vec<f64>> {
        Network::embed(self, sample).map(Tensor::into_data)
    }
}

/// Uses the flattened sample itself as the embedding.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawFeatures;

impl Embedder for RawFeatures {
    fn embed(&self, sample: &Tensor) -> Result<Vec<f64>> {
        Ok(sample.data().to_vec())
    }
}

/// Labelled embeddings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddedSet {
    pub identities: Vec<u32>,
    pub views: Vec<View>,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddedSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, identity: u32, view: View, row: Vec<f64>) {
        self.identities.push(identity);
        self.views.push(view);
        self.rows.push(row);
    }

    fn select(&self, idx: &[usize]) -> EmbeddedSet {
        let mut out = EmbeddedSet::default();
        for &i in idx {
            out.push(self.identities[i], self.views[i], self.rows[i].clone());
        }
        out
    }
}

/// Embeds every record, in record order.
pub fn embed_set(set: &SampleSet, model: &dyn Embedder) -> Result<EmbeddedSet> {
    let rows: Result<Vec<Vec<f64>>> = set
        .records()
        .par_iter()
        .map(|r| model.embed(&r.sample))
        .collect();
    Ok(EmbeddedSet {
        identities: set.records().iter().map(|r| r.identity).collect(),
        views: set.records().iter().map(|r| r.view).collect(),
        rows: rows?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedEntry {
    pub gallery_index: usize,
    pub identity: u32,
    pub distance: f64,
    pub is_match: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub query_identity: u32,
    pub query_view: View,
    /// Ascending distance, ties by gallery index.
    pub entries: Vec<RankedEntry>,
    /// 1-based rank of the first correct match, if any.
    pub first_match: Option<usize>,
}

/// Orders the gallery by the given per-entry distances. Entries of the
/// query's identity seen from the query's own view are excluded.
pub fn rank_by_distances(
    distances: &[f64],
    gallery: &EmbeddedSet,
    query_identity: u32,
    query_view: View,
) -> Result<RankingResult> {
    if gallery.is_empty() {
        return Err(Error::Usage("cannot rank against an empty gallery".into()));
    }
    let mut entries: Vec<RankedEntry> = (0..gallery.len())
        .filter(|&g| !(gallery.identities[g] == query_identity && gallery.views[g] == query_view))
        .map(|g| RankedEntry {
            gallery_index: g,
            identity: gallery.identities[g],
            distance: distances[g],
            is_match: gallery.identities[g] == query_identity,
        })
        .collect();
    entries.sort_by(|x, y| {
        x.distance
            .total_cmp(&y.distance)
            .then(x.gallery_index.cmp(&y.gallery_index))
    });
    let first_match = entries.iter().position(|e| e.is_match).map(|p| p + 1);
    Ok(RankingResult {
        query_identity,
        query_view,
        entries,
        first_match,
    })
}

pub fn rank(
    query: &[f64],
    query_identity: u32,
    query_view: View,
    gallery: &EmbeddedSet,
) -> Result<RankingResult> {
    if let Some(bad) = gallery.rows.iter().find(|g| g.len() != query.len()) {
        return Err(Error::Usage(format!(
            "query has {} dims but a gallery embedding has {}",
            query.len(),
            bad.len()
        )));
    }
    let d: Vec<f64> = gallery.rows.iter().map(|g| sq_dist(query, g)).collect();
    rank_by_distances(&d, gallery, query_identity, query_view)
}

/// Precision at each relevant rank, averaged over the relevant entries.
pub fn average_precision(r: &RankingResult) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, e) in r.entries.iter().enumerate() {
        if e.is_match {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    /// `rates[n - 1]` is the match rate within the top `n`.
    pub rates: Vec<f64>,
    pub trials: usize,
}

impl CmcCurve {
    /// Match rate within the top `n` (1-based); ranks past the end saturate.
    pub fn rate(&self, n: usize) -> f64 {
        assert!(n >= 1, "ranks are 1-based");
        self.rates
            .get(n - 1)
            .or(self.rates.last())
            .copied()
            .unwrap_or(0.0)
    }

    /// `rank,match_rate` rows with four decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,match_rate\n");
        for (i, r) in self.rates.iter().enumerate() {
            s.push_str(&format!("{},{r:.4}\n", i + 1));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn require_match(r: &RankingResult) -> Result<usize> {
    r.first_match.ok_or_else(|| {
        Error::Data(format!(
            "probe identity {} has no image in the gallery",
            r.query_identity
        ))
    })
}

/// Curve of `len` ranks from first-match ranks.
pub fn cmc_from_ranks(first_matches: &[usize], len: usize) -> Vec<f64> {
    let q = first_matches.len() as f64;
    (1..=len)
        .map(|n| first_matches.iter().filter(|&&r| r <= n).count() as f64 / q)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GalleryMode {
    /// One randomly chosen image per gallery identity in each trial.
    #[default]
    SingleShot,
    /// Every gallery image, every trial.
    AllShot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CmcConfig {
    pub trials: usize,
    pub gallery: GalleryMode,
}

impl Default for CmcConfig {
    fn default() -> Self {
        CmcConfig {
            trials: 10,
            gallery: GalleryMode::SingleShot,
        }
    }
}

fn single_shot<R: Rng + ?Sized>(gallery: &EmbeddedSet, rng: &mut R) -> Vec<usize> {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (g, &id) in gallery.identities.iter().enumerate() {
        by_id.entry(id).or_default().push(g);
    }
    by_id
        .values()
        .map(|idx| idx[rng.random_range(0..idx.len())])
        .collect()
}

/// CMC over pre-computed embeddings. Each probe row is one query.
pub fn cmc_embedded<R: Rng + ?Sized>(
    probe: &EmbeddedSet,
    gallery: &EmbeddedSet,
    config: &CmcConfig,
    rng: &mut R,
) -> Result<CmcCurve> {
    cmc_protocol(
        probe,
        gallery,
        config,
        Protocol::Single,
        MultiQuery::MeanEmbedding,
        rng,
    )
}

/// CMC where queries follow `protocol`: one per probe row, or one per probe
/// identity pooled by `aggregation`.
pub fn cmc_protocol<R: Rng + ?Sized>(
    probe: &EmbeddedSet,
    gallery: &EmbeddedSet,
    config: &CmcConfig,
    protocol: Protocol,
    aggregation: MultiQuery,
    rng: &mut R,
) -> Result<CmcCurve> {
    if config.trials < 1 {
        return Err(Error::Usage("cmc needs at least one trial".into()));
    }
    if probe.is_empty() {
        return Err(Error::Usage("cmc needs at least one probe".into()));
    }
    let mut total: Vec<f64> = Vec::new();
    for _ in 0..config.trials {
        let g = match config.gallery {
            GalleryMode::SingleShot => gallery.select(&single_shot(gallery, rng)),
            GalleryMode::AllShot => gallery.clone(),
        };
        let ranks: Vec<usize> = rankings(probe, &g, protocol, aggregation)?
            .iter()
            .map(require_match)
            .collect::<Result<_>>()?;
        let curve = cmc_from_ranks(&ranks, g.len());
        if total.is_empty() {
            total = vec![0.0; curve.len()];
        }
        for (t, c) in total.iter_mut().zip(&curve) {
            *t += c;
        }
    }
    let trials = config.trials as f64;
    Ok(CmcCurve {
        rates: total.into_iter().map(|t| t / trials).collect(),
        trials: config.trials,
    })
}

pub fn cmc<R: Rng + ?Sized>(
    probe: &SampleSet,
    gallery: &SampleSet,
    model: &dyn Embedder,
    config: &CmcConfig,
    rng: &mut R,
) -> Result<CmcCurve> {
    let p = embed_set(probe, model)?;
    let g = embed_set(gallery, model)?;
    cmc_embedded(&p, &g, config, rng)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Protocol {
    #[default]
    Single,
    Multi,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Protocol::Single),
            "multi" => Ok(Protocol::Multi),
            _ => Err(Error::Usage(format!(
                "unknown protocol {s:?}, expected single or multi"
            ))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Single => "single",
            Protocol::Multi => "multi",
        })
    }
}

/// How a multi-query aggregates an identity's probe images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MultiQuery {
    /// Query with the mean probe embedding.
    #[default]
    MeanEmbedding,
    /// Gallery distance is the largest distance from any probe image.
    MaxDistance,
}

/// One ranking per query: per probe row, or per probe identity for multi-query.
pub fn rankings(
    probe: &EmbeddedSet,
    gallery: &EmbeddedSet,
    protocol: Protocol,
    aggregation: MultiQuery,
) -> Result<Vec<RankingResult>> {
    match protocol {
        Protocol::Single => (0..probe.len())
            .into_par_iter()
            .map(|q| rank(&probe.rows[q], probe.identities[q], probe.views[q], gallery))
            .collect(),
        Protocol::Multi => {
            let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (q, &id) in probe.identities.iter().enumerate() {
                groups.entry(id).or_default().push(q);
            }
            let groups: Vec<(u32, Vec<usize>)> = groups.into_iter().collect();
            groups
                .par_iter()
                .map(|(id, idx)| {
                    let view = probe.views[idx[0]];
                    if idx.iter().any(|&q| probe.views[q] != view) {
                        return Err(Error::Data(format!(
                            "multi-query identity {id} has probes in both views"
                        )));
                    }
                    match aggregation {
                        MultiQuery::MeanEmbedding => {
                            let dim = probe.rows[idx[0]].len();
                            let mut mean = vec![0.0; dim];
                            for &q in idx {
                                for (m, v) in mean.iter_mut().zip(&probe.rows[q]) {
                                    *m += v;
                                }
                            }
                            mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
                            rank(&mean, *id, view, gallery)
                        }
                        MultiQuery::MaxDistance => {
                            let d: Vec<f64> = gallery
                                .rows
                                .iter()
                                .map(|g| {
                                    idx.iter()
                                        .map(|&q| sq_dist(&probe.rows[q], g))
                                        .fold(f64::MIN, f64::max)
                                })
                                .collect();
                            rank_by_distances(&d, gallery, *id, view)
                        }
                    }
                })
                .collect()
        }
    }
}

/// Mean average precision over embedded probe and gallery sets.
pub fn map_embedded(
    probe: &EmbeddedSet,
    gallery: &EmbeddedSet,
    protocol: Protocol,
    aggregation: MultiQuery,
) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::Usage("mAP needs at least one probe".into()));
    }
    let rs = rankings(probe, gallery, protocol, aggregation)?;
    for r in &rs {
        require_match(r)?;
    }
    Ok(rs.iter().map(average_precision).sum::<f64>() / rs.len() as f64)
}

pub fn map_score(
    probe: &SampleSet,
    gallery: &SampleSet,
    model: &dyn Embedder,
    protocol: Protocol,
    aggregation: MultiQuery,
) -> Result<f64> {
    let p = embed_set(probe, model)?;
    let g = embed_set(gallery, model)?;
    map_embedded(&p, &g, protocol, aggregation)
}

/// `protocol,metric,value` rows.
pub fn summary_csv(rows: &[(Protocol, &str, f64)]) -> String {
    let mut s = String::from("protocol,metric,value\n");
    for (p, m, v) in rows {
        s.push_str(&format!("{p},{m},{v:.6}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gallery(rows: &[(u32, f64)]) -> EmbeddedSet {
        let mut g = EmbeddedSet::default();
        for &(id, x) in rows {
            g.push(id, View::B, vec![x]);
        }
        g
    }

    #[test]
    fn hand_sorted_ranking() {
        // Distances 0.5 (wrong), 0.2 (correct), 0.9 (wrong) from a query at 0.
        let g = gallery(&[(1, 0.5f64.sqrt()), (0, 0.2f64.sqrt()), (2, 0.9f64.sqrt())]);
        let r = rank(&[0.0], 0, View::A, &g).unwrap();
        assert_eq!(r.first_match, Some(1));
        let order: Vec<usize> = r.entries.iter().map(|e| e.gallery_index).collect();
        assert_eq!(order, vec![1, 0, 2]);
    }

    #[test]
    fn equal_distances_keep_gallery_order() {
        let g = gallery(&[(3, 1.0), (1, -1.0), (2, 1.0)]);
        let r = rank(&[0.0], 2, View::A, &g).unwrap();
        assert_eq!(r.first_match, Some(3));
        assert_eq!(
            r.entries
                .iter()
                .map(|e| e.gallery_index)
                .collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn same_view_entries_of_the_query_identity_are_excluded() {
        let mut g = gallery(&[(0, 5.0), (1, 1.0)]);
        g.push(0, View::A, vec![0.0]);
        let r = rank(&[0.0], 0, View::A, &g).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.first_match, Some(2));
    }

    #[test]
    fn dimension_mismatch_is_a_usage_error() {
        assert!(matches!(
            rank(&[0.0, 1.0], 0, View::A, &gallery(&[(0, 1.0)])),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn hand_counted_cmc() {
        assert_eq!(cmc_from_ranks(&[1, 2, 2], 3), vec![1.0 / 3.0, 1.0, 1.0]);
    }

    #[test]
    fn hand_computed_ap() {
        let e = |m| RankedEntry {
            gallery_index: 0,
            identity: 0,
            distance: 0.0,
            is_match: m,
        };
        let r = RankingResult {
            query_identity: 0,
            query_view: View::A,
            entries: vec![e(true), e(false), e(true)],
            first_match: Some(1),
        };
        assert!((average_precision(&r) - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn missing_probe_identity_is_named() {
        let mut p = EmbeddedSet::default();
        p.push(7, View::A, vec![0.0]);
        let err = cmc_embedded(
            &p,
            &gallery(&[(1, 0.0)]),
            &CmcConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("identity 7"), "{err}");
    }

    #[test]
    fn multi_query_with_copies_equals_single() {
        let g = gallery(&[(0, 0.3), (1, 0.1), (2, 2.0)]);
        let mut single = EmbeddedSet::default();
        single.push(0, View::A, vec![0.0]);
        single.push(1, View::A, vec![1.5]);
        let mut copies = single.clone();
        copies.push(0, View::A, vec![0.0]);
        let a = map_embedded(&single, &g, Protocol::Single, MultiQuery::MeanEmbedding).unwrap();
        let b = map_embedded(&copies, &g, Protocol::Multi, MultiQuery::MeanEmbedding).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_formats() {
        let c = CmcCurve {
            rates: vec![1.0, 1.0],
            trials: 1,
        };
        assert_eq!(c.to_csv(), "rank,match_rate\n1,1.0000\n2,1.0000\n");
        assert_eq!(
            summary_csv(&[(Protocol::Single, "map", 0.5)]),
            "protocol,metric,value\nsingle,map,0.500000\n"
        );
    }
}
