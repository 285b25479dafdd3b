use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, SampleSet};
use crate::error::{Error, Result};
use crate::view::View;

/// Identity-disjoint train/test partition; the test identities' view-A
/// images form the probe set and their view-B images the gallery.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub probe: SampleSet,
    pub gallery: SampleSet,
}

/// `floor(train_fraction * N)` identities, drawn uniformly, go to training.
pub fn split_protocol(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&train_fraction) {
        return Err(Error::Usage(format!(
            "train fraction must be in [0, 1), got {train_fraction}"
        )));
    }
    let mut ids = dataset.identities();
    let n_train = (train_fraction * ids.len() as f64).floor() as usize;
    if n_train == ids.len() || (train_fraction > 0.0 && n_train == 0) {
        return Err(Error::Usage(format!(
            "train fraction {train_fraction} of {} identities leaves an empty partition",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let (train_ids, test_ids) = ids.split_at(n_train);
    let train = dataset.subset(train_ids);
    let test = dataset.subset(test_ids);
    Ok(Split {
        probe: test.view_set(View::A),
        gallery: test.view_set(View::B),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn data() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            identities: 10,
            per_view: 2,
            shape: vec![4],
            latent_dim: None,
            smoothing: 0.0,
            separation: 1.0,
            noise: 0.1,
            view_shift: 0.0,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn zero_fraction_keeps_everything_in_test() {
        let s = split_protocol(&data(), 0.0, 1).unwrap();
        assert!(s.train.is_empty());
        assert_eq!(s.test.num_identities(), 10);
    }

    #[test]
    fn probe_and_gallery_are_cross_view() {
        let s = split_protocol(&data(), 0.5, 1).unwrap();
        assert!(s.probe.records().iter().all(|r| r.view == View::A));
        assert!(s.gallery.records().iter().all(|r| r.view == View::B));
        assert_eq!(s.probe.identities(), s.gallery.identities());
    }

    #[test]
    fn identities_are_disjoint_over_many_seeds() {
        let d = data();
        for seed in 0..100 {
            let s = split_protocol(&d, 0.5, seed).unwrap();
            let train = s.train.identities();
            assert_eq!(train.len(), 5);
            assert!(s.test.identities().iter().all(|id| !train.contains(id)));
            assert_eq!(train.len() + s.test.num_identities(), 10);
        }
    }

    #[test]
    fn empty_partitions_are_usage_errors() {
        assert!(matches!(
            split_protocol(&data(), 0.01, 0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            split_protocol(&data(), 1.0, 0),
            Err(Error::Usage(_))
        ));
    }
}
