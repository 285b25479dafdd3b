//! Two-view datasets, their on-disk formats, the synthetic generator and the
//! identity-disjoint split protocol.

mod io;
mod split;
mod synth;

pub use io::{
    load_dataset, read_tensor, save_dataset, save_dataset_inline, write_tensor, MANIFEST_NAME,
    TENSOR_MAGIC,
};
pub use split::{split_protocol, Split};
pub use synth::{generate_synthetic, SyntheticSpec};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::view::View;

/// One labelled sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub identity: u32,
    pub view: View,
    pub sample: Tensor,
}

/// Samples with uniform shape, in any views.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    records: Vec<Record>,
}

impl SampleSet {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if let Some(first) = records.first() {
            if let Some(bad) = records
                .iter()
                .find(|r| r.sample.shape() != first.sample.shape())
            {
                return Err(Error::Data(format!(
                    "identity {} has a sample of shape {:?}, expected {:?}",
                    bad.identity,
                    bad.sample.shape(),
                    first.sample.shape()
                )));
            }
        }
        Ok(SampleSet { records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct identities in ascending order.
    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A two-view dataset: every identity has at least one sample in each view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    sample_shape: Vec<usize>,
    // (identity, view) -> record indices, in record order.
    index: BTreeMap<(u32, View), Vec<usize>>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let set = SampleSet::new(records)?;
        let records = set.records;
        let sample_shape = records
            .first()
            .map(|r| r.sample.shape().to_vec())
            .unwrap_or_default();
        let mut index: BTreeMap<(u32, View), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            index.entry((r.identity, r.view)).or_default().push(i);
        }
        for &(id, view) in index.keys() {
            if !index.contains_key(&(id, view.other())) {
                return Err(Error::Data(format!(
                    "identity {id} has no samples in view {}",
                    view.other()
                )));
            }
        }
        Ok(Dataset {
            records,
            sample_shape,
            index,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Record {
        &self.records[i]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    /// Distinct identities in ascending order.
    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.index.keys().map(|(id, _)| *id).collect();
        ids.dedup();
        ids
    }

    pub fn num_identities(&self) -> usize {
        self.index.len() / 2
    }

    /// Record indices of `identity` in `view`.
    pub fn indices(&self, identity: u32, view: View) -> &[usize] {
        self.index.get(&(identity, view)).map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, identity: u32, view: View) -> usize {
        self.indices(identity, view).len()
    }

    /// Records of the given identities, in original order.
    pub fn subset(&self, identities: &[u32]) -> Dataset {
        let keep: std::collections::HashSet<u32> = identities.iter().copied().collect();
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(&r.identity))
            .cloned()
            .collect();
        Dataset::new(records).expect("subset of a valid dataset is valid")
    }

    pub fn view_set(&self, view: View) -> SampleSet {
        SampleSet {
            records: self
                .records
                .iter()
                .filter(|r| r.view == view)
                .cloned()
                .collect(),
        }
    }
}
