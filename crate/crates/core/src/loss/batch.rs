use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::view::View;

/// Position of one embedding inside a [`SetBatch`]: batch identity index,
/// camera view and sample index within that (identity, view) set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleRef {
    pub identity: usize,
    pub view: View,
    pub index: usize,
}

impl SampleRef {
    pub fn new(identity: usize, view: View, index: usize) -> Self {
        SampleRef {
            identity,
            view,
            index,
        }
    }
}

/// Embeddings of `N` identities x 2 views x `M` samples, `D` dims each.
#[derive(Clone, Debug, PartialEq)]
pub struct SetBatch {
    embeddings: Tensor,
    identity_ids: Vec<u32>,
}

impl SetBatch {
    /// `embeddings` must have shape `[N, 2, M, D]`.
    pub fn new(embeddings: Tensor, identity_ids: Vec<u32>) -> Result<Self> {
        let &[n, views, m, _d] = embeddings.shape() else {
            return Err(Error::Usage(format!(
                "set batch needs a [N, 2, M, D] tensor, got shape {:?}",
                embeddings.shape()
            )));
        };
        if views != 2 {
            return Err(Error::Usage(format!(
                "set batch needs exactly 2 views, got {views}"
            )));
        }
        if n < 2 {
            return Err(Error::Usage(format!(
                "set batch needs at least 2 identities, got {n}"
            )));
        }
        if m < 1 {
            return Err(Error::Usage(
                "set batch needs at least one sample per view".into(),
            ));
        }
        if identity_ids.len() != n {
            return Err(Error::Usage(format!(
                "{} identity labels for {n} identities",
                identity_ids.len()
            )));
        }
        if !embeddings.is_finite() {
            return Err(Error::Numerical(
                "set batch contains non-finite embeddings".into(),
            ));
        }
        Ok(SetBatch {
            embeddings,
            identity_ids,
        })
    }

    /// Builds a batch from `rows[identity][view][sample]`.
    pub fn from_rows(rows: &[[Vec<Vec<f64>>; 2]], identity_ids: Vec<u32>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r[0].len());
        let d = rows.first().and_then(|r| r[0].first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * 2 * m * d);
        for (i, views) in rows.iter().enumerate() {
            for (v, samples) in views.iter().enumerate() {
                if samples.len() != m {
                    return Err(Error::Usage(format!(
                        "identity {i} view {v} has {} samples, expected {m}",
                        samples.len()
                    )));
                }
                for s in samples {
                    if s.len() != d {
                        return Err(Error::Usage(format!(
                            "embedding of length {} in a {d}-dim batch",
                            s.len()
                        )));
                    }
                    data.extend_from_slice(s);
                }
            }
        }
        SetBatch::new(Tensor::new(vec![n, 2, m, d], data)?, identity_ids)
    }

    pub fn num_identities(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn samples_per_view(&self) -> usize {
        self.embeddings.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[3]
    }

    pub fn identity_ids(&self) -> &[u32] {
        &self.identity_ids
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub(crate) fn offset(&self, r: SampleRef) -> usize {
        ((r.identity * 2 + r.view.index()) * self.samples_per_view() + r.index) * self.dim()
    }

    pub fn row(&self, r: SampleRef) -> &[f64] {
        let o = self.offset(r);
        &self.embeddings.data()[o..o + self.dim()]
    }

    pub fn contains(&self, r: SampleRef) -> bool {
        r.identity < self.num_identities() && r.index < self.samples_per_view()
    }

    /// All sample references in identity-major order.
    pub fn refs(&self) -> impl Iterator<Item = SampleRef> + '_ {
        let m = self.samples_per_view();
        (0..self.num_identities()).flat_map(move |i| {
            View::BOTH
                .into_iter()
                .flat_map(move |v| (0..m).map(move |j| SampleRef::new(i, v, j)))
        })
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(self.embeddings.shape().to_vec())
    }

    /// Replaces the embedding data, keeping the shape.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        SetBatch::new(
            Tensor::new(self.embeddings.shape().to_vec(), data)?,
            self.identity_ids.clone(),
        )
    }
}

/// An (anchor, positive, negative) unit: anchor and positive share an
/// identity, the negative belongs to another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletUnit {
    pub anchor: SampleRef,
    pub positive: SampleRef,
    pub negative: SampleRef,
}

impl TripletUnit {
    pub fn validate(&self, batch: &SetBatch) -> Result<()> {
        for r in [self.anchor, self.positive, self.negative] {
            if !batch.contains(r) {
                return Err(Error::Usage(format!(
                    "triplet references {r:?} outside the batch"
                )));
            }
        }
        if self.anchor.identity != self.positive.identity {
            return Err(Error::Usage(format!(
                "triplet positive {:?} does not share the anchor's identity",
                self.positive
            )));
        }
        if self.anchor.identity == self.negative.identity {
            return Err(Error::Usage(format!(
                "triplet negative {:?} has the anchor's identity",
                self.negative
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairSign {
    Positive,
    Negative,
}

impl PairSign {
    pub fn value(self) -> f64 {
        match self {
            PairSign::Positive => 1.0,
            PairSign::Negative => -1.0,
        }
    }
}

/// A cross-view pair for the marginal pairwise term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarginalPair {
    pub a: SampleRef,
    pub b: SampleRef,
    pub sign: PairSign,
}

impl MarginalPair {
    pub fn validate(&self, batch: &SetBatch) -> Result<()> {
        for r in [self.a, self.b] {
            if !batch.contains(r) {
                return Err(Error::Usage(format!(
                    "pair references {r:?} outside the batch"
                )));
            }
        }
        let same = self.a.identity == self.b.identity;
        match (self.sign, same) {
            (PairSign::Positive, false) => Err(Error::Usage(format!(
                "positive pair {:?}/{:?} spans two identities",
                self.a, self.b
            ))),
            (PairSign::Negative, true) => Err(Error::Usage(format!(
                "negative pair {:?}/{:?} has a single identity",
                self.a, self.b
            ))),
            _ => Ok(()),
        }
    }
}
