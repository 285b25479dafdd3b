//! The individual S2S loss terms and their embedding gradients.
//!
//! Every hinge is active iff its argument is strictly positive; inactive
//! units contribute exactly zero loss and zero gradient. Each normaliser is
//! the number of contributing units.

use super::batch::{MarginalPair, SampleRef, SetBatch, TripletUnit};
use super::weights::{DirectionWeights, TripletDistances};
use crate::error::Result;
use crate::tensor::{sq_dist, Tensor};
use crate::view::View;

/// Value, embedding gradient and bookkeeping of one loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct TermOutput {
    pub loss: f64,
    pub grad: Tensor,
    pub active: usize,
    pub normalizer: usize,
}

/// Options of the class-identity term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CenterOptions {
    /// One center per identity over both views instead of one per view.
    pub pooled_views: bool,
    /// Treat centers as constants when differentiating.
    pub frozen_centers: bool,
}

/// `grad[r] += scale * v` for the row of `r`.
fn add_row(batch: &SetBatch, grad: &mut Tensor, r: SampleRef, scale: f64, v: &[f64]) {
    let o = batch.offset(r);
    for (g, x) in grad.data_mut()[o..o + v.len()].iter_mut().zip(v) {
        *g += scale * x;
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn mean_of(rows: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for r in rows {
        for (ci, x) in c.iter_mut().zip(*r) {
            *ci += x;
        }
    }
    let m = rows.len() as f64;
    c.iter_mut().for_each(|v| *v /= m);
    c
}

/// Row `i` is the mean of identity `i`'s embeddings in `view`.
pub fn class_centers(batch: &SetBatch, view: View) -> Tensor {
    let n = batch.num_identities();
    let m = batch.samples_per_view();
    let mut data = Vec::with_capacity(n * batch.dim());
    for i in 0..n {
        let rows: Vec<&[f64]> = (0..m)
            .map(|j| batch.row(SampleRef::new(i, view, j)))
            .collect();
        data.extend(mean_of(&rows));
    }
    Tensor::new(vec![n, batch.dim()], data).expect("n x d")
}

/// Hinge compactness of one set around its mean.
///
/// Returns the unnormalised loss sum, the number of active samples and the
/// gradient for each sample (already multiplied by `scale`).
pub fn set_compactness(
    rows: &[&[f64]],
    margin: f64,
    scale: f64,
    frozen_center: bool,
) -> (f64, usize, Vec<Vec<f64>>) {
    let center = mean_of(rows);
    let m = rows.len() as f64;
    let mut grads = vec![vec![0.0; center.len()]; rows.len()];
    let mut coupling = vec![0.0; center.len()];
    let mut sum = 0.0;
    let mut active = 0;
    for (j, x) in rows.iter().enumerate() {
        let d = sq_dist(&center, x);
        if d - margin > 0.0 {
            sum += d - margin;
            active += 1;
            let r = diff(&center, x);
            // d/dx_j of |c - x_j|^2 through x_j directly.
            for (g, v) in grads[j].iter_mut().zip(&r) {
                *g -= 2.0 * scale * v;
            }
            for (c, v) in coupling.iter_mut().zip(&r) {
                *c += v;
            }
        }
    }
    if !frozen_center && active > 0 {
        // dc/dx_k = I / M for every k.
        for g in grads.iter_mut() {
            for (gi, c) in g.iter_mut().zip(&coupling) {
                *gi += 2.0 * scale * c / m;
            }
        }
    }
    (sum, active, grads)
}

/// `L_C = (1/Z_c) sum_sets sum_j max(|c - x_j|^2 - m_c, 0)` with one set per
/// (identity, view), or per identity when views are pooled. `Z_c` is the
/// number of summed samples, `2 N M` either way.
pub fn class_identity_loss(batch: &SetBatch, m_c: f64, opts: CenterOptions) -> TermOutput {
    let n = batch.num_identities();
    let m = batch.samples_per_view();
    let z = 2 * n * m;
    let scale = 1.0 / z as f64;
    let mut grad = batch.zeros_like();
    let mut sum = 0.0;
    let mut active = 0;
    let sets: Vec<Vec<SampleRef>> = if opts.pooled_views {
        (0..n)
            .map(|i| {
                View::BOTH
                    .into_iter()
                    .flat_map(|v| (0..m).map(move |j| SampleRef::new(i, v, j)))
                    .collect()
            })
            .collect()
    } else {
        (0..n)
            .flat_map(|i| {
                View::BOTH
                    .into_iter()
                    .map(move |v| (0..m).map(|j| SampleRef::new(i, v, j)).collect())
            })
            .collect()
    };
    for set in &sets {
        let rows: Vec<&[f64]> = set.iter().map(|&r| batch.row(r)).collect();
        let (s, a, g) = set_compactness(&rows, m_c, scale, opts.frozen_centers);
        sum += s;
        active += a;
        if a > 0 {
            for (&r, gr) in set.iter().zip(&g) {
                add_row(batch, &mut grad, r, 1.0, gr);
            }
        }
    }
    TermOutput {
        loss: sum * scale,
        grad,
        active,
        normalizer: z,
    }
}

pub fn triplet_distances(batch: &SetBatch, t: &TripletUnit) -> TripletDistances {
    let a = batch.row(t.anchor);
    let p = batch.row(t.positive);
    let n = batch.row(t.negative);
    TripletDistances {
        anchor_positive: sq_dist(a, p),
        anchor_negative: sq_dist(a, n),
        positive_negative: sq_dist(p, n),
    }
}

/// `T = mu d(a,n) + nu d(p,n) - d(a,p)`.
pub fn relative_distance(d: &TripletDistances, weights: &DirectionWeights) -> f64 {
    let (mu, nu) = weights.mu_nu();
    mu * d.anchor_negative + nu * d.positive_negative - d.anchor_positive
}

/// Distances of the triplets whose hinge `max(m_t - T, 0)` is active.
pub fn active_triplets(
    batch: &SetBatch,
    triplets: &[TripletUnit],
    weights: &DirectionWeights,
    m_t: f64,
) -> Vec<TripletDistances> {
    triplets
        .iter()
        .map(|t| triplet_distances(batch, t))
        .filter(|d| m_t - relative_distance(d, weights) > 0.0)
        .collect()
}

/// Adds the symmetric triplet hinge of `triplets` into `grad` with weight
/// `scale`; returns the unnormalised loss sum and the active count.
pub(crate) fn accumulate_symmetric_triplets(
    batch: &SetBatch,
    triplets: &[TripletUnit],
    weights: &DirectionWeights,
    m_t: f64,
    scale: f64,
    grad: &mut Tensor,
) -> Result<(f64, usize)> {
    let (mu, nu) = weights.mu_nu();
    let mut sum = 0.0;
    let mut active = 0;
    for t in triplets {
        t.validate(batch)?;
        let d = triplet_distances(batch, t);
        let hinge = m_t - relative_distance(&d, weights);
        if hinge <= 0.0 {
            continue;
        }
        sum += hinge;
        active += 1;
        let a = batch.row(t.anchor);
        let p = batch.row(t.positive);
        let n = batch.row(t.negative);
        let ap = diff(a, p);
        let an = diff(a, n);
        let pn = diff(p, n);
        // hinge = m_t - mu|a-n|^2 - nu|p-n|^2 + |a-p|^2
        add_row(batch, grad, t.anchor, 2.0 * scale, &ap);
        add_row(batch, grad, t.anchor, -2.0 * mu * scale, &an);
        add_row(batch, grad, t.positive, -2.0 * scale, &ap);
        add_row(batch, grad, t.positive, -2.0 * nu * scale, &pn);
        add_row(batch, grad, t.negative, 2.0 * mu * scale, &an);
        add_row(batch, grad, t.negative, 2.0 * nu * scale, &pn);
    }
    Ok((sum, active))
}

/// `L_T = (1/Z_t) sum max(m_t - T, 0)` over the given triplets, `Z_t` the
/// triplet count. An empty list yields zero loss and gradient.
pub fn symmetric_triplet_loss(
    batch: &SetBatch,
    triplets: &[TripletUnit],
    weights: &DirectionWeights,
    m_t: f64,
) -> Result<TermOutput> {
    let mut grad = batch.zeros_like();
    if triplets.is_empty() {
        return Ok(TermOutput {
            loss: 0.0,
            grad,
            active: 0,
            normalizer: 0,
        });
    }
    let scale = 1.0 / triplets.len() as f64;
    let (sum, active) =
        accumulate_symmetric_triplets(batch, triplets, weights, m_t, scale, &mut grad)?;
    Ok(TermOutput {
        loss: sum * scale,
        grad,
        active,
        normalizer: triplets.len(),
    })
}

/// `(1/Z) sum max(m_t + d(a,p) - d(a,n), 0)`.
pub fn conventional_triplet_loss(
    batch: &SetBatch,
    triplets: &[TripletUnit],
    m_t: f64,
) -> Result<TermOutput> {
    let mut grad = batch.zeros_like();
    if triplets.is_empty() {
        return Ok(TermOutput {
            loss: 0.0,
            grad,
            active: 0,
            normalizer: 0,
        });
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut sum = 0.0;
    let mut active = 0;
    for t in triplets {
        t.validate(batch)?;
        let a = batch.row(t.anchor);
        let p = batch.row(t.positive);
        let n = batch.row(t.negative);
        let hinge = m_t + sq_dist(a, p) - sq_dist(a, n);
        if hinge <= 0.0 {
            continue;
        }
        sum += hinge;
        active += 1;
        let ap = diff(a, p);
        let an = diff(a, n);
        add_row(batch, &mut grad, t.anchor, 2.0 * scale, &ap);
        add_row(batch, &mut grad, t.anchor, -2.0 * scale, &an);
        add_row(batch, &mut grad, t.positive, -2.0 * scale, &ap);
        add_row(batch, &mut grad, t.negative, 2.0 * scale, &an);
    }
    Ok(TermOutput {
        loss: sum * scale,
        grad,
        active,
        normalizer: triplets.len(),
    })
}

/// `L_P = (1/Z_p) sum max(c_p - g (m_p - d(a,b)), 0)`, `Z_p` the pair count.
///
/// Positive pairs are pulled inside the down-margin `m_p - c_p`, negative
/// pairs pushed beyond the up-margin `m_p + c_p`.
pub fn marginal_pairwise_loss(
    batch: &SetBatch,
    pairs: &[MarginalPair],
    c_p: f64,
    m_p: f64,
) -> Result<TermOutput> {
    let mut grad = batch.zeros_like();
    for p in pairs {
        p.validate(batch)?;
    }
    if pairs.is_empty() {
        return Ok(TermOutput {
            loss: 0.0,
            grad,
            active: 0,
            normalizer: 0,
        });
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut sum = 0.0;
    let mut active = 0;
    for p in pairs {
        let a = batch.row(p.a);
        let b = batch.row(p.b);
        let g = p.sign.value();
        let hinge = c_p - g * (m_p - sq_dist(a, b));
        if hinge <= 0.0 {
            continue;
        }
        sum += hinge;
        active += 1;
        let ab = diff(a, b);
        add_row(batch, &mut grad, p.a, 2.0 * g * scale, &ab);
        add_row(batch, &mut grad, p.b, -2.0 * g * scale, &ab);
    }
    Ok(TermOutput {
        loss: sum * scale,
        grad,
        active,
        normalizer: pairs.len(),
    })
}

/// `R = sum |W|_F^2 + |b|^2` over every parameter; gradient `2 params`.
pub fn regularization(params: &[f64]) -> (f64, Vec<f64>) {
    let r = params.iter().map(|p| p * p).sum();
    (r, params.iter().map(|p| 2.0 * p).collect())
}
