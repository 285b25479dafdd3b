//! The S2S objective: class-identity compactness, symmetric triplet relative
//! distance, marginal pairwise margins and weight regularisation.
//!
//! ```text
//! L = alpha L_C + (L_T + lambda L_P) + beta R
//! ```

mod batch;
mod terms;
mod weights;

pub use batch::{MarginalPair, PairSign, SampleRef, SetBatch, TripletUnit};
pub(crate) use terms::accumulate_symmetric_triplets;
pub use terms::{
    active_triplets, class_centers, class_identity_loss, conventional_triplet_loss,
    marginal_pairwise_loss, regularization, relative_distance, set_compactness,
    symmetric_triplet_loss, triplet_distances, CenterOptions, TermOutput,
};
pub use weights::{
    phi_derivative, update_direction_weights, DirectionWeights, PhiUpdateMode, TripletDistances,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Margins and term weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig {
    /// Class-identity margin.
    pub m_c: f64,
    /// Triplet margin.
    pub m_t: f64,
    /// Pairwise half-width: pairs must sit outside `m_p -/+ c_p`.
    pub c_p: f64,
    pub m_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            m_c: 0.1,
            m_t: 1.0,
            c_p: 0.175,
            m_p: 0.325,
            alpha: 0.1,
            beta: 0.01,
            lambda: 0.15,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m_c", self.m_c),
            ("m_t", self.m_t),
            ("c_p", self.c_p),
            ("m_p", self.m_p),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(
                "margins",
                format!("{name} must be finite and >= 0, got {v}"),
            ));
        }
        if !(self.m_p > self.c_p && self.c_p > 0.0) {
            return Err(Error::config(
                "margins",
                format!("need m_p > c_p > 0, got m_p={} c_p={}", self.m_p, self.c_p),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossOptions {
    pub centers: CenterOptions,
    pub phi_mode: PhiUpdateMode,
}

/// Everything computed for one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub class_identity: f64,
    pub triplet: f64,
    pub pairwise: f64,
    pub regularization: f64,
    pub total: f64,
    /// Embedding gradient of `alpha L_C + L_T + lambda L_P`.
    pub grad_embeddings: Tensor,
    /// The `phi` derivative statistic over the hinge-active triplets.
    pub grad_phi: f64,
    pub active_class_identity: usize,
    pub active_triplets: usize,
    pub active_pairs: usize,
    pub z_c: usize,
    pub z_t: usize,
    pub z_p: usize,
}

/// `alpha L_C + (L_T + lambda L_P) + beta R`.
pub fn compose_total(m: &MarginConfig, l_c: f64, l_t: f64, l_p: f64, r: f64) -> f64 {
    m.alpha * l_c + (l_t + m.lambda * l_p) + m.beta * r
}

pub fn total_loss(
    batch: &SetBatch,
    triplets: &[TripletUnit],
    pairs: &[MarginalPair],
    params: &[f64],
    margins: &MarginConfig,
    weights: &DirectionWeights,
    opts: &LossOptions,
) -> Result<LossReport> {
    margins.validate()?;
    let c = class_identity_loss(batch, margins.m_c, opts.centers);
    let t = symmetric_triplet_loss(batch, triplets, weights, margins.m_t)?;
    let p = marginal_pairwise_loss(batch, pairs, margins.c_p, margins.m_p)?;
    let (r, _) = regularization(params);
    Ok(assemble(
        margins, weights, opts, batch, triplets, c, t, p, r,
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    margins: &MarginConfig,
    weights: &DirectionWeights,
    opts: &LossOptions,
    batch: &SetBatch,
    triplets: &[TripletUnit],
    c: TermOutput,
    t: TermOutput,
    p: TermOutput,
    r: f64,
) -> LossReport {
    let grad: Vec<f64> = c
        .grad
        .data()
        .iter()
        .zip(t.grad.data())
        .zip(p.grad.data())
        .map(|((gc, gt), gp)| margins.alpha * gc + gt + margins.lambda * gp)
        .collect();
    let active = active_triplets(batch, triplets, weights, margins.m_t);
    LossReport {
        class_identity: c.loss,
        triplet: t.loss,
        pairwise: p.loss,
        regularization: r,
        total: compose_total(margins, c.loss, t.loss, p.loss, r),
        grad_embeddings: Tensor::new(batch.embeddings().shape().to_vec(), grad)
            .expect("batch shape"),
        grad_phi: phi_derivative(&active, opts.phi_mode),
        active_class_identity: c.active,
        active_triplets: t.active,
        active_pairs: p.active,
        z_c: c.normalizer,
        z_t: t.normalizer,
        z_p: p.normalizer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::View;

    fn r(i: usize, v: View, j: usize) -> SampleRef {
        SampleRef::new(i, v, j)
    }

    /// Two identities, one sample per view, D = 2.
    fn tiny(rows: [[f64; 2]; 4]) -> SetBatch {
        SetBatch::from_rows(
            &[
                [vec![rows[0].to_vec()], vec![rows[1].to_vec()]],
                [vec![rows[2].to_vec()], vec![rows[3].to_vec()]],
            ],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn centers_are_means() {
        let b = SetBatch::from_rows(
            &[
                [
                    vec![vec![0.0, 0.0], vec![1.0, 0.0]],
                    vec![vec![2.0, 2.0], vec![2.0, 2.0]],
                ],
                [
                    vec![vec![1.0, 1.0], vec![3.0, 5.0]],
                    vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                ],
            ],
            vec![0, 1],
        )
        .unwrap();
        let ca = class_centers(&b, View::A);
        assert_eq!(ca.data(), &[0.5, 0.0, 2.0, 3.0]);
        let cb = class_centers(&b, View::B);
        assert_eq!(cb.data(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn compactness_of_two_points() {
        let (sum, active, _) = set_compactness(&[&[0.0, 0.0], &[1.0, 0.0]], 0.1, 1.0, false);
        assert_eq!(active, 2);
        assert!((sum / 2.0 - 0.15).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_have_no_class_identity_loss() {
        let b = tiny([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
        let out = class_identity_loss(&b, 0.1, CenterOptions::default());
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(out.normalizer, 4);
    }

    #[test]
    fn class_identity_is_translation_invariant() {
        let make = |shift: f64| {
            SetBatch::from_rows(
                &[
                    [
                        vec![
                            vec![0.0 + shift, 0.3],
                            vec![1.2 + shift, -0.4],
                            vec![0.1 + shift, 0.9],
                        ],
                        vec![vec![2.0, 2.0], vec![2.5, 1.0], vec![3.0, 2.2]],
                    ],
                    [
                        vec![vec![1.0, 1.0], vec![3.0, 5.0], vec![0.0, -1.0]],
                        vec![vec![0.0, 0.0], vec![0.4, 0.1], vec![-0.3, 0.6]],
                    ],
                ],
                vec![0, 1],
            )
            .unwrap()
        };
        let base = class_identity_loss(&make(0.0), 0.1, CenterOptions::default()).loss;
        let moved = class_identity_loss(&make(7.25), 0.1, CenterOptions::default()).loss;
        assert!((base - moved).abs() < 1e-12);
    }

    fn unit() -> TripletUnit {
        TripletUnit {
            anchor: r(0, View::A, 0),
            positive: r(0, View::B, 0),
            negative: r(1, View::B, 0),
        }
    }

    #[test]
    fn coincident_triplet_costs_the_margin() {
        let b = tiny([[1.0, 1.0]; 4]);
        let out = symmetric_triplet_loss(&b, &[unit()], &DirectionWeights::paper(), 1.0).unwrap();
        assert_eq!(out.loss, 1.0);
    }

    #[test]
    fn hand_evaluated_relative_distance() {
        // d(a,p) = 1, d(a,n) = d(p,n) = 0.25 + 1.75 = 2.
        let h = 1.75f64.sqrt();
        let b = tiny([[0.0, 0.0], [1.0, 0.0], [9.0, 9.0], [0.5, h]]);
        let d = triplet_distances(&b, &unit());
        assert!((d.anchor_positive - 1.0).abs() < 1e-15);
        assert!((d.anchor_negative - 2.0).abs() < 1e-15);
        assert!((d.positive_negative - 2.0).abs() < 1e-15);
        let w = DirectionWeights::paper();
        assert!((relative_distance(&d, &w) - 1.0).abs() < 1e-12);
        let out = symmetric_triplet_loss(&b, &[unit()], &w, 1.0).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn conventional_special_case() {
        let b = tiny([[0.0, 0.0], [0.0, 0.0], [9.0, 9.0], [1.0, 1.0]]);
        let conv = conventional_triplet_loss(&b, &[unit()], 1.0).unwrap();
        assert_eq!(conv.loss, 0.0);
        let b = tiny([[0.0, 0.3], [0.2, -0.1], [9.0, 9.0], [0.5, 0.4]]);
        let conv = conventional_triplet_loss(&b, &[unit()], 1.0).unwrap();
        let sym =
            symmetric_triplet_loss(&b, &[unit()], &DirectionWeights::conventional(), 1.0).unwrap();
        assert!((conv.loss - sym.loss).abs() < 1e-12);
        // Positive gradient is -2(a-p) only: no (p-n) component.
        let a = [0.0, 0.3];
        let p = [0.2, -0.1];
        let grad_p = &conv.grad.data()[2..4];
        assert!((grad_p[0] - -2.0 * (a[0] - p[0])).abs() < 1e-15);
        assert!((grad_p[1] - -2.0 * (a[1] - p[1])).abs() < 1e-15);
    }

    #[test]
    fn empty_triplets_are_not_an_error() {
        let b = tiny([[0.0, 0.0]; 4]);
        let out = symmetric_triplet_loss(&b, &[], &DirectionWeights::paper(), 1.0).unwrap();
        assert_eq!((out.loss, out.active, out.normalizer), (0.0, 0, 0));
    }

    #[test]
    fn invalid_triplet_is_rejected() {
        let b = tiny([[0.0, 0.0]; 4]);
        let bad = TripletUnit {
            negative: r(0, View::B, 0),
            ..unit()
        };
        assert!(symmetric_triplet_loss(&b, &[bad], &DirectionWeights::paper(), 1.0).is_err());
    }

    fn pair_batch(d2: f64) -> SetBatch {
        tiny([[0.0, 0.0], [d2.sqrt(), 0.0], [5.0, 5.0], [0.0, d2.sqrt()]])
    }

    #[test]
    fn pairwise_margins() {
        let pos = MarginalPair {
            a: r(0, View::A, 0),
            b: r(0, View::B, 0),
            sign: PairSign::Positive,
        };
        let neg = MarginalPair {
            a: r(0, View::A, 0),
            b: r(1, View::B, 0),
            sign: PairSign::Negative,
        };
        let l = |b: &SetBatch, p: MarginalPair| {
            marginal_pairwise_loss(b, &[p], 0.175, 0.325).unwrap().loss
        };
        assert_eq!(l(&pair_batch(0.0), pos), 0.0);
        assert!((l(&pair_batch(0.5), pos) - 0.35).abs() < 1e-12);
        assert!((l(&pair_batch(0.2), neg) - 0.30).abs() < 1e-12);
        assert_eq!(l(&pair_batch(0.6), neg), 0.0);
    }

    #[test]
    fn pairwise_rejects_mislabelled_pair() {
        let bad = MarginalPair {
            a: r(0, View::A, 0),
            b: r(1, View::B, 0),
            sign: PairSign::Positive,
        };
        assert!(matches!(
            marginal_pairwise_loss(&pair_batch(0.1), &[bad], 0.175, 0.325),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn regularization_values() {
        assert_eq!(regularization(&[0.0; 5]).0, 0.0);
        let (r, g) = regularization(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(r, 4.0);
        assert_eq!(g, vec![2.0, 2.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weights_leave_only_triplet_term() {
        let b = tiny([[0.0, 0.3], [0.2, -0.1], [9.0, 9.0], [0.5, 0.4]]);
        let m = MarginConfig {
            alpha: 0.0,
            beta: 0.0,
            lambda: 0.0,
            ..MarginConfig::default()
        };
        let pairs = [MarginalPair {
            a: r(0, View::A, 0),
            b: r(1, View::B, 0),
            sign: PairSign::Negative,
        }];
        let rep = total_loss(
            &b,
            &[unit()],
            &pairs,
            &[1.0, 2.0],
            &m,
            &DirectionWeights::paper(),
            &LossOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.total, rep.triplet);
    }

    #[test]
    fn invalid_margins_are_rejected() {
        let m = MarginConfig {
            c_p: 0.4,
            ..MarginConfig::default()
        };
        assert!(m.validate().is_err());
        assert!(MarginConfig::default().validate().is_ok());
    }
}
