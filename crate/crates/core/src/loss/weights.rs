//! Adaptive direction-control weights of the symmetric triplet.
//!
//! The weights are parameterised as `mu = psi + phi`, `nu = psi - phi`, so
//! only `phi` moves and `mu + nu == 2 psi` at all times.

use crate::error::{Error, Result};

/// Squared distances of one triplet unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletDistances {
    pub anchor_positive: f64,
    pub anchor_negative: f64,
    pub positive_negative: f64,
}

/// Which derivative drives the `phi` update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhiUpdateMode {
    /// `r = mean 2(d(a,p) - d(p,n))`, then `phi -= eta * r`.
    #[default]
    PaperLiteral,
    /// `r = mean 2(d(a,n) - d(p,n))`, the derivative of the relative distance
    /// with respect to `phi`, applied as ascent: `phi += eta * r`.
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionWeights {
    pub psi: f64,
    pub phi: f64,
    /// Updating rate.
    pub eta: f64,
    /// Momentum coefficient of the `phi` update; 0 is plain descent.
    pub momentum: f64,
    pub velocity: f64,
}

impl DirectionWeights {
    pub fn new(psi: f64, phi: f64, eta: f64) -> Result<Self> {
        let w = DirectionWeights {
            psi,
            phi,
            eta,
            momentum: 0.0,
            velocity: 0.0,
        };
        w.validate()?;
        Ok(w)
    }

    /// Recovers `psi = (mu + nu) / 2`, `phi = (mu - nu) / 2`.
    pub fn from_mu_nu(mu: f64, nu: f64, eta: f64) -> Result<Self> {
        DirectionWeights::new((mu + nu) / 2.0, (mu - nu) / 2.0, eta)
    }

    /// mu = 0.6, nu = 0.4, eta = 0.001.
    pub fn paper() -> Self {
        DirectionWeights::from_mu_nu(0.6, 0.4, 0.001).expect("valid defaults")
    }

    /// mu = 1, nu = 0, eta = 0: the conventional triplet objective.
    pub fn conventional() -> Self {
        DirectionWeights::from_mu_nu(1.0, 0.0, 0.0).expect("valid defaults")
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        self.momentum = momentum;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.psi.is_finite()
            && self.psi >= 0.0
            && self.phi.is_finite()
            && self.phi.abs() <= self.psi
            && self.eta.is_finite()
            && self.eta >= 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "direction weights",
                format!(
                    "need psi >= 0, |phi| <= psi, eta >= 0, momentum in [0,1); got psi={}, phi={}, eta={}, momentum={}",
                    self.psi, self.phi, self.eta, self.momentum
                ),
            ))
        }
    }

    /// `(mu, nu)`. The smaller weight is computed as `2 psi - larger`, which is
    /// exact, so `mu + nu` rounds to exactly `2 psi`.
    pub fn mu_nu(&self) -> (f64, f64) {
        let total = 2.0 * self.psi;
        let larger = (self.psi + self.phi.abs()).min(total);
        let smaller = total - larger;
        if self.phi >= 0.0 {
            (larger, smaller)
        } else {
            (smaller, larger)
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu_nu().0
    }

    pub fn nu(&self) -> f64 {
        self.mu_nu().1
    }
}

/// The `r` statistic for the given hinge-active triplets (0 when empty).
pub fn phi_derivative(active: &[TripletDistances], mode: PhiUpdateMode) -> f64 {
    if active.is_empty() {
        return 0.0;
    }
    let sum: f64 = active
        .iter()
        .map(|t| match mode {
            PhiUpdateMode::PaperLiteral => 2.0 * (t.anchor_positive - t.positive_negative),
            PhiUpdateMode::Analytic => 2.0 * (t.anchor_negative - t.positive_negative),
        })
        .sum();
    sum / active.len() as f64
}

/// One `phi` step from the hinge-active triplets of a mini-batch, clamped to
/// `[-psi, psi]`.
pub fn update_direction_weights(
    weights: &DirectionWeights,
    active: &[TripletDistances],
    mode: PhiUpdateMode,
) -> DirectionWeights {
    let r = phi_derivative(active, mode);
    let step = match mode {
        PhiUpdateMode::PaperLiteral => -weights.eta * r,
        PhiUpdateMode::Analytic => weights.eta * r,
    };
    let velocity = weights.momentum * weights.velocity + step;
    let phi = (weights.phi + velocity).clamp(-weights.psi, weights.psi);
    DirectionWeights {
        phi,
        velocity,
        ..*weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(ap: f64, an: f64, pn: f64) -> TripletDistances {
        TripletDistances {
            anchor_positive: ap,
            anchor_negative: an,
            positive_negative: pn,
        }
    }

    #[test]
    fn paper_defaults() {
        let w = DirectionWeights::paper();
        assert_eq!(w.psi, 0.5);
        assert_eq!(w.mu(), 0.6);
        assert_eq!(w.nu(), 0.4);
        let c = DirectionWeights::conventional();
        assert_eq!((c.mu(), c.nu()), (1.0, 0.0));
    }

    #[test]
    fn worked_example_paper_literal() {
        let w = DirectionWeights::new(0.5, 0.1, 0.001).unwrap();
        let active = [dist(1.0, 7.0, 0.5)];
        assert_eq!(phi_derivative(&active, PhiUpdateMode::PaperLiteral), 1.0);
        let u = update_direction_weights(&w, &active, PhiUpdateMode::PaperLiteral);
        assert!((u.phi - 0.099).abs() < 1e-12);
        assert!((u.mu() - 0.599).abs() < 1e-12);
        assert!((u.nu() - 0.401).abs() < 1e-12);
    }

    #[test]
    fn analytic_mode_ascends_on_relative_distance() {
        let w = DirectionWeights::new(0.5, 0.1, 0.001).unwrap();
        let u = update_direction_weights(&w, &[dist(1.0, 2.0, 0.5)], PhiUpdateMode::Analytic);
        assert!((u.phi - (0.1 + 0.001 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_and_balanced_cases_leave_weights_unchanged() {
        let w = DirectionWeights::conventional();
        let u = update_direction_weights(&w, &[dist(3.0, 1.0, 0.5)], PhiUpdateMode::PaperLiteral);
        assert_eq!(u, w);
        let w = DirectionWeights::paper();
        let u = update_direction_weights(
            &w,
            &[dist(0.7, 1.0, 0.7), dist(2.0, 0.1, 2.0)],
            PhiUpdateMode::PaperLiteral,
        );
        assert_eq!(u.phi, w.phi);
        assert_eq!(
            update_direction_weights(&w, &[], PhiUpdateMode::PaperLiteral).phi,
            w.phi
        );
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let w = DirectionWeights::new(0.5, 0.0, 0.01)
            .unwrap()
            .with_momentum(0.9)
            .unwrap();
        let a = [dist(1.0, 0.0, 0.5)];
        let u1 = update_direction_weights(&w, &a, PhiUpdateMode::PaperLiteral);
        let u2 = update_direction_weights(&u1, &a, PhiUpdateMode::PaperLiteral);
        assert!((u1.phi - -0.01).abs() < 1e-15);
        assert!((u2.phi - (-0.01 + (0.9 * -0.01 - 0.01))).abs() < 1e-15);
    }

    #[test]
    fn rejects_phi_outside_psi() {
        assert!(DirectionWeights::new(0.5, 0.6, 0.0).is_err());
        assert!(DirectionWeights::new(0.5, 0.1, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn update_conserves_sum_and_bounds(
            psi in 0.0f64..2.0,
            frac in -1.0f64..1.0,
            eta in 0.0f64..0.5,
            dists in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0), 0..8),
            analytic in any::<bool>(),
        ) {
            let w = DirectionWeights::new(psi, psi * frac, eta).unwrap();
            let active: Vec<_> = dists.iter().map(|&(a, b, c)| dist(a, b, c)).collect();
            let mode = if analytic { PhiUpdateMode::Analytic } else { PhiUpdateMode::PaperLiteral };
            let before = w.mu() + w.nu();
            let u = update_direction_weights(&w, &active, mode);
            prop_assert_eq!(u.mu() + u.nu(), before);
            prop_assert_eq!(before, 2.0 * psi);
            prop_assert!(u.mu() >= 0.0 && u.mu() <= 2.0 * psi);
            prop_assert!(u.nu() >= 0.0 && u.nu() <= 2.0 * psi);
        }
    }
}
