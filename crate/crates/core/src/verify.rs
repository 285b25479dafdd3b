//! Randomised finite-difference checks of the loss-term and network
//! gradients.
//!
//! Instances whose hinge activity changes under a perturbation straddle a
//! kink, where central differences are meaningless; they are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::{
    class_identity_loss, compose_total, marginal_pairwise_loss, regularization,
    symmetric_triplet_loss, CenterOptions, DirectionWeights, MarginConfig, MarginalPair, PairSign,
    SampleRef, SetBatch, TripletUnit,
};
use crate::mining::{mine, MiningConfig};
use crate::nn::{check_gradient, GradCheckReport, Network, NetworkBuilder};
use crate::tensor::Tensor;
use crate::view::View;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    ClassIdentity,
    Triplet,
    Pairwise,
    Regularization,
    /// The full objective chained through a small random network.
    Network,
}

impl Term {
    pub const ALL: [Term; 5] = [
        Term::ClassIdentity,
        Term::Triplet,
        Term::Pairwise,
        Term::Regularization,
        Term::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::ClassIdentity => "class-identity",
            Term::Triplet => "triplet",
            Term::Pairwise => "pairwise",
            Term::Regularization => "regularization",
            Term::Network => "network",
        }
    }

    /// 1e-6 for terms checked on embeddings, 1e-4 through a network.
    pub fn default_threshold(self) -> f64 {
        match self {
            Term::Network => 1e-4,
            _ => 1e-6,
        }
    }
}

impl std::str::FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown term {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckConfig {
    pub instances: usize,
    pub eps: f64,
    pub seed: u64,
    /// Largest embedding dimension drawn.
    pub max_dim: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            instances: 50,
            eps: 1e-5,
            seed: 0,
            max_dim: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermCheck {
    pub term: Term,
    pub instances: usize,
    /// Instances redrawn because they sat on a hinge kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst component.
    pub worst: (f64, f64),
}

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_ref(rng: &mut ChaCha8Rng, identity: usize, m: usize) -> SampleRef {
    let view = if rng.random_bool(0.5) {
        View::A
    } else {
        View::B
    };
    SampleRef::new(identity, view, rng.random_range(0..m))
}

fn other_identity(rng: &mut ChaCha8Rng, i: usize, n: usize) -> usize {
    let k = rng.random_range(0..n - 1);
    if k >= i {
        k + 1
    } else {
        k
    }
}

/// A batch with squared distances of order one, so hinges are mixed.
fn random_batch(rng: &mut ChaCha8Rng, max_dim: usize) -> SetBatch {
    let n = rng.random_range(2..=3);
    let m = rng.random_range(1..=3);
    let d = rng.random_range(2..=max_dim.max(2));
    let std = (rng.random_range(0.2..1.0) / d as f64).sqrt();
    let data = normal(rng, n * 2 * m * d, std);
    SetBatch::new(
        Tensor::new(vec![n, 2, m, d], data).expect("shape"),
        (0..n as u32).collect(),
    )
    .expect("valid")
}

fn random_triplets(rng: &mut ChaCha8Rng, batch: &SetBatch, count: usize) -> Vec<TripletUnit> {
    let (n, m) = (batch.num_identities(), batch.samples_per_view());
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let k = other_identity(rng, i, n);
            TripletUnit {
                anchor: random_ref(rng, i, m),
                positive: random_ref(rng, i, m),
                negative: random_ref(rng, k, m),
            }
        })
        .collect()
}

fn random_pairs(rng: &mut ChaCha8Rng, batch: &SetBatch, count: usize) -> Vec<MarginalPair> {
    let (n, m) = (batch.num_identities(), batch.samples_per_view());
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let positive = rng.random_bool(0.5);
            let k = if positive {
                i
            } else {
                other_identity(rng, i, n)
            };
            MarginalPair {
                a: random_ref(rng, i, m),
                b: random_ref(rng, k, m),
                sign: if positive {
                    PairSign::Positive
                } else {
                    PairSign::Negative
                },
            }
        })
        .collect()
}

fn random_weights(rng: &mut ChaCha8Rng) -> DirectionWeights {
    let psi = rng.random_range(0.2..1.0);
    DirectionWeights::new(psi, psi * rng.random_range(-1.0..1.0), 0.0).expect("valid")
}

/// Loss value, gradient and hinge-activity signature of one objective.
type Objective<'a> = Box<dyn Fn(&[f64]) -> Result<(f64, Vec<f64>, Vec<usize>)> + 'a>;

/// Checks one objective at `x`; `None` if a perturbation changed the hinge
/// activity.
fn check_objective(x: &[f64], f: &Objective<'_>, eps: f64) -> Result<Option<GradCheckReport>> {
    let (_, grad, sig) = f(x)?;
    let mut crossed = false;
    let report = check_gradient(x, &grad, eps, |p| {
        let (l, _, s) = f(p)?;
        crossed |= s != sig;
        Ok(l)
    })?;
    Ok((!crossed).then_some(report))
}

fn embedding_objective<'a>(term: Term, batch: &'a SetBatch, rng: &mut ChaCha8Rng) -> Objective<'a> {
    let margins = MarginConfig::default();
    match term {
        Term::ClassIdentity => {
            let opts = CenterOptions {
                pooled_views: rng.random_bool(0.5),
                frozen_centers: false,
            };
            Box::new(move |x| {
                let out = class_identity_loss(&batch.with_data(x.to_vec())?, margins.m_c, opts);
                Ok((out.loss, out.grad.into_data(), vec![out.active]))
            })
        }
        Term::Triplet => {
            let count = rng.random_range(1..=8);
            let triplets = random_triplets(rng, batch, count);
            let weights = random_weights(rng);
            Box::new(move |x| {
                let out = symmetric_triplet_loss(
                    &batch.with_data(x.to_vec())?,
                    &triplets,
                    &weights,
                    margins.m_t,
                )?;
                Ok((out.loss, out.grad.into_data(), vec![out.active]))
            })
        }
        Term::Pairwise => {
            let count = rng.random_range(1..=8);
            let pairs = random_pairs(rng, batch, count);
            Box::new(move |x| {
                let out = marginal_pairwise_loss(
                    &batch.with_data(x.to_vec())?,
                    &pairs,
                    margins.c_p,
                    margins.m_p,
                )?;
                Ok((out.loss, out.grad.into_data(), vec![out.active]))
            })
        }
        Term::Regularization | Term::Network => unreachable!("not an embedding objective"),
    }
}

/// conv 3x3 -> relu -> 2x2 max-pool -> fully-connected.
fn random_network(rng: &mut ChaCha8Rng) -> Result<Network> {
    let h = rng.random_range(4..=6);
    let w = rng.random_range(4..=6);
    let (mut b, x) = NetworkBuilder::new(vec![1, h, w])?;
    let c = b.conv2d("conv", x, rng.random_range(2..=3), 3, 1, 1)?;
    let r = b.relu("relu", c);
    let p = b.maxpool2d("pool", r, 2, 2)?;
    let y = b.fully_connected("fc", p, rng.random_range(2..=4))?;
    let mut net = b.finish(y);
    // Random biases too: the objective is translation invariant in embedding
    // space, so zero fc biases would have an exactly zero gradient.
    let params = normal(rng, net.num_params(), 0.5);
    net.set_params(params)?;
    Ok(net)
}

/// Embeds every input; `inputs` are in batch row order.
fn embed_batch(
    net: &Network,
    inputs: &[Tensor],
    n: usize,
    m: usize,
) -> Result<(SetBatch, Vec<crate::nn::Tape>)> {
    let mut data = Vec::new();
    let mut tapes = Vec::new();
    for x in inputs {
        let (e, t) = net.forward(x)?;
        data.extend_from_slice(e.data());
        tapes.push(t);
    }
    let d = net.embedding_dim();
    Ok((
        SetBatch::new(
            Tensor::new(vec![n, 2, m, d], data)?,
            (0..n as u32).collect(),
        )?,
        tapes,
    ))
}

/// Full objective of a batch of network inputs with respect to the network
/// parameters.
fn network_objective<'a>(
    net: &'a Network,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Objective<'a>)> {
    let (n, m) = (2, 2);
    let inputs: Vec<Tensor> = (0..n * 2 * m)
        .map(|_| {
            Tensor::new(
                net.input_shape().to_vec(),
                normal(rng, net.input_shape().iter().product(), 1.0),
            )
        })
        .collect::<Result<_>>()?;
    let (batch, _) = embed_batch(net, &inputs, n, m)?;
    let mining = MiningConfig {
        ids_per_batch: n,
        samples_per_view: m,
        triplets_per_anchor: 2,
        k_marginal: 1,
        symmetric_views: false,
        seed: 0,
    };
    let mined = mine(&batch, &mining, rng)?;
    let weights = random_weights(rng);
    let margins = MarginConfig::default();
    let x0 = net.params().to_vec();
    let scratch = std::cell::RefCell::new(net.clone());
    let f: Objective<'a> = Box::new(move |p: &[f64]| {
        let mut work = scratch.borrow_mut();
        work.params_mut().copy_from_slice(p);
        let (batch, tapes) = embed_batch(&work, &inputs, n, m)?;
        let c = class_identity_loss(&batch, margins.m_c, CenterOptions::default());
        let t = symmetric_triplet_loss(&batch, &mined.triplets, &weights, margins.m_t)?;
        let pw = marginal_pairwise_loss(&batch, &mined.pairs, margins.c_p, margins.m_p)?;
        let (r, gr) = regularization(p);
        let total = compose_total(&margins, c.loss, t.loss, pw.loss, r);
        let d = batch.dim();
        let mut grad: Vec<f64> = gr.iter().map(|g| margins.beta * g).collect();
        for (s, tape) in tapes.into_iter().enumerate() {
            let row: Vec<f64> = (s * d..(s + 1) * d)
                .map(|k| {
                    margins.alpha * c.grad.data()[k]
                        + t.grad.data()[k]
                        + margins.lambda * pw.grad.data()[k]
                })
                .collect();
            let (gp, _) = work.backward(tape, &Tensor::from_vec(row))?;
            grad.iter_mut().zip(gp).for_each(|(a, b)| *a += b);
        }
        Ok((total, grad, vec![c.active, t.active, pw.active]))
    });
    Ok((x0, f))
}

/// Worst relative error of `term` over `config.instances` random instances.
pub fn check_term(term: Term, config: &CheckConfig) -> Result<TermCheck> {
    if !(config.eps > 0.0 && config.eps.is_finite()) {
        return Err(Error::Usage(format!(
            "finite-difference step must be positive, got {}",
            config.eps
        )));
    }
    if config.instances < 1 {
        return Err(Error::Usage("need at least one instance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(term as u64);
    let mut done = 0;
    let mut redrawn = 0;
    let mut worst: f64 = 0.0;
    let mut at = (0.0, 0.0);
    while done < config.instances {
        if redrawn > 10 * config.instances {
            return Err(Error::Numerical(format!(
                "{}: too many instances on hinge kinks",
                term.name()
            )));
        }
        let err = match term {
            Term::Regularization => {
                let len = rng.random_range(1..=config.max_dim.max(1));
                let p = normal(&mut rng, len, 1.0);
                let f: Objective<'_> = Box::new(|x| {
                    let (r, g) = regularization(x);
                    Ok((r, g, Vec::new()))
                });
                check_objective(&p, &f, config.eps)?
            }
            Term::Network => {
                let net = random_network(&mut rng)?;
                let (x0, f) = network_objective(&net, &mut rng)?;
                check_objective(&x0, &f, config.eps)?
            }
            _ => {
                let batch = random_batch(&mut rng, config.max_dim);
                let f = embedding_objective(term, &batch, &mut rng);
                check_objective(batch.embeddings().data(), &f, config.eps)?
            }
        };
        match err {
            Some(r) => {
                if r.max_rel_error >= worst {
                    worst = r.max_rel_error;
                    at = (r.analytic, r.numeric);
                }
                done += 1;
            }
            None => redrawn += 1,
        }
    }
    Ok(TermCheck {
        term,
        instances: done,
        redrawn,
        max_rel_error: worst,
        worst: at,
    })
}
