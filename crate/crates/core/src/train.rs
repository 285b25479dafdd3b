//! The S2S gradient descent loop.
//!
//! Each iteration: forward the mini-batch, mine triplets and marginal pairs,
//! update the direction weights, compute the loss gradients, back-propagate
//! sample by sample and take one parameter step.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{
    self, accumulate_symmetric_triplets, active_triplets, class_identity_loss,
    marginal_pairwise_loss, update_direction_weights, CenterOptions, DirectionWeights, LossOptions,
    LossReport, MarginConfig, PhiUpdateMode, SetBatch, TermOutput, TripletUnit,
};
use crate::mining::{build_minibatch, sample_triplets, select_marginal_pairs, MiningConfig};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StepSchedule {
    /// `tau_h = omega`.
    #[default]
    Constant,
    /// `tau_h = omega / (1 + h / H)`.
    InverseDecay,
}

/// When the direction weights move within an iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightUpdateScope {
    /// Once per mini-batch, before the gradients.
    #[default]
    PerBatch,
    /// Experimental: once per anchor identity's triplet units, each unit's
    /// gradient using the weights current at that point.
    PerSetUnit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Initial step size `omega`.
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum: f64,
    pub margins: MarginConfig,
    pub weights: DirectionWeights,
    pub phi_mode: PhiUpdateMode,
    pub centers: CenterOptions,
    pub mining: MiningConfig,
    pub schedule: StepSchedule,
    pub weight_scope: WeightUpdateScope,
    /// Snapshot period in iterations for [`train_with_observer`] callers; 0
    /// disables snapshots.
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            iterations: 1000,
            momentum: 0.0,
            margins: MarginConfig::default(),
            weights: DirectionWeights::paper(),
            phi_mode: PhiUpdateMode::default(),
            centers: CenterOptions::default(),
            mining: MiningConfig::default(),
            schedule: StepSchedule::default(),
            weight_scope: WeightUpdateScope::default(),
            snapshot_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(
                "training",
                format!(
                    "learning rate must be finite and >= 0, got {}",
                    self.learning_rate
                ),
            ));
        }
        if self.iterations < 1 {
            return Err(Error::config("training", "iterations must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "training",
                format!("momentum must be in [0, 1), got {}", self.momentum),
            ));
        }
        self.margins.validate()?;
        self.weights.validate()?;
        self.mining.validate()
    }

    /// Step size of 1-based iteration `h`.
    pub fn step_size(&self, h: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.learning_rate,
            StepSchedule::InverseDecay => {
                self.learning_rate / (1.0 + h as f64 / self.iterations as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub total: f64,
    pub l_c: f64,
    pub l_t: f64,
    pub l_p: f64,
    pub reg: f64,
    pub mu: f64,
    pub nu: f64,
    pub active_t: usize,
    pub active_p: usize,
    pub step: f64,
    /// Seconds since training started; not part of the CSV.
    pub elapsed: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "iter,total,l_c,l_t,l_p,reg,mu,nu,active_t,active_p,step";

    /// Floats use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?}",
                r.iter,
                r.total,
                r.l_c,
                r.l_t,
                r.l_p,
                r.reg,
                r.mu,
                r.nu,
                r.active_t,
                r.active_p,
                r.step
            )
            .expect("write to string");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Momentum buffer of the parameter step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
}

/// `v' = m v - tau g`, `params += v'`. With `m = 0` this is exactly
/// `params -= tau g`.
pub fn step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    tau: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Usage(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient for parameter {i}"
        )));
    }
    if state.velocity.len() != params.len() {
        state.velocity = vec![0.0; params.len()];
    }
    if momentum == 0.0 {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
            *v = -tau * g;
            *p -= tau * g;
        }
    } else {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
            *v = momentum * *v - tau * g;
            *p += *v;
        }
    }
    Ok(())
}

/// Loss and embedding gradients of one batch. With the per-unit scope the
/// direction weights move once per anchor identity while the triplet term is
/// accumulated; otherwise they are taken as given.
fn batch_loss(
    batch: &SetBatch,
    triplets: &[TripletUnit],
    pairs: &[loss::MarginalPair],
    params: &[f64],
    config: &TrainConfig,
    weights: &mut DirectionWeights,
) -> Result<LossReport> {
    let opts = LossOptions {
        centers: config.centers,
        phi_mode: config.phi_mode,
    };
    match config.weight_scope {
        WeightUpdateScope::PerBatch => loss::total_loss(
            batch,
            triplets,
            pairs,
            params,
            &config.margins,
            weights,
            &opts,
        ),
        WeightUpdateScope::PerSetUnit => {
            let m = &config.margins;
            let c: TermOutput = class_identity_loss(batch, m.m_c, config.centers);
            let p = marginal_pairwise_loss(batch, pairs, m.c_p, m.m_p)?;
            let mut grad = batch.zeros_like();
            let mut sum = 0.0;
            let mut active = 0;
            let scale = if triplets.is_empty() {
                0.0
            } else {
                1.0 / triplets.len() as f64
            };
            for i in 0..batch.num_identities() {
                let units: Vec<TripletUnit> = triplets
                    .iter()
                    .filter(|t| t.anchor.identity == i)
                    .copied()
                    .collect();
                if units.is_empty() {
                    continue;
                }
                let act = active_triplets(batch, &units, weights, m.m_t);
                *weights = update_direction_weights(weights, &act, config.phi_mode);
                let (s, a) =
                    accumulate_symmetric_triplets(batch, &units, weights, m.m_t, scale, &mut grad)?;
                sum += s;
                active += a;
            }
            let t = TermOutput {
                loss: sum * scale,
                grad,
                active,
                normalizer: triplets.len(),
            };
            let (r, _) = loss::regularization(params);
            Ok(loss::assemble(
                m, weights, &opts, batch, triplets, c, t, p, r,
            ))
        }
    }
}

fn check_finite(h: usize, report: &LossReport) -> Result<()> {
    let terms = [
        ("class-identity", report.class_identity),
        ("triplet", report.triplet),
        ("pairwise", report.pairwise),
        ("regularization", report.regularization),
        ("total", report.total),
    ];
    if let Some((name, v)) = terms.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "iteration {h}: {name} loss is {v}"
        )));
    }
    if !report.grad_embeddings.is_finite() {
        return Err(Error::Numerical(format!(
            "iteration {h}: non-finite embedding gradient"
        )));
    }
    Ok(())
}

/// Runs the full loop; `observer` sees the network after every completed
/// iteration and may stop training by returning an error.
pub fn train_with_observer<F>(
    dataset: &Dataset,
    mut net: Network,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(Network, TrainHistory)>
where
    F: FnMut(&Network, &IterationRecord) -> Result<()>,
{
    config.validate()?;
    if dataset.sample_shape() != net.input_shape() {
        return Err(Error::Data(format!(
            "samples have shape {:?} but the network expects {:?}",
            dataset.sample_shape(),
            net.input_shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = config.weights;
    let mut state = OptimizerState::default();
    let mut history = TrainHistory::default();
    let start = Instant::now();
    let n = config.mining.ids_per_batch;
    let m = config.mining.samples_per_view;

    for h in 1..=config.iterations {
        let mb = build_minibatch(dataset, &config.mining, &mut rng)?;
        let order = mb.record_order();
        let forwards: Result<Vec<(Tensor, crate::nn::Tape)>> = order
            .par_iter()
            .map(|&k| net.forward(&dataset.record(k).sample))
            .collect();
        let forwards = forwards?;
        let d = net.embedding_dim();
        let mut emb = Vec::with_capacity(order.len() * d);
        for (e, _) in &forwards {
            emb.extend_from_slice(e.data());
        }
        let batch = SetBatch::new(Tensor::new(vec![n, 2, m, d], emb)?, mb.identities.clone())
            .map_err(|e| Error::Numerical(format!("iteration {h}: {e}")))?;

        let triplets = sample_triplets(&batch, &config.mining, &mut rng)?;
        let (pairs, _) = select_marginal_pairs(&batch, &config.mining);

        if config.weight_scope == WeightUpdateScope::PerBatch {
            let act = active_triplets(&batch, &triplets, &weights, config.margins.m_t);
            weights = update_direction_weights(&weights, &act, config.phi_mode);
        }
        let report = batch_loss(
            &batch,
            &triplets,
            &pairs,
            net.params(),
            config,
            &mut weights,
        )?;
        check_finite(h, &report)?;

        let g = report.grad_embeddings.data();
        let per_sample: Result<Vec<Option<Vec<f64>>>> = forwards
            .into_par_iter()
            .enumerate()
            .map(|(s, (_, tape))| {
                let row = &g[s * d..(s + 1) * d];
                if row.iter().all(|&v| v == 0.0) {
                    return Ok(None);
                }
                let (gp, _) = net.backward(tape, &Tensor::from_vec(row.to_vec()))?;
                Ok(Some(gp))
            })
            .collect();
        // Identity-major reduction keeps the sum order fixed.
        let mut grads: Vec<f64> = net
            .params()
            .iter()
            .map(|p| 2.0 * config.margins.beta * p)
            .collect();
        for gp in per_sample?.into_iter().flatten() {
            for (a, b) in grads.iter_mut().zip(gp) {
                *a += b;
            }
        }
        let tau = config.step_size(h);
        step(net.params_mut(), &grads, &mut state, tau, config.momentum)
            .map_err(|e| Error::Numerical(format!("iteration {h}: {e}")))?;

        let (mu, nu) = weights.mu_nu();
        let record = IterationRecord {
            iter: h,
            total: report.total,
            l_c: report.class_identity,
            l_t: report.triplet,
            l_p: report.pairwise,
            reg: report.regularization,
            mu,
            nu,
            active_t: report.active_triplets,
            active_p: report.active_pairs,
            step: tau,
            elapsed: start.elapsed().as_secs_f64(),
        };
        observer(&net, &record)?;
        history.records.push(record);
    }
    Ok((net, history))
}

pub fn train(
    dataset: &Dataset,
    net: Network,
    config: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    train_with_observer(dataset, net, config, |_, _| Ok(()))
}
