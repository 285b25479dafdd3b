//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use s2s_core::data::SyntheticSpec;
use s2s_core::eval::{CmcConfig, GalleryMode, MultiQuery, Protocol};
use s2s_core::experiment::DeskConfig;
use s2s_core::loss::{DirectionWeights, PhiUpdateMode};
use s2s_core::mining::MiningConfig;
use s2s_core::nn::{InitConfig, Padding, ScaleConfig};
use s2s_core::train::{StepSchedule, TrainConfig, WeightUpdateScope};

use crate::error::CliError;

/// Every recognised key with a one-line description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    (
        "seed",
        "seed for data generation, initialisation, mining and evaluation",
    ),
    ("learning_rate", "initial step size omega"),
    ("iterations", "maximum iterations H"),
    ("momentum", "parameter momentum in [0, 1)"),
    ("schedule", "step schedule: constant | inverse-decay"),
    (
        "snapshot_every",
        "write a model snapshot every n iterations (0 = off)",
    ),
    ("m_c", "class-identity margin"),
    ("m_t", "triplet margin"),
    ("c_p", "pairwise half-width"),
    ("m_p", "pairwise margin"),
    ("alpha", "class-identity weight"),
    ("beta", "weight decay"),
    ("lambda", "pairwise weight"),
    ("mu", "initial anchor-positive direction weight"),
    ("nu", "initial positive-negative direction weight"),
    ("eta", "direction-weight updating rate"),
    ("weight_momentum", "momentum of the direction-weight update"),
    ("phi_mode", "direction-weight derivative: paper | analytic"),
    (
        "weight_scope",
        "direction-weight update: per-batch | per-set-unit",
    ),
    ("pooled_centers", "one class center over both views"),
    ("frozen_centers", "treat class centers as constants"),
    ("ids_per_batch", "identities per mini-batch"),
    (
        "samples_per_view",
        "images per identity and view in a mini-batch",
    ),
    ("triplets_per_anchor", "random triplets per anchor"),
    ("k_marginal", "marginal pairs per identity and rule"),
    (
        "symmetric_views",
        "also mine with view B as the anchor view",
    ),
    ("net.global_filters", "global convolution filters"),
    ("net.global_kernel", "global convolution kernel"),
    ("net.global_pool_kernel", "global pooling window"),
    ("net.global_pool_stride", "global pooling stride"),
    ("net.local_filters", "filters per stripe convolution"),
    ("net.local_kernel", "stripe convolution kernel (odd)"),
    ("net.local_pool_kernel", "stripe pooling window"),
    ("net.local_pool_stride", "stripe pooling stride"),
    ("net.stripes", "horizontal stripes"),
    ("net.fc_dim", "fully-connected width"),
    ("net.padding", "first-convolution padding: same | valid"),
    (
        "init.conv_std",
        "std of convolution weights at initialisation",
    ),
    (
        "init.fc_std",
        "std of fully-connected weights at initialisation",
    ),
    ("synth.identities", "synthetic identities"),
    ("synth.per_view", "synthetic images per identity and view"),
    ("synth.shape", "synthetic sample shape, e.g. 1x24x8"),
    (
        "synth.latent_dim",
        "dimension of the center subspace (0 = full)",
    ),
    (
        "synth.smoothing",
        "blur of the center subspace basis, in pixels",
    ),
    (
        "synth.separation",
        "minimum distance between identity centers",
    ),
    ("synth.noise", "within-identity noise std"),
    ("synth.view_shift", "distance between the two view offsets"),
    ("eval.protocol", "single | multi"),
    ("eval.aggregation", "multi-query pooling: mean | max"),
    ("eval.trials", "single-shot CMC trials"),
    (
        "eval.all_shot",
        "rank against every gallery image instead of one per identity",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub mu: f64,
    pub nu: f64,
    pub eta: f64,
    pub weight_momentum: f64,
    /// Network dimensions; the input extents come from the data.
    pub scale: ScaleConfig,
    pub init: InitConfig,
    pub synth: SyntheticSpec,
    pub protocol: Protocol,
    pub aggregation: MultiQuery,
    pub trials: usize,
    pub all_shot: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = DirectionWeights::paper();
        RunConfig {
            seed: 0,
            train: TrainConfig::default(),
            mu: w.mu(),
            nu: w.nu(),
            eta: w.eta,
            weight_momentum: w.momentum,
            scale: ScaleConfig::desk(),
            init: InitConfig::default(),
            synth: DeskConfig::standard(0).data,
            protocol: Protocol::Single,
            aggregation: MultiQuery::MeanEmbedding,
            trials: CmcConfig::default().trials,
            all_shot: false,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("invalid value {v:?} for {key}"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!(
            "invalid value {v:?} for {key}, expected true or false"
        )),
    }
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(n, _)| *n == v)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!(
                "invalid value {v:?} for {key}, expected {}",
                names.join(" | ")
            )
        })
}

fn name_of<T: PartialEq>(v: &T, options: &[(&'static str, T)]) -> &'static str {
    options
        .iter()
        .find(|(_, t)| t == v)
        .map(|(n, _)| *n)
        .unwrap_or("?")
}

const SCHEDULES: &[(&str, StepSchedule)] = &[
    ("constant", StepSchedule::Constant),
    ("inverse-decay", StepSchedule::InverseDecay),
];
const PHI_MODES: &[(&str, PhiUpdateMode)] = &[
    ("paper", PhiUpdateMode::PaperLiteral),
    ("analytic", PhiUpdateMode::Analytic),
];
const SCOPES: &[(&str, WeightUpdateScope)] = &[
    ("per-batch", WeightUpdateScope::PerBatch),
    ("per-set-unit", WeightUpdateScope::PerSetUnit),
];
const PADDINGS: &[(&str, Padding)] = &[("same", Padding::Same), ("valid", Padding::Valid)];
const PROTOCOLS: &[(&str, Protocol)] = &[("single", Protocol::Single), ("multi", Protocol::Multi)];
const AGGREGATIONS: &[(&str, MultiQuery)] = &[
    ("mean", MultiQuery::MeanEmbedding),
    ("max", MultiQuery::MaxDistance),
];

fn parse_shape(v: &str) -> Result<Vec<usize>, String> {
    v.split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| format!("invalid shape {v:?}, expected e.g. 1x24x8"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        let m = &mut t.margins;
        let s = &mut self.scale;
        let y = &mut self.synth;
        match key {
            "seed" => self.seed = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "iterations" => t.iterations = num(key, v)?,
            "momentum" => t.momentum = num(key, v)?,
            "schedule" => t.schedule = choice(key, v, SCHEDULES)?,
            "snapshot_every" => t.snapshot_every = num(key, v)?,
            "m_c" => m.m_c = num(key, v)?,
            "m_t" => m.m_t = num(key, v)?,
            "c_p" => m.c_p = num(key, v)?,
            "m_p" => m.m_p = num(key, v)?,
            "alpha" => m.alpha = num(key, v)?,
            "beta" => m.beta = num(key, v)?,
            "lambda" => m.lambda = num(key, v)?,
            "mu" => self.mu = num(key, v)?,
            "nu" => self.nu = num(key, v)?,
            "eta" => self.eta = num(key, v)?,
            "weight_momentum" => self.weight_momentum = num(key, v)?,
            "phi_mode" => t.phi_mode = choice(key, v, PHI_MODES)?,
            "weight_scope" => t.weight_scope = choice(key, v, SCOPES)?,
            "pooled_centers" => t.centers.pooled_views = flag(key, v)?,
            "frozen_centers" => t.centers.frozen_centers = flag(key, v)?,
            "ids_per_batch" => t.mining.ids_per_batch = num(key, v)?,
            "samples_per_view" => t.mining.samples_per_view = num(key, v)?,
            "triplets_per_anchor" => t.mining.triplets_per_anchor = num(key, v)?,
            "k_marginal" => t.mining.k_marginal = num(key, v)?,
            "symmetric_views" => t.mining.symmetric_views = flag(key, v)?,
            "net.global_filters" => s.global_filters = num(key, v)?,
            "net.global_kernel" => s.global_kernel = num(key, v)?,
            "net.global_pool_kernel" => s.global_pool_kernel = num(key, v)?,
            "net.global_pool_stride" => s.global_pool_stride = num(key, v)?,
            "net.local_filters" => s.local_filters = num(key, v)?,
            "net.local_kernel" => s.local_kernel = num(key, v)?,
            "net.local_pool_kernel" => s.local_pool_kernel = num(key, v)?,
            "net.local_pool_stride" => s.local_pool_stride = num(key, v)?,
            "net.stripes" => s.stripes = num(key, v)?,
            "net.fc_dim" => s.fc_dim = num(key, v)?,
            "net.padding" => s.padding = choice(key, v, PADDINGS)?,
            "init.conv_std" => self.init.conv_std = num(key, v)?,
            "init.fc_std" => self.init.fc_std = num(key, v)?,
            "synth.identities" => y.identities = num(key, v)?,
            "synth.per_view" => y.per_view = num(key, v)?,
            "synth.shape" => y.shape = parse_shape(v)?,
            "synth.latent_dim" => {
                let k: usize = num(key, v)?;
                y.latent_dim = (k > 0).then_some(k);
            }
            "synth.smoothing" => y.smoothing = num(key, v)?,
            "synth.separation" => y.separation = num(key, v)?,
            "synth.noise" => y.noise = num(key, v)?,
            "synth.view_shift" => y.view_shift = num(key, v)?,
            "eval.protocol" => self.protocol = choice(key, v, PROTOCOLS)?,
            "eval.aggregation" => self.aggregation = choice(key, v, AGGREGATIONS)?,
            "eval.trials" => self.trials = num(key, v)?,
            "eval.all_shot" => self.all_shot = flag(key, v)?,
            _ => return Err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// Current value of `key` in the same syntax [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let m = &t.margins;
        let s = &self.scale;
        let y = &self.synth;
        let v = match key {
            "seed" => self.seed.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "iterations" => t.iterations.to_string(),
            "momentum" => t.momentum.to_string(),
            "schedule" => name_of(&t.schedule, SCHEDULES).into(),
            "snapshot_every" => t.snapshot_every.to_string(),
            "m_c" => m.m_c.to_string(),
            "m_t" => m.m_t.to_string(),
            "c_p" => m.c_p.to_string(),
            "m_p" => m.m_p.to_string(),
            "alpha" => m.alpha.to_string(),
            "beta" => m.beta.to_string(),
            "lambda" => m.lambda.to_string(),
            "mu" => self.mu.to_string(),
            "nu" => self.nu.to_string(),
            "eta" => self.eta.to_string(),
            "weight_momentum" => self.weight_momentum.to_string(),
            "phi_mode" => name_of(&t.phi_mode, PHI_MODES).into(),
            "weight_scope" => name_of(&t.weight_scope, SCOPES).into(),
            "pooled_centers" => t.centers.pooled_views.to_string(),
            "frozen_centers" => t.centers.frozen_centers.to_string(),
            "ids_per_batch" => t.mining.ids_per_batch.to_string(),
            "samples_per_view" => t.mining.samples_per_view.to_string(),
            "triplets_per_anchor" => t.mining.triplets_per_anchor.to_string(),
            "k_marginal" => t.mining.k_marginal.to_string(),
            "symmetric_views" => t.mining.symmetric_views.to_string(),
            "net.global_filters" => s.global_filters.to_string(),
            "net.global_kernel" => s.global_kernel.to_string(),
            "net.global_pool_kernel" => s.global_pool_kernel.to_string(),
            "net.global_pool_stride" => s.global_pool_stride.to_string(),
            "net.local_filters" => s.local_filters.to_string(),
            "net.local_kernel" => s.local_kernel.to_string(),
            "net.local_pool_kernel" => s.local_pool_kernel.to_string(),
            "net.local_pool_stride" => s.local_pool_stride.to_string(),
            "net.stripes" => s.stripes.to_string(),
            "net.fc_dim" => s.fc_dim.to_string(),
            "net.padding" => name_of(&s.padding, PADDINGS).into(),
            "init.conv_std" => self.init.conv_std.to_string(),
            "init.fc_std" => self.init.fc_std.to_string(),
            "synth.identities" => y.identities.to_string(),
            "synth.per_view" => y.per_view.to_string(),
            "synth.shape" => y
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x"),
            "synth.latent_dim" => y.latent_dim.unwrap_or(0).to_string(),
            "synth.smoothing" => y.smoothing.to_string(),
            "synth.separation" => y.separation.to_string(),
            "synth.noise" => y.noise.to_string(),
            "synth.view_shift" => y.view_shift.to_string(),
            "eval.protocol" => name_of(&self.protocol, PROTOCOLS).into(),
            "eval.aggregation" => name_of(&self.aggregation, AGGREGATIONS).into(),
            "eval.trials" => self.trials.to_string(),
            "eval.all_shot" => self.all_shot.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{origin}:{}: expected `key = value`", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn weights(&self) -> Result<DirectionWeights, CliError> {
        Ok(DirectionWeights::from_mu_nu(self.mu, self.nu, self.eta)?
            .with_momentum(self.weight_momentum)?)
    }

    /// The training configuration with every seed following [`RunConfig::seed`].
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut t = self.train.clone();
        t.weights = self.weights()?;
        t.seed = self.seed;
        t.mining = MiningConfig {
            seed: self.seed,
            ..t.mining
        };
        t.validate()?;
        Ok(t)
    }

    pub fn synth_spec(&self) -> Result<SyntheticSpec, CliError> {
        let s = SyntheticSpec {
            seed: self.seed,
            ..self.synth.clone()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn cmc_config(&self) -> Result<CmcConfig, CliError> {
        if self.trials < 1 {
            return Err(CliError::Config("eval.trials must be >= 1".into()));
        }
        Ok(CmcConfig {
            trials: self.trials,
            gallery: if self.all_shot {
                GalleryMode::AllShot
            } else {
                GalleryMode::SingleShot
            },
        })
    }

    /// Re-checks every module-level invariant.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config()?;
        self.synth_spec()?;
        self.cmc_config()?;
        for (key, v) in [
            ("init.conv_std", self.init.conv_std),
            ("init.fc_std", self.init.fc_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::Config(format!(
                    "{key} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// The key table with current values, one per line.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (k, help) in KEYS {
            let v = self.get(k).expect("every listed key has a value");
            writeln!(s, "  {k:<24} = {v:<12} {help}").expect("write to string");
        }
        s
    }
}
