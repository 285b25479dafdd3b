//! Minimal tensor/layer engine with manual forward and backward passes, and a
//! builder for the three-part (global, local, fusion) embedding network.

mod gradcheck;
mod layer;
mod model_io;
mod network;

pub use gradcheck::{check_gradient, gradient_check, GradCheckReport};
pub use layer::LayerKind;
pub use model_io::{
    load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use network::{Architecture, LayerSpec, Network, NetworkBuilder, NodeId, Tape, TapeEntry};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Padding applied by the global and first local convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `kernel / 2` zero padding on each side.
    Same,
    /// No padding.
    Valid,
}

impl Padding {
    fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Same => kernel / 2,
            Padding::Valid => 0,
        }
    }
}

/// Dimensions of a part-based network.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub global_filters: usize,
    pub global_kernel: usize,
    pub global_pool_kernel: usize,
    pub global_pool_stride: usize,
    pub local_filters: usize,
    pub local_kernel: usize,
    pub local_pool_kernel: usize,
    pub local_pool_stride: usize,
    pub stripes: usize,
    pub fc_dim: usize,
    pub padding: Padding,
}

impl ScaleConfig {
    /// 230x80x3 input, 64 global 7x7 filters, 3x3/3 pooling, four stripes of
    /// 32-filter 3x3 convolutions, 100-wide fully-connected layers.
    pub fn paper() -> Self {
        ScaleConfig {
            input_height: 230,
            input_width: 80,
            input_channels: 3,
            global_filters: 64,
            global_kernel: 7,
            global_pool_kernel: 3,
            global_pool_stride: 3,
            local_filters: 32,
            local_kernel: 3,
            local_pool_kernel: 3,
            local_pool_stride: 1,
            stripes: 4,
            fc_dim: 100,
            padding: Padding::Same,
        }
    }

    /// 24x8x1 input with 8-wide fully-connected layers; 64-dim embedding.
    pub fn desk() -> Self {
        ScaleConfig {
            input_height: 24,
            input_width: 8,
            input_channels: 1,
            global_filters: 8,
            global_kernel: 3,
            global_pool_kernel: 2,
            global_pool_stride: 2,
            local_filters: 8,
            local_kernel: 3,
            local_pool_kernel: 3,
            local_pool_stride: 1,
            stripes: 4,
            fc_dim: 8,
            padding: Padding::Same,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.input_channels, self.input_height, self.input_width]
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.stripes * self.fc_dim
    }
}

/// Builds the part-based network:
///
/// ```text
/// conv -> pool -> relu -> split into stripes
///   per stripe: conv1 -> conv2, conv1 + conv2 -> pool -> relu -> fc1 -> relu -> fc2
/// concat(fc1 of every stripe) -> fc(stripes * fc_dim)
/// embedding = concat(fusion fc, fc2 of every stripe)
/// ```
///
/// The second local convolution always uses same padding so its output can
/// be summed with the first. Stripe branches own independent parameters.
pub fn build_part_network(cfg: &ScaleConfig) -> Result<Network> {
    if cfg.stripes == 0 || cfg.fc_dim == 0 {
        return Err(Error::config(
            "part network",
            "stripe count and fc dimension must be positive",
        ));
    }
    if cfg.local_kernel.is_multiple_of(2) {
        return Err(Error::config(
            "layer 'local0.conv2'",
            format!(
                "local kernel {} must be odd to preserve shape for the skip sum",
                cfg.local_kernel
            ),
        ));
    }
    let (mut b, x) = NetworkBuilder::new(cfg.input_shape())?;
    let g = b.conv2d(
        "global.conv",
        x,
        cfg.global_filters,
        cfg.global_kernel,
        1,
        cfg.padding.amount(cfg.global_kernel),
    )?;
    let g = b.maxpool2d(
        "global.pool",
        g,
        cfg.global_pool_kernel,
        cfg.global_pool_stride,
    )?;
    let g = b.relu("global.relu", g);
    let pooled_h = b.shape(g)[1];
    if pooled_h % cfg.stripes != 0 {
        return Err(Error::config(
            "layer 'local0.split'",
            format!(
                "feature map height after global pooling is {pooled_h}; it must be divisible by the stripe count {}",
                cfg.stripes
            ),
        ));
    }

    let mut first_fc = Vec::with_capacity(cfg.stripes);
    let mut second_fc = Vec::with_capacity(cfg.stripes);
    for s in 0..cfg.stripes {
        let part = b.stripe_split(&format!("local{s}.split"), g, cfg.stripes, s)?;
        let c1 = b.conv2d(
            &format!("local{s}.conv1"),
            part,
            cfg.local_filters,
            cfg.local_kernel,
            1,
            cfg.padding.amount(cfg.local_kernel),
        )?;
        let c2 = b.conv2d(
            &format!("local{s}.conv2"),
            c1,
            cfg.local_filters,
            cfg.local_kernel,
            1,
            cfg.local_kernel / 2,
        )?;
        let sum = b.eltwise_sum(&format!("local{s}.sum"), &[c1, c2])?;
        let pooled = b.maxpool2d(
            &format!("local{s}.pool"),
            sum,
            cfg.local_pool_kernel,
            cfg.local_pool_stride,
        )?;
        let act = b.relu(&format!("local{s}.relu"), pooled);
        let fc1 = b.fully_connected(&format!("fusion{s}.fc1"), act, cfg.fc_dim)?;
        let mid = b.relu(&format!("fusion{s}.relu"), fc1);
        let fc2 = b.fully_connected(&format!("fusion{s}.fc2"), mid, cfg.fc_dim)?;
        first_fc.push(fc1);
        second_fc.push(fc2);
    }
    let joined = b.concat("fusion.concat", &first_fc, 0)?;
    let fused = b.fully_connected("fusion.fc", joined, cfg.stripes * cfg.fc_dim)?;
    let mut parts = vec![fused];
    parts.extend(second_fc);
    let out = b.concat("embedding", &parts, 0)?;
    Ok(b.finish(out)
        .with_architecture(Architecture::Part(cfg.clone())))
}

/// A single fully-connected layer on a flattened input.
pub fn build_linear(input_shape: Vec<usize>, out_dim: usize) -> Result<Network> {
    let (mut b, x) = NetworkBuilder::new(input_shape)?;
    let y = b.fully_connected("fc", x, out_dim)?;
    Ok(b.finish(y))
}

/// Standard deviations of the zero-mean Gaussian weight initialisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub conv_std: f64,
    pub fc_std: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            conv_std: 0.01,
            fc_std: 0.001,
        }
    }
}

/// Gaussian weights (std 0.01 for convolutions, 0.001 for fully-connected
/// layers), zero biases. Deterministic for a fixed seed.
pub fn init_params(net: Network, seed: u64) -> Network {
    init_params_with(net, seed, &InitConfig::default())
}

pub fn init_params_with(mut net: Network, seed: u64, cfg: &InitConfig) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; net.num_params()];
    for spec in net.layers() {
        let std = match spec.kind {
            LayerKind::Conv2d { .. } => cfg.conv_std,
            LayerKind::FullyConnected { .. } => cfg.fc_std,
            _ => continue,
        };
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        for w in &mut params[spec.weight_range()] {
            *w = normal.sample(&mut rng);
        }
    }
    net.set_params(params).expect("length matches");
    net
}
