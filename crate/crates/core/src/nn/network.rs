use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::layer::{self, ConvGeom, LayerKind};
use super::ScaleConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// One node of the layer graph.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Always false for the layers built here: every layer owns its slice.
    pub shares_parameters: bool,
    weights: Range<usize>,
    bias: Range<usize>,
}

impl LayerSpec {
    pub fn weight_range(&self) -> Range<usize> {
        self.weights.clone()
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias.clone()
    }
}

/// How a network was constructed; recorded so a model file can rebuild it.
#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Part(ScaleConfig),
    Graph,
}

/// A layer DAG with a flat parameter vector.
///
/// Nodes are stored in topological order; each parameterised node owns a
/// contiguous `weights ++ bias` slice of `params`, in node order.
#[derive(Debug)]
pub struct Network {
    layers: Vec<LayerSpec>,
    output: usize,
    params: Vec<f64>,
    architecture: Architecture,
    /// Per-layer convolution tap tables; empty for other layers.
    taps: Arc<Vec<Vec<usize>>>,
    uid: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            output: self.output,
            params: self.params.clone(),
            architecture: self.architecture.clone(),
            taps: Arc::clone(&self.taps),
            uid: fresh_uid(),
            version: 0,
        }
    }
}

/// Cached forward state of one executed layer.
#[derive(Clone, Debug)]
pub struct TapeEntry {
    pub layer: usize,
    pub output: Tensor,
    argmax: Option<Vec<usize>>,
}

/// Record of a forward pass, consumed by [`Network::backward`].
#[derive(Debug)]
pub struct Tape {
    net_uid: u64,
    net_version: u64,
    entries: Vec<TapeEntry>,
}

impl Tape {
    pub fn entries(&self) -> &[TapeEntry] {
        &self.entries
    }

    pub fn output_of(&self, layer: usize) -> &Tensor {
        &self.entries[layer].output
    }
}

impl Network {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "parameter vector has {} entries, network needs {}",
                params.len(),
                self.params.len()
            )));
        }
        self.version += 1;
        self.params = params;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].out_shape
    }

    pub fn output_layer(&self) -> usize {
        self.output
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.output].out_shape.iter().product()
    }

    pub(crate) fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    /// Runs the network on one sample, returning the flattened embedding and
    /// the tape needed for [`Network::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        if input.shape() != self.input_shape() {
            return Err(Error::config(
                format!("layer '{}'", self.layers[0].name),
                format!(
                    "input shape {:?} does not match expected {:?}",
                    input.shape(),
                    self.input_shape()
                ),
            ));
        }
        let mut entries: Vec<TapeEntry> = Vec::with_capacity(self.layers.len());
        for (idx, spec) in self.layers.iter().enumerate() {
            let (data, argmax) = match &spec.kind {
                LayerKind::Input { .. } => (input.data().to_vec(), None),
                LayerKind::Conv2d { .. } => {
                    let x = &entries[spec.inputs[0]].output;
                    let g = self.conv_geom(spec, x);
                    let out = layer::conv2d_forward(
                        &g,
                        &self.taps[idx],
                        x.data(),
                        &self.params[spec.weights.clone()],
                        &self.params[spec.bias.clone()],
                    );
                    (out, None)
                }
                LayerKind::MaxPool2d { kernel, stride } => {
                    let x = &entries[spec.inputs[0]].output;
                    let chw = x.chw().expect("pool input checked at build time");
                    let out_hw = (spec.out_shape[1], spec.out_shape[2]);
                    let (out, arg) =
                        layer::maxpool_forward(x.data(), chw, out_hw, *kernel, *stride);
                    (out, Some(arg))
                }
                LayerKind::Relu => {
                    let x = &entries[spec.inputs[0]].output;
                    (x.data().iter().map(|&v| v.max(0.0)).collect(), None)
                }
                LayerKind::FullyConnected { .. } => {
                    let x = &entries[spec.inputs[0]].output;
                    let out = layer::fc_forward(
                        x.data(),
                        &self.params[spec.weights.clone()],
                        &self.params[spec.bias.clone()],
                    );
                    (out, None)
                }
                LayerKind::EltwiseSum => {
                    let mut acc = entries[spec.inputs[0]].output.data().to_vec();
                    for &i in &spec.inputs[1..] {
                        for (a, b) in acc.iter_mut().zip(entries[i].output.data()) {
                            *a += b;
                        }
                    }
                    (acc, None)
                }
                LayerKind::StripeSplit { stripes, index } => {
                    let x = &entries[spec.inputs[0]].output;
                    let chw = x.chw().expect("stripe input checked at build time");
                    (layer::stripe_forward(x.data(), chw, *stripes, *index), None)
                }
                LayerKind::Concat { axis } => {
                    let parts: Vec<&Tensor> =
                        spec.inputs.iter().map(|&i| &entries[i].output).collect();
                    (layer::concat_forward(&parts, *axis, &spec.out_shape), None)
                }
            };
            let output =
                Tensor::new(spec.out_shape.clone(), data).expect("shapes inferred at build time");
            entries.push(TapeEntry {
                layer: idx,
                output,
                argmax,
            });
        }
        let embedding = Tensor::from_vec(entries[self.output].output.data().to_vec());
        Ok((
            embedding,
            Tape {
                net_uid: self.uid,
                net_version: self.version,
                entries,
            },
        ))
    }

    /// Forward pass without keeping the tape.
    pub fn embed(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input).map(|(e, _)| e)
    }

    /// Back-propagates `grad_embedding` through the recorded pass.
    ///
    /// Returns the gradient with respect to every parameter (same layout as
    /// [`Network::params`]) and with respect to the input.
    pub fn backward(&self, tape: Tape, grad_embedding: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        if tape.net_uid != self.uid
            || tape.net_version != self.version
            || tape.entries.len() != self.layers.len()
        {
            return Err(Error::Usage(
                "tape was recorded on a different network or before a parameter update".into(),
            ));
        }
        if grad_embedding.len() != self.embedding_dim() {
            return Err(Error::Usage(format!(
                "embedding gradient has {} entries, embedding has {}",
                grad_embedding.len(),
                self.embedding_dim()
            )));
        }
        let mut grad_params = vec![0.0; self.params.len()];
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.layers.len()];
        grads[self.output] = Some(grad_embedding.data().to_vec());

        for idx in (0..self.layers.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let spec = &self.layers[idx];
            let input_grads: Vec<Vec<f64>> = match &spec.kind {
                LayerKind::Input { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                LayerKind::Conv2d { .. } => {
                    let x = &tape.entries[spec.inputs[0]].output;
                    let geom = self.conv_geom(spec, x);
                    let (gw, gb) = split_grad(&mut grad_params, &spec.weights, &spec.bias);
                    vec![layer::conv2d_backward(
                        &geom,
                        &self.taps[idx],
                        x.data(),
                        &self.params[spec.weights.clone()],
                        &g,
                        gw,
                        gb,
                    )]
                }
                LayerKind::MaxPool2d { .. } => {
                    let x = &tape.entries[spec.inputs[0]].output;
                    let arg = tape.entries[idx]
                        .argmax
                        .as_ref()
                        .expect("pool records argmax");
                    vec![layer::maxpool_backward(&g, arg, x.len())]
                }
                LayerKind::Relu => {
                    let y = tape.entries[idx].output.data();
                    vec![g
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| if yi > 0.0 { gi } else { 0.0 })
                        .collect()]
                }
                LayerKind::FullyConnected { .. } => {
                    let x = &tape.entries[spec.inputs[0]].output;
                    let (gw, gb) = split_grad(&mut grad_params, &spec.weights, &spec.bias);
                    vec![layer::fc_backward(
                        x.data(),
                        &self.params[spec.weights.clone()],
                        &g,
                        gw,
                        gb,
                    )]
                }
                LayerKind::EltwiseSum => vec![g; spec.inputs.len()],
                LayerKind::StripeSplit { stripes, index } => {
                    let x = &tape.entries[spec.inputs[0]].output;
                    let chw = x.chw().expect("stripe input checked at build time");
                    vec![layer::stripe_backward(&g, chw, *stripes, *index)]
                }
                LayerKind::Concat { axis } => {
                    let shapes: Vec<Vec<usize>> = spec
                        .inputs
                        .iter()
                        .map(|&i| self.layers[i].out_shape.clone())
                        .collect();
                    layer::concat_backward(&g, *axis, &shapes)
                }
            };
            for (&src, gi) in spec.inputs.iter().zip(input_grads) {
                match &mut grads[src] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let grad_input = grads[0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.layers[0].out_shape.iter().product()]);
        let grad_input =
            Tensor::new(self.layers[0].out_shape.clone(), grad_input).expect("input shape");
        Ok((grad_params, grad_input))
    }

    fn conv_geom(&self, spec: &LayerSpec, x: &Tensor) -> ConvGeom {
        let LayerKind::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } = spec.kind
        else {
            unreachable!("conv_geom on non-conv layer")
        };
        let (in_c, in_h, in_w) = x.chw().expect("conv input checked at build time");
        ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c: filters,
            out_h: spec.out_shape[1],
            out_w: spec.out_shape[2],
            k: kernel,
            stride,
            pad: padding,
        }
    }
}

fn split_grad<'a>(
    grad: &'a mut [f64],
    w: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

/// Incremental construction of a [`Network`] with shape inference.
///
/// Every `add_*` call validates its hyperparameters against the shapes of its
/// inputs and fails with a configuration error naming the layer.
pub struct NetworkBuilder {
    layers: Vec<LayerSpec>,
    num_params: usize,
}

/// Handle to a node added to a [`NetworkBuilder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

impl NetworkBuilder {
    pub fn new(input_shape: Vec<usize>) -> Result<(Self, NodeId)> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::config(
                "layer 'input'",
                format!("invalid input shape {input_shape:?}"),
            ));
        }
        let mut b = NetworkBuilder {
            layers: Vec::new(),
            num_params: 0,
        };
        let id = b.push(
            "input",
            LayerKind::Input {
                shape: input_shape.clone(),
            },
            vec![],
            input_shape,
        );
        Ok((b, id))
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.layers[node.0].out_shape
    }

    fn push(
        &mut self,
        name: &str,
        kind: LayerKind,
        inputs: Vec<usize>,
        out_shape: Vec<usize>,
    ) -> NodeId {
        let (nw, nb) = kind.param_counts();
        let weights = self.num_params..self.num_params + nw;
        let bias = weights.end..weights.end + nb;
        self.num_params = bias.end;
        self.layers.push(LayerSpec {
            name: name.to_string(),
            kind,
            inputs,
            out_shape,
            shares_parameters: false,
            weights,
            bias,
        });
        NodeId(self.layers.len() - 1)
    }

    fn image_input(&self, name: &str, node: NodeId) -> Result<(usize, usize, usize)> {
        match *self.shape(node) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::config(
                format!("layer '{name}'"),
                format!("expects a [channels, height, width] input, got {s:?}"),
            )),
        }
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        input: NodeId,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (c, h, w) = self.image_input(name, input)?;
        if filters == 0 || kernel == 0 || stride == 0 {
            return Err(Error::config(
                format!("layer '{name}'"),
                "filter count, kernel size and stride must be positive",
            ));
        }
        let (Some(oh), Some(ow)) = (
            layer::conv_out_extent(h, kernel, stride, padding),
            layer::conv_out_extent(w, kernel, stride, padding),
        ) else {
            return Err(Error::config(
                format!("layer '{name}'"),
                format!("kernel {kernel} with padding {padding} does not fit input {h}x{w}"),
            ));
        };
        let kind = LayerKind::Conv2d {
            in_channels: c,
            filters,
            kernel,
            stride,
            padding,
        };
        Ok(self.push(name, kind, vec![input.0], vec![filters, oh, ow]))
    }

    pub fn maxpool2d(
        &mut self,
        name: &str,
        input: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let (c, h, w) = self.image_input(name, input)?;
        if kernel == 0 || stride == 0 {
            return Err(Error::config(
                format!("layer '{name}'"),
                "kernel size and stride must be positive",
            ));
        }
        let (Some(oh), Some(ow)) = (
            layer::pool_out_extent(h, kernel, stride),
            layer::pool_out_extent(w, kernel, stride),
        ) else {
            return Err(Error::config(
                format!("layer '{name}'"),
                format!("pool kernel {kernel} does not fit input {h}x{w}"),
            ));
        };
        Ok(self.push(
            name,
            LayerKind::MaxPool2d { kernel, stride },
            vec![input.0],
            vec![c, oh, ow],
        ))
    }

    pub fn relu(&mut self, name: &str, input: NodeId) -> NodeId {
        let shape = self.shape(input).to_vec();
        self.push(name, LayerKind::Relu, vec![input.0], shape)
    }

    pub fn fully_connected(&mut self, name: &str, input: NodeId, out_dim: usize) -> Result<NodeId> {
        if out_dim == 0 {
            return Err(Error::config(
                format!("layer '{name}'"),
                "output dimension must be positive",
            ));
        }
        let in_dim = self.shape(input).iter().product();
        Ok(self.push(
            name,
            LayerKind::FullyConnected { in_dim, out_dim },
            vec![input.0],
            vec![out_dim],
        ))
    }

    pub fn eltwise_sum(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let Some(first) = inputs.first() else {
            return Err(Error::config(
                format!("layer '{name}'"),
                "needs at least one input",
            ));
        };
        let shape = self.shape(*first).to_vec();
        if let Some(bad) = inputs.iter().find(|n| self.shape(**n) != shape.as_slice()) {
            return Err(Error::config(
                format!("layer '{name}'"),
                format!("input shapes differ: {:?} vs {:?}", shape, self.shape(*bad)),
            ));
        }
        Ok(self.push(
            name,
            LayerKind::EltwiseSum,
            inputs.iter().map(|n| n.0).collect(),
            shape,
        ))
    }

    pub fn stripe_split(
        &mut self,
        name: &str,
        input: NodeId,
        stripes: usize,
        index: usize,
    ) -> Result<NodeId> {
        let (c, h, w) = self.image_input(name, input)?;
        if stripes == 0 || h % stripes != 0 {
            return Err(Error::config(
                format!("layer '{name}'"),
                format!("input height {h} must be divisible by the stripe count {stripes}"),
            ));
        }
        if index >= stripes {
            return Err(Error::config(
                format!("layer '{name}'"),
                format!("stripe index {index} out of range for {stripes} stripes"),
            ));
        }
        Ok(self.push(
            name,
            LayerKind::StripeSplit { stripes, index },
            vec![input.0],
            vec![c, h / stripes, w],
        ))
    }

    pub fn concat(&mut self, name: &str, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let Some(first) = inputs.first() else {
            return Err(Error::config(
                format!("layer '{name}'"),
                "needs at least one input",
            ));
        };
        let mut shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(Error::config(
                format!("layer '{name}'"),
                format!("axis {axis} out of range"),
            ));
        }
        for n in &inputs[1..] {
            let s = self.shape(*n);
            let compatible = s.len() == shape.len()
                && s.iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::config(
                    format!("layer '{name}'"),
                    format!(
                        "cannot concatenate {:?} with {:?} along axis {axis}",
                        shape, s
                    ),
                ));
            }
            shape[axis] += s[axis];
        }
        Ok(self.push(
            name,
            LayerKind::Concat { axis },
            inputs.iter().map(|n| n.0).collect(),
            shape,
        ))
    }

    /// Finalises the graph with `output` as the embedding node. Parameters
    /// start at zero; see [`super::init_params`].
    pub fn finish(self, output: NodeId) -> Network {
        let taps = self
            .layers
            .iter()
            .map(|spec| match spec.kind {
                LayerKind::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let x = &self.layers[spec.inputs[0]].out_shape;
                    ConvGeom {
                        in_c: x[0],
                        in_h: x[1],
                        in_w: x[2],
                        out_c: filters,
                        out_h: spec.out_shape[1],
                        out_w: spec.out_shape[2],
                        k: kernel,
                        stride,
                        pad: padding,
                    }
                    .taps()
                }
                _ => Vec::new(),
            })
            .collect();
        Network {
            params: vec![0.0; self.num_params],
            taps: Arc::new(taps),
            layers: self.layers,
            output: output.0,
            architecture: Architecture::Graph,
            uid: fresh_uid(),
            version: 0,
        }
    }
}
