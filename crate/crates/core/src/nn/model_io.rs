//! Binary model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "S2SM" | u32 version | u32 arch tag | architecture block
//!        | u32 slice count | { u32 layer index | u64 len | f64 * len }*
//! ```
//!
//! Arch tag 1 is a part network followed by its scale configuration as 14
//! `u32`s. Tag 2 is an explicit layer graph. Parameter slices appear in graph
//! order, one per parameterised layer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::LayerKind;
use super::network::{Architecture, Network, NetworkBuilder, NodeId};
use super::{build_part_network, Padding, ScaleConfig};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"S2SM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const ARCH_PART: u32 = 1;
const ARCH_GRAPH: u32 = 2;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_usize(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    put_u32(
        w,
        u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?,
    )
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Data(format!("truncated model file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

fn scale_fields(c: &ScaleConfig) -> [usize; 14] {
    [
        c.input_height,
        c.input_width,
        c.input_channels,
        c.global_filters,
        c.global_kernel,
        c.global_pool_kernel,
        c.global_pool_stride,
        c.local_filters,
        c.local_kernel,
        c.local_pool_kernel,
        c.local_pool_stride,
        c.stripes,
        c.fc_dim,
        match c.padding {
            Padding::Same => 0,
            Padding::Valid => 1,
        },
    ]
}

fn kind_fields(kind: &LayerKind) -> (u32, Vec<usize>) {
    match kind {
        LayerKind::Input { shape } => {
            let mut v = vec![shape.len()];
            v.extend(shape);
            (0, v)
        }
        LayerKind::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => (1, vec![*filters, *kernel, *stride, *padding]),
        LayerKind::MaxPool2d { kernel, stride } => (2, vec![*kernel, *stride]),
        LayerKind::Relu => (3, vec![]),
        LayerKind::FullyConnected { out_dim, .. } => (4, vec![*out_dim]),
        LayerKind::EltwiseSum => (5, vec![]),
        LayerKind::StripeSplit { stripes, index } => (6, vec![*stripes, *index]),
        LayerKind::Concat { axis } => (7, vec![*axis]),
    }
}

pub fn write_model<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let io = |e| Error::io("<model stream>", e);
    w.write_all(MODEL_MAGIC).map_err(io)?;
    put_u32(&mut w, MODEL_FORMAT_VERSION).map_err(io)?;
    match net.architecture() {
        Architecture::Part(cfg) => {
            put_u32(&mut w, ARCH_PART).map_err(io)?;
            for v in scale_fields(cfg) {
                put_usize(&mut w, v).map_err(io)?;
            }
        }
        Architecture::Graph => {
            put_u32(&mut w, ARCH_GRAPH).map_err(io)?;
            put_usize(&mut w, net.layers().len()).map_err(io)?;
            for spec in net.layers() {
                put_usize(&mut w, spec.name.len()).map_err(io)?;
                w.write_all(spec.name.as_bytes()).map_err(io)?;
                let (code, fields) = kind_fields(&spec.kind);
                put_u32(&mut w, code).map_err(io)?;
                for f in fields {
                    put_usize(&mut w, f).map_err(io)?;
                }
                put_usize(&mut w, spec.inputs.len()).map_err(io)?;
                for &i in &spec.inputs {
                    put_usize(&mut w, i).map_err(io)?;
                }
            }
            put_usize(&mut w, net.output_layer()).map_err(io)?;
        }
    }
    let sliced: Vec<(usize, &[f64])> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind.param_counts().0 > 0)
        .map(|(i, s)| (i, &net.params()[s.weight_range().start..s.bias_range().end]))
        .collect();
    put_usize(&mut w, sliced.len()).map_err(io)?;
    for (idx, slice) in sliced {
        put_usize(&mut w, idx).map_err(io)?;
        w.write_all(&(slice.len() as u64).to_le_bytes())
            .map_err(io)?;
        for v in slice {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_model<R: Read>(r: R) -> Result<Network> {
    let mut r = Reader { inner: r };
    let magic: [u8; 4] = r.bytes()?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Data(format!(
            "bad model magic {magic:?}, expected \"S2SM\""
        )));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported model format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let mut net = match r.u32()? {
        ARCH_PART => {
            let mut f = [0usize; 14];
            for v in &mut f {
                *v = r.usize()?;
            }
            let cfg = ScaleConfig {
                input_height: f[0],
                input_width: f[1],
                input_channels: f[2],
                global_filters: f[3],
                global_kernel: f[4],
                global_pool_kernel: f[5],
                global_pool_stride: f[6],
                local_filters: f[7],
                local_kernel: f[8],
                local_pool_kernel: f[9],
                local_pool_stride: f[10],
                stripes: f[11],
                fc_dim: f[12],
                padding: match f[13] {
                    0 => Padding::Same,
                    1 => Padding::Valid,
                    p => return Err(Error::Data(format!("unknown padding code {p}"))),
                },
            };
            build_part_network(&cfg)?
        }
        ARCH_GRAPH => read_graph(&mut r)?,
        tag => return Err(Error::Data(format!("unknown architecture tag {tag}"))),
    };

    let mut params = vec![0.0; net.num_params()];
    let slices = r.usize()?;
    for _ in 0..slices {
        let idx = r.usize()?;
        let len = r.u64()? as usize;
        let spec = net
            .layers()
            .get(idx)
            .ok_or_else(|| Error::Data(format!("parameter slice for unknown layer {idx}")))?;
        let range = spec.weight_range().start..spec.bias_range().end;
        if range.len() != len {
            return Err(Error::Data(format!(
                "layer '{}' expects {} parameters, file has {len}",
                spec.name,
                range.len()
            )));
        }
        for p in &mut params[range] {
            *p = r.f64()?;
        }
    }
    net.set_params(params)?;
    Ok(net)
}

fn read_graph<R: Read>(r: &mut Reader<R>) -> Result<Network> {
    let count = r.usize()?;
    let mut builder: Option<NetworkBuilder> = None;
    for idx in 0..count {
        let name_len = r.usize()?;
        let mut name = vec![0u8; name_len];
        r.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Data(format!("truncated model file: {e}")))?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Data("layer name is not UTF-8".into()))?;
        let code = r.u32()?;
        let mut fields = |n: usize| -> Result<Vec<usize>> { (0..n).map(|_| r.usize()).collect() };
        let kind_fields = match code {
            0 => {
                let rank = fields(1)?[0];
                fields(rank)?
            }
            1 => fields(4)?,
            2 | 6 => fields(2)?,
            4 | 7 => fields(1)?,
            3 | 5 => vec![],
            c => return Err(Error::Data(format!("unknown layer code {c}"))),
        };
        let n_inputs = r.usize()?;
        let inputs: Vec<NodeId> = (0..n_inputs)
            .map(|_| r.usize().map(NodeId))
            .collect::<Result<_>>()?;
        if inputs.iter().any(|n| n.0 >= idx) {
            return Err(Error::Data(format!(
                "layer '{name}' references a later layer"
            )));
        }
        if code == 0 {
            if idx != 0 {
                return Err(Error::Data("input layer must come first".into()));
            }
            builder = Some(NetworkBuilder::new(kind_fields)?.0);
            continue;
        }
        let b = builder
            .as_mut()
            .ok_or_else(|| Error::Data("graph does not start with an input layer".into()))?;
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Data(format!("layer '{name}' has no inputs")))?;
        match code {
            1 => b.conv2d(
                &name,
                first,
                kind_fields[0],
                kind_fields[1],
                kind_fields[2],
                kind_fields[3],
            )?,
            2 => b.maxpool2d(&name, first, kind_fields[0], kind_fields[1])?,
            3 => b.relu(&name, first),
            4 => b.fully_connected(&name, first, kind_fields[0])?,
            5 => b.eltwise_sum(&name, &inputs)?,
            6 => b.stripe_split(&name, first, kind_fields[0], kind_fields[1])?,
            7 => b.concat(&name, &inputs, kind_fields[0])?,
            _ => unreachable!(),
        };
    }
    let output = r.usize()?;
    let b = builder.ok_or_else(|| Error::Data("empty layer graph".into()))?;
    if output >= count {
        return Err(Error::Data(format!("output layer {output} out of range")));
    }
    Ok(b.finish(NodeId(output)))
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(net, BufWriter::new(file))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file))
}
