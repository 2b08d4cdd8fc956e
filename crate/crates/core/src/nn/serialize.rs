//! Flat binary model container.
//!
//! ```text
//! magic      8 bytes  "CPNET\0\0\x01"
//! channels   u32      network input channels
//! tile       u32      inference tile size (0 = untiled)
//! layers     u32      node count
//! per node:  u8 kind, u32 in_channels, u32 out_channels, u32 kernel,
//!            u32 input count, u32 input ids...
//! per node:  u64 weight count, f64 weights..., u64 bias count, f64 biases...
//! ```
//!
//! All integers and reals are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, Params};
use crate::nn::network::{Network, Node};

const MAGIC: &[u8; 8] = b"CPNET\0\0\x01";
const MAX_LAYERS: usize = 1 << 16;

pub fn write_network(mut w: impl Write, net: &Network, tile: u32) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(net.input_channels() as u32).to_le_bytes())?;
    w.write_all(&tile.to_le_bytes())?;
    w.write_all(&(net.nodes().len() as u32).to_le_bytes())?;
    for node in net.nodes() {
        let (i, o, k) = node.spec.conv_geometry().unwrap_or((0, 0, 0));
        w.write_all(&[node.spec.code()])?;
        for v in [i, o, k, node.inputs.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for &v in &node.inputs {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    for p in net.params() {
        for block in [&p.weight, &p.bias] {
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            for v in block.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt("truncated file"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(read_exact(r)?) as usize)
}

fn read_block(r: &mut impl Read, expected: usize) -> Result<Vec<f64>> {
    let n = u64::from_le_bytes(read_exact(r)?) as usize;
    if n != expected {
        return Err(corrupt(format!("parameter block of {n} values, expected {expected}")));
    }
    (0..n).map(|_| Ok(f64::from_le_bytes(read_exact(r)?))).collect()
}

/// Returns the network and its tile size.
pub fn read_network(mut r: impl Read) -> Result<(Network, u32)> {
    let magic: [u8; 8] = read_exact(&mut r)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let channels = read_u32(&mut r)?;
    let tile = read_u32(&mut r)? as u32;
    let count = read_u32(&mut r)?;
    if count == 0 || count > MAX_LAYERS {
        return Err(corrupt(format!("implausible layer count {count}")));
    }
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        let [code] = read_exact::<1>(&mut r)?;
        let (i, o, k) = (read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?);
        let spec = match code {
            1 => LayerSpec::Conv2d {
                in_channels: i,
                out_channels: o,
                kernel: k,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::MaxPool2x2,
            4 => LayerSpec::Upsample2x,
            5 => LayerSpec::Concat,
            6 => LayerSpec::OutputHead { in_channels: i },
            other => return Err(corrupt(format!("unknown layer kind {other}"))),
        };
        let n_inputs = read_u32(&mut r)?;
        if n_inputs > 2 {
            return Err(corrupt(format!("layer with {n_inputs} inputs")));
        }
        let inputs = (0..n_inputs).map(|_| read_u32(&mut r)).collect::<Result<_>>()?;
        nodes.push(Node { spec, inputs });
    }
    let mut net = Network::new(channels, nodes).map_err(|e| corrupt(e.to_string()))?;
    let params = net
        .nodes()
        .iter()
        .map(|n| {
            let (nw, nb) = n.spec.param_sizes();
            Ok(Params {
                weight: read_block(&mut r, nw)?,
                bias: read_block(&mut r, nb)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    net.set_params(params)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    Ok((net, tile))
}
