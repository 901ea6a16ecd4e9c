//! Binary network format, all integers and floats little-endian:
//!
//! ```text
//! "GMSN" | version u32 | input_len u32 | res u32 | layer_count u32
//! per layer: kind u8 (0 conv, 1 elu, 2 upsample, 3 flatten, 4 dense) | a u32 | b u32 | c u32
//!            conv: in_channels, out_channels, kernel; dense: inputs, outputs, 0; others 0, 0, 0
//! parameters: f32, per trainable layer weights row-major then biases
//! ```
//!
//! `res` is 0 when the output is not a square RGB image.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{real, DecoderNetwork, Layer, Real};
use crate::error::{GmsError, Result};

pub const NETWORK_MAGIC: &[u8; 4] = b"GMSN";
pub const NETWORK_VERSION: u32 = 1;

pub fn write_network<T: Real, W: Write>(net: &DecoderNetwork<T>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + net.parameter_count() * 4);
    buf.extend_from_slice(NETWORK_MAGIC);
    let header = [
        NETWORK_VERSION,
        net.input_len() as u32,
        net.resolution().unwrap_or(0) as u32,
        net.layers().len() as u32,
    ];
    header.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    for layer in net.layers() {
        let (kind, dims) = match layer {
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (0u8, [*in_channels, *out_channels, *kernel]),
            Layer::Elu => (1, [0; 3]),
            Layer::Upsample => (2, [0; 3]),
            Layer::Flatten => (3, [0; 3]),
            Layer::Dense { weight, .. } => (4, [weight.nrows(), weight.ncols(), 0]),
        };
        buf.push(kind);
        dims.iter().for_each(|d| buf.extend_from_slice(&(*d as u32).to_le_bytes()));
    }
    for v in net.parameters() {
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| GmsError::Parse("network file is truncated".into()))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_network<T: Real, R: Read>(mut r: R) -> Result<DecoderNetwork<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != NETWORK_MAGIC {
        return Err(GmsError::Parse("not a network file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != NETWORK_VERSION {
        return Err(GmsError::Parse(format!("unsupported network version {version}")));
    }
    let input_len = c.u32()? as usize;
    let res = c.u32()? as usize;
    let count = c.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = c.take(1)?[0];
        let [a, b, k] = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
        layers.push(match kind {
            0 => Layer::conv1d(Array2::zeros((b, a * k)), Array1::zeros(b), k)?,
            1 => Layer::Elu,
            2 => Layer::Upsample,
            3 => Layer::Flatten,
            4 => Layer::dense(Array2::zeros((a, b)), Array1::zeros(b))?,
            other => return Err(GmsError::Parse(format!("unknown layer kind {other}"))),
        });
    }
    let mut net = DecoderNetwork::from_layers(input_len, layers)?;
    if net.resolution().unwrap_or(0) != res {
        return Err(GmsError::Parse("resolution does not match the layer table".into()));
    }
    let n = net.parameter_count();
    let raw = c.take(n * 4)?;
    let values: Vec<T> = raw
        .chunks_exact(4)
        .map(|b| real(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
        .collect();
    if c.pos != bytes.len() {
        return Err(GmsError::Parse("trailing bytes after parameters".into()));
    }
    net.set_parameters(&values)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Architecture;

    #[test]
    fn round_trip_is_exact_in_f32() {
        let arch = Architecture {
            m: 5,
            res: 4,
            channels: 3,
            kernel: 3,
            blocks: 2,
            hidden: 7,
        };
        let net = DecoderNetwork::<f32>::init_glorot(arch, 8).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"GMSN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let back: DecoderNetwork<f32> = read_network(&buf[..]).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_corrupt_files() {
        let arch = Architecture {
            m: 3,
            res: 2,
            channels: 2,
            kernel: 3,
            blocks: 1,
            hidden: 3,
        };
        let net = DecoderNetwork::<f32>::init_glorot(arch, 1).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        assert!(read_network::<f32, _>(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_network::<f32, _>(&extra[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_network::<f32, _>(&bad[..]).is_err());
    }
}
