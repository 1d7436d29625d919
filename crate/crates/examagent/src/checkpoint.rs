//! Binary checkpoint of a trained network.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "EXAGCKPT" | version u16 | architecture u8 | classes u32 | growth u32
//! | dropout_keep f64 | tensor count u32
//! then per parameter tensor: layer kind u8 | rank u8 | dims u32 * rank | f32 * len
//! ```
//!
//! Tensors appear in the network's parameter visiting order, so loading
//! rebuilds the architecture from the header and fills it in place.

use std::io::{self, Read, Write};

use examagent_core::models::{Architecture, Network, NetworkConfig};
use examagent_core::nn::{LayerKind, Module};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAGIC: &[u8; 8] = b"EXAGCKPT";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown architecture tag {0}")]
    UnknownArchitecture(u8),
    #[error("tensor {index}: {reason}")]
    Mismatch { index: usize, reason: String },
    #[error("cannot rebuild network: {0}")]
    Build(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn save<W: Write>(mut out: W, net: &mut Network<f32>) -> io::Result<()> {
    let config = *net.config();
    let mut tensors: Vec<(LayerKind, Vec<usize>, Vec<f32>)> = Vec::new();
    net.visit_params(&mut |p| tensors.push((p.kind, p.value.shape().to_vec(), p.value.data().to_vec())));

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(config.architecture.tag());
    buf.extend_from_slice(&(config.classes as u32).to_le_bytes());
    buf.extend_from_slice(&(config.growth as u32).to_le_bytes());
    buf.extend_from_slice(&config.dropout_keep.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (kind, shape, data) in &tensors {
        buf.push(kind.tag());
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> io::Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn load<R: Read>(input: R) -> Result<Network<f32>, CheckpointError> {
    let mut c = Cursor { inner: input };
    if &c.bytes::<8>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let tag = c.u8()?;
    let architecture = Architecture::from_tag(tag).ok_or(CheckpointError::UnknownArchitecture(tag))?;
    let config = NetworkConfig {
        architecture,
        classes: c.u32()? as usize,
        growth: c.u32()? as usize,
        dropout_keep: c.f64()?,
    };
    let count = c.u32()? as usize;

    let mut tensors = Vec::with_capacity(count);
    for index in 0..count {
        let kind_tag = c.u8()?;
        let kind = LayerKind::from_tag(kind_tag).ok_or_else(|| CheckpointError::Mismatch {
            index,
            reason: format!("unknown layer kind {kind_tag}"),
        })?;
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f32::from_le_bytes(c.bytes()?));
        }
        tensors.push((kind, shape, data));
    }
    let mut trailing = [0u8; 1];
    if c.inner.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Mismatch {
            index: count,
            reason: "trailing bytes after the last tensor".into(),
        });
    }

    // initial weights are overwritten below, the seed is irrelevant
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::<f32>::build(config, &mut rng).map_err(|e| CheckpointError::Build(e.to_string()))?;
    let mut index = 0;
    let mut error = None;
    net.visit_params(&mut |p| {
        if error.is_some() {
            return;
        }
        match tensors.get(index) {
            None => error = Some(CheckpointError::Mismatch { index, reason: "missing tensor".into() }),
            Some((kind, shape, data)) => {
                if *kind != p.kind || shape.as_slice() != p.value.shape() {
                    error = Some(CheckpointError::Mismatch {
                        index,
                        reason: format!(
                            "expected {:?} {:?}, found {kind:?} {shape:?}",
                            p.kind,
                            p.value.shape()
                        ),
                    });
                } else {
                    p.value.data_mut().copy_from_slice(data);
                }
            }
        }
        index += 1;
    });
    if let Some(e) = error {
        return Err(e);
    }
    if index != tensors.len() {
        return Err(CheckpointError::Mismatch {
            index,
            reason: format!("{} tensors stored, network has {index}", tensors.len()),
        });
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(net: &mut Network<f32>) -> Vec<u32> {
        let mut v = Vec::new();
        net.visit_params(&mut |p| v.extend(p.value.data().iter().map(|x| x.to_bits())));
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in Architecture::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let config = match arch {
                Architecture::DenseLstm => NetworkConfig::dense_lstm(2),
                a => NetworkConfig::baseline(a, 2),
            };
            let mut net = Network::<f32>::build(config, &mut rng).unwrap();
            let mut bytes = Vec::new();
            save(&mut bytes, &mut net).unwrap();
            let mut back = load(bytes.as_slice()).unwrap();
            assert_eq!(back.config(), net.config());
            assert_eq!(params(&mut back), params(&mut net));
            let mut again = Vec::new();
            save(&mut again, &mut back).unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn rejects_damage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::<f32>::build(NetworkConfig::baseline(Architecture::Dnn, 2), &mut rng).unwrap();
        let mut bytes = Vec::new();
        save(&mut bytes, &mut net).unwrap();
        assert!(matches!(load(&b"NOTACKPT"[..]), Err(CheckpointError::BadMagic)));
        assert!(matches!(load(&bytes[..bytes.len() - 1]), Err(CheckpointError::Io(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(load(extra.as_slice()), Err(CheckpointError::Mismatch { .. })));
        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(load(version.as_slice()), Err(CheckpointError::UnsupportedVersion(9))));
    }
}
