//! Binary container for named tensors, used for trained network weights and
//! precomputed feature maps.
//!
//! Layout (little-endian): magic `BLPW`, `u32` version, `u32` record count,
//! then per record a `u16` name length, the UTF-8 name, a `u8` rank,
//! `rank` x `u32` dimensions, and the `f32` values in row-major order.
//! Readers fail loudly and distinctly on bad magic, unknown version,
//! truncation, and dimension overflow.

use crate::tensor::{Tensor, TensorError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Magic bytes of the weight container.
pub const WEIGHTS_MAGIC: &[u8; 4] = b"BLPW";
/// Current weight container version.
pub const WEIGHTS_VERSION: u32 = 1;
/// Upper bound on a single tensor's element count (guards against
/// maliciously huge headers before any allocation happens).
const MAX_ELEMENTS: u64 = 1 << 28;
const MAX_RANK: u8 = 8;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a weight file (magic {got:?}, expected \"BLPW\")")]
    BadMagic { path: String, got: [u8; 4] },
    #[error("{path}: unsupported weight-file version {got} (expected {WEIGHTS_VERSION})")]
    Version { path: String, got: u32 },
    #[error("{path}: file truncated while reading {context}")]
    Truncated { path: String, context: String },
    #[error("{path}: tensor {name:?} dimensions {dims:?} overflow the element limit")]
    DimOverflow {
        path: String,
        name: String,
        dims: Vec<u64>,
    },
    #[error("{path}: record {index} has a malformed name")]
    BadName { path: String, index: usize },
    #[error("{path}: tensor {name:?} rank {rank} outside 1..={MAX_RANK}")]
    BadRank { path: String, name: String, rank: u8 },
    #[error("tensor {name:?} cannot be serialized: {detail}")]
    Unserializable { name: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path, source: std::io::Error) -> WeightsError {
    WeightsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write named tensors in record order.
pub fn save_tensors(
    path: impl AsRef<Path>,
    tensors: &[(&str, &Tensor)],
) -> Result<(), WeightsError> {
    let path = path.as_ref();
    for (name, t) in tensors {
        if name.len() > u16::MAX as usize {
            return Err(WeightsError::Unserializable {
                name: name.to_string(),
                detail: "name longer than 65535 bytes".into(),
            });
        }
        if t.rank() > MAX_RANK as usize {
            return Err(WeightsError::Unserializable {
                name: name.to_string(),
                detail: format!("rank {} exceeds {MAX_RANK}", t.rank()),
            });
        }
        if t.shape().iter().any(|&d| d > u32::MAX as usize) {
            return Err(WeightsError::Unserializable {
                name: name.to_string(),
                detail: "dimension exceeds u32".into(),
            });
        }
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    put(WEIGHTS_MAGIC)?;
    put(&WEIGHTS_VERSION.to_le_bytes())?;
    put(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        put(&(name.len() as u16).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&[t.rank() as u8])?;
        for &d in t.shape() {
            put(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            put(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'p> {
    inner: BufReader<File>,
    path: &'p Path,
}

impl<'p> Reader<'p> {
    fn exact(&mut self, buf: &mut [u8], context: &str) -> Result<(), WeightsError> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                WeightsError::Truncated {
                    path: self.path.display().to_string(),
                    context: context.to_string(),
                }
            } else {
                io_err(self.path, e)
            }
        })
    }

    fn u16(&mut self, context: &str) -> Result<u16, WeightsError> {
        let mut b = [0u8; 2];
        self.exact(&mut b, context)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, context: &str) -> Result<u32, WeightsError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, context)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Read every record of a weight file.
pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>, WeightsError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic {
            path: path.display().to_string(),
            got: magic,
        });
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::Version {
            path: path.display().to_string(),
            got: version,
        });
    }
    let count = r.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let name_len = r.u16(&format!("record {index} name length"))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.exact(&mut name_bytes, &format!("record {index} name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| WeightsError::BadName {
            path: path.display().to_string(),
            index,
        })?;
        let mut rank = [0u8; 1];
        r.exact(&mut rank, &format!("record {name:?} rank"))?;
        let rank = rank[0];
        if rank == 0 || rank > MAX_RANK {
            return Err(WeightsError::BadRank {
                path: path.display().to_string(),
                name,
                rank,
            });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for d in 0..rank {
            dims.push(r.u32(&format!("record {name:?} dim {d}"))? as u64);
        }
        let mut elements: u64 = 1;
        for &d in &dims {
            elements = elements.saturating_mul(d);
        }
        if dims.iter().any(|&d| d == 0) || elements > MAX_ELEMENTS {
            return Err(WeightsError::DimOverflow {
                path: path.display().to_string(),
                name,
                dims,
            });
        }
        let mut values = vec![0.0f32; elements as usize];
        let mut buf = [0u8; 4];
        for (i, v) in values.iter_mut().enumerate() {
            r.exact(&mut buf, &format!("record {name:?} value {i}"))?;
            *v = f32::from_le_bytes(buf);
        }
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        out.push((name, Tensor::new(shape, values)?));
    }
    Ok(out)
}

/// Save a network's parameters under its stable parameter names.
pub fn save_network(
    path: impl AsRef<Path>,
    net: &super::Network,
) -> Result<(), WeightsError> {
    let names = net.param_names();
    let tensors = net.param_tensors();
    let records: Vec<(&str, &Tensor)> = names
        .iter()
        .map(|n| n.as_str())
        .zip(tensors.into_iter())
        .collect();
    save_tensors(path, &records)
}

/// Load parameters saved by [`save_network`] into a freshly initialized
/// network of the same architecture. Names, order, and shapes must all match.
pub fn load_network(
    path: impl AsRef<Path>,
    net: &mut super::Network,
) -> Result<(), super::NnError> {
    let records = load_tensors(path.as_ref())?;
    let names = net.param_names();
    let mut params = net.param_tensors_mut();
    if records.len() != params.len() {
        return Err(super::NnError::WeightMismatch(format!(
            "{} records in file, network has {} parameter tensors",
            records.len(),
            params.len()
        )));
    }
    for ((name, tensor), (expect_name, slot)) in
        records.into_iter().zip(names.iter().zip(params.iter_mut()))
    {
        if &name != expect_name {
            return Err(super::NnError::WeightMismatch(format!(
                "record {name:?} where {expect_name:?} was expected"
            )));
        }
        if tensor.shape() != slot.shape() {
            return Err(super::NnError::WeightMismatch(format!(
                "record {name:?} has shape {:?}, network expects {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        **slot = tensor;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ocr_spec, Network};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.blpw");
        let a = Tensor::from_fn(&[3, 4], |i| (i as f32).sin());
        let b = Tensor::from_fn(&[2, 2, 2, 2], |i| 1.0 / (i as f32 + 1.0));
        save_tensors(&path, &[("a", &a), ("deep.b", &b)]).unwrap();
        let back = load_tensors(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].0, "deep.b");
        assert_eq!(back[1].1, b);
        // Bitwise: the exact bytes survive, including negative zero.
        let z = Tensor::new(vec![1], vec![-0.0f32]).unwrap();
        save_tensors(&path, &[("z", &z)]).unwrap();
        let back = load_tensors(&path).unwrap();
        assert_eq!(back[0].1.data()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn network_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.blpw");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(ocr_spec(10), &mut rng).unwrap();
        save_network(&path, &net).unwrap();

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let mut other = Network::init(ocr_spec(10), &mut rng2).unwrap();
        assert_ne!(net, other);
        load_network(&path, &mut other).unwrap();
        assert_eq!(net, other);
    }

    #[test]
    fn distinct_corruption_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.blpw");
        let t = Tensor::from_fn(&[4, 4], |i| i as f32);
        save_tensors(&path, &[("w", &t)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let bad = dir.path().join("bad.blpw");

        // Bad magic.
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&bad, &b).unwrap();
        assert!(matches!(
            load_tensors(&bad),
            Err(WeightsError::BadMagic { .. })
        ));

        // Unknown version.
        let mut b = bytes.clone();
        b[4] = 2;
        std::fs::write(&bad, &b).unwrap();
        assert!(matches!(
            load_tensors(&bad),
            Err(WeightsError::Version { got: 2, .. })
        ));

        // Truncation mid-payload.
        std::fs::write(&bad, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_tensors(&bad),
            Err(WeightsError::Truncated { .. })
        ));

        // Dimension overflow: record count 1, name "w", rank 2, dims huge.
        let mut b = Vec::new();
        b.extend_from_slice(WEIGHTS_MAGIC);
        b.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.push(b'w');
        b.push(2);
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        std::fs::write(&bad, &b).unwrap();
        assert!(matches!(
            load_tensors(&bad),
            Err(WeightsError::DimOverflow { .. })
        ));

        // Zero dimension is also rejected before allocation.
        let mut b = Vec::new();
        b.extend_from_slice(WEIGHTS_MAGIC);
        b.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.push(b'w');
        b.push(1);
        b.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&bad, &b).unwrap();
        assert!(matches!(
            load_tensors(&bad),
            Err(WeightsError::DimOverflow { .. })
        ));
    }

    #[test]
    fn load_network_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.blpw");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net10 = Network::init(ocr_spec(10), &mut rng).unwrap();
        save_network(&path, &net10).unwrap();
        let mut net60 = Network::init(ocr_spec(60), &mut rng).unwrap();
        assert!(matches!(
            load_network(&path, &mut net60),
            Err(crate::nn::NnError::WeightMismatch(_))
        ));
    }

    #[test]
    fn empty_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.blpw");
        assert!(matches!(
            load_tensors(&missing),
            Err(WeightsError::Io { .. })
        ));
        let empty = dir.path().join("empty.blpw");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(
            load_tensors(&empty),
            Err(WeightsError::Truncated { .. })
        ));
    }
}
