//! Versioned weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"AGW1"
//! version    u16 (currently 1)
//! kind       u8  (1 = policy/value net, 2 = bias-free encoder)
//! descriptor architecture summary (dims, activation, heads)
//! shapes     u32 tensor count, then (rows: u32, cols: u32) per tensor
//! payload    f32 values per tensor, in parameter order
//! ```
//!
//! Loading validates magic, version, descriptor, shapes, and payload length
//! against the caller's expected architecture; each failure mode is a
//! distinct error.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Activation, EncoderSpec, NetSpec, ParamSet, Tensor};

const MAGIC: [u8; 4] = *b"AGW1";
const VERSION: u16 = 1;

/// Architecture tag stored in the container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetKind {
    Policy(NetSpec),
    Encoder(EncoderSpec),
}

impl NetKind {
    fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            NetKind::Policy(s) => s.tensor_shapes(),
            NetKind::Encoder(s) => s.tensor_shapes(),
        }
    }
}

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("bad magic bytes (not a weight container)")]
    BadMagic,
    #[error("unsupported container version {found} (expected {VERSION})")]
    BadVersion { found: u16 },
    #[error("architecture mismatch: {0}")]
    SpecMismatch(String),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("truncated payload")]
    Truncated,
    #[error("trailing bytes after payload")]
    TrailingData,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N], WeightError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                WeightError::Truncated
            } else {
                WeightError::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, WeightError> {
        Ok(self.exact::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(self.exact::<2>()?))
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.exact::<4>()?))
    }

    fn f32(&mut self) -> Result<f32, WeightError> {
        Ok(f32::from_le_bytes(self.exact::<4>()?))
    }
}

fn encode_descriptor(kind: &NetKind, out: &mut Vec<u8>) {
    match kind {
        NetKind::Policy(s) => {
            out.push(1);
            put_u32(out, s.input_dim as u32);
            out.push(s.hidden.len() as u8);
            for &h in &s.hidden {
                put_u32(out, h as u32);
            }
            out.push(match s.activation {
                Activation::Tanh => 0,
                Activation::Relu => 1,
            });
            put_u32(out, s.n_actions as u32);
            out.push(s.latent_layer as u8);
        }
        NetKind::Encoder(s) => {
            out.push(2);
            put_u32(out, s.input_dim as u32);
            out.push(s.hidden.len() as u8);
            for &h in &s.hidden {
                put_u32(out, h as u32);
            }
            put_u32(out, s.out_dim as u32);
        }
    }
}

fn decode_descriptor<R: Read>(r: &mut Reader<R>) -> Result<NetKind, WeightError> {
    let tag = r.u8()?;
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u8()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    match tag {
        1 => {
            let activation = match r.u8()? {
                0 => Activation::Tanh,
                1 => Activation::Relu,
                a => return Err(WeightError::SpecMismatch(format!("unknown activation {a}"))),
            };
            let n_actions = r.u32()? as usize;
            let latent_layer = r.u8()? as usize;
            Ok(NetKind::Policy(NetSpec {
                input_dim,
                hidden,
                activation,
                n_actions,
                latent_layer,
            }))
        }
        2 => {
            let out_dim = r.u32()? as usize;
            Ok(NetKind::Encoder(EncoderSpec {
                input_dim,
                hidden,
                out_dim,
            }))
        }
        t => Err(WeightError::SpecMismatch(format!("unknown net kind {t}"))),
    }
}

/// Serializes parameters into the container format.
pub fn save_params<W: Write>(mut w: W, kind: &NetKind, params: &ParamSet) -> Result<(), WeightError> {
    let mut header = Vec::new();
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    encode_descriptor(kind, &mut header);
    put_u32(&mut header, params.tensors.len() as u32);
    for t in &params.tensors {
        put_u32(&mut header, t.rows as u32);
        put_u32(&mut header, t.cols as u32);
    }
    w.write_all(&header)?;
    let mut payload = Vec::new();
    for t in &params.tensors {
        for &v in &t.data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    Ok(())
}

/// Deserializes parameters, validating the container against `expected`.
pub fn load_params<R: Read>(r: R, expected: &NetKind) -> Result<ParamSet, WeightError> {
    let mut r = Reader { inner: r };
    let magic = r.exact::<4>()?;
    if magic != MAGIC {
        return Err(WeightError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(WeightError::BadVersion { found: version });
    }
    let kind = decode_descriptor(&mut r)?;
    if &kind != expected {
        return Err(WeightError::SpecMismatch(format!(
            "container holds {kind:?}, expected {expected:?}"
        )));
    }
    let expected_shapes = expected.tensor_shapes();
    let n = r.u32()? as usize;
    if n != expected_shapes.len() {
        return Err(WeightError::ShapeMismatch(format!(
            "container has {n} tensors, expected {}",
            expected_shapes.len()
        )));
    }
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != expected_shapes[i] {
            return Err(WeightError::ShapeMismatch(format!(
                "tensor {i} is {rows}x{cols}, expected {}x{}",
                expected_shapes[i].0, expected_shapes[i].1
            )));
        }
        shapes.push((rows, cols));
    }
    let mut tensors = Vec::with_capacity(n);
    for (rows, cols) in shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f32()? as f64);
        }
        tensors.push(Tensor { rows, cols, data });
    }
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => Ok(ParamSet { tensors }),
        Ok(_) => Err(WeightError::TrailingData),
        Err(e) => Err(WeightError::Io(e)),
    }
}

/// [`save_params`] to a filesystem path.
pub fn save_params_file(path: &Path, kind: &NetKind, params: &ParamSet) -> Result<(), WeightError> {
    save_params(File::create(path)?, kind, params)
}

/// [`load_params`] from a filesystem path.
pub fn load_params_file(path: &Path, expected: &NetKind) -> Result<ParamSet, WeightError> {
    load_params(File::open(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_params;

    fn spec() -> NetSpec {
        NetSpec {
            input_dim: 7,
            hidden: vec![5, 3],
            activation: Activation::Tanh,
            n_actions: 5,
            latent_layer: 1,
        }
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let kind = NetKind::Policy(spec());
        let params = init_params(&spec(), 21);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        let loaded = load_params(buf.as_slice(), &kind).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn encoder_container_round_trips() {
        let enc = EncoderSpec {
            input_dim: 9,
            hidden: vec![6],
            out_dim: 4,
        };
        let kind = NetKind::Encoder(enc.clone());
        let params = crate::neural::init_encoder_params(&enc, 3);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        assert_eq!(load_params(buf.as_slice(), &kind).unwrap(), params);
    }

    #[test]
    fn corrupted_magic_is_not_garbage_params() {
        let kind = NetKind::Policy(spec());
        let params = init_params(&spec(), 21);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            load_params(buf.as_slice(), &kind),
            Err(WeightError::BadMagic)
        ));
    }

    #[test]
    fn wrong_version_is_distinct() {
        let kind = NetKind::Policy(spec());
        let params = init_params(&spec(), 21);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        buf[4] = 9;
        assert!(matches!(
            load_params(buf.as_slice(), &kind),
            Err(WeightError::BadVersion { found: 9 })
        ));
    }

    #[test]
    fn mismatched_spec_is_a_shape_error() {
        let kind = NetKind::Policy(spec());
        let params = init_params(&spec(), 21);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        let mut other = spec();
        other.hidden = vec![5, 4];
        let err = load_params(buf.as_slice(), &NetKind::Policy(other)).unwrap_err();
        assert!(matches!(err, WeightError::SpecMismatch(_)));
    }

    #[test]
    fn truncated_payload_is_distinct() {
        let kind = NetKind::Policy(spec());
        let params = init_params(&spec(), 21);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            load_params(buf.as_slice(), &kind),
            Err(WeightError::Truncated)
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let kind = NetKind::Policy(spec());
        let params = init_params(&spec(), 21);
        let mut buf = Vec::new();
        save_params(&mut buf, &kind, &params).unwrap();
        buf.push(0);
        assert!(matches!(
            load_params(buf.as_slice(), &kind),
            Err(WeightError::TrailingData)
        ));
    }
}
