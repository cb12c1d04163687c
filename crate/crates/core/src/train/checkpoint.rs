//! Binary encoder checkpoints.
//!
//! Layout (little-endian): `"ENCP"` | version u32 = 1 | vocab u32 |
//! token_dim u32 | dim u32 | bucket_width u32 | n_buckets u32 | n_hidden u32 |
//! n_hidden x u32 widths | tensor count u32 | per tensor: rank u32, rank x u32
//! extents, then `f64` values row-major. Tensors appear in
//! [`EncoderParams::tensors`] order.

use std::fs;
use std::path::Path;

use crate::embed::Reader;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::train::encoder::{EncoderParams, EncoderSpec};

const MAGIC: &[u8; 4] = b"ENCP";
const VERSION: u32 = 1;

fn tensor_shapes(spec: &EncoderSpec) -> Vec<Vec<usize>> {
    let mut shapes = vec![vec![spec.vocab, spec.token_dim], vec![spec.vocab, spec.token_dim]];
    for (i, o) in spec.layer_shapes() {
        shapes.push(vec![o, i]);
        shapes.push(vec![o]);
    }
    shapes
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(params: &EncoderParams) -> Vec<u8> {
    let s = &params.spec;
    let mut out = Vec::with_capacity(64 + params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    for v in [s.vocab, s.token_dim, s.dim, s.bucket_width, s.n_buckets, s.hidden.len()] {
        put_u32(&mut out, v);
    }
    for &h in &s.hidden {
        put_u32(&mut out, h);
    }
    let shapes = tensor_shapes(s);
    put_u32(&mut out, shapes.len());
    for (shape, tensor) in shapes.iter().zip(params.tensors()) {
        put_u32(&mut out, shape.len());
        for &e in shape {
            put_u32(&mut out, e);
        }
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"ENCP\"")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let vocab = r.u32()? as usize;
    let token_dim = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let bucket_width = r.u32()? as usize;
    let n_buckets = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden * 4 > r.remaining() {
        return Err(Error::Format("truncated hidden layer list".into()));
    }
    let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let spec = EncoderSpec { vocab, token_dim, hidden, dim, bucket_width, n_buckets };
    spec.validate().map_err(|e| Error::Format(format!("invalid encoder spec: {e}")))?;

    let shapes = tensor_shapes(&spec);
    let count = r.u32()? as usize;
    if count != shapes.len() {
        return Err(Error::Format(format!("expected {} tensors, found {count}", shapes.len())));
    }
    let total: usize = shapes
        .iter()
        .try_fold(0usize, |acc, s| s.iter().try_fold(8usize, |a, &e| a.checked_mul(e)).and_then(|n| acc.checked_add(n)))
        .ok_or_else(|| Error::Format("tensor sizes overflow".into()))?;
    if total > r.remaining() {
        return Err(Error::Format(format!("truncated payload: tensors need {total} bytes, {} remain", r.remaining())));
    }

    let mut params = EncoderParams::zeros(spec)?;
    for (k, (shape, tensor)) in shapes.iter().zip(params.tensors_mut()).enumerate() {
        let rank = r.u32()? as usize;
        if rank != shape.len() {
            return Err(Error::Format(format!("tensor {k}: rank {rank}, expected {}", shape.len())));
        }
        for &e in shape {
            let got = r.u32()? as usize;
            if got != e {
                return Err(Error::Format(format!("tensor {k}: extent {got}, expected {e}")));
            }
        }
        for v in tensor.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    if !params.is_finite() {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok(params)
}

pub fn save(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(params))
}

pub fn load(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EncoderSpec {
        EncoderSpec { vocab: 32, token_dim: 4, hidden: vec![5], dim: 3, bucket_width: 4, n_buckets: 2 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = EncoderParams::init(spec(), 7).unwrap();
        let back = from_bytes(&to_bytes(&p)).unwrap();
        let a: Vec<u64> = p.tensors().concat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.tensors().concat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.spec, p.spec);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&EncoderParams::init(spec(), 7).unwrap());
        let mut bad = bytes.clone();
        bad[1] = b'x';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }
}
