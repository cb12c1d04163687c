//! Embedding vectors, cosine geometry, and the binary embedding-table format.
//!
//! Vectors are held as `f64` in memory. Tables are stored as `f32` both in
//! memory and on disk so that a write/read round trip is bit-exact.

use std::collections::HashMap;
use std::fs;
use std::ops::{Add, Neg, Sub};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// A dense real vector living in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps `values`, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Normalization(format!("non-finite entry at index {i}")));
        }
        Ok(Embedding(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    /// Standard basis vector `e_index` of length `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Embedding(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dim(self, other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scale(&self, c: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * c).collect())
    }

    pub fn try_add(&self, other: &Embedding) -> Result<Embedding> {
        check_dim(self, other)?;
        Ok(Embedding(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn try_sub(&self, other: &Embedding) -> Result<Embedding> {
        check_dim(self, other)?;
        Ok(Embedding(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `self * a + other * b`, the building block of prompt blending.
    pub fn lincomb(&self, a: f64, other: &Embedding, b: f64) -> Result<Embedding> {
        check_dim(self, other)?;
        Ok(Embedding(self.0.iter().zip(&other.0).map(|(x, y)| a * x + b * y).collect()))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

impl Neg for &Embedding {
    type Output = Embedding;
    fn neg(self) -> Embedding {
        Embedding(self.0.iter().map(|v| -v).collect())
    }
}

impl Neg for Embedding {
    type Output = Embedding;
    fn neg(self) -> Embedding {
        -&self
    }
}

/// Panicking arithmetic for call sites that already checked dimensions.
impl Add for &Embedding {
    type Output = Embedding;
    fn add(self, rhs: &Embedding) -> Embedding {
        self.try_add(rhs).expect("embedding dimension mismatch")
    }
}

impl Sub for &Embedding {
    type Output = Embedding;
    fn sub(self, rhs: &Embedding) -> Embedding {
        self.try_sub(rhs).expect("embedding dimension mismatch")
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(a.dim(), b.dim()));
    }
    Ok(())
}

/// Dot product with a 64-bit accumulator.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rescales `v` to unit L2 norm.
pub fn normalize(v: &Embedding) -> Result<Embedding> {
    if let Some(i) = v.0.iter().position(|x| !x.is_finite()) {
        return Err(Error::Normalization(format!("non-finite entry at index {i}")));
    }
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::Normalization("zero vector".into()));
    }
    if !n.is_finite() {
        return Err(Error::Normalization("norm overflows".into()));
    }
    Ok(Embedding(v.0.iter().map(|x| x / n).collect()))
}

/// Cosine of the angle between `u` and `v`. Inputs need not be unit-norm.
pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64> {
    check_dim(u, v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Normalization("zero vector".into()));
    }
    Ok(dot(&u.0, &v.0) / (nu * nv))
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &Embedding, v: &Embedding) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

const TABLE_MAGIC: &[u8; 4] = b"EMBT";
const TABLE_VERSION: u32 = 1;
const FLAG_NORMALIZED: u32 = 1;

/// An id-indexed matrix of `f32` embeddings (one row per item).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!("matrix has {} values, expected {} x {}", data.len(), ids.len(), dim)));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate id {id:?}")));
            }
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at flat index {i}")));
        }
        let table = EmbeddingTable { ids, dim, data, normalized, index };
        if normalized {
            for i in 0..table.len() {
                let n = table.row(i).iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Format(format!("row {i} has norm {n}, but the table is flagged normalized")));
                }
            }
        }
        Ok(table)
    }

    /// Builds a table from `f64` rows, rounding to `f32`.
    pub fn from_rows(ids: Vec<String>, rows: &[Embedding], normalized: bool) -> Result<Self> {
        let dim = rows.first().map(Embedding::dim).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.dim() != dim {
                return Err(Error::dim(dim, r.dim()));
            }
            data.extend(r.to_f32());
        }
        Self::new(ids, dim, data, normalized)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Row `i` widened to an [`Embedding`].
    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding(self.row(i).iter().map(|&v| v as f64).collect())
    }

    pub fn get(&self, id: &str) -> Option<Embedding> {
        self.position(id).map(|i| self.embedding(i))
    }

    pub fn require(&self, id: &str) -> Result<Embedding> {
        self.get(id).ok_or_else(|| Error::Data(format!("id {id:?} not found in embedding table")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.ids.len() * 16 + self.data.len() * 4);
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let flags = if self.normalized { FLAG_NORMALIZED } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != TABLE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"EMBT\"")));
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let flags = r.u32()?;
        if flags & !FLAG_NORMALIZED != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
        }
        let payload = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("count x dim overflows".into()))?;
        // every id costs at least its 2-byte length prefix
        let min_rest = count
            .checked_mul(2)
            .and_then(|n| n.checked_add(payload))
            .ok_or_else(|| Error::Format("count x dim overflows".into()))?;
        if r.remaining() < min_rest {
            return Err(Error::Format(format!(
                "truncated payload: header declares {count} rows of dim {dim}, only {} bytes follow",
                r.remaining()
            )));
        }
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|e| Error::Format(format!("id is not valid UTF-8: {e}")))?;
            ids.push(id.to_owned());
        }
        if r.remaining() != payload {
            return Err(Error::Format(format!("payload is {} bytes, header implies {payload}", r.remaining())));
        }
        let data = r.take(payload)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        EmbeddingTable::new(ids, dim, data, flags & FLAG_NORMALIZED != 0)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).map_err(|e| Error::Data(format!("cannot read embedding table {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Little-endian cursor shared by the binary formats.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "unexpected end of data: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}
