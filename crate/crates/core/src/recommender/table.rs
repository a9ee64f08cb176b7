use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DldaError, Result};

const MAGIC: &[u8; 8] = b"DLDAEMB\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mf,
    Lightgcn,
}

impl ModelKind {
    fn tag(self) -> u32 {
        match self {
            ModelKind::Mf => 0,
            ModelKind::Lightgcn => 1,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Mf),
            1 => Ok(ModelKind::Lightgcn),
            other => Err(DldaError::Format(format!("unknown model tag {other}"))),
        }
    }
}

/// User and item embeddings, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    users: Vec<f64>,
    items: Vec<f64>,
}

/// Provenance stored in an embedding checkpoint header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableMeta {
    pub model: ModelKind,
    pub seed: u64,
}

impl EmbeddingTable {
    pub fn new(dim: usize, users: Vec<f64>, items: Vec<f64>) -> Result<Self> {
        if dim == 0 || !users.len().is_multiple_of(dim) || !items.len().is_multiple_of(dim) {
            return Err(DldaError::invalid(format!(
                "embedding buffers of {} and {} values do not split into rows of {dim}",
                users.len(),
                items.len()
            )));
        }
        Ok(Self { dim, users, items })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_count(&self) -> usize {
        self.users.len() / self.dim
    }

    pub fn item_count(&self) -> usize {
        self.items.len() / self.dim
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    pub fn user_data(&self) -> &[f64] {
        &self.users
    }

    pub fn item_data(&self) -> &[f64] {
        &self.items
    }

    pub fn user_rows(&self) -> Vec<Vec<f64>> {
        self.users.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(&self.items).all(|v| v.is_finite())
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user(u), self.item(i))
    }

    /// `e_u . e_i` for every item.
    pub fn scores(&self, u: usize) -> Vec<f64> {
        let eu = self.user(u);
        self.items.chunks(self.dim).map(|ei| dot(eu, ei)).collect()
    }

    /// Keeps only the first `m` users.
    pub fn truncate_users(&self, m: usize) -> Self {
        Self {
            dim: self.dim,
            users: self.users[..m * self.dim].to_vec(),
            items: self.items.clone(),
        }
    }

    pub fn to_bytes(&self, meta: TableMeta) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.users.len() + self.items.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&meta.model.tag().to_le_bytes());
        out.extend_from_slice(&(self.user_count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.item_count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&meta.seed.to_le_bytes());
        for v in self.users.iter().chain(&self.items) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, TableMeta)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DldaError::Format("not an embedding checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DldaError::Format(format!("unsupported embedding version {version}")));
        }
        let model = ModelKind::from_tag(r.u32()?)?;
        let (m, n, d) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        let seed = r.u64()?;
        let expected = m
            .checked_add(n)
            .and_then(|rows| rows.checked_mul(d))
            .ok_or_else(|| DldaError::Format("header dimensions overflow".into()))?;
        if r.remaining() != expected * 8 {
            return Err(DldaError::Format(format!(
                "expected {expected} values, found {} bytes",
                r.remaining()
            )));
        }
        let mut vals = Vec::with_capacity(expected);
        for _ in 0..expected {
            vals.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let items = vals.split_off(m * d);
        Ok((Self::new(d, vals, items)?, TableMeta { model, seed }))
    }

    pub fn save(&self, path: &Path, meta: TableMeta) -> Result<()> {
        fs::write(path, self.to_bytes(meta)).map_err(|e| DldaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, TableMeta)> {
        if !path.exists() {
            return Err(DldaError::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| DldaError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DldaError::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let t = EmbeddingTable::new(2, vec![1.0, -2.0, 0.5, 3.25], vec![0.1, 0.2]).unwrap();
        let meta = TableMeta {
            model: ModelKind::Lightgcn,
            seed: 99,
        };
        let bytes = t.to_bytes(meta);
        assert_eq!(bytes.len(), 48 + 8 * 6);
        let (back, m) = EmbeddingTable::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(m, meta);
        assert!(EmbeddingTable::from_bytes(&bytes[..50]).is_err());
    }

    #[test]
    fn scores_are_dot_products() {
        let t = EmbeddingTable::new(2, vec![3.0, 1.0], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.scores(0), vec![3.0, 2.0]);
    }
}
