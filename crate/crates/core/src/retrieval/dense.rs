use std::fs;
use std::io::Write;
use std::path::Path;

use super::RankedList;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"HCEMB1";

/// Unit-norm document vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

fn normalize(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Embedding("vector has zero or non-finite norm".into()));
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, dim: usize, mut data: Vec<f32>) -> Result<EmbeddingStore> {
        if data.len() != ids.len() * dim {
            return Err(Error::Embedding(format!(
                "{} ids but {} values for dimension {dim}",
                ids.len(),
                data.len()
            )));
        }
        if dim == 0 && !ids.is_empty() {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        for (i, row) in data.chunks_mut(dim.max(1)).enumerate() {
            normalize(row).map_err(|_| Error::Embedding(format!("row {i} (`{}`) has zero norm", ids[i])))?;
        }
        Ok(EmbeddingStore { ids, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Reads an `HCEMB1` file: magic, u32 count, u32 dim, then count*dim f32,
/// all little-endian.
pub fn read_embedding_file(path: &Path) -> Result<(usize, Vec<f32>, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 14 || &bytes[..6] != MAGIC {
        return Err(Error::Embedding(format!("{}: missing HCEMB1 header", path.display())));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let body = &bytes[14..];
    if body.len() != count * dim * 4 {
        return Err(Error::Embedding(format!(
            "{}: header says {count}x{dim} floats, file holds {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, data, dim))
}

pub fn write_embedding_file(path: &Path, dim: usize, rows: &[Vec<f32>]) -> Result<()> {
    let mut out = Vec::with_capacity(14 + rows.len() * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(vectors: &Path, ids: &Path) -> Result<EmbeddingStore> {
    let (count, data, dim) = read_embedding_file(vectors)?;
    let id_text = fs::read_to_string(ids).map_err(|e| Error::io(ids, e))?;
    let id_list: Vec<String> = id_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if id_list.len() != count {
        return Err(Error::Embedding(format!(
            "{count} vectors but {} ids",
            id_list.len()
        )));
    }
    EmbeddingStore::new(id_list, dim, data)
}

/// Cosine ranking; the query is normalized here, stored rows already are.
pub fn score_dense(
    store: &EmbeddingStore,
    query_id: &str,
    query: &[f32],
    top_n: usize,
) -> Result<RankedList> {
    if query.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: query.len(),
        });
    }
    let mut q = query.to_vec();
    normalize(&mut q)?;
    let scored = store
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s: f64 = store
                .vector(i)
                .iter()
                .zip(&q)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            (id.clone(), s)
        })
        .collect();
    RankedList::from_scores(query_id, "dense", scored, Some(top_n))
}
