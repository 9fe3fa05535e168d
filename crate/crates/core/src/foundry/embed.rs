use std::io::Write;

use thiserror::Error;

use crate::corpus::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedder failed: {0}")]
    Failed(String),
}

/// Maps text to a fixed-dimension, L2-normalised vector. Must be
/// deterministic.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Bag-of-tokens hashing embedder: FNV-1a of each lowercase whitespace
/// token picks one of `dim` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

pub const REFERENCE_DIM: usize = 256;

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        HashingEmbedder { dim }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(REFERENCE_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let lower = text.to_lowercase();
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for tok in lower.split_whitespace() {
            v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbedError::EmptyText);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// The reference embedder applied to one text.
pub fn reference_embed(text: &str) -> Result<Vec<f64>, EmbedError> {
    HashingEmbedder::default().embed(text)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// CSV of `id,label,v0..v{D-1}` for external projection tools.
pub fn export_embeddings<W: Write>(
    dataset: &Dataset,
    embedder: &dyn Embedder,
    mut out: W,
) -> Result<(), super::FoundryError> {
    let mut header = String::from("id,label");
    for i in 0..embedder.dim() {
        header.push_str(&format!(",v{i}"));
    }
    writeln!(out, "{header}")?;
    for ex in dataset.examples() {
        let v = embedder.embed(&ex.text)?;
        let mut row = format!("{},{}", ex.id, ex.label);
        for x in v {
            row.push_str(&format!(",{x}"));
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}
