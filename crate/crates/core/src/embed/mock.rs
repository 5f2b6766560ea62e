//! Deterministic stand-in for a text-embedding model.
//!
//! A title is split on whitespace; each lower-cased token maps to a
//! pseudo-random vector drawn uniformly from [-1, 1)^dim by a ChaCha8 stream
//! keyed on FNV-1a(token) and the seed. The title vector is the normalised
//! sum of its token vectors, so titles sharing words point in similar
//! directions while unrelated titles are near-orthogonal. Only integer
//! hashing, IEEE multiplication/addition and sqrt are involved, which makes
//! the output identical on every platform.

use rand::Rng;

use super::matrix::EmbeddingMatrix;
use crate::corpus::ItemCatalog;
use crate::error::{Error, Result};
use crate::rng;

pub fn mock_embed(catalog: &ItemCatalog, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::InvalidConfig(format!("mock embedding dim must be >= 2, got {dim}")));
    }
    let rows = crate::par::map_range(catalog.len(), |i| embed_title(catalog.title(i), dim, seed));
    EmbeddingMatrix::from_rows(&rows)
}

pub fn embed_title(title: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut acc = vec![0.0f32; dim];
    let mut any = false;
    for token in title.split_whitespace() {
        any = true;
        let lower = token.to_lowercase();
        add_token(&mut acc, &lower, seed);
    }
    if !any {
        add_token(&mut acc, title, seed);
    }
    let norm = acc.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|x| *x /= norm);
    } else {
        acc[0] = 1.0;
    }
    acc
}

fn add_token(acc: &mut [f32], token: &str, seed: u64) {
    let mut r = rng::stream(seed, &[rng::fnv1a64(token.as_bytes())]);
    for a in acc.iter_mut() {
        // 24 random bits -> exact f32 in [-1, 1)
        let bits = r.gen::<u32>() >> 8;
        *a += (bits as f32) * (2.0 / 16_777_216.0) - 1.0;
    }
}
