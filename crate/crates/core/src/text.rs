//! Fixed hashed token embeddings for prompt conditioning.
//!
//! Each lower-cased word maps to a deterministic Gaussian vector seeded by
//! the word itself, so unseen identifiers get a stable embedding of their own.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed::seed_for_str;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == '.')
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `L×dim` token matrix; empty when the text has no tokens.
pub fn embed_text(text: &str, dim: usize) -> Array2<f64> {
    let tokens = tokenize(text);
    let mut out = Array2::zeros((tokens.len(), dim));
    let scale = 1.0 / (dim as f64).sqrt();
    for (i, tok) in tokens.iter().enumerate() {
        let mut rng = seed_for_str(&format!("token:{tok}")).rng();
        for j in 0..dim {
            out[[i, j]] = rng.sample::<f64, _>(StandardNormal) * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_on_commas() {
        assert_eq!(
            tokenize("a xxy5syt00 dog, front-right"),
            vec!["a", "xxy5syt00", "dog", "front-right"]
        );
        assert!(tokenize("  ").is_empty());
    }

    #[test]
    fn same_word_same_vector() {
        let a = embed_text("dog dog", 8);
        assert_eq!(a.row(0), a.row(1));
        assert_ne!(embed_text("cat", 8), embed_text("dog", 8));
    }
}
