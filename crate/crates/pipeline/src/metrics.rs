//! Embedding-based caption metrics: CLIP-style score and retrieval
//! R-precision.

use std::collections::BTreeMap;
use std::path::PathBuf;

use diffurank_core::clients::{cosine, ClientError, EmbedderClient};

pub const DEFAULT_RECALL_KS: [usize; 3] = [1, 5, 10];

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("embedding dimension mismatch: {expected} vs {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding is not unit norm (norm {0})")]
    NotUnitNorm(f64),
    #[error("no images to score")]
    NoImages,
    #[error("{pairs} pairs cannot rank at k = {k}")]
    TooFewPairs { pairs: usize, k: usize },
    #[error("recall cutoffs must be >= 1")]
    ZeroK,
    #[error(transparent)]
    Client(#[from] ClientError),
}

fn check_unit(v: &[f64]) -> Result<(), MetricsError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(MetricsError::NotUnitNorm(norm));
    }
    Ok(())
}

fn check_dims(expected: usize, v: &[f64]) -> Result<(), MetricsError> {
    if v.len() != expected {
        return Err(MetricsError::DimensionMismatch {
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

/// Mean cosine similarity between a caption embedding and image embeddings,
/// times 100.
pub fn clip_score_from_embeddings(caption: &[f64], images: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if images.is_empty() {
        return Err(MetricsError::NoImages);
    }
    check_unit(caption)?;
    let mut total = 0.0;
    for image in images {
        check_dims(caption.len(), image)?;
        check_unit(image)?;
        total += cosine(caption, image);
    }
    Ok(100.0 * total / images.len() as f64)
}

pub fn clip_score(embedder: &dyn EmbedderClient, caption: &str, image_refs: &[PathBuf]) -> Result<f64, MetricsError> {
    let text = embedder.embed_text(caption)?;
    let images = image_refs
        .iter()
        .map(|p| embedder.embed_image(p))
        .collect::<Result<Vec<_>, _>>()?;
    clip_score_from_embeddings(&text, &images)
}

/// Recall@k of caption retrieval: image `i` is a hit at `k` when its own
/// caption `i` ranks within the top `k` of all captions by cosine
/// similarity. Captions with equal similarity rank by index, lower first.
pub fn r_precision_from_embeddings(
    images: &[Vec<f64>],
    captions: &[Vec<f64>],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    let n = images.len();
    if captions.len() != n {
        return Err(MetricsError::DimensionMismatch {
            expected: n,
            found: captions.len(),
        });
    }
    if ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    if let Some(&k) = ks.iter().max().filter(|&&k| k > n) {
        return Err(MetricsError::TooFewPairs { pairs: n, k });
    }
    if n == 0 {
        return Err(MetricsError::NoImages);
    }
    let dim = images[0].len();
    for v in images.iter().chain(captions) {
        check_dims(dim, v)?;
        check_unit(v)?;
    }

    let ranks: Vec<usize> = images
        .iter()
        .enumerate()
        .map(|(i, image)| {
            let sims: Vec<f64> = captions.iter().map(|c| cosine(image, c)).collect();
            let own = sims[i];
            sims.iter()
                .enumerate()
                .filter(|&(j, s)| *s > own || (*s == own && j < i))
                .count()
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

pub fn clip_r_precision(
    embedder: &dyn EmbedderClient,
    pairs: &[(PathBuf, String)],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    let mut images = Vec::with_capacity(pairs.len());
    let mut captions = Vec::with_capacity(pairs.len());
    for (image, caption) in pairs {
        images.push(embedder.embed_image(image)?);
        captions.push(embedder.embed_text(caption)?);
    }
    r_precision_from_embeddings(&images, &captions, ks)
}
