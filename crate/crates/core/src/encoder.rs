//! Frozen image feature encoder.
//!
//! A seeded random convolutional embedder: `3×3` filters over the "ink"
//! image `(1 − x)/2` (so a white background contributes nothing), ReLU,
//! average pooling at `1×1`, `2×2` and `4×4`, then a fixed random projection
//! and L2 normalisation.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ensure_finite, resize, Image};
use crate::seed::Seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub embedding: Vec<f64>,
    pub encoder_id: String,
}

impl ImageFeatures {
    pub fn new(embedding: Vec<f64>, encoder_id: impl Into<String>) -> Self {
        Self {
            embedding,
            encoder_id: encoder_id.into(),
        }
    }

    pub fn zeros(dim: usize, encoder_id: impl Into<String>) -> Self {
        Self::new(vec![0.0; dim], encoder_id)
    }

    pub fn cosine(&self, other: &ImageFeatures) -> f64 {
        cosine(&self.embedding, &other.embedding)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub trait ImageEncoder: Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, img: &Image) -> Result<ImageFeatures>;
}

#[derive(Clone, Debug)]
pub struct ConvEmbedder {
    id: String,
    input_size: usize,
    filters: Array4<f64>,
    projection: Array2<f64>,
}

const POOL_GRIDS: [usize; 3] = [1, 2, 4];
const POOL_WEIGHTS: [f64; 3] = [4.0, 2.0, 1.0];

impl ConvEmbedder {
    pub fn new(id: impl Into<String>, seed: Seed, num_filters: usize, dim: usize) -> Self {
        let mut rng = seed.derive("conv-embedder").rng();
        let filters = Array4::from_shape_simple_fn((num_filters, 3, 3, 3), || {
            rng.sample::<f64, _>(StandardNormal) / 27f64.sqrt()
        });
        let pooled: usize = POOL_GRIDS.iter().map(|g| g * g * num_filters).sum();
        let rows = pooled + 1;
        let projection = Array2::from_shape_simple_fn((rows, dim), || {
            rng.sample::<f64, _>(StandardNormal) / (rows as f64).sqrt()
        });
        Self {
            id: id.into(),
            input_size: 32,
            filters,
            projection,
        }
    }

    /// The encoder used for conditioning throughout the pipeline.
    pub fn standard() -> Self {
        Self::new("conv-embedder-v1", Seed(0x5eed_e4c0), 16, 64)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }
}

impl ImageEncoder for ConvEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    fn encode(&self, img: &Image) -> Result<ImageFeatures> {
        if img.dim().0 != 3 {
            return Err(Error::InvalidArgument(format!(
                "encoder expects 3 channels, got {}",
                img.dim().0
            )));
        }
        ensure_finite(img.iter().copied(), "encoder input")?;
        let img = resize(img, self.input_size);
        let s = self.input_size;
        let ink = img.mapv(|v| (1.0 - v.clamp(-1.0, 1.0)) * 0.5);
        let nf = self.filters.dim().0;

        let mut pooled = Vec::with_capacity(self.projection.nrows());
        let mut act = vec![0.0; nf * s * s];
        for f in 0..nf {
            for i in 0..s {
                for j in 0..s {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        for di in 0..3 {
                            let y = i as isize + di as isize - 1;
                            if y < 0 || y >= s as isize {
                                continue;
                            }
                            for dj in 0..3 {
                                let x = j as isize + dj as isize - 1;
                                if x < 0 || x >= s as isize {
                                    continue;
                                }
                                acc += self.filters[[f, c, di, dj]] * ink[[c, y as usize, x as usize]];
                            }
                        }
                    }
                    act[(f * s + i) * s + j] = acc.max(0.0);
                }
            }
        }
        for (&g, &w) in POOL_GRIDS.iter().zip(&POOL_WEIGHTS) {
            let cell = s / g;
            for f in 0..nf {
                for gy in 0..g {
                    for gx in 0..g {
                        let mut acc = 0.0;
                        for i in gy * cell..(gy + 1) * cell {
                            for j in gx * cell..(gx + 1) * cell {
                                acc += act[(f * s + i) * s + j];
                            }
                        }
                        pooled.push(w * acc / (cell * cell) as f64);
                    }
                }
            }
        }
        pooled.push(1e-3);
        let v = ndarray::Array1::from(pooled).dot(&self.projection);
        let norm = v.dot(&v).sqrt();
        Ok(ImageFeatures::new(
            v.iter().map(|x| x / norm).collect(),
            self.id.clone(),
        ))
    }
}
