//! Retrieval precision of renders against a prompt gallery, plus a small
//! joint image-text encoder fitted on the synthetic corpus.

use std::collections::{BTreeMap, BTreeSet};

use coevo_core::camera::{Camera, Lighting};
use coevo_core::corpus::Subject;
use coevo_core::encoder::{cosine, ConvEmbedder, ImageEncoder};
use coevo_core::image::Image;
use coevo_core::text::tokenize;
use coevo_core::Seed;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::turntable::azimuths;
use crate::{Error, Result};

/// Images and prompts embedded into one space, compared by cosine.
pub trait EncoderPair: Sync {
    fn id(&self) -> &str;
    fn encode_image(&self, img: &Image) -> Result<Vec<f64>>;
    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RPrecisionReport {
    pub encoder: String,
    pub score: f64,
    pub successes: usize,
    pub render_count: usize,
    pub elevation_deg: Option<f64>,
    pub gallery: String,
}

impl RPrecisionReport {
    /// Binomial standard error of the score.
    pub fn standard_error(&self) -> f64 {
        if self.render_count == 0 {
            return 0.0;
        }
        (self.score * (1.0 - self.score) / self.render_count as f64).sqrt()
    }

    pub fn with_elevation(mut self, elevation_deg: f64) -> Self {
        self.elevation_deg = Some(elevation_deg);
        self
    }

    pub fn with_gallery(mut self, gallery: impl Into<String>) -> Self {
        self.gallery = gallery.into();
        self
    }
}

/// Fraction of renders whose best-matching prompt is `true_prompt`.
/// A distractor scoring exactly as high as the true prompt counts as a miss.
pub fn clip_r_precision(
    renders: &[Image],
    true_prompt: &str,
    distractors: &[String],
    encoders: &dyn EncoderPair,
) -> Result<RPrecisionReport> {
    if distractors.is_empty() {
        return Err(Error::InvalidArgument("retrieval needs at least one distractor prompt".into()));
    }
    if renders.is_empty() {
        return Err(Error::InvalidArgument("retrieval needs at least one render".into()));
    }
    let target = encoders.encode_text(true_prompt)?;
    let others = distractors
        .iter()
        .map(|p| encoders.encode_text(p))
        .collect::<Result<Vec<_>>>()?;
    let mut successes = 0;
    for img in renders {
        let e = encoders.encode_image(img)?;
        let s = cosine(&e, &target);
        if others.iter().all(|o| cosine(&e, o) < s) {
            successes += 1;
        }
    }
    Ok(RPrecisionReport {
        encoder: encoders.id().to_string(),
        score: successes as f64 / renders.len() as f64,
        successes,
        render_count: renders.len(),
        elevation_deg: None,
        gallery: format!("1 true prompt + {} distractors", distractors.len()),
    })
}

/// Joint encoder fitted as a linear probe from image features to words.
///
/// A prompt embeds as its idf-weighted bag of words over the training
/// vocabulary. An image embeds as a ridge-regression prediction of that
/// vector from the centred features of a frozen [`ConvEmbedder`] joined with
/// a coarse RGB histogram. Words that occur in every training caption get
/// zero weight.
#[derive(Clone, Debug)]
pub struct WordProbeClip {
    id: String,
    image: ConvEmbedder,
    mean: Vec<f64>,
    vocabulary: BTreeMap<String, (usize, f64)>,
    /// `dim × vocabulary` regression weights.
    weights: DMatrix<f64>,
}

pub const RIDGE: f64 = 1e-3;
/// Histogram bins per color channel.
pub const HIST_BINS: usize = 4;

/// Normalized joint RGB histogram with `HIST_BINS³` cells; values in `[-1, 1]`.
pub fn color_histogram(img: &Image) -> Vec<f64> {
    let (_, h, w) = img.dim();
    let mut out = vec![0.0; HIST_BINS.pow(3)];
    let bin = |v: f64| (((v + 1.0) / 2.0 * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
    for i in 0..h {
        for j in 0..w {
            let k = (bin(img[[0, i, j]]) * HIST_BINS + bin(img[[1, i, j]])) * HIST_BINS + bin(img[[2, i, j]]);
            out[k] += 1.0 / (h * w) as f64;
        }
    }
    out
}

fn features(image: &ConvEmbedder, img: &Image) -> Result<Vec<f64>> {
    let mut f = image.encode(img)?.embedding;
    f.extend(color_histogram(img));
    Ok(f)
}

impl WordProbeClip {
    pub fn fit(id: impl Into<String>, image: ConvEmbedder, samples: &[(Image, String)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("word probe needs training samples".into()));
        }
        let n = samples.len();
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        for (_, caption) in samples {
            for w in words(caption) {
                *doc_freq.entry(w).or_default() += 1;
            }
        }
        let vocabulary: BTreeMap<String, (usize, f64)> = doc_freq
            .into_iter()
            .enumerate()
            .map(|(i, (w, df))| (w, (i, (n as f64 / df as f64).ln())))
            .collect();
        let dim = image.dim() + HIST_BINS.pow(3);
        let feats = samples
            .iter()
            .map(|(img, _)| features(&image, img))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = vec![0.0; dim];
        for f in &feats {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let x = DMatrix::from_fn(n, dim, |r, c| feats[r][c] - mean[c]);
        let mut y = DMatrix::zeros(n, vocabulary.len());
        for (r, (_, caption)) in samples.iter().enumerate() {
            for (c, v) in bag(&vocabulary, caption) {
                y[(r, c)] = v;
            }
        }
        let gram = x.transpose() * &x + DMatrix::identity(dim, dim) * (RIDGE * n as f64);
        let weights = gram
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("word probe normal equations are singular".into()))?
            .solve(&(x.transpose() * y));
        Ok(Self {
            id: id.into(),
            image,
            mean,
            vocabulary,
            weights,
        })
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocabulary.keys().map(String::as_str)
    }
}

fn words(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Sparse idf-weighted bag of known words, unit length.
fn bag(vocabulary: &BTreeMap<String, (usize, f64)>, text: &str) -> Vec<(usize, f64)> {
    let cells: Vec<(usize, f64)> = words(text).iter().filter_map(|w| vocabulary.get(w).copied()).collect();
    let norm = cells.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Vec::new();
    }
    cells.into_iter().map(|(i, v)| (i, v / norm)).collect()
}

impl EncoderPair for WordProbeClip {
    fn id(&self) -> &str {
        &self.id
    }

    fn encode_image(&self, img: &Image) -> Result<Vec<f64>> {
        let f = features(&self.image, img)?;
        let centred = DVector::from_iterator(f.len(), f.iter().zip(&self.mean).map(|(v, m)| v - m));
        Ok((self.weights.transpose() * centred).iter().copied().collect())
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.vocabulary.len()];
        for (i, v) in bag(&self.vocabulary, text) {
            out[i] = v;
        }
        Ok(out)
    }
}

/// Captioned orbit renders of corpus subjects.
pub fn corpus_samples(subjects: &[Subject], n_azimuth: usize, elevation_deg: f64, size: usize) -> Vec<(Image, String)> {
    let lighting = Lighting::default();
    let mut out = Vec::with_capacity(subjects.len() * n_azimuth);
    for s in subjects {
        for a in azimuths(n_azimuth) {
            let img = s.render(&Camera::orbit(a, elevation_deg), size, &lighting).color;
            out.push((img, s.prompt().to_string()));
        }
    }
    out
}

/// Three toy encoders of increasing width, fitted on the same samples.
pub fn toy_clip_family(samples: &[(Image, String)]) -> Result<Vec<WordProbeClip>> {
    [("toy-clip-s", 8, 32), ("toy-clip-m", 16, 64), ("toy-clip-l", 32, 128)]
        .into_iter()
        .map(|(id, filters, dim)| {
            let embedder = ConvEmbedder::new(id, Seed(0xc11b).derive(id), filters, dim);
            WordProbeClip::fit(id, embedder, samples)
        })
        .collect()
}
