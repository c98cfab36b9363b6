//! Orbit renders of a reconstructed asset at a fixed elevation.

use coevo_core::camera::{Camera, Lighting, Vec3};
use coevo_core::image::{Image, ImageBatch, ItemLabel};
use coevo_recon::{render_gaussians, render_mesh, GaussianSet, TriMesh};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum Asset<'a> {
    Mesh(&'a TriMesh),
    Gaussians(&'a GaussianSet),
}

impl Asset<'_> {
    pub fn render(&self, camera: &Camera, size: usize, lighting: &Lighting, background: Vec3) -> Image {
        match self {
            Asset::Mesh(m) => render_mesh(m, camera, size, lighting, background),
            Asset::Gaussians(g) => render_gaussians(g, camera, size, background),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurntableConfig {
    pub n_azimuth: usize,
    pub elevation_deg: f64,
    pub size: usize,
    pub background: Vec3,
    pub lighting: Lighting,
}

impl Default for TurntableConfig {
    fn default() -> Self {
        Self {
            n_azimuth: 160,
            elevation_deg: 40.0,
            size: 32,
            background: [1.0; 3],
            lighting: Lighting::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turntable {
    pub azimuths: Vec<f64>,
    pub elevation_deg: f64,
    pub images: ImageBatch,
}

impl Turntable {
    pub fn items(&self) -> Vec<Image> {
        (0..self.images.len()).map(|i| self.images.item(i)).collect()
    }
}

/// `n` azimuths `i·360/n` degrees, starting at the front.
pub fn azimuths(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * 360.0 / n as f64).collect()
}

pub fn render_turntable(asset: Asset<'_>, cfg: &TurntableConfig) -> Result<Turntable> {
    if cfg.n_azimuth == 0 {
        return Err(Error::InvalidArgument("turntable needs at least one azimuth".into()));
    }
    if cfg.size == 0 {
        return Err(Error::InvalidArgument("turntable image size must be positive".into()));
    }
    let az = azimuths(cfg.n_azimuth);
    let items: Vec<Image> = az
        .iter()
        .map(|&a| asset.render(&Camera::orbit(a, cfg.elevation_deg), cfg.size, &cfg.lighting, cfg.background))
        .collect();
    let mut images = ImageBatch::from_items(&items)?;
    for (label, a) in images.labels.iter_mut().zip(&az) {
        *label = ItemLabel {
            direction: Some(format!("azimuth {a}")),
            prompt: None,
        };
    }
    Ok(Turntable {
        azimuths: az,
        elevation_deg: cfg.elevation_deg,
        images,
    })
}
