//! Reconstruction tail: posed views → 3D Gaussians → baked density grid →
//! marching-cubes triangle mesh, with OBJ/PLY export.
//!
//! Scene units and cameras follow `coevo_core::camera`: right-handed, +Y up,
//! orthographic views orbiting the origin.

pub mod field;
pub mod gaussians;
pub mod io;
pub mod mesh;
mod tables;

pub use field::{bake_field, DensityField};
pub use gaussians::{fit_gaussians, render_gaussians, FitConfig, FitResult, GaussianSet};
pub use io::{export_mesh, import_mesh, MeshFormat};
pub use mesh::{default_iso, extract_mesh, render_mesh, TriMesh};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iso threshold {iso} is not strictly inside the field range [{min}, {max}]")]
    ThresholdOutOfRange { iso: f64, min: f64, max: f64 },

    #[error("non-finite photometric loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("unknown mesh format `{0}`")]
    UnknownFormat(String),

    #[error("malformed {format} data: {msg}")]
    Parse { format: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] coevo_core::Error),
}
