//! Toy pixel-space diffusion models for subject-driven 3D generation: the
//! personalised 2D model, the multi-view color + normal model, their
//! fine-tuning stages and a procedural subject corpus.

pub mod camera;
pub mod checkpoint;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod image;
pub mod layers;
pub mod mvdiffusion;
pub mod normals;
pub mod optim;
pub mod params;
pub mod personalizer;
pub mod pretrain;
pub mod schedule;
pub mod seed;
pub mod text;
pub mod views;

pub use error::{Error, Result};
pub use seed::Seed;
