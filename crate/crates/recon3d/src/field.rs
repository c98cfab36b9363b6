//! Regular density/color grids baked from Gaussians.

use coevo_core::camera::{Vec3, dot, sub};
use serde::{Deserialize, Serialize};

use crate::gaussians::{GaussianSet, CUTOFF_Q};
use crate::{Error, Result};

pub const MIN_RESOLUTION: usize = 16;

/// `R³` samples on the cube `[-half_extent, half_extent]³`, grid point
/// `(x, y, z)` at index `x + R·(y + R·z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub resolution: usize,
    pub half_extent: f64,
    pub density: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl DensityField {
    pub fn new(resolution: usize, half_extent: f64) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "field resolution {resolution} is below {MIN_RESOLUTION}"
            )));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::InvalidArgument("field extent must be positive".into()));
        }
        let n = resolution.pow(3);
        Ok(Self {
            resolution,
            half_extent,
            density: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    /// Fills the density from a function of position; colors are left as is.
    pub fn from_fn(resolution: usize, half_extent: f64, f: impl Fn(Vec3) -> f64) -> Result<Self> {
        let mut field = Self::new(resolution, half_extent)?;
        for z in 0..resolution {
            for y in 0..resolution {
                for x in 0..resolution {
                    let i = field.index(x, y, z);
                    field.density[i] = f(field.point(x, y, z));
                }
            }
        }
        field.validate()?;
        Ok(field)
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.half_extent / (self.resolution - 1) as f64
    }

    pub fn point(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let h = self.cell_size();
        [
            -self.half_extent + x as f64 * h,
            -self.half_extent + y as f64 * h,
            -self.half_extent + z as f64 * h,
        ]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.density
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.resolution.pow(3);
        if self.resolution < MIN_RESOLUTION || self.density.len() != n || self.color.len() != n {
            return Err(Error::InvalidArgument("field grid size mismatch".into()));
        }
        if self.density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument("field densities must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Trilinear color lookup, clamped to the grid.
    pub fn sample_color(&self, p: Vec3) -> Vec3 {
        let r = self.resolution;
        let h = self.cell_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let g = ((p[k] + self.half_extent) / h).clamp(0.0, (r - 1) as f64);
            let b = (g.floor() as usize).min(r - 2);
            base[k] = b;
            frac[k] = g - b as f64;
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3)
                .map(|k| if off[k] == 1 { frac[k] } else { 1.0 - frac[k] })
                .product();
            let c = self.color[self.index(base[0] + off[0], base[1] + off[1], base[2] + off[2])];
            for k in 0..3 {
                out[k] += w * c[k];
            }
        }
        out
    }
}

fn inverse3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    Some(inv)
}

/// Density at each grid point is `Σ oₖ·exp(−½·dᵀΣₖ⁻¹d)` over Gaussians within
/// the 3σ cut-off; color is the same-weighted average of Gaussian colors.
pub fn bake_field(g: &GaussianSet, resolution: usize, half_extent: f64) -> Result<DensityField> {
    g.validate()?;
    let mut field = DensityField::new(resolution, half_extent)?;
    let mut weighted = vec![[0.0; 3]; field.density.len()];
    let h = field.cell_size();
    for i in 0..g.len() {
        let cov = g.covariance(i);
        let Some(inv) = inverse3(cov) else { continue };
        let mu = g.positions[i];
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut empty = false;
        for k in 0..3 {
            let r = CUTOFF_Q.sqrt() * cov[k][k].sqrt();
            let a = ((mu[k] - r + half_extent) / h).ceil().max(0.0);
            let b = ((mu[k] + r + half_extent) / h).floor().min((resolution - 1) as f64);
            if b < a {
                empty = true;
            }
            lo[k] = a as usize;
            hi[k] = b.max(0.0) as usize;
        }
        if empty {
            continue;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let d = sub(field.point(x, y, z), mu);
                    let q = dot(d, [0, 1, 2].map(|r| dot(inv[r], d)));
                    if q > CUTOFF_Q {
                        continue;
                    }
                    let w = g.opacities[i] * (-0.5 * q).exp();
                    let idx = field.index(x, y, z);
                    field.density[idx] += w;
                    for k in 0..3 {
                        weighted[idx][k] += w * g.colors[i][k];
                    }
                }
            }
        }
    }
    for (idx, c) in weighted.into_iter().enumerate() {
        let d = field.density[idx];
        if d > 0.0 {
            field.color[idx] = c.map(|v| v / d);
        }
    }
    Ok(field)
}
