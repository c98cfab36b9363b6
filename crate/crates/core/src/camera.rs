//! Camera convention: right-handed world, +Y up, azimuth measured about +Y
//! from the +Z axis (azimuth 0 looks at the subject's front, from +Z towards
//! the origin), elevation positive above the XZ plane. Projection is
//! orthographic over `[-half_extent, half_extent]²` in scene units, image
//! row 0 at the top.
//!
//! Camera-space normals use `x` = image right, `y` = image up and `z` towards
//! the viewer, so visible surfaces have `z > 0` and the back-facing vector is
//! `(0, 0, -1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACK_FACING: [f64; 3] = [0.0, 0.0, -1.0];

/// The six canonical view directions, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Front,
    FrontRight,
    Right,
    Back,
    Left,
    FrontLeft,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Front,
        Direction::FrontRight,
        Direction::Right,
        Direction::Back,
        Direction::Left,
        Direction::FrontLeft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Front => "front",
            Direction::FrontRight => "front-right",
            Direction::Right => "right",
            Direction::Back => "back",
            Direction::Left => "left",
            Direction::FrontLeft => "front-left",
        }
    }

    pub fn azimuth_deg(self) -> f64 {
        match self {
            Direction::Front => 0.0,
            Direction::FrontRight => 45.0,
            Direction::Right => 90.0,
            Direction::Back => 180.0,
            Direction::Left => 270.0,
            Direction::FrontLeft => 315.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn camera(self) -> Camera {
        Camera::orbit(self.azimuth_deg(), 0.0)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown direction `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub half_extent: f64,
}

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

/// Orthonormal camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    /// Viewing direction (towards the scene).
    pub forward: Vec3,
}

impl Camera {
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
            radius: 3.0,
            half_extent: 1.0,
        }
    }

    pub fn frame(&self) -> CameraFrame {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        let position = [
            self.radius * az.sin() * el.cos(),
            self.radius * el.sin(),
            self.radius * az.cos() * el.cos(),
        ];
        let forward = normalize(scale(position, -1.0));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        CameraFrame {
            position,
            right,
            up,
            forward,
        }
    }

    /// Pixels per scene unit for an `size×size` image.
    pub fn pixel_scale(&self, size: usize) -> f64 {
        size as f64 / (2.0 * self.half_extent)
    }
}

impl CameraFrame {
    /// World vector → camera-space `(right, up, towards-viewer)`.
    pub fn to_camera(&self, v: Vec3) -> Vec3 {
        [dot(v, self.right), dot(v, self.up), -dot(v, self.forward)]
    }

    pub fn from_camera(&self, v: Vec3) -> Vec3 {
        add(
            add(scale(self.right, v[0]), scale(self.up, v[1])),
            scale(self.forward, -v[2]),
        )
    }
}

/// Lambertian shading with a light fixed in camera space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub light_camera: Vec3,
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            light_camera: normalize([-0.35, 0.45, 0.82]),
            ambient: 0.45,
            diffuse: 0.55,
        }
    }
}

impl Lighting {
    /// Shading factor for a camera-space normal.
    pub fn shade(&self, n_cam: Vec3) -> f64 {
        self.ambient + self.diffuse * dot(n_cam, self.light_camera).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_camera_looks_down_negative_z() {
        let f = Direction::Front.camera().frame();
        assert!((f.forward[2] + 1.0).abs() < 1e-12);
        assert!((f.right[0] - 1.0).abs() < 1e-12);
        assert!((f.up[1] - 1.0).abs() < 1e-12);
        let n = f.to_camera([0.0, 0.0, 1.0]);
        assert!((n[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frame_is_orthonormal_at_elevation() {
        let f = Camera::orbit(123.0, 40.0).frame();
        for (a, b) in [(f.right, f.up), (f.up, f.forward), (f.right, f.forward)] {
            assert!(dot(a, b).abs() < 1e-12);
        }
        let v = [0.3, -0.2, 0.9];
        let back = f.from_camera(f.to_camera(v));
        for k in 0..3 {
            assert!((back[k] - v[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_names_round_trip() {
        for d in Direction::ALL {
            assert_eq!(d.name().parse::<Direction>().unwrap(), d);
        }
        assert!("up".parse::<Direction>().is_err());
    }
}
