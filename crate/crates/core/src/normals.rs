//! Single-view normal estimation for the synthetic corpus.
//!
//! [`ShadingNormalEstimator`] inflates each foreground component of the
//! silhouette into a height field `h = sqrt(d·(2D − d))` (`d` the distance to
//! the background, `D` its maximum in the component), which is exact for a
//! disk, and then nudges the normals toward the Lambertian shading equation
//! under the known camera-fixed light.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};

use crate::camera::{dot, normalize, Lighting, Vec3, BACK_FACING};
use crate::image::Image;

pub trait NormalEstimator: Sync {
    /// Camera-space unit normals; background pixels hold [`BACK_FACING`].
    fn estimate(&self, color: &Image) -> Image;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadingNormalEstimator {
    pub lighting: Lighting,
    /// Max-channel distance from white (in `[0, 1]` units) above which a pixel
    /// is foreground.
    pub foreground_threshold: f64,
    /// Weight of the shading correction, 0 disables it.
    pub shading_weight: f64,
}

impl Default for ShadingNormalEstimator {
    fn default() -> Self {
        Self {
            lighting: Lighting::default(),
            foreground_threshold: 0.15,
            shading_weight: 0.3,
        }
    }
}

pub fn foreground_mask(color: &Image, threshold: f64) -> Array2<bool> {
    let (_, h, w) = color.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        (0..3)
            .map(|k| 1.0 - (color[[k, i, j]] + 1.0) / 2.0)
            .fold(0.0, f64::max)
            > threshold
    })
}

/// Euclidean distance from each foreground pixel centre to the nearest
/// background pixel centre, pixels outside the image counting as background.
fn distance_to_background(mask: &Array2<bool>) -> Array2<f64> {
    let (h, w) = mask.dim();
    let inside = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w && mask[[i as usize, j as usize]]
    };
    let mut border = Vec::new();
    for i in -1..=h as isize {
        for j in -1..=w as isize {
            if inside(i, j) {
                continue;
            }
            let touches = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|(di, dj)| inside(i + di, j + dj));
            if touches {
                border.push((i as f64, j as f64));
            }
        }
    }
    Array2::from_shape_fn((h, w), |(i, j)| {
        if !mask[[i, j]] {
            return 0.0;
        }
        border
            .iter()
            .map(|&(bi, bj)| ((bi - i as f64).powi(2) + (bj - j as f64).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
            - 0.5
    })
}

fn components(mask: &Array2<bool>) -> (Array2<usize>, usize) {
    let (h, w) = mask.dim();
    let mut label = Array2::from_elem((h, w), usize::MAX);
    let mut count = 0;
    for si in 0..h {
        for sj in 0..w {
            if !mask[[si, sj]] || label[[si, sj]] != usize::MAX {
                continue;
            }
            let mut queue = VecDeque::from([(si, sj)]);
            label[[si, sj]] = count;
            while let Some((i, j)) = queue.pop_front() {
                let nbrs = [
                    (i.wrapping_sub(1), j),
                    (i + 1, j),
                    (i, j.wrapping_sub(1)),
                    (i, j + 1),
                ];
                for (a, b) in nbrs {
                    if a < h && b < w && mask[[a, b]] && label[[a, b]] == usize::MAX {
                        label[[a, b]] = count;
                        queue.push_back((a, b));
                    }
                }
            }
            count += 1;
        }
    }
    (label, count)
}

fn luminance(color: &Image, i: usize, j: usize) -> f64 {
    (0..3).map(|k| (color[[k, i, j]] + 1.0) / 2.0).sum::<f64>() / 3.0
}

impl ShadingNormalEstimator {
    fn inflate(&self, mask: &Array2<bool>) -> Array2<f64> {
        let d = distance_to_background(mask);
        let (label, n) = components(mask);
        let mut dmax = vec![0.0f64; n];
        for ((i, j), &l) in label.indexed_iter() {
            if l != usize::MAX {
                dmax[l] = dmax[l].max(d[[i, j]] + 0.5);
            }
        }
        Array2::from_shape_fn(mask.dim(), |(i, j)| {
            let l = label[[i, j]];
            if l == usize::MAX {
                return 0.0;
            }
            let x = d[[i, j]].max(0.0);
            (x * (2.0 * dmax[l] - x)).max(0.0).sqrt()
        })
    }
}

impl NormalEstimator for ShadingNormalEstimator {
    fn estimate(&self, color: &Image) -> Image {
        let (_, h, w) = color.dim();
        let mask = foreground_mask(color, self.foreground_threshold);
        let height = self.inflate(&mask);
        let at = |i: isize, j: isize| {
            if i < 0 || j < 0 || i as usize >= h || j as usize >= w {
                0.0
            } else {
                height[[i as usize, j as usize]]
            }
        };
        let mut normals = Array3::zeros((3, h, w));
        let mut fg: Vec<(usize, usize, Vec3)> = Vec::new();
        for i in 0..h {
            for j in 0..w {
                let n = if mask[[i, j]] {
                    let (ii, jj) = (i as isize, j as isize);
                    let dx = (at(ii, jj + 1) - at(ii, jj - 1)) / 2.0;
                    // image rows grow downward, camera y grows upward
                    let dy = (at(ii - 1, jj) - at(ii + 1, jj)) / 2.0;
                    let n = normalize([-dx, -dy, 1.0]);
                    fg.push((i, j, n));
                    n
                } else {
                    BACK_FACING
                };
                for k in 0..3 {
                    normals[[k, i, j]] = n[k];
                }
            }
        }
        if self.shading_weight > 0.0 && !fg.is_empty() {
            let l = self.lighting.light_camera;
            // the brightest pixel is assumed to face the light
            let (bi, bj, _) = fg
                .iter()
                .copied()
                .max_by(|a, b| luminance(color, a.0, a.1).total_cmp(&luminance(color, b.0, b.1)))
                .unwrap();
            let peak = luminance(color, bi, bj).max(1e-6);
            let full = self.lighting.ambient + self.lighting.diffuse;
            for (i, j, n) in fg {
                let shade = luminance(color, i, j) / peak * full;
                let target = ((shade - self.lighting.ambient) / self.lighting.diffuse).clamp(0.0, 1.0);
                let cur = dot(n, l);
                if cur <= 0.0 && target <= 0.0 {
                    continue;
                }
                let step = self.shading_weight * (target - cur.max(0.0));
                let mut r = normalize([n[0] + step * l[0], n[1] + step * l[1], n[2] + step * l[2]]);
                if r[2] < 0.0 {
                    r = n;
                }
                for k in 0..3 {
                    normals[[k, i, j]] = r[k];
                }
            }
        }
        normals
    }
}

/// Median angle in degrees between two normal maps over `mask`.
pub fn median_angular_error(a: &Image, b: &Image, mask: &Array2<bool>) -> f64 {
    let mut errs: Vec<f64> = mask
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|((i, j), _)| {
            let u = [a[[0, i, j]], a[[1, i, j]], a[[2, i, j]]];
            let v = [b[[0, i, j]], b[[1, i, j]], b[[2, i, j]]];
            dot(u, v).clamp(-1.0, 1.0).acos().to_degrees()
        })
        .collect();
    if errs.is_empty() {
        return 0.0;
    }
    errs.sort_by(f64::total_cmp);
    errs[errs.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Direction;
    use crate::corpus::Subject;

    #[test]
    fn sphere_normals_within_fifteen_degrees() {
        let est = ShadingNormalEstimator::default();
        for size in [32, 64] {
            let r = Subject::red_sphere().render(&Direction::Front.camera(), size, &est.lighting);
            let n = est.estimate(&r.color);
            let err = median_angular_error(&n, &r.normal, &r.mask);
            assert!(err < 15.0, "size {size}: median error {err}");
        }
    }

    #[test]
    fn foreground_is_unit_and_background_back_facing() {
        let est = ShadingNormalEstimator::default();
        let r = Subject::red_sphere().render(&Direction::Left.camera(), 32, &est.lighting);
        let n = est.estimate(&r.color);
        let mask = foreground_mask(&r.color, est.foreground_threshold);
        for ((i, j), &m) in mask.indexed_iter() {
            let v = [n[[0, i, j]], n[[1, i, j]], n[[2, i, j]]];
            assert!((dot(v, v).sqrt() - 1.0).abs() < 1e-3);
            if !m {
                assert_eq!(v, BACK_FACING);
            }
        }
    }

    #[test]
    fn blank_image_is_all_back_facing() {
        let n = ShadingNormalEstimator::default().estimate(&Array3::ones((3, 16, 16)));
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!([n[[0, i, j]], n[[1, i, j]], n[[2, i, j]]], BACK_FACING);
            }
        }
    }
}
