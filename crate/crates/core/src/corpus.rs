//! Procedural subject corpus.
//!
//! Subjects are composites of one to three coloured primitives (sphere,
//! yawed box, upright cone). Views are ray-cast orthographically with the
//! camera-fixed [`Lighting`], 2×2 supersampled for colour, and come with
//! camera-space normal maps and foreground masks.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{add, dot, normalize, scale, sub, Camera, Direction, Lighting, Vec3, BACK_FACING};
use crate::error::Result;
use crate::image::Image;
use crate::seed::Seed;
use crate::views::MultiViewBatch;

/// Seed of the corpus shipped with the repository.
pub const CORPUS_SEED: Seed = Seed(20240314);
pub const CORPUS_SIZE: usize = 32;
/// Subjects `0..TRAIN_SUBJECTS` train the base models; the rest are held out.
pub const TRAIN_SUBJECTS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: Vec3, yaw_deg: f64 },
    Cone { radius: f64, height: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub color_name: String,
    /// Albedo in `[0, 1]`.
    pub albedo: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub class_noun: String,
    pub description: String,
    pub primitives: Vec<Primitive>,
}

pub const PALETTE: [(&str, Vec3); 10] = [
    ("red", [0.85, 0.12, 0.10]),
    ("green", [0.15, 0.65, 0.20]),
    ("blue", [0.12, 0.25, 0.85]),
    ("yellow", [0.92, 0.80, 0.10]),
    ("orange", [0.95, 0.50, 0.08]),
    ("purple", [0.50, 0.15, 0.65]),
    ("cyan", [0.10, 0.70, 0.75]),
    ("pink", [0.90, 0.40, 0.60]),
    ("brown", [0.45, 0.28, 0.12]),
    ("black", [0.08, 0.08, 0.10]),
];

fn shape_noun(s: &Shape) -> &'static str {
    match s {
        Shape::Sphere { .. } => "ball",
        Shape::Box { .. } => "block",
        Shape::Cone { .. } => "cone",
    }
}

impl Subject {
    /// A single red sphere of radius 0.6 at the origin.
    pub fn red_sphere() -> Subject {
        Subject {
            id: "subject-00".into(),
            class_noun: "ball".into(),
            description: "a red ball".into(),
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 0.6 },
                center: [0.0; 3],
                color_name: "red".into(),
                albedo: PALETTE[0].1,
            }],
        }
    }

    /// Color, normal and mask for one camera.
    pub fn render(&self, camera: &Camera, size: usize, lighting: &Lighting) -> RenderOutput {
        render_primitives(&self.primitives, camera, size, lighting)
    }

    /// The six canonical views with ground-truth normals.
    pub fn views(&self, size: usize, lighting: &Lighting) -> Result<MultiViewBatch> {
        let mut colors = Vec::with_capacity(6);
        let mut normals = Vec::with_capacity(6);
        for d in Direction::ALL {
            let r = self.render(&d.camera(), size, lighting);
            colors.push(r.color);
            normals.push(r.normal);
        }
        MultiViewBatch::new(self.id.clone(), colors, Some(normals))
    }

    /// Reference prompt used by the retrieval protocol.
    pub fn prompt(&self) -> &str {
        &self.description
    }
}

fn random_subject(index: usize, seed: Seed) -> Subject {
    let mut rng = seed.rng();
    let count = rng.random_range(1..=3usize);
    let mut colors: Vec<usize> = (0..PALETTE.len()).collect();
    colors.shuffle(&mut rng);
    let mut prims = Vec::new();
    for k in 0..count {
        let main = k == 0;
        let size = if main {
            rng.random_range(0.42..0.6)
        } else {
            rng.random_range(0.2..0.34)
        };
        let shape = match rng.random_range(0..3) {
            0 => Shape::Sphere { radius: size },
            1 => Shape::Box {
                half: [
                    size * rng.random_range(0.7..1.0),
                    size * rng.random_range(0.7..1.0),
                    size * rng.random_range(0.7..1.0),
                ],
                yaw_deg: rng.random_range(0.0..90.0),
            },
            _ => Shape::Cone {
                radius: size,
                height: size * rng.random_range(1.6..2.2),
            },
        };
        let center = if main {
            [0.0, rng.random_range(-0.1..0.1), 0.0]
        } else {
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(0.45..0.6);
            [r * ang.cos(), rng.random_range(-0.35..0.35), r * ang.sin()]
        };
        let (name, albedo) = PALETTE[colors[k]];
        prims.push(Primitive {
            shape,
            center,
            color_name: name.to_string(),
            albedo,
        });
    }
    let parts: Vec<String> = prims
        .iter()
        .map(|p| format!("a {} {}", p.color_name, shape_noun(&p.shape)))
        .collect();
    Subject {
        id: format!("subject-{index:02}"),
        class_noun: shape_noun(&prims[0].shape).to_string(),
        description: parts.join(" with "),
        primitives: prims,
    }
}

/// The procedural corpus: subject 0 is [`Subject::red_sphere`], the rest are
/// seeded random composites with pairwise-distinct descriptions.
pub fn generate_corpus(count: usize, seed: Seed) -> Vec<Subject> {
    let mut out = vec![Subject::red_sphere()];
    let mut attempt = 0u64;
    while out.len() < count {
        let s = random_subject(out.len(), seed.index(attempt));
        attempt += 1;
        if out.iter().all(|o| o.description != s.description) {
            out.push(s);
        }
    }
    out.truncate(count);
    out
}

pub fn standard_corpus() -> Vec<Subject> {
    generate_corpus(CORPUS_SIZE, CORPUS_SEED)
}

pub struct RenderOutput {
    pub color: Image,
    pub normal: Image,
    pub mask: Array2<bool>,
}

struct Hit {
    t: f64,
    normal: Vec3,
    albedo: Vec3,
}

fn rotate_y(v: Vec3, deg: f64) -> Vec3 {
    let (s, c) = deg.to_radians().sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn intersect(p: &Primitive, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    let oc = sub(o, p.center);
    match p.shape {
        Shape::Sphere { radius } => {
            let b = dot(oc, d);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t > 0.0).then(|| (t, normalize(add(oc, scale(d, t)))))
        }
        Shape::Box { half, yaw_deg } => {
            let lo = rotate_y(oc, -yaw_deg);
            let ld = rotate_y(d, -yaw_deg);
            let mut tmin = f64::NEG_INFINITY;
            let mut tmax = f64::INFINITY;
            let mut axis = 0;
            for k in 0..3 {
                if ld[k].abs() < 1e-12 {
                    if lo[k].abs() > half[k] {
                        return None;
                    }
                    continue;
                }
                let t1 = (-half[k] - lo[k]) / ld[k];
                let t2 = (half[k] - lo[k]) / ld[k];
                let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                if a > tmin {
                    tmin = a;
                    axis = k;
                }
                tmax = tmax.min(b);
            }
            if tmin > tmax || tmin <= 0.0 {
                return None;
            }
            let mut n = [0.0; 3];
            n[axis] = -ld[axis].signum();
            Some((tmin, rotate_y(n, yaw_deg)))
        }
        Shape::Cone { radius, height } => {
            // base centred at center − h/2, apex at center + h/2
            let base = [oc[0], oc[1] + height / 2.0, oc[2]];
            let k = radius / height;
            let k2 = k * k;
            let mut best: Option<(f64, Vec3)> = None;
            let hy = |y: f64| height - y;
            let a = d[0] * d[0] + d[2] * d[2] - k2 * d[1] * d[1];
            let b = 2.0 * (base[0] * d[0] + base[2] * d[2] + k2 * hy(base[1]) * d[1]);
            let c = base[0] * base[0] + base[2] * base[2] - k2 * hy(base[1]) * hy(base[1]);
            let mut roots = Vec::new();
            if a.abs() > 1e-12 {
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    roots.push((-b - sq) / (2.0 * a));
                    roots.push((-b + sq) / (2.0 * a));
                }
            } else if b.abs() > 1e-12 {
                roots.push(-c / b);
            }
            for t in roots {
                if t <= 0.0 {
                    continue;
                }
                let q = add(base, scale(d, t));
                if q[1] < 0.0 || q[1] > height {
                    continue;
                }
                if best.is_none_or(|(bt, _)| t < bt) {
                    let n = normalize([q[0], k2 * hy(q[1]), q[2]]);
                    best = Some((t, n));
                }
            }
            if d[1].abs() > 1e-12 {
                let t = -base[1] / d[1];
                if t > 0.0 {
                    let q = add(base, scale(d, t));
                    if q[0] * q[0] + q[2] * q[2] <= radius * radius
                        && best.is_none_or(|(bt, _)| t < bt)
                    {
                        best = Some((t, [0.0, -1.0, 0.0]));
                    }
                }
            }
            best
        }
    }
}

fn trace(prims: &[Primitive], o: Vec3, d: Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for p in prims {
        if let Some((t, n)) = intersect(p, o, d) {
            if best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    normal: n,
                    albedo: p.albedo,
                });
            }
        }
    }
    best
}

pub fn render_primitives(
    prims: &[Primitive],
    camera: &Camera,
    size: usize,
    lighting: &Lighting,
) -> RenderOutput {
    let f = camera.frame();
    let h = camera.half_extent;
    let mut color = Array3::zeros((3, size, size));
    let mut normal = Array3::zeros((3, size, size));
    let mut mask = Array2::from_elem((size, size), false);
    let ray = |u: f64, v: f64| add(add(f.position, scale(f.right, u)), scale(f.up, v));
    let to_uv = |i: f64, j: f64| {
        (
            (j / size as f64 * 2.0 - 1.0) * h,
            (1.0 - i / size as f64 * 2.0) * h,
        )
    };
    for i in 0..size {
        for j in 0..size {
            let mut acc = [0.0; 3];
            for (si, sj) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let (u, v) = to_uv(i as f64 + si, j as f64 + sj);
                let c = match trace(prims, ray(u, v), f.forward) {
                    Some(hit) => {
                        let s = lighting.shade(f.to_camera(hit.normal));
                        scale(hit.albedo, s)
                    }
                    None => [1.0; 3],
                };
                acc = add(acc, c);
            }
            for k in 0..3 {
                color[[k, i, j]] = (acc[k] / 4.0).clamp(0.0, 1.0) * 2.0 - 1.0;
            }
            let (u, v) = to_uv(i as f64 + 0.5, j as f64 + 0.5);
            let n = match trace(prims, ray(u, v), f.forward) {
                Some(hit) => {
                    mask[[i, j]] = true;
                    normalize(f.to_camera(hit.normal))
                }
                None => BACK_FACING,
            };
            for k in 0..3 {
                normal[[k, i, j]] = n[k];
            }
        }
    }
    RenderOutput {
        color,
        normal,
        mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_distinct() {
        let a = standard_corpus();
        let b = standard_corpus();
        assert_eq!(a, b);
        assert_eq!(a.len(), CORPUS_SIZE);
        for i in 0..a.len() {
            for j in 0..i {
                assert_ne!(a[i].description, a[j].description);
            }
        }
        assert_eq!(a[0], Subject::red_sphere());
    }

    #[test]
    fn sphere_render_has_disk_silhouette_and_unit_normals() {
        let r = Subject::red_sphere().render(&Direction::Front.camera(), 32, &Lighting::default());
        // radius 0.6 of half-extent 1 → 9.6 px radius disk, area ≈ 289.5
        let area = r.mask.iter().filter(|&&m| m).count() as f64;
        assert!((area - 289.5).abs() < 20.0, "{area}");
        let (_, h, w) = r.normal.dim();
        for i in 0..h {
            for j in 0..w {
                let n: f64 = (0..3).map(|k| r.normal[[k, i, j]].powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
                if r.mask[[i, j]] {
                    assert!(r.normal[[2, i, j]] > 0.0);
                }
            }
        }
        assert!(r.color.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn every_subject_is_visible_in_every_view() {
        for s in standard_corpus() {
            let v = s.views(32, &Lighting::default()).unwrap();
            for img in &v.colors {
                let ink = img.iter().filter(|&&x| x < 0.8).count();
                assert!(ink > 50, "{} has a near-empty view", s.id);
            }
        }
    }
}
