//! Triangle meshes: marching-cubes extraction, cleanup, topology checks and
//! a z-buffered orthographic rasterizer.

use std::collections::HashMap;

use coevo_core::camera::{cross, dot, norm, normalize, sub, Camera, Lighting, Vec3};
use coevo_core::image::Image;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::field::DensityField;
use crate::tables::TRI_TABLE;
use crate::{Error, Result};

pub const DEGENERATE_AREA: f64 = 1e-12;
/// Edge crossings this close to a grid point (in cells) are placed on it.
const SNAP: f64 = 1e-7;
/// Degenerate triangles with no edge longer than this are collapsed.
pub const COLLAPSE_LENGTH: f64 = 1e-5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.triangles.iter().flatten().any(|&i| i as usize >= n) {
            return Err(Error::InvalidArgument("triangle index out of range".into()));
        }
        if self.colors.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::InvalidArgument("color count differs from vertex count".into()));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Removes degenerate triangles without opening the surface, then drops
    /// unreferenced vertices. Bit-identical vertices are welded; a triangle
    /// with area ≤ [`DEGENERATE_AREA`] is collapsed to one vertex when all its
    /// edges are shorter than [`COLLAPSE_LENGTH`], otherwise it is a sliver
    /// whose neighbour across the longest edge is split at the middle vertex.
    pub fn cleanup(&mut self) {
        fn find(parent: &mut [u32], mut i: u32) -> u32 {
            while parent[i as usize] != i {
                parent[i as usize] = parent[parent[i as usize] as usize];
                i = parent[i as usize];
            }
            i
        }
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        let mut first: HashMap<[u64; 3], u32> = HashMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            parent[i] = *first.entry(v.map(f64::to_bits)).or_insert(i as u32);
        }
        let mut tris = std::mem::take(&mut self.triangles);
        loop {
            for t in tris.iter_mut() {
                *t = t.map(|i| find(&mut parent, i));
            }
            tris.retain(|&[a, b, c]| a != b && b != c && a != c);
            let Some(pos) = tris.iter().position(|&t| self.triangle_area(t) <= DEGENERATE_AREA) else {
                break;
            };
            let t = tris[pos];
            let len = |k: usize| norm(sub(self.vertices[t[(k + 1) % 3] as usize], self.vertices[t[k] as usize]));
            let longest = (0..3).max_by(|&x, &y| len(x).total_cmp(&len(y))).expect("three edges");
            if len(longest) <= COLLAPSE_LENGTH {
                parent[t[1] as usize] = t[0];
                parent[t[2] as usize] = t[0];
                continue;
            }
            let (a, c, b) = (t[longest], t[(longest + 1) % 3], t[(longest + 2) % 3]);
            tris.swap_remove(pos);
            let across = tris.iter().position(|n| (0..3).any(|k| n[k] == c && n[(k + 1) % 3] == a));
            if let Some(n_pos) = across {
                let n = tris[n_pos];
                let k = (0..3).find(|&k| n[k] == c).expect("edge found");
                let d = n[(k + 2) % 3];
                tris[n_pos] = [c, b, d];
                tris.push([b, a, d]);
            }
        }
        let mut new_index = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        for t in &mut tris {
            for i in t.iter_mut() {
                let old = *i as usize;
                if new_index[old] == u32::MAX {
                    new_index[old] = vertices.len() as u32;
                    vertices.push(self.vertices[old]);
                    if let Some(c) = &self.colors {
                        colors.push(c[old]);
                    }
                }
                *i = new_index[old];
            }
        }
        self.vertices = vertices;
        self.triangles = tris;
        if self.colors.is_some() {
            self.colors = Some(colors);
        }
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_use_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    /// No directed edge occurs twice, so neighbouring triangles agree on
    /// orientation.
    pub fn has_consistent_winding(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.triangles
            .iter()
            .all(|t| (0..3).all(|k| seen.insert((t[k], t[(k + 1) % 3]))))
    }

    /// Volume enclosed by a closed mesh, positive for outward-facing
    /// counter-clockwise triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }
}

/// Bourke corner offsets and edge endpoints.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Default iso level: half the field maximum.
pub fn default_iso(field: &DensityField) -> f64 {
    0.5 * field.min_max().1
}

/// Marching-cubes surface of `{density = iso}` with vertices shared between
/// neighbouring cells, cleaned up and wound so that normals point towards
/// lower density. Vertex colors are sampled from the field.
pub fn extract_mesh(field: &DensityField, iso: f64) -> Result<TriMesh> {
    field.validate()?;
    let (lo, hi) = field.min_max();
    if !(iso > lo && iso < hi) {
        return Err(Error::ThresholdOutOfRange { iso, min: lo, max: hi });
    }
    let r = field.resolution;
    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for z in 0..r - 1 {
        for y in 0..r - 1 {
            for x in 0..r - 1 {
                let corner = |c: usize| [x + CORNERS[c][0], y + CORNERS[c][1], z + CORNERS[c][2]];
                let value = |p: [usize; 3]| field.density[field.index(p[0], p[1], p[2])];
                let mut case = 0usize;
                for c in 0..8 {
                    if value(corner(c)) < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut ids = [0u32; 3];
                for (k, &e) in row.iter().take_while(|&&e| e >= 0).enumerate() {
                    let [ca, cb] = EDGES[e as usize];
                    let (pa, pb) = (corner(ca), corner(cb));
                    let (low, high) = if pa <= pb { (pa, pb) } else { (pb, pa) };
                    let axis = (0..3).find(|&k| low[k] != high[k]).expect("edge spans one axis");
                    let key = (field.index(low[0], low[1], low[2]), axis);
                    let id = *edge_vertex.entry(key).or_insert_with(|| {
                        let (v0, v1) = (value(low), value(high));
                        let t = (iso - v0) / (v1 - v0);
                        // crossings at a grid point must weld across cells
                        let p = if t <= SNAP {
                            field.point(low[0], low[1], low[2])
                        } else if t >= 1.0 - SNAP {
                            field.point(high[0], high[1], high[2])
                        } else {
                            let mut p = field.point(low[0], low[1], low[2]);
                            p[axis] += t * field.cell_size();
                            p
                        };
                        mesh.vertices.push(p);
                        (mesh.vertices.len() - 1) as u32
                    });
                    ids[k % 3] = id;
                    if k % 3 == 2 {
                        mesh.triangles.push(ids);
                    }
                }
            }
        }
    }
    mesh.cleanup();
    mesh.colors = Some(mesh.vertices.iter().map(|&p| field.sample_color(p)).collect());
    Ok(mesh)
}

/// Flat-shaded, vertex-colored orthographic render with a depth buffer, in
/// the `[-1, 1]` image convention. Pixels not covered are `background`
/// (given in `[0, 1]`).
pub fn render_mesh(mesh: &TriMesh, camera: &Camera, size: usize, lighting: &Lighting, background: Vec3) -> Image {
    let f = camera.frame();
    let h = camera.half_extent;
    let px = 2.0 * h / size as f64;
    let mut img = Array3::from_shape_fn((3, size, size), |(k, _, _)| background[k]);
    let mut depth = vec![f64::INFINITY; size * size];
    let to_screen = |p: Vec3| {
        let c = f.to_camera(p);
        // column, row, depth along the view direction
        ((c[0] + h) / px - 0.5, (h - c[1]) / px - 0.5, -c[2])
    };
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        let n = normalize(cross(sub(b, a), sub(c, a)));
        let mut n_cam = f.to_camera(n);
        if n_cam[2] < 0.0 {
            n_cam = n_cam.map(|v| -v);
        }
        let shade = lighting.shade(n_cam);
        let s = t.map(|i| to_screen(mesh.vertices[i as usize]));
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[2].0 - s[0].0) * (s[1].1 - s[0].1);
        if area.abs() < 1e-15 {
            continue;
        }
        let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor();
        let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor();
        if max_x < 0.0 || max_y < 0.0 {
            continue;
        }
        let max_x = (max_x as usize).min(size - 1);
        let max_y = (max_y as usize).min(size - 1);
        for i in min_y..=max_y {
            for j in min_x..=max_x {
                let (x, y) = (j as f64, i as f64);
                let w0 = ((s[1].0 - x) * (s[2].1 - y) - (s[2].0 - x) * (s[1].1 - y)) / area;
                let w1 = ((s[2].0 - x) * (s[0].1 - y) - (s[0].0 - x) * (s[2].1 - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * s[0].2 + w1 * s[1].2 + w2 * s[2].2;
                if z >= depth[i * size + j] {
                    continue;
                }
                depth[i * size + j] = z;
                let col = match &mesh.colors {
                    Some(cs) => {
                        let [ca, cb, cc] = t.map(|v| cs[v as usize]);
                        [0, 1, 2].map(|k| w0 * ca[k] + w1 * cb[k] + w2 * cc[k])
                    }
                    None => [0.8; 3],
                };
                for k in 0..3 {
                    img[[k, i, j]] = (col[k] * shade).clamp(0.0, 1.0);
                }
            }
        }
    }
    img.mapv(|v| v * 2.0 - 1.0)
}
