//! Anisotropic 3D Gaussians: orthographic splat rendering, analytic
//! gradients and per-subject fitting to posed views.
//!
//! Colors and the background live in `[0, 1]`; rendered images are returned
//! in the `[-1, 1]` convention of the diffusion models.

use coevo_core::camera::{add, dot, scale, Camera, CameraFrame, Vec3};
use coevo_core::image::Image;
use coevo_core::views::MultiViewBatch;
use coevo_core::Seed;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kernel cut-off in squared Mahalanobis distance (3σ).
pub const CUTOFF_Q: f64 = 9.0;
/// Screen-space blur added to every projected covariance, in pixels².
pub const SCREEN_DILATION_PX2: f64 = 0.09;
const MAX_ALPHA: f64 = 0.99;
const MIN_ALPHA: f64 = 1.0 / 255.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet {
    pub positions: Vec<Vec3>,
    pub scales: Vec<Vec3>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
}

pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vec3, scales: Vec3, rotation: [f64; 4], opacity: f64, color: Vec3) {
        self.positions.push(position);
        self.scales.push(scales);
        self.rotations.push(rotation);
        self.opacities.push(opacity);
        self.colors.push(color);
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.positions.len();
        if [self.scales.len(), self.rotations.len(), self.opacities.len(), self.colors.len()]
            .iter()
            .any(|&n| n != k)
        {
            return Err(Error::InvalidArgument("gaussian attribute lengths differ".into()));
        }
        for i in 0..k {
            let q = self.rotations[i];
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let finite = self.positions[i]
                .iter()
                .chain(&self.scales[i])
                .chain(&q)
                .chain(&self.colors[i])
                .chain(std::iter::once(&self.opacities[i]))
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidArgument(format!("gaussian {i} has non-finite values")));
            }
            if (qn - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("gaussian {i} rotation is not unit")));
            }
            if self.scales[i].iter().any(|&s| s <= 0.0) {
                return Err(Error::InvalidArgument(format!("gaussian {i} has a non-positive scale")));
            }
            if !(0.0..=1.0).contains(&self.opacities[i])
                || self.colors[i].iter().any(|c| !(0.0..=1.0).contains(c))
            {
                return Err(Error::InvalidArgument(format!("gaussian {i} opacity or color outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// World-space covariance `R·diag(s²)·Rᵀ`.
    pub fn covariance(&self, i: usize) -> [[f64; 3]; 3] {
        let r = quat_to_matrix(self.rotations[i]);
        let s = self.scales[i];
        let mut c = [[0.0; 3]; 3];
        for (a, row) in c.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| r[a][k] * s[k] * s[k] * r[b][k]).sum();
            }
        }
        c
    }

    pub fn mean_opacity(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.opacities.iter().sum::<f64>() / self.len() as f64
    }
}

/// One Gaussian after projection to a camera.
struct Splat {
    index: usize,
    depth: f64,
    mean: [f64; 2],
    /// Inverse of the screen covariance, `[a, b, c]` for `[[a, b], [b, c]]`.
    inv: [f64; 3],
    opacity: f64,
    color: Vec3,
    /// Pixel bounding box `(i0, i1, j0, j1)`, inclusive.
    bbox: (usize, usize, usize, usize),
}

fn pixel_center(frame_half: f64, size: usize, i: usize, j: usize) -> [f64; 2] {
    let px = 2.0 * frame_half / size as f64;
    [
        -frame_half + (j as f64 + 0.5) * px,
        frame_half - (i as f64 + 0.5) * px,
    ]
}

fn project(g: &GaussianSet, camera: &Camera, frame: &CameraFrame, size: usize) -> Vec<Splat> {
    let px = 2.0 * camera.half_extent / size as f64;
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let p = g.positions[i];
        let c3 = g.covariance(i);
        let j = [frame.right, frame.up];
        let mut c2 = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                c2[a][b] = (0..3)
                    .map(|k| (0..3).map(|l| j[a][k] * c3[k][l] * j[b][l]).sum::<f64>())
                    .sum();
            }
        }
        c2[0][0] += SCREEN_DILATION_PX2 * px * px;
        c2[1][1] += SCREEN_DILATION_PX2 * px * px;
        let det = c2[0][0] * c2[1][1] - c2[0][1] * c2[1][0];
        if det <= 0.0 || !det.is_finite() {
            continue;
        }
        let inv = [c2[1][1] / det, -c2[0][1] / det, c2[0][0] / det];
        let mean = [dot(p, frame.right), dot(p, frame.up)];
        let tr = 0.5 * (c2[0][0] + c2[1][1]);
        let lmax = tr + (tr * tr - det).max(0.0).sqrt();
        let r = CUTOFF_Q.sqrt() * lmax.sqrt();
        let h = camera.half_extent;
        let to_j = |u: f64| (u + h) / px - 0.5;
        let to_i = |v: f64| (h - v) / px - 0.5;
        let (j0, j1) = (to_j(mean[0] - r).ceil(), to_j(mean[0] + r).floor());
        let (i0, i1) = (to_i(mean[1] + r).ceil(), to_i(mean[1] - r).floor());
        let hi = (size - 1) as f64;
        if j1 < 0.0 || i1 < 0.0 || j0 > hi || i0 > hi {
            continue;
        }
        let clampf = |v: f64| v.clamp(0.0, hi) as usize;
        out.push(Splat {
            index: i,
            depth: dot(p, frame.forward) - dot(frame.position, frame.forward),
            mean,
            inv,
            opacity: g.opacities[i],
            color: g.colors[i],
            bbox: (clampf(i0), clampf(i1), clampf(j0), clampf(j1)),
        });
    }
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// Per-pixel front-to-back lists of `(splat, alpha, gaussian value, dx, dy)`.
struct Raster {
    splats: Vec<Splat>,
    lists: Vec<Vec<(u32, f64, f64, f64, f64)>>,
}

fn rasterize(g: &GaussianSet, camera: &Camera, size: usize) -> Raster {
    let frame = camera.frame();
    let splats = project(g, camera, &frame, size);
    let mut lists = vec![Vec::new(); size * size];
    for (s_idx, s) in splats.iter().enumerate() {
        let (i0, i1, j0, j1) = s.bbox;
        for i in i0..=i1 {
            for j in j0..=j1 {
                let c = pixel_center(camera.half_extent, size, i, j);
                let (dx, dy) = (c[0] - s.mean[0], c[1] - s.mean[1]);
                let q = s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy;
                if q > CUTOFF_Q {
                    continue;
                }
                let gv = (-0.5 * q).exp();
                let alpha = s.opacity * gv;
                if alpha < MIN_ALPHA {
                    continue;
                }
                lists[i * size + j].push((s_idx as u32, alpha, gv, dx, dy));
            }
        }
    }
    Raster { splats, lists }
}

/// Alpha-composited render in `[0, 1]`, channels first.
fn render_unit(g: &GaussianSet, camera: &Camera, size: usize, background: Vec3) -> Array3<f64> {
    let r = rasterize(g, camera, size);
    let mut img = Array3::zeros((3, size, size));
    for i in 0..size {
        for j in 0..size {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &(s, alpha, ..) in &r.lists[i * size + j] {
                let a = alpha.min(MAX_ALPHA);
                c = add(c, scale(r.splats[s as usize].color, t * a));
                t *= 1.0 - a;
            }
            c = add(c, scale(background, t));
            for k in 0..3 {
                img[[k, i, j]] = c[k];
            }
        }
    }
    img
}

/// Deterministic splat rendering, front to back by camera depth.
pub fn render_gaussians(g: &GaussianSet, camera: &Camera, size: usize, background: Vec3) -> Image {
    render_unit(g, camera, size, background).mapv(|v| v * 2.0 - 1.0)
}

/// Gradients with respect to positions, scales, opacities and colors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<Vec3>,
    pub scales: Vec<Vec3>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
}

impl GaussianGrads {
    fn zeros(k: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; k],
            scales: vec![[0.0; 3]; k],
            opacities: vec![0.0; k],
            colors: vec![[0.0; 3]; k],
        }
    }
}

/// Mean squared error in `[0, 1]` units between the render and `target`
/// (given in `[-1, 1]`), with its gradient accumulated into `grads` scaled by
/// `weight`.
fn loss_and_grad_view(
    g: &GaussianSet,
    camera: &Camera,
    target: &Image,
    background: Vec3,
    weight: f64,
    grads: &mut GaussianGrads,
) -> f64 {
    let size = target.dim().1;
    let r = rasterize(g, camera, size);
    let frame = camera.frame();
    let n = (3 * size * size) as f64;
    let mut loss = 0.0;
    // per-splat screen-space gradients: mean (2) and covariance (2×2)
    let mut d_mean = vec![[0.0; 2]; r.splats.len()];
    let mut d_cov = vec![[0.0; 3]; r.splats.len()];
    let mut ts = Vec::new();
    for i in 0..size {
        for j in 0..size {
            let list = &r.lists[i * size + j];
            ts.clear();
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &(s, alpha, ..) in list {
                let a = alpha.min(MAX_ALPHA);
                ts.push(t);
                c = add(c, scale(r.splats[s as usize].color, t * a));
                t *= 1.0 - a;
            }
            let t_end = t;
            c = add(c, scale(background, t_end));
            let mut dc = [0.0; 3];
            for k in 0..3 {
                let want = (target[[k, i, j]] + 1.0) * 0.5;
                let e = c[k] - want;
                loss += e * e / n;
                dc[k] = 2.0 * e / n * weight;
            }
            let mut acc = scale(background, t_end);
            for (pos, &(s, alpha, gv, dx, dy)) in list.iter().enumerate().rev() {
                let sp = &r.splats[s as usize];
                let a = alpha.min(MAX_ALPHA);
                let t = ts[pos];
                let gi = sp.index;
                for k in 0..3 {
                    grads.colors[gi][k] += dc[k] * t * a;
                }
                let d_alpha = if alpha < MAX_ALPHA {
                    (0..3)
                        .map(|k| dc[k] * (t * sp.color[k] - acc[k] / (1.0 - a)))
                        .sum::<f64>()
                } else {
                    0.0
                };
                acc = add(acc, scale(sp.color, t * a));
                if d_alpha == 0.0 {
                    continue;
                }
                grads.opacities[gi] += d_alpha * gv;
                let d_q = -0.5 * d_alpha * alpha;
                let [ia, ib, ic] = sp.inv;
                let (ax, ay) = (ia * dx + ib * dy, ib * dx + ic * dy);
                // q = dᵀAd with d = pixel − mean
                d_mean[s as usize][0] -= 2.0 * d_q * ax;
                d_mean[s as usize][1] -= 2.0 * d_q * ay;
                // ∂q/∂Σ = −A d dᵀ A
                d_cov[s as usize][0] -= d_q * ax * ax;
                d_cov[s as usize][1] -= d_q * ax * ay;
                d_cov[s as usize][2] -= d_q * ay * ay;
            }
        }
    }
    let axes = [frame.right, frame.up];
    for (s_idx, sp) in r.splats.iter().enumerate() {
        let gi = sp.index;
        let dm = d_mean[s_idx];
        grads.positions[gi] = add(
            grads.positions[gi],
            add(scale(frame.right, dm[0]), scale(frame.up, dm[1])),
        );
        let [c00, c01, c11] = d_cov[s_idx];
        let d2 = [[c00, c01], [c01, c11]];
        let rot = quat_to_matrix(g.rotations[gi]);
        for k in 0..3 {
            let col = [rot[0][k], rot[1][k], rot[2][k]];
            let jr = [dot(axes[0], col), dot(axes[1], col)];
            let quad: f64 = (0..2).map(|a| (0..2).map(|b| jr[a] * d2[a][b] * jr[b]).sum::<f64>()).sum();
            grads.scales[gi][k] += 2.0 * g.scales[gi][k] * quad;
        }
    }
    loss
}

/// Mean over views of the per-view squared error, with gradients.
pub fn photometric_loss_and_grad(
    g: &GaussianSet,
    views: &[(Camera, Image)],
    background: Vec3,
) -> (f64, GaussianGrads) {
    let mut grads = GaussianGrads::zeros(g.len());
    let w = 1.0 / views.len() as f64;
    let loss = views
        .iter()
        .map(|(cam, img)| loss_and_grad_view(g, cam, img, background, w, &mut grads) * w)
        .sum();
    (loss, grads)
}

/// Mean squared error in `[0, 1]` units over all views.
pub fn photometric_loss(g: &GaussianSet, views: &[(Camera, Image)], background: Vec3) -> f64 {
    photometric_loss_and_grad(g, views, background).0
}

/// Mean absolute error in `[0, 1]` units over all views, pixels and channels.
pub fn photometric_error(g: &GaussianSet, views: &[(Camera, Image)], background: Vec3) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (cam, target) in views {
        let img = render_unit(g, cam, target.dim().1, background);
        total += img
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - (b + 1.0) * 0.5).abs())
            .sum::<f64>();
        n += img.len();
    }
    total / n.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub num_gaussians: usize,
    /// Initial positions are uniform in a ball of this radius.
    pub init_radius: f64,
    pub init_scale: f64,
    pub init_opacity: f64,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub background: Vec3,
    /// A loss checkpoint is logged every this many iterations.
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            num_gaussians: 384,
            init_radius: 0.7,
            init_scale: 0.08,
            init_opacity: 0.5,
            lr_position: 0.004,
            lr_scale: 0.02,
            lr_opacity: 0.05,
            lr_color: 0.05,
            background: [1.0; 3],
            log_every: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.init_radius,
            self.init_scale,
            self.lr_position,
            self.lr_scale,
            self.lr_opacity,
            self.lr_color,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.num_gaussians == 0
            || self.log_every == 0
            || !(self.init_opacity > 0.0 && self.init_opacity < 1.0)
        {
            return Err(Error::InvalidArgument("fit configuration out of range".into()));
        }
        Ok(())
    }
}

/// The documented starting point of [`fit_gaussians`]: positions uniform in
/// a ball, isotropic `init_scale`, identity rotation, `init_opacity` and mid
/// grey.
pub fn init_gaussians(cfg: &FitConfig, seed: Seed) -> GaussianSet {
    let mut rng = seed.derive("gaussian-init").rng();
    let mut g = GaussianSet::default();
    while g.len() < cfg.num_gaussians {
        let p: Vec3 = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        if dot(p, p) > 1.0 {
            continue;
        }
        g.push(
            scale(p, cfg.init_radius),
            [cfg.init_scale; 3],
            [1.0, 0.0, 0.0, 0.0],
            cfg.init_opacity,
            [0.5; 3],
        );
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gaussians: GaussianSet,
    /// `(iteration, loss)` at every logged checkpoint and at the end.
    pub checkpoints: Vec<(usize, f64)>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lrs: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let (c1, c2) = (1.0 - B1.powi(self.step), 1.0 - B2.powi(self.step));
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lrs[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-15);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Unconstrained layout per Gaussian: position (3), log-scale (3), opacity
/// logit (1), color logits (3).
const STRIDE: usize = 10;

fn pack(g: &GaussianSet) -> Vec<f64> {
    let mut v = Vec::with_capacity(g.len() * STRIDE);
    for i in 0..g.len() {
        v.extend(g.positions[i]);
        v.extend(g.scales[i].map(f64::ln));
        v.push(logit(g.opacities[i]));
        v.extend(g.colors[i].map(logit));
    }
    v
}

fn unpack(v: &[f64], g: &mut GaussianSet) {
    for (i, p) in v.chunks_exact(STRIDE).enumerate() {
        g.positions[i] = [p[0], p[1], p[2]];
        g.scales[i] = [p[3].exp(), p[4].exp(), p[5].exp()];
        g.opacities[i] = sigmoid(p[6]);
        g.colors[i] = [sigmoid(p[7]), sigmoid(p[8]), sigmoid(p[9])];
    }
}

fn pack_grads(g: &GaussianSet, d: &GaussianGrads) -> Vec<f64> {
    let mut v = Vec::with_capacity(g.len() * STRIDE);
    for i in 0..g.len() {
        v.extend(d.positions[i]);
        for k in 0..3 {
            v.push(d.scales[i][k] * g.scales[i][k]);
        }
        let o = g.opacities[i];
        v.push(d.opacities[i] * o * (1.0 - o));
        for k in 0..3 {
            let c = g.colors[i][k];
            v.push(d.colors[i][k] * c * (1.0 - c));
        }
    }
    v
}

/// Posed `(camera, color)` pairs of a multi-view batch.
pub fn posed_views(views: &MultiViewBatch) -> Vec<(Camera, Image)> {
    views.cameras.iter().copied().zip(views.colors.iter().cloned()).collect()
}

/// Fits Gaussians to posed views by full-batch Adam on the photometric
/// squared error. Rotations stay at their initial value.
pub fn fit_gaussians_to(views: &[(Camera, Image)], cfg: &FitConfig, seed: Seed) -> Result<FitResult> {
    cfg.validate()?;
    if views.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 posed views, got {}",
            views.len()
        )));
    }
    let mut g = init_gaussians(cfg, seed);
    let mut checkpoints = Vec::new();
    if cfg.iterations == 0 {
        return Ok(FitResult { gaussians: g, checkpoints });
    }
    let mut params = pack(&g);
    let lrs: Vec<f64> = (0..params.len())
        .map(|i| match i % STRIDE {
            0..=2 => cfg.lr_position,
            3..=5 => cfg.lr_scale,
            6 => cfg.lr_opacity,
            _ => cfg.lr_color,
        })
        .collect();
    let mut adam = Adam::new(params.len());
    for it in 0..cfg.iterations {
        let (loss, grads) = photometric_loss_and_grad(&g, views, cfg.background);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }
        if it % cfg.log_every == 0 {
            checkpoints.push((it, loss));
        }
        adam.update(&mut params, &pack_grads(&g, &grads), &lrs);
        unpack(&params, &mut g);
    }
    let last = photometric_loss(&g, views, cfg.background);
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss(cfg.iterations));
    }
    checkpoints.push((cfg.iterations, last));
    Ok(FitResult { gaussians: g, checkpoints })
}

/// [`fit_gaussians_to`] on the cameras and colors of a multi-view batch.
pub fn fit_gaussians(views: &MultiViewBatch, cfg: &FitConfig, seed: Seed) -> Result<FitResult> {
    views.validate()?;
    fit_gaussians_to(&posed_views(views), cfg, seed)
}
