//! The toy patch encoder–decoder denoiser.
//!
//! Each unit image is cut into `P×P` patches (a stride-`P` convolution),
//! embedded to `hidden` channels, and passed through
//!
//! 0. a spatial self-attention block over the tokens of each unit,
//! 1. a text cross-attention block (group `text_cross_attention`),
//! 2. an image cross-attention block fed by projected image features
//!    (group `image_cross_attention`, projection included),
//! 3. a self-attention block that mixes the tokens at the same patch
//!    position across every view and domain of a joint sample
//!    (group `cross_domain_self_attention`),
//! 4. a residual MLP and a per-token decoder back to pixels.
//!
//! The decoder output `F` feeds a clean-image estimate
//! `x̂₀ = c_skip·x_t + c_out·F` and the model returns
//! `ε̂ = (x_t − α_t·x̂₀)/σ_t = a_t·x_t + b_t·F`. With the blend
//! `g = 1/(1 + (σ_t/σ_c)⁴)`, `c_skip = g/α_t` and
//! `c_out = √((1 − g)²·s² + g²·σ_t²/α_t²)`: above `σ_c` the head predicts `x₀`
//! directly (scaled by the data spread `s`), below it the noisy input is
//! passed through and the head only corrects the noise. `F`'s regression
//! target has unit-order scale at every `t`, and `ε̂ = −F` at `t = 0`.
//!
//! Everything outside the three attention blocks is `backbone`. A joint
//! sample holds `views × domains` unit images; unit `u` has view `u % views`
//! and domain `u / views`. The multi-view model additionally concatenates the
//! reference image's patches to every unit's input.

use ndarray::{s, Array1, Array2, Array4, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::ConditionBundle;
use crate::error::{Error, Result};
use crate::image::ensure_finite;
use crate::layers::{
    attn_backward, attn_forward, dense, dense_backward, dense_tanh, sum_rows, tanh_backward,
    time_features, AttnCache, AttnRefs,
};
use crate::params::{LayoutBuilder, ParamGroup, ParamSet, Snapshot, TensorRef};
use crate::schedule::{build_schedule, NoiseSchedule, ScheduleKind};
use crate::seed::Seed;
use crate::text::embed_text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub text_dim: usize,
    pub feature_dim: usize,
    pub image_tokens: usize,
    pub image_token_dim: usize,
    pub time_freqs: usize,
    pub views: usize,
    pub domains: usize,
    pub reference: bool,
    pub num_train_steps: usize,
    pub schedule: ScheduleKind,
}

/// Spread `s` of clean pixels assumed by the output preconditioning.
pub const DATA_STD: f64 = 0.5;
/// Noise level `σ_c` where the output switches from pass-through to `x₀`.
pub const BLEND_SIGMA: f64 = 0.06;

impl DenoiserConfig {
    /// Single-image personalised model at 32×32.
    pub fn personalizer_toy() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch: 4,
            hidden: 64,
            attn_dim: 16,
            text_dim: 16,
            feature_dim: 64,
            image_tokens: 4,
            image_token_dim: 16,
            time_freqs: 8,
            views: 1,
            domains: 1,
            reference: false,
            num_train_steps: 1000,
            schedule: ScheduleKind::VpLinear,
        }
    }

    /// Six views × {color, normal} at 32×32, conditioned on a reference image.
    pub fn multiview_toy() -> Self {
        Self {
            views: 6,
            domains: 2,
            reference: true,
            ..Self::personalizer_toy()
        }
    }

    /// Same block structure at another resolution.
    pub fn scaled_to(&self, image_size: usize) -> Self {
        Self {
            image_size,
            patch: (self.patch * image_size / self.image_size).max(1),
            ..self.clone()
        }
    }

    /// Tiny model for finite-difference checks (a few hundred parameters).
    pub fn gradcheck_tiny() -> Self {
        Self {
            image_size: 4,
            channels: 3,
            patch: 2,
            hidden: 4,
            attn_dim: 3,
            text_dim: 3,
            feature_dim: 5,
            image_tokens: 2,
            image_token_dim: 3,
            time_freqs: 2,
            views: 2,
            domains: 2,
            reference: true,
            num_train_steps: 100,
            schedule: ScheduleKind::VpLinear,
        }
    }

    pub fn joint_units(&self) -> usize {
        self.views * self.domains
    }

    pub fn tokens_per_unit(&self) -> usize {
        let g = self.image_size / self.patch;
        g * g
    }

    fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    fn input_len(&self) -> usize {
        self.patch_len() * if self.reference { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.image_size,
            self.channels,
            self.patch,
            self.hidden,
            self.attn_dim,
            self.text_dim,
            self.feature_dim,
            self.image_tokens,
            self.image_token_dim,
            self.time_freqs,
            self.views,
            self.domains,
            self.num_train_steps,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument(
                "denoiser dimensions must be positive".into(),
            ));
        }
        if self.image_size % self.patch != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch {} does not divide image size {}",
                self.patch, self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layout {
    w_in: TensorRef,
    b_in: TensorRef,
    pos: TensorRef,
    w_time: TensorRef,
    b_time: TensorRef,
    view_emb: TensorRef,
    dom_emb: TensorRef,
    w_m1: TensorRef,
    b_m1: TensorRef,
    w_m2: TensorRef,
    b_m2: TensorRef,
    w_d1: TensorRef,
    b_d1: TensorRef,
    w_d2: TensorRef,
    b_d2: TensorRef,
    spatial: AttnRefs,
    text: AttnRefs,
    w_ip: TensorRef,
    b_ip: TensorRef,
    image: AttnRefs,
    cross: AttnRefs,
}

fn attn_refs(
    b: &mut LayoutBuilder,
    g: ParamGroup,
    hidden: usize,
    ctx: usize,
    attn: usize,
) -> AttnRefs {
    AttnRefs {
        wq: b.alloc(g, hidden, attn),
        wk: b.alloc(g, ctx, attn),
        wv: b.alloc(g, ctx, attn),
        bv: b.alloc(g, 1, attn),
        wo: b.alloc(g, attn, hidden),
        bo: b.alloc(g, 1, hidden),
    }
}

impl Layout {
    fn build(c: &DenoiserConfig) -> (Layout, LayoutBuilder) {
        use ParamGroup::*;
        let mut b = LayoutBuilder::default();
        let d = c.hidden;
        let tf = 2 * c.time_freqs;
        let layout = Layout {
            w_in: b.alloc(Backbone, c.input_len(), d),
            b_in: b.alloc(Backbone, 1, d),
            pos: b.alloc(Backbone, c.tokens_per_unit(), d),
            w_time: b.alloc(Backbone, tf, d),
            b_time: b.alloc(Backbone, 1, d),
            view_emb: b.alloc(Backbone, c.views, d),
            dom_emb: b.alloc(Backbone, c.domains, d),
            w_m1: b.alloc(Backbone, d, d),
            b_m1: b.alloc(Backbone, 1, d),
            w_m2: b.alloc(Backbone, d, d),
            b_m2: b.alloc(Backbone, 1, d),
            w_d1: b.alloc(Backbone, d, d),
            b_d1: b.alloc(Backbone, 1, d),
            w_d2: b.alloc(Backbone, d, c.patch_len()),
            b_d2: b.alloc(Backbone, 1, c.patch_len()),
            spatial: attn_refs(&mut b, Backbone, d, d, c.attn_dim),
            text: attn_refs(&mut b, TextCrossAttention, d, c.text_dim, c.attn_dim),
            w_ip: b.alloc(
                ImageCrossAttention,
                c.feature_dim,
                c.image_tokens * c.image_token_dim,
            ),
            b_ip: b.alloc(ImageCrossAttention, 1, c.image_tokens * c.image_token_dim),
            image: attn_refs(&mut b, ImageCrossAttention, d, c.image_token_dim, c.attn_dim),
            cross: attn_refs(&mut b, CrossDomainSelfAttention, d, d, c.attn_dim),
        };
        (layout, b)
    }

    fn weights(&self) -> Vec<TensorRef> {
        let mut v = vec![
            self.w_in, self.w_time, self.w_m1, self.w_m2, self.w_d1, self.w_d2, self.w_ip,
        ];
        for a in [&self.spatial, &self.text, &self.image, &self.cross] {
            v.extend([a.wq, a.wk, a.wv, a.wo]);
        }
        v
    }

    fn embeddings(&self) -> Vec<TensorRef> {
        vec![self.pos, self.view_emb, self.dom_emb]
    }
}

/// Resolved conditioning for one forward pass.
struct Context {
    text: Option<Array2<f64>>,
    features: Option<Array1<f64>>,
    reference: Option<Array2<f64>>,
}

struct Cache {
    xin: Array2<f64>,
    tf: Array1<f64>,
    spatial: Vec<(Array2<f64>, AttnCache)>,
    hs: Array2<f64>,
    text: Option<(Array2<f64>, AttnCache)>,
    h1: Array2<f64>,
    image: Option<(Array2<f64>, AttnCache)>,
    cross: Vec<(Array2<f64>, AttnCache)>,
    h3: Array2<f64>,
    m1: Array2<f64>,
    h4: Array2<f64>,
    z1: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct PatchDenoiser {
    config: DenoiserConfig,
    layout: Layout,
    params: ParamSet,
    schedule: NoiseSchedule,
}

impl PartialEq for PatchDenoiser {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl PatchDenoiser {
    /// Fresh model with seeded `N(0, 1/fan_in)` weights, small embeddings and
    /// zero biases.
    pub fn new(config: DenoiserConfig, seed: Seed) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(config.num_train_steps, config.schedule)?;
        let (layout, builder) = Layout::build(&config);
        let mut params = builder.zeros();
        let mut rng = seed.derive("init").rng();
        for w in layout.weights() {
            let std = 1.0 / (w.rows as f64).sqrt();
            for x in params.view_mut(w).iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal) * std;
            }
        }
        for e in layout.embeddings() {
            for x in params.view_mut(e).iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal) * 0.1;
            }
        }
        Ok(Self {
            config,
            layout,
            params,
            schedule,
        })
    }

    /// Rebuilds a model around existing parameters (checkpoint load).
    pub fn from_params(config: DenoiserConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(config.num_train_steps, config.schedule)?;
        let (layout, builder) = Layout::build(&config);
        if !builder.zeros().same_layout(&params) {
            return Err(Error::GroupMismatch(
                "parameter sizes do not match the model configuration".into(),
            ));
        }
        Ok(Self {
            config,
            layout,
            params,
            schedule,
        })
    }

    /// The schedule the output preconditioning was built for.
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// `(a_t, b_t)` of `ε̂ = a_t·x_t + b_t·F`.
    pub fn output_coefficients(&self, t: usize) -> (f64, f64) {
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let r4 = (s / BLEND_SIGMA).powi(4);
        let g = 1.0 / (1.0 + r4);
        let c_out = ((1.0 - g).powi(2) * DATA_STD * DATA_STD + (g * s / a).powi(2)).sqrt();
        if s == 0.0 {
            return (0.0, -1.0);
        }
        // 1 − g = r4·g, kept in this form for accuracy at small σ
        (r4 * g / s, -a * c_out / s)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `N_θ`: total number of parameters over all groups.
    pub fn num_params(&self) -> usize {
        self.params.total_len()
    }

    pub fn group_sizes(&self) -> Vec<(ParamGroup, usize)> {
        ParamGroup::ALL
            .into_iter()
            .map(|g| (g, self.params.group(g).len()))
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.params.clone())
    }

    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        if !snap.0.same_layout(&self.params) {
            return Err(Error::GroupMismatch(
                "snapshot does not match model groups".into(),
            ));
        }
        self.params = snap.0.clone();
        Ok(())
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    /// Shape of one joint sample: `(units, C, S, S)`.
    pub fn sample_shape(&self) -> (usize, usize, usize, usize) {
        let c = &self.config;
        (c.joint_units(), c.channels, c.image_size, c.image_size)
    }

    fn context(&self, cond: &ConditionBundle) -> Result<Context> {
        let c = &self.config;
        let text = cond
            .text
            .as_deref()
            .map(|t| embed_text(t, c.text_dim))
            .filter(|m| m.nrows() > 0);
        let features = match &cond.image {
            Some(f) => {
                if f.embedding.len() != c.feature_dim {
                    return Err(Error::ShapeMismatch {
                        expected: vec![c.feature_dim],
                        actual: vec![f.embedding.len()],
                    });
                }
                ensure_finite(f.embedding.iter().copied(), "image features")?;
                Some(Array1::from(f.embedding.clone()))
            }
            None => None,
        };
        let reference = match (&cond.reference, c.reference) {
            (Some(r), true) => {
                let want = (c.channels, c.image_size, c.image_size);
                if r.dim() != want {
                    return Err(Error::ShapeMismatch {
                        expected: vec![want.0, want.1, want.2],
                        actual: r.shape().to_vec(),
                    });
                }
                Some(self.patchify(r.view()))
            }
            _ => None,
        };
        Ok(Context {
            text,
            features,
            reference,
        })
    }

    fn patchify(&self, img: ArrayView3<'_, f64>) -> Array2<f64> {
        let c = &self.config;
        let p = c.patch;
        let g = c.image_size / p;
        let mut out = Array2::zeros((g * g, c.patch_len()));
        for by in 0..g {
            for bx in 0..g {
                let row = by * g + bx;
                let mut k = 0;
                for ch in 0..c.channels {
                    for py in 0..p {
                        for px in 0..p {
                            out[[row, k]] = img[[ch, by * p + py, bx * p + px]];
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }

    fn unpatchify_into(&self, rows: &Array2<f64>, out: &mut ndarray::ArrayViewMut3<'_, f64>) {
        let c = &self.config;
        let p = c.patch;
        let g = c.image_size / p;
        for by in 0..g {
            for bx in 0..g {
                let row = by * g + bx;
                let mut k = 0;
                for ch in 0..c.channels {
                    for py in 0..p {
                        for px in 0..p {
                            out[[ch, by * p + py, bx * p + px]] = rows[[row, k]];
                            k += 1;
                        }
                    }
                }
            }
        }
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (u, c, h, w) = self.sample_shape();
        let (b, c2, h2, w2) = x.dim();
        if b == 0 || b % u != 0 || c2 != c || h2 != h || w2 != w {
            return Err(Error::ShapeMismatch {
                expected: vec![u, c, h, w],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &Array4<f64>, ctx: &Context, t: usize) -> (Array4<f64>, Cache) {
        let c = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let units = c.joint_units();
        let n = c.tokens_per_unit();
        let pl = c.patch_len();

        let mut xin = Array2::zeros((units * n, c.input_len()));
        for u in 0..units {
            let rows = self.patchify(x.index_axis(Axis(0), u));
            xin.slice_mut(s![u * n..(u + 1) * n, 0..pl]).assign(&rows);
            if let Some(r) = &ctx.reference {
                xin.slice_mut(s![u * n..(u + 1) * n, pl..2 * pl]).assign(r);
            }
        }
        let tf = time_features(t, c.num_train_steps, c.time_freqs);
        let tf_row = tf.view().insert_axis(Axis(0)).to_owned();
        let temb = dense(p, l.w_time, l.b_time, &tf_row);

        let mut h0 = dense(p, l.w_in, l.b_in, &xin);
        h0 += &temb;
        let pos = p.view(l.pos);
        let view_emb = p.view(l.view_emb);
        let dom_emb = p.view(l.dom_emb);
        for u in 0..units {
            let mut blk = h0.slice_mut(s![u * n..(u + 1) * n, ..]);
            blk += &pos;
            blk += &view_emb.row(u % c.views);
            blk += &dom_emb.row(u / c.views);
        }

        let mut hs = h0.clone();
        let mut spatial = Vec::with_capacity(units);
        for u in 0..units {
            let blk = h0.slice(s![u * n..(u + 1) * n, ..]).to_owned();
            let (a, cache) = attn_forward(p, &l.spatial, &blk, &blk);
            let mut dst = hs.slice_mut(s![u * n..(u + 1) * n, ..]);
            dst += &a;
            spatial.push((blk, cache));
        }

        let (h1, text) = match &ctx.text {
            Some(tok) => {
                let (a, cache) = attn_forward(p, &l.text, &hs, tok);
                (&hs + &a, Some((tok.clone(), cache)))
            }
            None => (hs.clone(), None),
        };

        let (h2, image) = match &ctx.features {
            Some(f) => {
                let flat = f.view().insert_axis(Axis(0)).dot(&p.view(l.w_ip)) + &p.view(l.b_ip);
                let ctok = flat
                    .into_shape_with_order((c.image_tokens, c.image_token_dim))
                    .expect("image token reshape");
                let (a, cache) = attn_forward(p, &l.image, &h1, &ctok);
                (&h1 + &a, Some((ctok, cache)))
            }
            None => (h1.clone(), None),
        };

        let mut h3 = h2.clone();
        let mut cross = Vec::with_capacity(n);
        for pos_i in 0..n {
            let g = gather(&h2, pos_i, n, units);
            let (a, cache) = attn_forward(p, &l.cross, &g, &g);
            for u in 0..units {
                let mut row = h3.row_mut(u * n + pos_i);
                row += &a.row(u);
            }
            cross.push((g, cache));
        }

        let m1 = dense_tanh(p, l.w_m1, l.b_m1, &h3);
        let h4 = &h3 + &dense(p, l.w_m2, l.b_m2, &m1);
        let z1 = dense_tanh(p, l.w_d1, l.b_d1, &h4);
        let y = dense(p, l.w_d2, l.b_d2, &z1);

        let (ca, cb) = self.output_coefficients(t);
        let mut out = Array4::zeros(x.dim());
        for u in 0..units {
            let rows = y.slice(s![u * n..(u + 1) * n, ..]).to_owned();
            let mut o = out.index_axis_mut(Axis(0), u);
            self.unpatchify_into(&rows, &mut o);
        }
        out *= cb;
        out.scaled_add(ca, x);

        let cache = Cache {
            xin,
            tf,
            spatial,
            hs,
            text,
            h1,
            image,
            cross,
            h3,
            m1,
            h4,
            z1,
        };
        (out, cache)
    }

    fn backward(
        &self,
        ctx: &Context,
        cache: &Cache,
        t: usize,
        d_out: &Array4<f64>,
    ) -> ParamSet {
        let c = &self.config;
        let l = &self.layout;
        let p = &self.params;
        let units = c.joint_units();
        let n = c.tokens_per_unit();
        let mut g = ParamSet::zeros_like(p);
        let tf_row = cache.tf.view().insert_axis(Axis(0)).to_owned();

        let (_, cb) = self.output_coefficients(t);
        let mut d_y = Array2::zeros((units * n, c.patch_len()));
        for u in 0..units {
            d_y.slice_mut(s![u * n..(u + 1) * n, ..])
                .assign(&self.patchify(d_out.index_axis(Axis(0), u)));
        }
        d_y *= cb;

        let d_z1 = dense_backward(p, l.w_d2, l.b_d2, &cache.z1, &d_y, &mut g);
        let d_pre = tanh_backward(&cache.z1, &d_z1);
        let d_h4 = dense_backward(p, l.w_d1, l.b_d1, &cache.h4, &d_pre, &mut g);

        let d_m1 = dense_backward(p, l.w_m2, l.b_m2, &cache.m1, &d_h4, &mut g);
        let d_pre = tanh_backward(&cache.m1, &d_m1);
        let d_h3 = &d_h4 + &dense_backward(p, l.w_m1, l.b_m1, &cache.h3, &d_pre, &mut g);

        let mut d_h2 = d_h3.clone();
        for (pos_i, (gm, ac)) in cache.cross.iter().enumerate() {
            let d_a = gather(&d_h3, pos_i, n, units);
            let (dq, dctx) = attn_backward(p, &l.cross, gm, gm, ac, &d_a, &mut g);
            for u in 0..units {
                let mut row = d_h2.row_mut(u * n + pos_i);
                row += &dq.row(u);
                row += &dctx.row(u);
            }
        }

        let mut d_h1 = d_h2.clone();
        if let (Some((ctok, ac)), Some(f)) = (&cache.image, &ctx.features) {
            let (dq, dctok) = attn_backward(p, &l.image, &cache.h1, ctok, ac, &d_h2, &mut g);
            d_h1 += &dq;
            let flat = dctok
                .into_shape_with_order((1, c.image_tokens * c.image_token_dim))
                .expect("image token reshape");
            let f_col = f.view().insert_axis(Axis(1));
            g.accumulate(l.w_ip, f_col.dot(&flat).view());
            g.accumulate(l.b_ip, flat.view());
        }

        let mut d_hs = d_h1.clone();
        if let Some((tok, ac)) = &cache.text {
            let (dq, _) = attn_backward(p, &l.text, &cache.hs, tok, ac, &d_h1, &mut g);
            d_hs += &dq;
        }

        let mut d_h0 = d_hs.clone();
        for (u, (blk, ac)) in cache.spatial.iter().enumerate() {
            let d_a = d_hs.slice(s![u * n..(u + 1) * n, ..]).to_owned();
            let (dq, dctx) = attn_backward(p, &l.spatial, blk, blk, ac, &d_a, &mut g);
            let mut dst = d_h0.slice_mut(s![u * n..(u + 1) * n, ..]);
            dst += &dq;
            dst += &dctx;
        }

        dense_backward(p, l.w_in, l.b_in, &cache.xin, &d_h0, &mut g);
        let d_temb = sum_rows(&d_h0);
        dense_backward(p, l.w_time, l.b_time, &tf_row, &d_temb, &mut g);
        for u in 0..units {
            let blk = d_h0.slice(s![u * n..(u + 1) * n, ..]).to_owned();
            g.accumulate(l.pos, blk.view());
            let srow = blk.sum_axis(Axis(0));
            let mut ve = g.view_mut(l.view_emb);
            let mut r = ve.row_mut(u % c.views);
            r += &srow;
            let mut de = g.view_mut(l.dom_emb);
            let mut r = de.row_mut(u / c.views);
            r += &srow;
        }
        g
    }

    /// Noise prediction for a batch made of whole joint samples.
    pub fn predict_batch(
        &self,
        x_t: &Array4<f64>,
        cond: &ConditionBundle,
        t: usize,
    ) -> Result<Array4<f64>> {
        self.check_input(x_t)?;
        let ctx = self.context(cond)?;
        let units = self.config.joint_units();
        let mut out = Array4::zeros(x_t.dim());
        for (k, chunk) in x_t.axis_chunks_iter(Axis(0), units).enumerate() {
            let (y, _) = self.forward(&chunk.to_owned(), &ctx, t);
            out.slice_mut(s![k * units..(k + 1) * units, .., .., ..])
                .assign(&y);
        }
        Ok(out)
    }

    /// Mean-squared ε error of one joint sample and its gradient w.r.t.
    /// every parameter.
    pub fn eps_loss_and_grad(
        &self,
        x_t: &Array4<f64>,
        cond: &ConditionBundle,
        t: usize,
        eps: &Array4<f64>,
    ) -> Result<(f64, ParamSet)> {
        self.check_input(x_t)?;
        if x_t.dim() != eps.dim() || x_t.dim().0 != self.config.joint_units() {
            return Err(Error::ShapeMismatch {
                expected: x_t.shape().to_vec(),
                actual: eps.shape().to_vec(),
            });
        }
        let ctx = self.context(cond)?;
        let (pred, cache) = self.forward(x_t, &ctx, t);
        ensure_finite(pred.iter().copied(), "model output")?;
        let diff = &pred - eps;
        let count = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / count;
        let d_out = diff * (2.0 / count);
        Ok((loss, self.backward(&ctx, &cache, t, &d_out)))
    }
}

fn gather(m: &Array2<f64>, pos: usize, n: usize, units: usize) -> Array2<f64> {
    let mut g = Array2::zeros((units, m.ncols()));
    for u in 0..units {
        g.row_mut(u).assign(&m.row(u * n + pos));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ImageFeatures;

    #[test]
    fn group_sizes_sum_to_total() {
        let m = PatchDenoiser::new(DenoiserConfig::multiview_toy(), Seed(1)).unwrap();
        let total: usize = m.group_sizes().iter().map(|(_, n)| n).sum();
        assert_eq!(total, m.num_params());
        assert!(m.group_sizes().iter().all(|(_, n)| *n > 0));
    }

    #[test]
    fn output_shape_matches_input() {
        let cfg = DenoiserConfig::gradcheck_tiny();
        let m = PatchDenoiser::new(cfg.clone(), Seed(3)).unwrap();
        let x = Array4::from_elem((8, 3, 4, 4), 0.3);
        let cond = ConditionBundle {
            text: Some("a dog".into()),
            image: Some(ImageFeatures::new(vec![0.2; 5], "t")),
            reference: Some(ndarray::Array3::zeros((3, 4, 4))),
        };
        assert_eq!(m.predict_batch(&x, &cond, 5).unwrap().dim(), x.dim());
        // not a multiple of the joint size
        assert!(m.predict_batch(&Array4::zeros((3, 3, 4, 4)), &cond, 5).is_err());
    }

    #[test]
    fn restore_rejects_foreign_snapshot() {
        let mut a = PatchDenoiser::new(DenoiserConfig::gradcheck_tiny(), Seed(1)).unwrap();
        let b = PatchDenoiser::new(DenoiserConfig::personalizer_toy(), Seed(1)).unwrap();
        assert!(a.restore(&b.snapshot()).is_err());
    }
}
