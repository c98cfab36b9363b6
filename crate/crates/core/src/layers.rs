//! Forward/backward kernels for the toy denoiser.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::params::{ParamSet, TensorRef};

/// Single-head attention weights. Queries come from `h`, keys/values from a
/// context matrix (the same matrix for self-attention).
#[derive(Clone, Copy, Debug)]
pub struct AttnRefs {
    pub wq: TensorRef,
    pub wk: TensorRef,
    pub wv: TensorRef,
    pub bv: TensorRef,
    pub wo: TensorRef,
    pub bo: TensorRef,
}

#[derive(Clone, Debug)]
pub struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    p: Array2<f64>,
    o: Array2<f64>,
}

pub fn row_bias(p: &ParamSet, t: TensorRef) -> ArrayView2<'_, f64> {
    p.view(t)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row /= z;
    }
}

pub fn attn_forward(
    params: &ParamSet,
    r: &AttnRefs,
    h: &Array2<f64>,
    ctx: &Array2<f64>,
) -> (Array2<f64>, AttnCache) {
    let scale = 1.0 / (r.wq.cols as f64).sqrt();
    let q = h.dot(&params.view(r.wq));
    let k = ctx.dot(&params.view(r.wk));
    let v = ctx.dot(&params.view(r.wv)) + &params.view(r.bv);
    let mut p = q.dot(&k.t()) * scale;
    softmax_rows(&mut p);
    let o = p.dot(&v);
    let out = o.dot(&params.view(r.wo)) + &params.view(r.bo);
    (out, AttnCache { q, k, v, p, o })
}

/// Returns `(dL/dh, dL/dctx)` and accumulates weight gradients into `grads`.
pub fn attn_backward(
    params: &ParamSet,
    r: &AttnRefs,
    h: &Array2<f64>,
    ctx: &Array2<f64>,
    cache: &AttnCache,
    d_out: &Array2<f64>,
    grads: &mut ParamSet,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (r.wq.cols as f64).sqrt();
    grads.accumulate(r.wo, cache.o.t().dot(d_out).view());
    grads.accumulate(r.bo, sum_rows(d_out).view());
    let d_o = d_out.dot(&params.view(r.wo).t());
    let d_p = d_o.dot(&cache.v.t());
    let d_v = cache.p.t().dot(&d_o);
    let inner = (&d_p * &cache.p).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_s = (&d_p - &inner) * &cache.p * scale;
    let d_q = d_s.dot(&cache.k);
    let d_k = d_s.t().dot(&cache.q);
    grads.accumulate(r.wq, h.t().dot(&d_q).view());
    grads.accumulate(r.wk, ctx.t().dot(&d_k).view());
    grads.accumulate(r.wv, ctx.t().dot(&d_v).view());
    grads.accumulate(r.bv, sum_rows(&d_v).view());
    let d_h = d_q.dot(&params.view(r.wq).t());
    let d_ctx = d_k.dot(&params.view(r.wk).t()) + d_v.dot(&params.view(r.wv).t());
    (d_h, d_ctx)
}

pub fn sum_rows(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// `tanh(x·W + b)`.
pub fn dense_tanh(params: &ParamSet, w: TensorRef, b: TensorRef, x: &Array2<f64>) -> Array2<f64> {
    (x.dot(&params.view(w)) + &params.view(b)).mapv(f64::tanh)
}

pub fn dense(params: &ParamSet, w: TensorRef, b: TensorRef, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&params.view(w)) + &params.view(b)
}

/// Backward through `y = x·W + b`; returns `dL/dx`.
pub fn dense_backward(
    params: &ParamSet,
    w: TensorRef,
    b: TensorRef,
    x: &Array2<f64>,
    d_y: &Array2<f64>,
    grads: &mut ParamSet,
) -> Array2<f64> {
    grads.accumulate(w, x.t().dot(d_y).view());
    grads.accumulate(b, sum_rows(d_y).view());
    d_y.dot(&params.view(w).t())
}

/// Backward through `a = tanh(z)` given the activation `a`.
pub fn tanh_backward(a: &Array2<f64>, d_a: &Array2<f64>) -> Array2<f64> {
    d_a * &a.mapv(|v| 1.0 - v * v)
}

pub fn time_features(t: usize, num_steps: usize, freqs: usize) -> Array1<f64> {
    let tau = t as f64 / num_steps as f64;
    let mut f = Array1::zeros(2 * freqs);
    for k in 0..freqs {
        let ang = tau * std::f64::consts::FRAC_PI_2 * (1u64 << k) as f64;
        f[2 * k] = ang.sin();
        f[2 * k + 1] = ang.cos();
    }
    f
}
