//! Forward and backward passes over the valid prefix of one sequence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ClassifierModel;
use crate::labels::N_LABELS;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

struct LayerTrace {
    n: usize,
    m: usize,
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    mask1: Option<Vec<f64>>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    h2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

pub(crate) struct Trace {
    ids: Vec<u32>,
    layers: Vec<LayerTrace>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    pooled: Vec<f64>,
    pub logits: [f64; N_LABELS],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Returns (output, normalized input, reciprocal std per row).
fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    (y, xhat, rstd)
}

fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    d: usize,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, &rs) in rstd.iter().enumerate() {
        let (dyr, xh) = (&dy[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
        let (mut mean_dxhat, mut mean_dxhat_xhat) = (0.0, 0.0);
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for i in 0..d {
            dx[r * d + i] = rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

/// `x · W + b` with `W` stored `[inp × out]`.
fn linear(x: &[f64], inp: usize, out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let rows = x.len() / inp;
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * out..];
        for (i, &xi) in x[r * inp..(r + 1) * inp].iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &w[i * out..(i + 1) * out], yr);
            }
        }
    }
    y
}

/// Accumulates weight/bias gradients into `grad` and adds `dy · Wᵀ` into `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    inp: usize,
    out: usize,
    params: &[f64],
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
    dx: &mut [f64],
) {
    let rows = dy.len() / out;
    let w = &params[w_off..w_off + inp * out];
    for r in 0..rows {
        let dyr = &dy[r * out..(r + 1) * out];
        axpy(1.0, dyr, &mut grad[b_off..b_off + out]);
        for i in 0..inp {
            let xi = x[r * inp + i];
            if xi != 0.0 {
                axpy(xi, dyr, &mut grad[w_off + i * out..w_off + (i + 1) * out]);
            }
            dx[r * inp + i] += dot(dyr, &w[i * out..(i + 1) * out]);
        }
    }
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn dropout_mask(len: usize, drop: &mut Option<Dropout<'_>>) -> Option<Vec<f64>> {
    let dr = drop.as_mut()?;
    let scale = 1.0 / (1.0 - dr.p);
    Some(
        (0..len)
            .map(|_| if dr.rng.random::<f64>() < dr.p { 0.0 } else { scale })
            .collect(),
    )
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Runs the encoder on `ids` (the unmasked prefix, CLS first). The last layer
/// only computes the CLS row, which is all the head reads.
pub(crate) fn forward(model: &ClassifierModel, ids: &[u32], mut drop: Option<Dropout<'_>>) -> Trace {
    let c = &model.config;
    let (d, f, heads, dh) = (c.d_model, c.d_ff, c.n_heads, c.head_dim());
    let p = &model.params;
    let lay = &model.layout;
    let n = ids.len();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; n * d];
    for (t, &id) in ids.iter().enumerate() {
        let row = &mut x[t * d..(t + 1) * d];
        row.copy_from_slice(&p[lay.tok + id as usize * d..][..d]);
        axpy(1.0, &p[lay.pos + t * d..][..d], row);
    }

    let mut layers = Vec::with_capacity(lay.layers.len());
    for (li, o) in lay.layers.iter().enumerate() {
        let m = if li + 1 == lay.layers.len() { 1 } else { n };
        let (h1, ln1_xhat, ln1_rstd) = layer_norm(&x, d, &p[o.ln1_g..][..d], &p[o.ln1_b..][..d]);
        let q = linear(&h1[..m * d], d, d, &p[o.wq..][..d * d], &p[o.bq..][..d]);
        let k = linear(&h1, d, d, &p[o.wk..][..d * d], &p[o.bk..][..d]);
        let v = linear(&h1, d, d, &p[o.wv..][..d * d], &p[o.bv..][..d]);
        let mut probs = vec![0.0; heads * m * n];
        let mut ctx = vec![0.0; m * d];
        for h in 0..heads {
            let hs = h * dh;
            for i in 0..m {
                let row = &mut probs[(h * m + i) * n..(h * m + i + 1) * n];
                let qi = &q[i * d + hs..i * d + hs + dh];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * d + hs..j * d + hs + dh]) * scale;
                    max = max.max(*s);
                }
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let ci = &mut ctx[i * d + hs..i * d + hs + dh];
                for (j, s) in row.iter_mut().enumerate() {
                    *s /= sum;
                    axpy(*s, &v[j * d + hs..j * d + hs + dh], ci);
                }
            }
        }
        let mut attn = linear(&ctx, d, d, &p[o.wo..][..d * d], &p[o.bo..][..d]);
        let mask1 = dropout_mask(m * d, &mut drop);
        apply_mask(&mut attn, &mask1);
        let mut x1 = x[..m * d].to_vec();
        axpy(1.0, &attn, &mut x1);

        let (h2, ln2_xhat, ln2_rstd) = layer_norm(&x1, d, &p[o.ln2_g..][..d], &p[o.ln2_b..][..d]);
        let u = linear(&h2, d, f, &p[o.w1..][..d * f], &p[o.b1..][..f]);
        let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
        let mut ff = linear(&g, f, d, &p[o.w2..][..f * d], &p[o.b2..][..d]);
        let mask2 = dropout_mask(m * d, &mut drop);
        apply_mask(&mut ff, &mask2);
        axpy(1.0, &ff, &mut x1);
        x = x1;

        layers.push(LayerTrace {
            n,
            m,
            ln1_xhat,
            ln1_rstd,
            h1,
            q,
            k,
            v,
            probs,
            ctx,
            mask1,
            ln2_xhat,
            ln2_rstd,
            h2,
            u,
            g,
            mask2,
        });
    }

    let (pooled, lnf_xhat, lnf_rstd) = layer_norm(&x[..d], d, &p[lay.lnf_g..][..d], &p[lay.lnf_b..][..d]);
    let mut logits = [0.0; N_LABELS];
    for (cl, z) in logits.iter_mut().enumerate() {
        *z = p[lay.head_b + cl] + dot(&p[lay.head_w + cl * d..][..d], &pooled);
    }
    Trace {
        ids: ids.to_vec(),
        layers,
        lnf_xhat,
        lnf_rstd,
        pooled,
        logits,
    }
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
pub(crate) fn backward(model: &ClassifierModel, trace: &Trace, dlogits: &[f64; N_LABELS], grad: &mut [f64]) {
    let c = &model.config;
    let (d, f, heads, dh) = (c.d_model, c.d_ff, c.n_heads, c.head_dim());
    let p = &model.params;
    let lay = &model.layout;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dpooled = vec![0.0; d];
    for (cl, &dz) in dlogits.iter().enumerate() {
        grad[lay.head_b + cl] += dz;
        axpy(dz, &trace.pooled, &mut grad[lay.head_w + cl * d..][..d]);
        axpy(dz, &p[lay.head_w + cl * d..][..d], &mut dpooled);
    }
    let (dg, db) = split_pair(grad, lay.lnf_g, lay.lnf_b, d);
    let mut dx = layer_norm_backward(&dpooled, &trace.lnf_xhat, &trace.lnf_rstd, d, &p[lay.lnf_g..][..d], dg, db);

    for (o, t) in lay.layers.iter().zip(&trace.layers).rev() {
        let (n, m) = (t.n, t.m);
        // feed-forward sublayer; dx is the gradient w.r.t. this layer's output (m rows)
        let mut dff = dx.clone();
        apply_mask(&mut dff, &t.mask2);
        let mut dg_act = vec![0.0; m * f];
        linear_backward(&t.g, &dff, f, d, p, grad, o.w2, o.b2, &mut dg_act);
        for (dgv, &uv) in dg_act.iter_mut().zip(&t.u) {
            *dgv *= gelu_grad(uv);
        }
        let mut dh2 = vec![0.0; m * d];
        linear_backward(&t.h2, &dg_act, d, f, p, grad, o.w1, o.b1, &mut dh2);
        let (dg2, db2) = split_pair(grad, o.ln2_g, o.ln2_b, d);
        let dln2 = layer_norm_backward(&dh2, &t.ln2_xhat, &t.ln2_rstd, d, &p[o.ln2_g..][..d], dg2, db2);
        let mut dx1 = dx;
        axpy(1.0, &dln2, &mut dx1);

        // attention sublayer
        let mut dattn = dx1.clone();
        apply_mask(&mut dattn, &t.mask1);
        let mut dctx = vec![0.0; m * d];
        linear_backward(&t.ctx, &dattn, d, d, p, grad, o.wo, o.bo, &mut dctx);
        let mut dq = vec![0.0; m * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for h in 0..heads {
            let hs = h * dh;
            for i in 0..m {
                let row = &t.probs[(h * m + i) * n..(h * m + i + 1) * n];
                let dci = &dctx[i * d + hs..i * d + hs + dh];
                let mut weighted = 0.0;
                for j in 0..n {
                    dp[j] = dot(dci, &t.v[j * d + hs..j * d + hs + dh]);
                    axpy(row[j], dci, &mut dv[j * d + hs..j * d + hs + dh]);
                    weighted += row[j] * dp[j];
                }
                let qi = &t.q[i * d + hs..i * d + hs + dh];
                for j in 0..n {
                    let ds = row[j] * (dp[j] - weighted) * scale;
                    if ds != 0.0 {
                        axpy(ds, &t.k[j * d + hs..j * d + hs + dh], &mut dq[i * d + hs..i * d + hs + dh]);
                        axpy(ds, qi, &mut dk[j * d + hs..j * d + hs + dh]);
                    }
                }
            }
        }
        let mut dh1 = vec![0.0; n * d];
        linear_backward(&t.h1[..m * d], &dq, d, d, p, grad, o.wq, o.bq, &mut dh1[..m * d]);
        linear_backward(&t.h1, &dk, d, d, p, grad, o.wk, o.bk, &mut dh1);
        linear_backward(&t.h1, &dv, d, d, p, grad, o.wv, o.bv, &mut dh1);
        let (dg1, db1) = split_pair(grad, o.ln1_g, o.ln1_b, d);
        let mut dx_in = layer_norm_backward(&dh1, &t.ln1_xhat, &t.ln1_rstd, d, &p[o.ln1_g..][..d], dg1, db1);
        axpy(1.0, &dx1, &mut dx_in[..m * d]);
        dx = dx_in;
    }

    for (pos, &id) in trace.ids.iter().enumerate() {
        let row = &dx[pos * d..(pos + 1) * d];
        axpy(1.0, row, &mut grad[lay.tok + id as usize * d..][..d]);
        axpy(1.0, row, &mut grad[lay.pos + pos * d..][..d]);
    }
}

/// Disjoint mutable views of two `len`-sized blocks with `a < b`.
fn split_pair(buf: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + len <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + len], &mut hi[..len])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_402_6).abs() < 1e-12);
        for &u in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let numeric = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((gelu_grad(u) - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = [1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 10.0];
        let (y, _, _) = layer_norm(&x, 4, &[1.0; 4], &[0.0; 4]);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_matches_naive_product() {
        let x = [1.0, 2.0, 0.0, -1.0, 0.5, 3.0];
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3 × 2
        let b = [0.5, -0.5];
        let y = linear(&x, 3, 2, &w, &b);
        assert_eq!(y, vec![0.5 + 1.0 + 6.0, -0.5 + 2.0 + 8.0, 0.5 - 1.0 + 1.5 + 15.0, -0.5 - 2.0 + 2.0 + 18.0]);
    }
}
