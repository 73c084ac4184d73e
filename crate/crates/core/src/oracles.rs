//! Index-by-index reference implementations of the attention layers.
//!
//! Nothing here calls the `numeric` kernels: every norm, projection,
//! softmax and product is spelled out as scalar loops over `Vec<f64>`.
//! Used by the unit tests, the acceptance suite and `selftest`.

use crate::cmt::CmtWeights;
use crate::mmh::{Integrator, SelfAttentionBlock};
use crate::numeric::{AffineWeights, LayerNorm, Matrix};

type Rows = Vec<Vec<f64>>;

fn rows_of(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn to_matrix(r: &Rows) -> Matrix {
    Matrix::from_rows(r)
}

fn norm(x: &Rows, ln: &LayerNorm) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mut mean = 0.0;
            for v in row {
                mean += v;
            }
            mean /= n;
            let mut var = 0.0;
            for v in row {
                var += (v - mean) * (v - mean);
            }
            var /= n;
            let sd = (var + ln.eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * ln.gain[j] + ln.offset[j])
                .collect()
        })
        .collect()
}

fn project(x: &Rows, w: &AffineWeights) -> Rows {
    x.iter()
        .map(|row| {
            (0..w.out_dim())
                .map(|j| {
                    let mut s = w.bias[j];
                    for (k, v) in row.iter().enumerate() {
                        s += v * w.weight.get(k, j);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// `softmax(scale · a·bᵀ)` restricted to columns `lo..hi` of both operands.
fn attention(a: &Rows, b: &Rows, lo: usize, hi: usize, scale: f64) -> Rows {
    a.iter()
        .map(|ar| {
            let logits: Vec<f64> = b
                .iter()
                .map(|br| {
                    let mut s = 0.0;
                    for k in lo..hi {
                        s += ar[k] * br[k];
                    }
                    s * scale
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// `p · v` restricted to columns `lo..hi` of `v`.
fn weigh(p: &Rows, v: &Rows, lo: usize, hi: usize) -> Rows {
    p.iter()
        .map(|pr| {
            (lo..hi)
                .map(|k| {
                    let mut s = 0.0;
                    for (t, vr) in v.iter().enumerate() {
                        s += pr[t] * vr[k];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn plus(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Scalar anchored expansion-squeeze; returns `ω` tokens.
pub fn naive_cmt(z: &Matrix, x: &Matrix, w: &CmtWeights) -> Matrix {
    let c = z.cols();
    let scale = 1.0 / (c as f64).sqrt();
    let (zr, xr) = (rows_of(z), rows_of(x));
    let zn = norm(&zr, &w.ln_template);
    let xn = norm(&xr, &w.ln_search);
    let q = project(&xn, &w.query);
    let k = project(&xn, &w.key);
    let v = project(&zn, &w.value);
    let a = project(&zn, &w.anchor);
    let me = attention(&k, &a, 0, c, scale);
    let ms = attention(&a, &q, 0, c, scale);
    let expanded = weigh(&me, &v, 0, c);
    let squeezed = weigh(&ms, &expanded, 0, c);
    to_matrix(&plus(&project(&squeezed, &w.output), &zr))
}

/// Scalar pre-norm multi-head self-attention block.
pub fn naive_self_attention(x: &Matrix, b: &SelfAttentionBlock) -> Matrix {
    let c = x.cols();
    let dh = c / b.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let xr = rows_of(x);
    let xn = norm(&xr, &b.norm);
    let q = project(&xn, &b.query);
    let k = project(&xn, &b.key);
    let v = project(&xn, &b.value);
    let mut mixed: Rows = vec![Vec::with_capacity(c); xr.len()];
    for h in 0..b.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let p = attention(&q, &k, lo, hi, scale);
        for (row, part) in mixed.iter_mut().zip(weigh(&p, &v, lo, hi)) {
            row.extend(part);
        }
    }
    to_matrix(&plus(&project(&mixed, &b.output), &xr))
}

/// Scalar multi-KV integrator; `search` holds the raw search tokens and is
/// also the residual.
pub fn naive_integrator(attended: &Matrix, search: &Matrix, token: &Matrix, g: &Integrator) -> Matrix {
    let c = attended.cols();
    let scale = 1.0 / (c as f64).sqrt();
    let all = rows_of(attended);
    let nx = search.rows();
    let slice: Rows = all[all.len() - nx..].to_vec();
    let q = project(&norm(&slice, &g.norm_search), &g.query);
    let cn = norm(&all, &g.norm_concat);
    let kv = project(&cn, &g.key_visual);
    let vv = project(&cn, &g.value_visual);
    let mn = norm(&rows_of(token), &g.norm_motion);
    let km = project(&mn, &g.key_motion);
    let vm = project(&mn, &g.value_motion);
    let visual = weigh(&attention(&q, &kv, 0, c, scale), &vv, 0, c);
    let motion = weigh(&attention(&q, &km, 0, c, scale), &vm, 0, c);
    to_matrix(&plus(&project(&plus(&visual, &motion), &g.output), &rows_of(search)))
}
