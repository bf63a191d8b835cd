//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numeric code; every value is
//! recomputed from scalar arithmetic.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Box-Muller, so the oracle side does not depend on rand_distr.
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

pub fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn oracle_hinge(d: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
    let m = 1.0 - oracle_cos(d, pos) + oracle_cos(d, neg);
    if m > 0.0 {
        m
    } else {
        0.0
    }
}

pub fn oracle_focal(d: &[f64], pos: &[f64], neg: &[f64], gamma: f64) -> f64 {
    let mut p = 0.5 * (1.0 + oracle_cos(d, pos) - oracle_cos(d, neg));
    if p < 0.0 {
        p = 0.0;
    }
    if p < EPS {
        p = EPS;
    }
    if p > 1.0 {
        p = 1.0;
    }
    let focus = if gamma == 0.0 { 1.0 } else { (1.0 - p).powf(gamma) };
    -focus * p.ln()
}

pub fn oracle_distill(pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    pairs.iter().map(|(s, t)| 1.0 - oracle_cos(s, t)).sum()
}

/// `rows` are dictionary rows; returns the weight `clamp(cos(d_hat, t), 0, 1)^beta`.
pub fn oracle_weight(rows: &[Vec<f64>], t: &[f64], beta: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for r in rows {
        let c = oracle_cos(r, t);
        if c > best {
            best = c;
        }
    }
    let c = best.max(0.0).min(1.0);
    if beta == 0.0 {
        1.0
    } else {
        c.powf(beta)
    }
}

pub fn oracle_weighted(pairs: &[(Vec<f64>, Vec<f64>)], dicts: &[Vec<Vec<f64>>], beta: f64) -> f64 {
    pairs
        .iter()
        .zip(dicts)
        .map(|((s, t), rows)| oracle_weight(rows, t, beta) * (1.0 - oracle_cos(s, t)))
        .sum()
}

/// Recall, precision and F1 at `k` by set arithmetic.
pub fn oracle_metrics(ranked: &[usize], truth: &[usize], k: usize) -> (f64, f64, f64) {
    let top: HashSet<usize> = ranked[..k].iter().copied().collect();
    let t: HashSet<usize> = truth.iter().copied().collect();
    let inter = top.intersection(&t).count() as f64;
    let r = inter / t.len() as f64;
    let p = inter / k as f64;
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (r, p, f)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y);
        y[i] = x[i] - h;
        let down = f(&y);
        y[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `|a - b| / max(|a|, |b|)` over whole vectors, 0 when both are ~0.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}
