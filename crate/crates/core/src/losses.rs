//! Ranking and distillation objectives with analytic gradients.
//!
//! All four objectives are built from cosine similarities, so every one of
//! them is invariant to positive rescaling of its inputs. Each objective has
//! a slice-level `*_grad` form used by the trainers and an
//! [`EmbeddingVector`]-level form that validates its inputs.
//!
//! - [`pairwise_hinge_loss`]: `max{0, 1 - cos(d, e+) + cos(d, e-)}`
//! - [`focal_ranking_loss`]: `p = clamp(0.5 * max{0, 1 + cos(d, e+) - cos(d, e-)}, eps, 1)`,
//!   `loss = -(1 - p)^gamma * ln p`
//! - [`distillation_loss`]: `sum_k (1 - cos(e^S_k, e^T_k))`
//! - [`weighted_distillation_loss`]: `sum_k w_k (1 - cos(e^S_k, e^T_k))` with
//!   `w_k = clamp(cos(d_hat_k, e^T_k), 0, 1)^beta` and `d_hat_k` the dictionary
//!   row nearest to `e^T_k`.

use serde::{Deserialize, Serialize};

use crate::embeddings::{dot, norm, EmbeddingVector, LabelDictionary};
use crate::error::{Error, Result};

/// Lower clamp on the focal-loss probability.
pub const P_T_EPSILON: f64 = 1e-7;

/// Cosine of `a` and `b` together with its gradient w.r.t. both arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Degenerate("loss input is a zero or non-finite vector".into()));
    }
    Ok((na, nb))
}

/// Unclamped cosine similarity.
pub fn cos(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    Ok(dot(a, b) / (na * nb))
}

/// `d cos / d a = (b/|b| - cos * a/|a|) / |a|`, and symmetrically for `b`.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Result<CosineGrad> {
    let (na, nb) = check_pair(a, b)?;
    let c = dot(a, b) / (na * nb);
    let grad_a = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (y / nb - c * x / na) / na)
        .collect();
    let grad_b = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x / na - c * y / nb) / nb)
        .collect();
    Ok(CosineGrad {
        value: c,
        grad_a,
        grad_b,
    })
}

/// Gradients of a ranking loss w.r.t. the label centre and both image embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub d: Vec<f64>,
    pub e_pos: Vec<f64>,
    pub e_neg: Vec<f64>,
}

impl TripletGrad {
    fn scaled(pos: &CosineGrad, neg: &CosineGrad, k_pos: f64, k_neg: f64) -> Self {
        Self {
            d: pos
                .grad_a
                .iter()
                .zip(&neg.grad_a)
                .map(|(p, n)| k_pos * p + k_neg * n)
                .collect(),
            e_pos: pos.grad_b.iter().map(|g| k_pos * g).collect(),
            e_neg: neg.grad_b.iter().map(|g| k_neg * g).collect(),
        }
    }
}

pub fn pairwise_hinge_grad(d: &[f64], e_pos: &[f64], e_neg: &[f64]) -> Result<(f64, TripletGrad)> {
    let pos = cosine_grad(d, e_pos)?;
    let neg = cosine_grad(d, e_neg)?;
    let margin = 1.0 - pos.value + neg.value;
    if margin > 0.0 {
        Ok((margin, TripletGrad::scaled(&pos, &neg, -1.0, 1.0)))
    } else {
        Ok((0.0, TripletGrad::scaled(&pos, &neg, 0.0, 0.0)))
    }
}

pub fn pairwise_hinge_loss(
    d: &EmbeddingVector,
    e_pos: &EmbeddingVector,
    e_neg: &EmbeddingVector,
) -> Result<f64> {
    let margin = 1.0 - cos(&d.values, &e_pos.values)? + cos(&d.values, &e_neg.values)?;
    Ok(margin.max(0.0))
}

/// Intermediate values of one focal ranking loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossBreakdown {
    pub s_pos: f64,
    pub s_neg: f64,
    /// `0.5 * max{0, 1 + s_pos - s_neg}` before clamping; may exceed 1.
    pub p_raw: f64,
    pub p_t: f64,
    pub loss: f64,
}

fn focal_from_cosines(s_pos: f64, s_neg: f64, gamma: f64) -> FocalLossBreakdown {
    let p_raw = 0.5 * (1.0 + s_pos - s_neg).max(0.0);
    let p_t = p_raw.clamp(P_T_EPSILON, 1.0);
    // powf(0, 0) == 1, so gamma = 0 reduces exactly to -ln p_t.
    let loss = (-(1.0 - p_t).powf(gamma) * p_t.ln()).max(0.0);
    FocalLossBreakdown {
        s_pos,
        s_neg,
        p_raw,
        p_t,
        loss,
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite and non-negative, got {gamma}"
        )));
    }
    Ok(())
}

/// Focal ranking loss and its gradient.
///
/// The gradient is zero wherever `p_t` is clamped.
pub fn focal_ranking_grad(
    d: &[f64],
    e_pos: &[f64],
    e_neg: &[f64],
    gamma: f64,
) -> Result<(FocalLossBreakdown, TripletGrad)> {
    check_gamma(gamma)?;
    let pos = cosine_grad(d, e_pos)?;
    let neg = cosine_grad(d, e_neg)?;
    let b = focal_from_cosines(pos.value, neg.value, gamma);

    let dl_dp = if b.p_raw > P_T_EPSILON && b.p_raw < 1.0 {
        let p = b.p_t;
        let q = 1.0 - p;
        let focusing = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p.ln()
        };
        focusing - q.powf(gamma) / p
    } else {
        0.0
    };
    // dp/ds_pos = 0.5, dp/ds_neg = -0.5 inside the active region.
    let k = 0.5 * dl_dp;
    Ok((b, TripletGrad::scaled(&pos, &neg, k, -k)))
}

pub fn focal_ranking_loss(
    d: &EmbeddingVector,
    e_pos: &EmbeddingVector,
    e_neg: &EmbeddingVector,
    gamma: f64,
) -> Result<FocalLossBreakdown> {
    check_gamma(gamma)?;
    let s_pos = cos(&d.values, &e_pos.values)?;
    let s_neg = cos(&d.values, &e_neg.values)?;
    Ok(focal_from_cosines(s_pos, s_neg, gamma))
}

/// Gradient of one distillation term `1 - cos(student, teacher)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
}

pub fn distillation_grad(pairs: &[(&[f64], &[f64])]) -> Result<(f64, Vec<PairGrad>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyData("distillation needs at least one pair".into()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for (s, t) in pairs {
        let g = cosine_grad(s, t)?;
        loss += 1.0 - g.value;
        grads.push(PairGrad {
            student: g.grad_a.iter().map(|v| -v).collect(),
            teacher: g.grad_b.iter().map(|v| -v).collect(),
        });
    }
    Ok((loss, grads))
}

pub fn distillation_loss(pairs: &[(EmbeddingVector, EmbeddingVector)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyData("distillation needs at least one pair".into()));
    }
    pairs
        .iter()
        .map(|(s, t)| cos(&s.values, &t.values).map(|c| 1.0 - c))
        .sum()
}

/// Certainty of a teacher embedding: its clamped cosine with the nearest
/// dictionary row, and that value raised to `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillWeight {
    pub nearest: usize,
    pub certainty: f64,
    pub beta_power: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and non-negative, got {beta}"
        )));
    }
    Ok(())
}

pub fn distill_weight(teacher: &[f64], dict: &LabelDictionary, beta: f64) -> Result<DistillWeight> {
    check_beta(beta)?;
    let (nearest, sim) = dict.nearest(teacher)?;
    let certainty = sim.clamp(0.0, 1.0);
    Ok(DistillWeight {
        nearest,
        certainty,
        beta_power: certainty.powf(beta),
    })
}

/// Gradient of one weighted distillation term, including the path through
/// the certainty weight into the teacher embedding and the nearest row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPairGrad {
    pub weight: DistillWeight,
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
    /// Gradient w.r.t. dictionary row `weight.nearest`.
    pub dict_row: Vec<f64>,
}

pub fn weighted_distillation_grad(
    pairs: &[(&[f64], &[f64])],
    dictionaries: &[&LabelDictionary],
    beta: f64,
) -> Result<(f64, Vec<WeightedPairGrad>)> {
    check_beta(beta)?;
    if pairs.is_empty() {
        return Err(Error::EmptyData("distillation needs at least one pair".into()));
    }
    if dictionaries.len() != pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} pairs but {} dictionaries",
            pairs.len(),
            dictionaries.len()
        )));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for ((s, t), dict) in pairs.iter().zip(dictionaries) {
        let weight = distill_weight(t, dict, beta)?;
        let st = cosine_grad(s, t)?;
        let term = 1.0 - st.value;
        loss += weight.beta_power * term;

        let row = dict.row(weight.nearest);
        let dt = cosine_grad(row, t)?;
        let c = weight.certainty;
        let dw_dc = if beta > 0.0 && c > 0.0 && c < 1.0 {
            beta * c.powf(beta - 1.0)
        } else {
            0.0
        };
        let w = weight.beta_power;
        grads.push(WeightedPairGrad {
            weight,
            student: st.grad_a.iter().map(|g| -w * g).collect(),
            teacher: st
                .grad_b
                .iter()
                .zip(&dt.grad_b)
                .map(|(gs, gw)| -w * gs + term * dw_dc * gw)
                .collect(),
            dict_row: dt.grad_a.iter().map(|g| term * dw_dc * g).collect(),
        });
    }
    Ok((loss, grads))
}

/// Certainty-weighted distillation. Each pair is matched to the dictionary
/// whose attribute type equals the teacher embedding's.
pub fn weighted_distillation_loss(
    pairs: &[(EmbeddingVector, EmbeddingVector)],
    dictionaries: &[LabelDictionary],
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    if pairs.is_empty() {
        return Err(Error::EmptyData("distillation needs at least one pair".into()));
    }
    let mut loss = 0.0;
    for (s, t) in pairs {
        let dict = dictionaries
            .iter()
            .find(|d| d.attribute_type == t.attribute_type)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no dictionary for attribute type `{}`", t.attribute_type))
            })?;
        let w = distill_weight(&t.values, dict, beta)?;
        loss += w.beta_power * (1.0 - cos(&s.values, &t.values)?);
    }
    Ok(loss)
}
