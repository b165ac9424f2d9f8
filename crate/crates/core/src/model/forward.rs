//! Forward passes: trunk, presence pooling, relevance normalization,
//! marginalization and the regularized log loss.

use crate::error::{Error, Result};
use crate::features::Features;
use crate::linalg::dot;
use crate::model::{
    rel_index, JointRelevance, ModelParams, Prediction, PresenceHead, RelevanceConditional,
    RelevanceHead, Trunk,
};

/// Reported probabilities are clamped to `[LOSS_CLAMP, 1 - LOSS_CLAMP]`
/// before taking logs.
pub const LOSS_CLAMP: f64 = 1e-7;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map every region vector through the trunk MLP.
pub fn trunk_forward(features: &Features, trunk: &Trunk) -> Result<Vec<Vec<f64>>> {
    trunk.validate(features.dim())?;
    Ok(features
        .iter_regions()
        .map(|region| trunk_region(region, trunk))
        .collect())
}

fn trunk_region(region: &[f64], trunk: &Trunk) -> Vec<f64> {
    let depth = trunk.layers.len();
    let mut x = region.to_vec();
    for (l, layer) in trunk.layers.iter().enumerate() {
        let mut out = layer.weight.matvec(&x);
        for (o, b) in out.iter_mut().zip(&layer.bias) {
            *o += b;
        }
        if l + 1 < depth {
            for o in out.iter_mut() {
                *o = o.max(0.0);
            }
        }
        x = out;
    }
    x
}

/// `1 - prod(1 - p_k)`. Errors on an empty list or probabilities outside
/// `[0, 1]`. A singleton returns its probability exactly (the two-step
/// `1 - (1 - p)` would lose an ulp).
pub fn noisy_or(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidInput(
            "noisy-or needs at least one probability".into(),
        ));
    }
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "noisy-or probability {p} outside [0, 1]"
            )));
        }
    }
    if probs.len() == 1 {
        return Ok(probs[0]);
    }
    let mut survive = 1.0;
    for &p in probs {
        survive *= 1.0 - p;
    }
    Ok(1.0 - survive)
}

/// Per-concept presence probabilities. In bag mode the per-region sigmoid
/// probabilities are pooled with a noisy-OR (and returned alongside);
/// otherwise the input must hold exactly one region.
pub fn presence_forward(
    phi: &[Vec<f64>],
    head: &PresenceHead,
    bag_mode: bool,
) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>)> {
    if phi.is_empty() {
        return Err(Error::InvalidInput("no region features".into()));
    }
    if !bag_mode && phi.len() > 1 {
        return Err(Error::InvalidInput(format!(
            "single-vector mode requires one region, got {}",
            phi.len()
        )));
    }
    for region in phi {
        if region.len() != head.phi_dim() {
            return Err(Error::Dimension(format!(
                "presence head expects dim {}, got {}",
                head.phi_dim(),
                region.len()
            )));
        }
    }
    let concepts = head.concepts();
    let mut pooled = Vec::with_capacity(concepts);
    if bag_mode {
        let mut per_region = Vec::with_capacity(concepts);
        for w in 0..concepts {
            let row = head.weight.row(w);
            let probs: Vec<f64> = phi
                .iter()
                .map(|region| sigmoid(dot(row, region) + head.bias[w]))
                .collect();
            pooled.push(noisy_or(&probs)?);
            per_region.push(probs);
        }
        Ok((pooled, Some(per_region)))
    } else {
        let region = &phi[0];
        for w in 0..concepts {
            pooled.push(sigmoid(dot(head.weight.row(w), region) + head.bias[w]));
        }
        Ok((pooled, None))
    }
}

/// Identity joint/conditional pair used when the relevance head is bypassed.
pub(crate) fn identity_relevance_pair() -> (JointRelevance, RelevanceConditional) {
    (
        JointRelevance {
            p: [[0.5, 0.0], [0.0, 0.5]],
        },
        RelevanceConditional::identity(),
    )
}

/// Per-concept joint and conditional relevance from pooled features.
///
/// Scores are `weight . pooled + bias` per `(y, z)` cell (bias only when
/// unconditioned), softmax-normalized into the joint with max subtraction;
/// the conditional divides each cell by its presence-column marginal.
/// `identity_override` bypasses the head entirely.
pub fn relevance_forward(
    pooled: &[f64],
    head: &RelevanceHead,
    conditioned: bool,
    identity_override: bool,
) -> Result<Vec<(JointRelevance, RelevanceConditional)>> {
    let concepts = head.concepts();
    if identity_override {
        return Ok((0..concepts).map(|_| identity_relevance_pair()).collect());
    }
    if conditioned && pooled.len() != head.phi_dim() {
        return Err(Error::Dimension(format!(
            "relevance head expects dim {}, got {}",
            head.phi_dim(),
            pooled.len()
        )));
    }
    let mut out = Vec::with_capacity(concepts);
    for w in 0..concepts {
        let mut scores = [0.0; 4];
        for (cell, score) in scores.iter_mut().enumerate() {
            let row = 4 * w + cell;
            *score = head.bias[row]
                + if conditioned {
                    dot(head.weight.row(row), pooled)
                } else {
                    0.0
                };
        }
        out.push(normalize_relevance(&scores));
    }
    Ok(out)
}

/// Softmax over the four scores, then column normalization.
pub(crate) fn normalize_relevance(scores: &[f64; 4]) -> (JointRelevance, RelevanceConditional) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps = [0.0; 4];
    let mut sum = 0.0;
    for (e, &s) in exps.iter_mut().zip(scores) {
        *e = (s - max).exp();
        sum += *e;
    }
    let mut joint = [[0.0; 2]; 2];
    for y in 0..2 {
        for z in 0..2 {
            joint[y][z] = exps[rel_index(y, z)] / sum;
        }
    }
    let mut cond = [[0.0; 2]; 2];
    for z in 0..2 {
        // Softmax outputs are strictly positive, so the marginal is too.
        let marginal = joint[0][z] + joint[1][z];
        cond[0][z] = joint[0][z] / marginal;
        cond[1][z] = joint[1][z] / marginal;
    }
    (
        JointRelevance { p: joint },
        RelevanceConditional { p: cond },
    )
}

/// Marginalize presence through the conditional:
/// `P(y=1) = r[1][1] * presence + r[1][0] * (1 - presence)`.
pub fn marginalize(presence: f64, relevance: &RelevanceConditional) -> f64 {
    relevance.p[1][1] * presence + relevance.p[1][0] * (1.0 - presence)
}

/// Full forward pass: trunk, presence (pooled in bag mode), relevance on
/// mean-pooled features, then marginalization.
pub fn model_forward(features: &Features, params: &ModelParams) -> Result<Vec<Prediction>> {
    let phi = trunk_forward(features, &params.trunk)?;
    let (presence, region_presence) = presence_forward(&phi, &params.presence, params.bag_mode)?;
    let pooled = mean_pool(&phi);
    let relevance = relevance_forward(
        &pooled,
        &params.relevance,
        params.relevance_conditioned,
        params.identity_relevance,
    )?;
    Ok(presence
        .into_iter()
        .enumerate()
        .map(|(w, v)| {
            let (_, cond) = relevance[w];
            Prediction {
                presence: v,
                relevance: cond,
                mention: marginalize(v, &cond),
                region_presence: region_presence.as_ref().map(|r| r[w].clone()),
            }
        })
        .collect())
}

pub(crate) fn mean_pool(phi: &[Vec<f64>]) -> Vec<f64> {
    let dim = phi[0].len();
    let mut pooled = vec![0.0; dim];
    for region in phi {
        for (p, x) in pooled.iter_mut().zip(region) {
            *p += x;
        }
    }
    let inv = 1.0 / phi.len() as f64;
    for p in pooled.iter_mut() {
        *p *= inv;
    }
    pooled
}

/// Cross-entropy of the reported probabilities against binary labels, plus
/// an L2 penalty of `weight_decay / 2` on the weights of the components the
/// active forward path uses (biases are never penalized, and bypassed
/// components - the relevance head under the identity override, the
/// relevance weights when unconditioned - are excluded).
pub fn loss(mentions: &[f64], labels: &[bool], params: &ModelParams, weight_decay: f64) -> f64 {
    debug_assert_eq!(mentions.len(), labels.len());
    let mut total = 0.0;
    for (&h, &y) in mentions.iter().zip(labels) {
        let h = h.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
        total -= if y { h.ln() } else { (1.0 - h).ln() };
    }
    total + 0.5 * weight_decay * active_weight_sq(params)
}

pub(crate) fn active_weight_sq(params: &ModelParams) -> f64 {
    let mut sq = 0.0;
    for layer in &params.trunk.layers {
        sq += sum_sq(layer.weight.as_slice());
    }
    sq += sum_sq(params.presence.weight.as_slice());
    if !params.identity_relevance && params.relevance_conditioned {
        sq += sum_sq(params.relevance.weight.as_slice());
    }
    sq
}

fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}
