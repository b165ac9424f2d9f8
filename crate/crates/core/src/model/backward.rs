//! Analytic gradients of the regularized log loss for one example,
//! propagated through marginalization, the softmax-joint conditional,
//! noisy-OR pooling, the sigmoid presence scores, mean pooling and the
//! trunk.

use crate::error::Result;
use crate::features::Features;
use crate::linalg::{axpy, Matrix};
use crate::model::forward::{mean_pool, LOSS_CLAMP};
use crate::model::{
    loss, presence_forward, rel_index, relevance_forward, Dense, ModelParams, PresenceHead,
    RelevanceHead, Trunk,
};

/// Gradient container mirroring [`ModelParams`]. Bypassed components
/// (relevance under the identity override, relevance weights when
/// unconditioned) are left at zero.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub trunk: Trunk,
    pub presence: PresenceHead,
    pub relevance: RelevanceHead,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads {
            trunk: Trunk {
                layers: params
                    .trunk
                    .layers
                    .iter()
                    .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                    .collect(),
            },
            presence: PresenceHead::zeros(params.concepts(), params.phi_dim()),
            relevance: RelevanceHead::zeros(params.concepts(), params.phi_dim()),
        }
    }
}

pub(crate) struct TrunkTrace {
    /// Per region, per layer: the layer's input vector.
    inputs: Vec<Vec<Vec<f64>>>,
    /// Per region, per layer: the pre-activation vector.
    preacts: Vec<Vec<Vec<f64>>>,
    /// Per region: trunk output.
    pub(crate) phi: Vec<Vec<f64>>,
}

pub(crate) fn trunk_forward_traced(features: &Features, trunk: &Trunk) -> TrunkTrace {
    let depth = trunk.layers.len();
    let mut inputs = Vec::with_capacity(features.regions());
    let mut preacts = Vec::with_capacity(features.regions());
    let mut phi = Vec::with_capacity(features.regions());
    for region in features.iter_regions() {
        let mut layer_inputs = Vec::with_capacity(depth);
        let mut layer_preacts = Vec::with_capacity(depth);
        let mut x = region.to_vec();
        for (l, layer) in trunk.layers.iter().enumerate() {
            let mut pre = layer.weight.matvec(&x);
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            layer_inputs.push(x);
            layer_preacts.push(pre.clone());
            if l + 1 < depth {
                for p in pre.iter_mut() {
                    *p = p.max(0.0);
                }
            }
            x = pre;
        }
        inputs.push(layer_inputs);
        preacts.push(layer_preacts);
        phi.push(x);
    }
    TrunkTrace {
        inputs,
        preacts,
        phi,
    }
}

/// Loss and analytic gradients for one example. The returned loss matches
/// [`loss`] on the forward outputs; under the identity override the
/// relevance gradients are identically zero and the presence path reduces
/// to the plain sigmoid log-loss gradient.
pub fn backward(
    features: &Features,
    labels: &[bool],
    params: &ModelParams,
    weight_decay: f64,
) -> Result<(f64, ModelGrads)> {
    params.validate()?;
    let concepts = params.concepts();
    assert_eq!(labels.len(), concepts, "label count != concept count");

    let trace = trunk_forward_traced(features, &params.trunk);
    let (presence, region_probs) =
        presence_forward(&trace.phi, &params.presence, params.bag_mode)?;
    let pooled = mean_pool(&trace.phi);
    let relevance = relevance_forward(
        &pooled,
        &params.relevance,
        params.relevance_conditioned,
        params.identity_relevance,
    )?;

    let mentions: Vec<f64> = (0..concepts)
        .map(|w| {
            let (_, cond) = relevance[w];
            cond.p[1][1] * presence[w] + cond.p[1][0] * (1.0 - presence[w])
        })
        .collect();
    let loss_value = loss(&mentions, labels, params, weight_decay);

    let mut grads = ModelGrads::zeros_like(params);
    let regions = features.regions();
    let phi_dim = params.phi_dim();
    // Gradient wrt each region's trunk output, filled by the heads.
    let mut g_phi = vec![vec![0.0; phi_dim]; regions];
    let mut g_pooled = vec![0.0; phi_dim];

    let use_relevance = !params.identity_relevance;
    for w in 0..concepts {
        let v = presence[w];
        let h_raw = mentions[w];
        let h = h_raw.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
        let y = labels[w];
        // d loss / d mention, treating the clamp as pass-through.
        let g_h = if y { -1.0 / h } else { 1.0 / (1.0 - h) };

        let (joint, cond) = relevance[w];
        // d loss / d presence.
        let g_v = g_h * (cond.p[1][1] - cond.p[1][0]);

        if use_relevance {
            // Through the conditional into the joint. The loss touches the
            // conditional only via its y=1 row.
            let mut g_joint = [[0.0; 2]; 2];
            for z in 0..2 {
                let g_cond_1z = g_h * if z == 1 { v } else { 1.0 - v };
                let marginal = joint.p[0][z] + joint.p[1][z];
                let inv_sq = 1.0 / (marginal * marginal);
                g_joint[1][z] += g_cond_1z * joint.p[0][z] * inv_sq;
                g_joint[0][z] -= g_cond_1z * joint.p[1][z] * inv_sq;
            }
            // Softmax backward over the four cells.
            let mut inner = 0.0;
            for y_i in 0..2 {
                for z_i in 0..2 {
                    inner += g_joint[y_i][z_i] * joint.p[y_i][z_i];
                }
            }
            for y_i in 0..2 {
                for z_i in 0..2 {
                    let g_score = joint.p[y_i][z_i] * (g_joint[y_i][z_i] - inner);
                    let row = 4 * w + rel_index(y_i, z_i);
                    grads.relevance.bias[row] += g_score;
                    if params.relevance_conditioned {
                        axpy(g_score, &pooled, grads.relevance.weight.row_mut(row));
                        axpy(g_score, params.relevance.weight.row(row), &mut g_pooled);
                    }
                }
            }
        }

        // Presence path.
        if params.bag_mode {
            let probs = &region_probs.as_ref().expect("bag mode traces regions")[w];
            let pool_grad = noisy_or_backward(probs);
            for r in 0..regions {
                let g_q = g_v * pool_grad[r];
                let g_score = g_q * probs[r] * (1.0 - probs[r]);
                accumulate_presence(
                    &mut grads.presence,
                    params,
                    w,
                    g_score,
                    &trace.phi[r],
                    &mut g_phi[r],
                );
            }
        } else {
            let g_score = g_v * v * (1.0 - v);
            accumulate_presence(
                &mut grads.presence,
                params,
                w,
                g_score,
                &trace.phi[0],
                &mut g_phi[0],
            );
        }
    }

    // Mean pooling spreads the relevance feature gradient over regions.
    let inv_regions = 1.0 / regions as f64;
    for g in g_phi.iter_mut() {
        axpy(inv_regions, &g_pooled, g);
    }

    backprop_trunk(&trace, &params.trunk, &mut grads.trunk, &g_phi);

    // L2 on active weights; mirrors `active_weight_sq`.
    if weight_decay > 0.0 {
        for (layer, g_layer) in params.trunk.layers.iter().zip(&mut grads.trunk.layers) {
            decay(weight_decay, &layer.weight, &mut g_layer.weight);
        }
        decay(weight_decay, &params.presence.weight, &mut grads.presence.weight);
        if use_relevance && params.relevance_conditioned {
            decay(
                weight_decay,
                &params.relevance.weight,
                &mut grads.relevance.weight,
            );
        }
    }

    Ok((loss_value, grads))
}

fn accumulate_presence(
    grads: &mut PresenceHead,
    params: &ModelParams,
    concept: usize,
    g_score: f64,
    phi: &[f64],
    g_phi: &mut [f64],
) {
    axpy(g_score, phi, grads.weight.row_mut(concept));
    grads.bias[concept] += g_score;
    axpy(g_score, params.presence.weight.row(concept), g_phi);
}

pub(crate) fn backprop_trunk(
    trace: &TrunkTrace,
    trunk: &Trunk,
    g_trunk: &mut Trunk,
    g_phi: &[Vec<f64>],
) {
    let depth = trunk.layers.len();
    if depth == 0 {
        return;
    }
    for (r, g_out) in g_phi.iter().enumerate() {
        let mut delta = g_out.clone();
        for l in (0..depth).rev() {
            // The nonlinearity sits after every layer except the last.
            if l + 1 < depth {
                for (d, &pre) in delta.iter_mut().zip(&trace.preacts[r][l]) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let layer = &trunk.layers[l];
            let g_layer = &mut g_trunk.layers[l];
            g_layer.weight.add_outer(1.0, &delta, &trace.inputs[r][l]);
            for (b, d) in g_layer.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            if l > 0 {
                let mut g_in = vec![0.0; layer.in_dim()];
                layer.weight.t_matvec_acc(&delta, &mut g_in);
                delta = g_in;
            }
        }
    }
}

/// Noisy-OR pooling gradient: `d pooled / d p_r = prod_{r' != r} (1 - p_r')`,
/// computed exactly with prefix/suffix products.
pub(crate) fn noisy_or_backward(probs: &[f64]) -> Vec<f64> {
    let n = probs.len();
    let mut prefix = vec![1.0; n + 1];
    for r in 0..n {
        prefix[r + 1] = prefix[r] * (1.0 - probs[r]);
    }
    let mut suffix = vec![1.0; n + 1];
    for r in (0..n).rev() {
        suffix[r] = suffix[r + 1] * (1.0 - probs[r]);
    }
    (0..n).map(|r| prefix[r] * suffix[r + 1]).collect()
}

fn decay(lambda: f64, weight: &Matrix, grad: &mut Matrix) {
    let (w, g) = (weight.as_slice(), grad.as_mut_slice());
    for i in 0..w.len() {
        g[i] += lambda * w[i];
    }
}
