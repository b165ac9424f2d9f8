//! Reference models: the naive classifier (latent model pinned to the
//! identity relevance), the input-independent relevance variant, and the
//! multi-head parameter-count control that widens the output layer instead
//! of adding a relevance head.

use crate::error::{Error, Result};
use crate::features::Features;
use crate::linalg::axpy;
use crate::model::backward::{backprop_trunk, noisy_or_backward, trunk_forward_traced};
use crate::model::forward::{sigmoid, LOSS_CLAMP};
use crate::model::{
    backward, loss, model_forward, noisy_or, BlockRole, Dense, ModelDims, ModelParams,
    PresenceHead, Trunk,
};
use crate::linalg::dot;

/// Which comparison model to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// Predicts reported labels directly: identity relevance, permanently.
    Naive,
    /// Latent model whose relevance scores are biases only, shared by all
    /// inputs.
    UnconditionedRelevance,
    /// One trunk with `heads` independent output layers whose predictions
    /// are averaged; matches the latent model's parameter count without
    /// its structure.
    Multihead { heads: usize },
}

pub const DEFAULT_MULTIHEAD_HEADS: usize = 5;

/// Multi-head control model: a shared trunk and `E >= 2` presence heads,
/// each trained with its own log loss.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiheadParams {
    pub trunk: Trunk,
    pub heads: Vec<PresenceHead>,
    pub bag_mode: bool,
}

/// Gradient container mirroring [`MultiheadParams`].
#[derive(Clone, Debug)]
pub struct MultiheadGrads {
    pub trunk: Trunk,
    pub heads: Vec<PresenceHead>,
}

impl MultiheadParams {
    pub fn init(dims: &ModelDims, heads: usize, seed: u64) -> Result<Self> {
        if heads < 2 {
            return Err(Error::Config(format!(
                "multihead needs at least 2 heads, got {heads}"
            )));
        }
        // Head 0 reuses the latent init stream so that shared seeds keep
        // the trunk identical across model kinds.
        let base = ModelParams::init(dims, seed)?;
        let mut all = Vec::with_capacity(heads);
        all.push(base.presence);
        for h in 1..heads {
            let extra = ModelParams::init(dims, seed ^ (h as u64).wrapping_mul(0x9e37_79b9))?;
            all.push(extra.presence);
        }
        Ok(MultiheadParams {
            trunk: base.trunk,
            heads: all,
            bag_mode: false,
        })
    }

    pub fn with_bag_mode(mut self, on: bool) -> Self {
        self.bag_mode = on;
        self
    }

    pub fn concepts(&self) -> usize {
        self.heads[0].concepts()
    }

    pub fn phi_dim(&self) -> usize {
        self.heads[0].phi_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .layers
            .first()
            .map_or(self.phi_dim(), Dense::in_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.len() < 2 {
            return Err(Error::Config("multihead needs at least 2 heads".into()));
        }
        self.trunk.validate(self.input_dim())?;
        let phi = self.trunk.output_dim(self.input_dim());
        for (h, head) in self.heads.iter().enumerate() {
            if head.phi_dim() != phi {
                return Err(Error::Config(format!(
                    "head {h} input dim {} != trunk output dim {phi}",
                    head.phi_dim()
                )));
            }
            if head.concepts() != self.concepts() {
                return Err(Error::Config("heads disagree on concept count".into()));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<(BlockRole, &[f64])> {
        let mut blocks = Vec::new();
        for layer in &self.trunk.layers {
            blocks.push((BlockRole::TrunkWeight, layer.weight.as_slice()));
            blocks.push((BlockRole::TrunkBias, layer.bias.as_slice()));
        }
        for head in &self.heads {
            blocks.push((BlockRole::PresenceWeight, head.weight.as_slice()));
            blocks.push((BlockRole::PresenceBias, head.bias.as_slice()));
        }
        blocks
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockRole, &mut [f64])> {
        let mut blocks = Vec::new();
        for layer in &mut self.trunk.layers {
            blocks.push((BlockRole::TrunkWeight, layer.weight.as_mut_slice()));
            blocks.push((BlockRole::TrunkBias, layer.bias.as_mut_slice()));
        }
        for head in &mut self.heads {
            blocks.push((BlockRole::PresenceWeight, head.weight.as_mut_slice()));
            blocks.push((BlockRole::PresenceBias, head.bias.as_mut_slice()));
        }
        blocks
    }

    /// Per-head probabilities, one vector of `concepts` values per head.
    pub fn per_head_probabilities(&self, features: &Features) -> Result<Vec<Vec<f64>>> {
        let trace = trunk_forward_traced(features, &self.trunk);
        self.head_probs(&trace.phi)
    }

    fn head_probs(&self, phi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if !self.bag_mode && phi.len() > 1 {
            return Err(Error::InvalidInput(format!(
                "single-vector mode requires one region, got {}",
                phi.len()
            )));
        }
        let concepts = self.concepts();
        let mut out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut probs = Vec::with_capacity(concepts);
            for w in 0..concepts {
                let row = head.weight.row(w);
                if self.bag_mode {
                    let region_probs: Vec<f64> = phi
                        .iter()
                        .map(|region| sigmoid(dot(row, region) + head.bias[w]))
                        .collect();
                    probs.push(noisy_or(&region_probs)?);
                } else {
                    probs.push(sigmoid(dot(row, &phi[0]) + head.bias[w]));
                }
            }
            out.push(probs);
        }
        Ok(out)
    }

    /// Training objective: each head carries its own log loss against the
    /// same labels; losses are summed (equal weighting) and L2 decay
    /// applies to the trunk and every head's weights.
    pub fn example_loss(&self, features: &Features, labels: &[bool], weight_decay: f64) -> Result<f64> {
        let per_head = self.per_head_probabilities(features)?;
        let mut total = 0.0;
        for probs in &per_head {
            for (&p, &y) in probs.iter().zip(labels) {
                let p = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
                total -= if y { p.ln() } else { (1.0 - p).ln() };
            }
        }
        Ok(total + 0.5 * weight_decay * self.weight_sq())
    }

    fn weight_sq(&self) -> f64 {
        let mut sq: f64 = self
            .trunk
            .layers
            .iter()
            .map(|l| l.weight.as_slice().iter().map(|x| x * x).sum::<f64>())
            .sum();
        for head in &self.heads {
            sq += head.weight.as_slice().iter().map(|x| x * x).sum::<f64>();
        }
        sq
    }

    pub fn example_backward(
        &self,
        features: &Features,
        labels: &[bool],
        weight_decay: f64,
    ) -> Result<(f64, MultiheadGrads)> {
        self.validate()?;
        let trace = trunk_forward_traced(features, &self.trunk);
        let per_head = self.head_probs(&trace.phi)?;
        let concepts = self.concepts();
        let regions = features.regions();

        let mut grads = MultiheadGrads {
            trunk: Trunk {
                layers: self
                    .trunk
                    .layers
                    .iter()
                    .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                    .collect(),
            },
            heads: self
                .heads
                .iter()
                .map(|h| PresenceHead::zeros(h.concepts(), h.phi_dim()))
                .collect(),
        };
        let mut g_phi = vec![vec![0.0; self.phi_dim()]; regions];
        let mut total = 0.0;

        for (e, head) in self.heads.iter().enumerate() {
            for w in 0..concepts {
                let v_raw = per_head[e][w];
                let v = v_raw.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
                let y = labels[w];
                total -= if y { v.ln() } else { (1.0 - v).ln() };
                let g_v = if y { -1.0 / v } else { 1.0 / (1.0 - v) };

                if self.bag_mode {
                    let row = head.weight.row(w);
                    let region_probs: Vec<f64> = trace
                        .phi
                        .iter()
                        .map(|region| sigmoid(dot(row, region) + head.bias[w]))
                        .collect();
                    let pool_grad = noisy_or_backward(&region_probs);
                    for r in 0..regions {
                        let q = region_probs[r];
                        let g_score = g_v * pool_grad[r] * q * (1.0 - q);
                        axpy(g_score, &trace.phi[r], grads.heads[e].weight.row_mut(w));
                        grads.heads[e].bias[w] += g_score;
                        axpy(g_score, head.weight.row(w), &mut g_phi[r]);
                    }
                } else {
                    let g_score = g_v * v_raw * (1.0 - v_raw);
                    axpy(g_score, &trace.phi[0], grads.heads[e].weight.row_mut(w));
                    grads.heads[e].bias[w] += g_score;
                    axpy(g_score, head.weight.row(w), &mut g_phi[0]);
                }
            }
        }

        backprop_trunk(&trace, &self.trunk, &mut grads.trunk, &g_phi);

        if weight_decay > 0.0 {
            for (layer, g_layer) in self.trunk.layers.iter().zip(&mut grads.trunk.layers) {
                let (w, g) = (layer.weight.as_slice(), g_layer.weight.as_mut_slice());
                for i in 0..w.len() {
                    g[i] += weight_decay * w[i];
                }
            }
            for (head, g_head) in self.heads.iter().zip(&mut grads.heads) {
                let (w, g) = (head.weight.as_slice(), g_head.weight.as_mut_slice());
                for i in 0..w.len() {
                    g[i] += weight_decay * w[i];
                }
            }
            total += 0.5 * weight_decay * self.weight_sq();
        }

        Ok((total, grads))
    }
}

impl MultiheadGrads {
    pub fn blocks(&self) -> Vec<(BlockRole, &[f64])> {
        let mut blocks = Vec::new();
        for layer in &self.trunk.layers {
            blocks.push((BlockRole::TrunkWeight, layer.weight.as_slice()));
            blocks.push((BlockRole::TrunkBias, layer.bias.as_slice()));
        }
        for head in &self.heads {
            blocks.push((BlockRole::PresenceWeight, head.weight.as_slice()));
            blocks.push((BlockRole::PresenceBias, head.bias.as_slice()));
        }
        blocks
    }
}

/// Average of the per-head probabilities.
pub fn multihead_predict(params: &MultiheadParams, features: &Features) -> Result<Vec<f64>> {
    let per_head = params.per_head_probabilities(features)?;
    let concepts = params.concepts();
    let inv = 1.0 / per_head.len() as f64;
    Ok((0..concepts)
        .map(|w| per_head.iter().map(|h| h[w]).sum::<f64>() * inv)
        .collect())
}

/// Any trainable model variant.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Latent(ModelParams),
    Multihead(MultiheadParams),
}

impl AnyModel {
    pub fn concepts(&self) -> usize {
        match self {
            AnyModel::Latent(m) => m.concepts(),
            AnyModel::Multihead(m) => m.concepts(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            AnyModel::Latent(m) => m.input_dim(),
            AnyModel::Multihead(m) => m.input_dim(),
        }
    }

    pub fn bag_mode(&self) -> bool {
        match self {
            AnyModel::Latent(m) => m.bag_mode,
            AnyModel::Multihead(m) => m.bag_mode,
        }
    }

    /// A model that never decouples: the naive classifier or the
    /// multi-head control.
    pub fn is_identity_only(&self) -> bool {
        match self {
            AnyModel::Latent(m) => m.identity_relevance,
            AnyModel::Multihead(_) => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnyModel::Latent(m) => m.validate(),
            AnyModel::Multihead(m) => m.validate(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn blocks(&self) -> Vec<(BlockRole, &[f64])> {
        match self {
            AnyModel::Latent(m) => m.blocks(),
            AnyModel::Multihead(m) => m.blocks(),
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockRole, &mut [f64])> {
        match self {
            AnyModel::Latent(m) => m.blocks_mut(),
            AnyModel::Multihead(m) => m.blocks_mut(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, block) in self.blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    pub fn load_vec(&mut self, values: &[f64]) {
        let mut offset = 0;
        for (_, block) in self.blocks_mut() {
            block.copy_from_slice(&values[offset..offset + block.len()]);
            offset += block.len();
        }
        assert_eq!(offset, values.len(), "parameter vector length mismatch");
    }

    /// Presence and reported-label scores for one example. The multi-head
    /// control has no latent structure, so both score sets coincide.
    pub fn predict(&self, features: &Features) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            AnyModel::Latent(m) => {
                let preds = model_forward(features, m)?;
                let v = preds.iter().map(|p| p.presence).collect();
                let h = preds.iter().map(|p| p.mention).collect();
                Ok((v, h))
            }
            AnyModel::Multihead(m) => {
                let probs = multihead_predict(m, features)?;
                Ok((probs.clone(), probs))
            }
        }
    }

    pub fn example_loss(&self, features: &Features, labels: &[bool], weight_decay: f64) -> Result<f64> {
        match self {
            AnyModel::Latent(m) => {
                let preds = model_forward(features, m)?;
                let mentions: Vec<f64> = preds.iter().map(|p| p.mention).collect();
                Ok(loss(&mentions, labels, m, weight_decay))
            }
            AnyModel::Multihead(m) => m.example_loss(features, labels, weight_decay),
        }
    }

    /// Loss plus flat gradients (canonical block order) accumulated into
    /// `acc`, which must have length `num_params`.
    pub fn example_backward_flat(
        &self,
        features: &Features,
        labels: &[bool],
        weight_decay: f64,
        acc: &mut [f64],
    ) -> Result<f64> {
        match self {
            AnyModel::Latent(m) => {
                let (l, grads) = backward(features, labels, m, weight_decay)?;
                accumulate_blocks(&grads.blocks(), acc);
                Ok(l)
            }
            AnyModel::Multihead(m) => {
                let (l, grads) = m.example_backward(features, labels, weight_decay)?;
                accumulate_blocks(&grads.blocks(), acc);
                Ok(l)
            }
        }
    }
}

fn accumulate_blocks(blocks: &[(BlockRole, &[f64])], acc: &mut [f64]) {
    let mut offset = 0;
    for (_, block) in blocks {
        axpy(1.0, block, &mut acc[offset..offset + block.len()]);
        offset += block.len();
    }
    debug_assert_eq!(offset, acc.len());
}

/// Build a comparison model with the same trunk/presence init as the
/// latent model would get for this seed.
pub fn build_baseline(kind: BaselineKind, dims: &ModelDims, seed: u64) -> Result<AnyModel> {
    match kind {
        BaselineKind::Naive => Ok(AnyModel::Latent(
            ModelParams::init(dims, seed)?.with_identity_relevance(true),
        )),
        BaselineKind::UnconditionedRelevance => Ok(AnyModel::Latent(
            ModelParams::init(dims, seed)?.with_conditioned(false),
        )),
        BaselineKind::Multihead { heads } => Ok(AnyModel::Multihead(MultiheadParams::init(
            dims, heads, seed,
        )?)),
    }
}
