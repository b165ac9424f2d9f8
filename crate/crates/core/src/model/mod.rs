//! The factored classifier: a shared trunk feeding a per-concept visual
//! presence head and a per-concept relevance head.
//!
//! Per concept the model produces three quantities: the probability that
//! the concept is visually present, a 2x2 conditional relevance matrix
//! (`relevance[y][z]` = probability a human reports label `y` given
//! presence `z`), and the reported-label probability obtained by
//! marginalizing presence through the relevance matrix.

pub(crate) mod backward;
pub(crate) mod forward;

pub use backward::{backward, ModelGrads};
pub use forward::{
    loss, marginalize, model_forward, noisy_or, presence_forward, relevance_forward,
    trunk_forward, LOSS_CLAMP,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::DetRng;

/// Relevance score entries are stored flat in `(y, z)` order:
/// `(0,0), (0,1), (1,0), (1,1)`.
#[inline]
pub fn rel_index(y: usize, z: usize) -> usize {
    2 * y + z
}

/// One dense layer: `out = weight · x + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Feature trunk: an MLP applied independently to every region vector.
/// Depth 0 means the identity map. The nonlinearity (`max(0, x)`) is
/// applied after every layer except the last, so a depth-1 trunk is a
/// plain linear projection.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trunk {
    pub layers: Vec<Dense>,
}

impl Trunk {
    pub fn identity() -> Self {
        Trunk { layers: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Output dimension given the input dimension (`input_dim` for depth 0).
    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, Dense::out_dim)
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let mut dim = input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return Err(Error::Config(format!(
                    "trunk layer {i} expects input dim {}, got {dim}",
                    layer.in_dim()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Config(format!(
                    "trunk layer {i} bias length {} != out dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            dim = layer.out_dim();
        }
        Ok(())
    }
}

/// Per-concept visual presence classifier: one sigmoid-affine score per
/// concept per region.
#[derive(Clone, Debug, PartialEq)]
pub struct PresenceHead {
    /// `concepts x phi_dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl PresenceHead {
    pub fn zeros(concepts: usize, phi_dim: usize) -> Self {
        PresenceHead {
            weight: Matrix::zeros(concepts, phi_dim),
            bias: vec![0.0; concepts],
        }
    }

    pub fn concepts(&self) -> usize {
        self.weight.rows()
    }

    pub fn phi_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Per-concept relevance head: four linear scores per concept, one per
/// `(y, z)` cell, normalized jointly by a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceHead {
    /// `(concepts * 4) x phi_dim`; row `4w + rel_index(y, z)`.
    pub weight: Matrix,
    /// `concepts * 4`, same row order.
    pub bias: Vec<f64>,
}

impl RelevanceHead {
    pub fn zeros(concepts: usize, phi_dim: usize) -> Self {
        RelevanceHead {
            weight: Matrix::zeros(concepts * 4, phi_dim),
            bias: vec![0.0; concepts * 4],
        }
    }

    /// Near-identity initialization: zero weights, cell biases
    /// `(2, -2, -2, 2)`, so the conditional starts close to the identity
    /// when joint training begins.
    pub fn near_identity(concepts: usize, phi_dim: usize) -> Self {
        let mut head = RelevanceHead::zeros(concepts, phi_dim);
        for w in 0..concepts {
            head.bias[4 * w + rel_index(0, 0)] = 2.0;
            head.bias[4 * w + rel_index(0, 1)] = -2.0;
            head.bias[4 * w + rel_index(1, 0)] = -2.0;
            head.bias[4 * w + rel_index(1, 1)] = 2.0;
        }
        head
    }

    pub fn concepts(&self) -> usize {
        self.weight.rows() / 4
    }

    pub fn phi_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Shapes of a model, used by initializers and checkpoint validation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    pub concepts: usize,
    pub input_dim: usize,
    /// Output dims of each trunk layer; empty for an identity trunk.
    pub trunk_layers: Vec<usize>,
}

impl ModelDims {
    pub fn phi_dim(&self) -> usize {
        self.trunk_layers.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 {
            return Err(Error::Config("model needs at least one concept".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be > 0".into()));
        }
        if self.trunk_layers.contains(&0) {
            return Err(Error::Config("trunk layer dims must be > 0".into()));
        }
        Ok(())
    }
}

/// Full parameter set plus the mode flags that select the forward path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub trunk: Trunk,
    pub presence: PresenceHead,
    pub relevance: RelevanceHead,
    /// Pool per-region presence probabilities with a noisy-OR; otherwise
    /// examples must carry exactly one region.
    pub bag_mode: bool,
    /// Condition relevance scores on pooled features; otherwise the scores
    /// are the biases alone and the relevance weights are inert.
    pub relevance_conditioned: bool,
    /// Bypass the relevance head entirely: the conditional is the identity
    /// and the reported probability equals the presence probability.
    pub identity_relevance: bool,
}

impl ModelParams {
    /// Scaled-uniform init for trunk and presence (`uniform(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`), near-identity relevance.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut layers = Vec::with_capacity(dims.trunk_layers.len());
        let mut in_dim = dims.input_dim;
        for (l, &out_dim) in dims.trunk_layers.iter().enumerate() {
            let mut rng = DetRng::derive(seed, &[0, l as u64]);
            layers.push(init_dense(out_dim, in_dim, &mut rng));
            in_dim = out_dim;
        }
        let phi = dims.phi_dim();
        let mut rng = DetRng::derive(seed, &[1]);
        let presence_dense = init_dense(dims.concepts, phi, &mut rng);
        Ok(ModelParams {
            trunk: Trunk { layers },
            presence: PresenceHead {
                weight: presence_dense.weight,
                bias: vec![0.0; dims.concepts],
            },
            relevance: RelevanceHead::near_identity(dims.concepts, phi),
            bag_mode: false,
            relevance_conditioned: true,
            identity_relevance: false,
        })
    }

    pub fn zeros(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut layers = Vec::new();
        let mut in_dim = dims.input_dim;
        for &out_dim in &dims.trunk_layers {
            layers.push(Dense::zeros(out_dim, in_dim));
            in_dim = out_dim;
        }
        let phi = dims.phi_dim();
        Ok(ModelParams {
            trunk: Trunk { layers },
            presence: PresenceHead::zeros(dims.concepts, phi),
            relevance: RelevanceHead::zeros(dims.concepts, phi),
            bag_mode: false,
            relevance_conditioned: true,
            identity_relevance: false,
        })
    }

    pub fn with_bag_mode(mut self, on: bool) -> Self {
        self.bag_mode = on;
        self
    }

    pub fn with_conditioned(mut self, on: bool) -> Self {
        self.relevance_conditioned = on;
        self
    }

    pub fn with_identity_relevance(mut self, on: bool) -> Self {
        self.identity_relevance = on;
        self
    }

    pub fn concepts(&self) -> usize {
        self.presence.concepts()
    }

    pub fn phi_dim(&self) -> usize {
        self.presence.phi_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .layers
            .first()
            .map_or(self.phi_dim(), Dense::in_dim)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            concepts: self.concepts(),
            input_dim: self.input_dim(),
            trunk_layers: self.trunk.layers.iter().map(Dense::out_dim).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate(self.input_dim())?;
        let phi = self.trunk.output_dim(self.input_dim());
        if self.presence.phi_dim() != phi {
            return Err(Error::Config(format!(
                "presence head input dim {} != trunk output dim {phi}",
                self.presence.phi_dim()
            )));
        }
        if self.relevance.phi_dim() != phi {
            return Err(Error::Config(format!(
                "relevance head input dim {} != trunk output dim {phi}",
                self.relevance.phi_dim()
            )));
        }
        if self.relevance.concepts() != self.presence.concepts() {
            return Err(Error::Config(
                "presence and relevance heads disagree on concept count".into(),
            ));
        }
        if self.presence.bias.len() != self.presence.concepts()
            || self.relevance.bias.len() != self.relevance.concepts() * 4
        {
            return Err(Error::Config("head bias length mismatch".into()));
        }
        Ok(())
    }
}

fn init_dense(out_dim: usize, in_dim: usize, rng: &mut DetRng) -> Dense {
    let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
    Dense {
        weight: Matrix::from_fn(out_dim, in_dim, |_, _| rng.uniform(-a, a)),
        bias: vec![0.0; out_dim],
    }
}

/// Which parameter group a flat block belongs to. Weight roles receive L2
/// decay; the trainer freezes relevance roles during warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockRole {
    TrunkWeight,
    TrunkBias,
    PresenceWeight,
    PresenceBias,
    RelevanceWeight,
    RelevanceBias,
}

impl BlockRole {
    pub fn is_weight(self) -> bool {
        matches!(
            self,
            BlockRole::TrunkWeight | BlockRole::PresenceWeight | BlockRole::RelevanceWeight
        )
    }

    pub fn is_relevance(self) -> bool {
        matches!(self, BlockRole::RelevanceWeight | BlockRole::RelevanceBias)
    }
}

fn component_blocks<'a>(
    trunk: &'a Trunk,
    presence: &'a PresenceHead,
    relevance: &'a RelevanceHead,
) -> Vec<(BlockRole, &'a [f64])> {
    let mut blocks = Vec::with_capacity(trunk.layers.len() * 2 + 4);
    for layer in &trunk.layers {
        blocks.push((BlockRole::TrunkWeight, layer.weight.as_slice()));
        blocks.push((BlockRole::TrunkBias, layer.bias.as_slice()));
    }
    blocks.push((BlockRole::PresenceWeight, presence.weight.as_slice()));
    blocks.push((BlockRole::PresenceBias, presence.bias.as_slice()));
    blocks.push((BlockRole::RelevanceWeight, relevance.weight.as_slice()));
    blocks.push((BlockRole::RelevanceBias, relevance.bias.as_slice()));
    blocks
}

fn component_blocks_mut<'a>(
    trunk: &'a mut Trunk,
    presence: &'a mut PresenceHead,
    relevance: &'a mut RelevanceHead,
) -> Vec<(BlockRole, &'a mut [f64])> {
    let mut blocks = Vec::with_capacity(trunk.layers.len() * 2 + 4);
    for layer in &mut trunk.layers {
        blocks.push((BlockRole::TrunkWeight, layer.weight.as_mut_slice()));
        blocks.push((BlockRole::TrunkBias, layer.bias.as_mut_slice()));
    }
    blocks.push((BlockRole::PresenceWeight, presence.weight.as_mut_slice()));
    blocks.push((BlockRole::PresenceBias, presence.bias.as_mut_slice()));
    blocks.push((BlockRole::RelevanceWeight, relevance.weight.as_mut_slice()));
    blocks.push((BlockRole::RelevanceBias, relevance.bias.as_mut_slice()));
    blocks
}

impl ModelParams {
    /// Parameter blocks in canonical (checkpoint) order.
    pub fn blocks(&self) -> Vec<(BlockRole, &[f64])> {
        component_blocks(&self.trunk, &self.presence, &self.relevance)
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockRole, &mut [f64])> {
        component_blocks_mut(&mut self.trunk, &mut self.presence, &mut self.relevance)
    }
}

impl ModelGrads {
    pub fn blocks(&self) -> Vec<(BlockRole, &[f64])> {
        component_blocks(&self.trunk, &self.presence, &self.relevance)
    }
}

/// Softmax-normalized joint distribution over `(y, z)`; entries sum to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointRelevance {
    /// `p[y][z]`.
    pub p: [[f64; 2]; 2],
}

/// Column-normalized conditional `p[y][z] = P(report y | presence z)`;
/// each column sums to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelevanceConditional {
    pub p: [[f64; 2]; 2],
}

impl RelevanceConditional {
    pub fn identity() -> Self {
        RelevanceConditional {
            p: [[1.0, 0.0], [0.0, 1.0]],
        }
    }
}

/// Per-concept forward outputs.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `P(z = 1 | features)` - visual presence.
    pub presence: f64,
    pub relevance: RelevanceConditional,
    /// `P(y = 1 | features)` - the reported-label (human-centric) output,
    /// obtained by marginalizing presence through the relevance matrix.
    pub mention: f64,
    /// Per-region presence probabilities (bag mode only).
    pub region_presence: Option<Vec<f64>>,
}
