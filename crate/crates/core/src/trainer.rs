//! Minibatch SGD with momentum and the two-phase schedule: the relevance
//! head is pinned to the identity (and frozen) for the warm-up epochs,
//! then the whole model trains jointly.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::AnyModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::Features;
use crate::model::BlockRole;
use crate::rng::DetRng;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Identity-relevance epochs; `None` resolves to `epochs / 2`.
    pub warmup_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Multiply the learning rate by 0.1 when the relevance head unfreezes.
    pub decay_lr_at_unfreeze: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            warmup_epochs: None,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            decay_lr_at_unfreeze: false,
        }
    }
}

impl TrainConfig {
    pub fn resolved_warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.resolved_warmup() > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.resolved_warmup(),
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Joint,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub phase: Phase,
    /// Example-weighted mean of the batch losses.
    pub mean_loss: f64,
    /// Not byte-stable across reruns; excluded from determinism checks.
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// One entry per minibatch, in update order.
    pub step_losses: Vec<f64>,
}

struct Layout {
    spans: Vec<(BlockRole, Range<usize>)>,
    len: usize,
}

fn layout_of(model: &AnyModel) -> Layout {
    let mut spans = Vec::new();
    let mut offset = 0;
    for (role, block) in model.blocks() {
        spans.push((role, offset..offset + block.len()));
        offset += block.len();
    }
    Layout { spans, len: offset }
}

fn frozen(role: BlockRole, identity_now: bool, conditioned: bool) -> bool {
    (role.is_relevance() && identity_now)
        || (role == BlockRole::RelevanceWeight && !conditioned)
}

/// Train `model` on the corpus. Epoch shuffles are driven by
/// `(config.seed, epoch)`, so the result is a pure function of
/// `(model, corpus, config)`.
pub fn train(corpus: &Corpus, model: AnyModel, config: &TrainConfig) -> Result<(AnyModel, TrainLog)> {
    config.validate()?;
    model.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    if corpus.concepts() != model.concepts() {
        return Err(Error::Dimension(format!(
            "corpus has {} concepts, model {}",
            corpus.concepts(),
            model.concepts()
        )));
    }
    if corpus.feature_dim != model.input_dim() {
        return Err(Error::Dimension(format!(
            "corpus feature dim {} != model input dim {}",
            corpus.feature_dim,
            model.input_dim()
        )));
    }
    if corpus.regions_per_image.is_some_and(|r| r > 1) && !model.bag_mode() {
        return Err(Error::Config(
            "bag corpus requires a bag-mode model".into(),
        ));
    }

    // A permanently-identity model (the naive baseline) trains entirely in
    // the warm-up regime regardless of the schedule.
    let identity_permanent = matches!(&model, AnyModel::Latent(p) if p.identity_relevance);
    let conditioned = matches!(&model, AnyModel::Latent(p) if p.relevance_conditioned)
        || matches!(&model, AnyModel::Multihead(_));
    let warmup = config.resolved_warmup();

    let mut model = model;
    let layout = layout_of(&model);
    let mut velocity = vec![0.0; layout.len];
    let mut grad = vec![0.0; layout.len];
    let mut log = TrainLog::default();
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let phase = if identity_permanent || epoch < warmup {
            Phase::Warmup
        } else {
            Phase::Joint
        };
        let identity_now = phase == Phase::Warmup;
        if let AnyModel::Latent(params) = &mut model {
            params.identity_relevance = identity_permanent || identity_now;
        }
        let lr = if config.decay_lr_at_unfreeze && phase == Phase::Joint {
            config.learning_rate * 0.1
        } else {
            config.learning_rate
        };

        let mut rng = DetRng::derive(config.seed, &[0x5u64, epoch as u64]);
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &corpus.examples[i];
                batch_loss += model.example_backward_flat(
                    &ex.features,
                    &ex.labels,
                    config.weight_decay,
                    &mut grad,
                )?;
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            log.step_losses.push(batch_loss);
            loss_sum += batch_loss * batch.len() as f64;

            let flat = {
                let mut v = model.to_vec();
                for (role, span) in &layout.spans {
                    if frozen(*role, identity_now || identity_permanent, conditioned) {
                        continue;
                    }
                    for i in span.clone() {
                        velocity[i] = config.momentum * velocity[i] + grad[i] * scale;
                        v[i] -= lr * velocity[i];
                    }
                }
                v
            };
            model.load_vec(&flat);
        }

        log.epochs.push(EpochStats {
            phase,
            mean_loss: loss_sum / n as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }

    // Leave the identity flag reflecting the final phase.
    if let AnyModel::Latent(params) = &mut model {
        params.identity_relevance = identity_permanent || warmup >= config.epochs;
    }
    Ok((model, log))
}

/// Compare analytic gradients against central finite differences over
/// every parameter; returns the maximum relative error (absolute error
/// when both magnitudes are below 1e-8).
pub fn gradient_check(
    model: &AnyModel,
    features: &Features,
    labels: &[bool],
    weight_decay: f64,
    step: f64,
) -> Result<f64> {
    gradient_check_tampered(model, features, labels, weight_decay, step, None)
}

/// `tamper` perturbs one analytic component before comparison; the CLI's
/// `--corrupt` hook uses it to prove the checker detects bad gradients.
pub(crate) fn gradient_check_tampered(
    model: &AnyModel,
    features: &Features,
    labels: &[bool],
    weight_decay: f64,
    step: f64,
    tamper: Option<(usize, f64)>,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Config("finite-difference step must be > 0".into()));
    }
    let mut analytic = vec![0.0; model.num_params()];
    model.example_backward_flat(features, labels, weight_decay, &mut analytic)?;
    if let Some((index, delta)) = tamper {
        let index = index % analytic.len();
        analytic[index] += delta;
    }

    let base = model.to_vec();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        probe.load_vec(&plus);
        let loss_plus = probe.example_loss(features, labels, weight_decay)?;

        let mut minus = base.clone();
        minus[i] -= step;
        probe.load_vec(&minus);
        let loss_minus = probe.example_loss(features, labels, weight_decay)?;

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if a.abs() < 1e-8 && b.abs() < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Shape of a randomized gradient-check instance.
#[derive(Clone, Debug)]
pub struct GradCheckSpec {
    pub concepts: usize,
    pub input_dim: usize,
    pub trunk_layers: Vec<usize>,
    pub regions: usize,
    pub bag_mode: bool,
    pub conditioned: bool,
    pub identity: bool,
    /// `Some(heads)` builds the multi-head control instead of the latent
    /// model.
    pub multihead: Option<usize>,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            concepts: 3,
            input_dim: 5,
            trunk_layers: vec![4],
            regions: 2,
            bag_mode: true,
            conditioned: true,
            identity: false,
            multihead: None,
        }
    }
}

/// Build a randomized model/example pair for gradient checking.
///
/// The trunk nonlinearity has a kink at zero, so instances whose
/// pre-activations come within 1e-3 of it are resampled (the perturbed
/// forward passes of the finite-difference probe must stay on one side).
pub fn gradcheck_instance(
    spec: &GradCheckSpec,
    seed: u64,
) -> Result<(AnyModel, Features, Vec<bool>)> {
    use crate::model::{ModelDims, ModelParams};

    let dims = ModelDims {
        concepts: spec.concepts,
        input_dim: spec.input_dim,
        trunk_layers: spec.trunk_layers.clone(),
    };
    for attempt in 0..64u64 {
        let sub = seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut rng = DetRng::derive(sub, &[0xfeed]);
        let model = match spec.multihead {
            Some(heads) => {
                let mh = crate::baselines::MultiheadParams::init(&dims, heads, sub)?
                    .with_bag_mode(spec.bag_mode);
                AnyModel::Multihead(mh)
            }
            None => {
                let mut params = ModelParams::init(&dims, sub)?
                    .with_bag_mode(spec.bag_mode)
                    .with_conditioned(spec.conditioned)
                    .with_identity_relevance(spec.identity);
                // Randomize the relevance head so its gradients are exercised.
                for v in params.relevance.weight.as_mut_slice() {
                    *v = rng.uniform(-0.6, 0.6);
                }
                for b in params.relevance.bias.iter_mut() {
                    *b = rng.uniform(-0.8, 0.8);
                }
                AnyModel::Latent(params)
            }
        };
        let regions = if spec.bag_mode { spec.regions } else { 1 };
        let features = Features::bag(
            (0..regions)
                .map(|_| (0..spec.input_dim).map(|_| rng.normal()).collect())
                .collect(),
        )?;
        let labels: Vec<bool> = (0..spec.concepts).map(|_| rng.bernoulli(0.5)).collect();

        if trunk_margin_ok(&model, &features) {
            return Ok((model, features, labels));
        }
    }
    Err(Error::Numerical(
        "could not sample a gradcheck instance away from the trunk kink".into(),
    ))
}

/// Randomized gradient checks over the mode grid (single/bag,
/// conditioned/unconditioned relevance, identity warm-up freezing, the
/// multi-head control, with and without a trunk). Returns the worst
/// relative error across instances. `corrupt` tampers with one analytic
/// component so callers can verify failure detection.
#[allow(clippy::too_many_arguments)]
pub fn run_gradcheck_suite(
    concepts: usize,
    dim: usize,
    trunk_layers: &[usize],
    regions: usize,
    instances: usize,
    step: f64,
    seed: u64,
    corrupt: bool,
    mut report: impl FnMut(&str),
) -> Result<f64> {
    if instances == 0 {
        return Err(Error::Config("instances must be >= 1".into()));
    }
    // (bag, conditioned, identity, multihead) grid, cycled per instance.
    let modes: [(bool, bool, bool, Option<usize>); 8] = [
        (false, true, false, None),
        (true, true, false, None),
        (true, false, false, None),
        (false, false, false, None),
        (true, true, true, None),
        (false, true, true, None),
        (true, true, false, Some(3)),
        (false, true, false, Some(3)),
    ];
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (bag, conditioned, identity, multihead) = modes[i % modes.len()];
        // Alternate between the requested trunk and the identity trunk.
        let layers = if (i / modes.len()) % 2 == 0 {
            trunk_layers.to_vec()
        } else {
            vec![]
        };
        let spec = GradCheckSpec {
            concepts,
            input_dim: dim,
            trunk_layers: layers,
            regions,
            bag_mode: bag,
            conditioned,
            identity,
            multihead,
        };
        let (model, features, labels) =
            gradcheck_instance(&spec, seed.wrapping_add(i as u64))?;
        let tamper = (corrupt && i == 0).then_some((0usize, 1e-3));
        let err =
            gradient_check_tampered(&model, &features, &labels, 1e-4, step, tamper)?;
        report(&format!(
            "instance {i:02}: bag={} conditioned={} identity={} multihead={} trunk_depth={} -> {err:e}",
            bag,
            conditioned,
            identity,
            multihead.is_some(),
            spec_depth(&spec),
        ));
        worst = worst.max(err);
    }
    Ok(worst)
}

fn spec_depth(spec: &GradCheckSpec) -> usize {
    spec.trunk_layers.len()
}

fn trunk_margin_ok(model: &AnyModel, features: &Features) -> bool {
    let trunk = match model {
        AnyModel::Latent(p) => &p.trunk,
        AnyModel::Multihead(p) => &p.trunk,
    };
    let depth = trunk.layers.len();
    if depth < 2 {
        return true; // no activation applied anywhere
    }
    for region in features.iter_regions() {
        let mut x = region.to_vec();
        for (l, layer) in trunk.layers.iter().enumerate() {
            let mut pre = layer.weight.matvec(&x);
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            if l + 1 < depth {
                if pre.iter().any(|p| p.abs() < 1e-3) {
                    return false;
                }
                for p in pre.iter_mut() {
                    *p = p.max(0.0);
                }
            }
            x = pre;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{build_baseline, BaselineKind};
    use crate::corpus::{union_labels, CorpusExample, Split};
    use crate::model::{ModelDims, ModelParams};
    use crate::vocab::Vocabulary;

    fn toy_corpus(n: usize, concepts: usize, dim: usize, seed: u64) -> Corpus {
        let mut rng = DetRng::new(seed);
        let examples = (0..n)
            .map(|id| {
                let features =
                    Features::single((0..dim).map(|_| rng.normal()).collect()).unwrap();
                let refs: Vec<Vec<bool>> =
                    vec![(0..concepts).map(|_| rng.bernoulli(0.5)).collect()];
                let labels = union_labels(&refs);
                CorpusExample {
                    id: id as u64,
                    features,
                    true_presence: None,
                    references: refs,
                    labels,
                }
            })
            .collect();
        Corpus {
            vocab: Vocabulary::generic(concepts).unwrap(),
            feature_dim: dim,
            references_per_image: 1,
            regions_per_image: None,
            split: Split::Train,
            generator: None,
            warnings: vec![],
            examples,
        }
    }

    fn dims(concepts: usize, dim: usize) -> ModelDims {
        ModelDims {
            concepts,
            input_dim: dim,
            trunk_layers: vec![],
        }
    }

    #[test]
    fn gradcheck_latent_single_mode() {
        let spec = GradCheckSpec {
            bag_mode: false,
            regions: 1,
            ..GradCheckSpec::default()
        };
        let (model, f, y) = gradcheck_instance(&spec, 1).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradcheck_latent_bag_mode() {
        let spec = GradCheckSpec {
            regions: 3,
            ..GradCheckSpec::default()
        };
        let (model, f, y) = gradcheck_instance(&spec, 2).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradcheck_small_bag_instance_at_fine_step() {
        // 3 concepts, 5 input dims, 2 regions, bag mode, step 1e-5.
        let spec = GradCheckSpec::default();
        let (model, f, y) = gradcheck_instance(&spec, 12).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn identical_multihead_matches_single_head_trajectory() {
        // With no trunk and identically initialized heads, every head's
        // loss and gradients equal the naive single-head model's, so the
        // trained heads stay bit-identical to the trained naive head.
        let corpus = toy_corpus(64, 3, 4, 23);
        let d = dims(3, 4);
        let naive_init = ModelParams::init(&d, 31).unwrap().with_identity_relevance(true);
        let mh_init = crate::baselines::MultiheadParams {
            trunk: naive_init.trunk.clone(),
            heads: vec![naive_init.presence.clone(), naive_init.presence.clone()],
            bag_mode: false,
        };
        let cfg = TrainConfig {
            epochs: 3,
            seed: 17,
            ..TrainConfig::default()
        };
        let (naive, _) = train(&corpus, AnyModel::Latent(naive_init), &cfg).unwrap();
        let (mh, _) = train(&corpus, AnyModel::Multihead(mh_init), &cfg).unwrap();
        let AnyModel::Latent(naive) = naive else { panic!() };
        let AnyModel::Multihead(mh) = mh else { panic!() };
        for head in &mh.heads {
            assert_eq!(head, &naive.presence);
        }
    }

    #[test]
    fn gradcheck_two_layer_trunk() {
        // Step 1e-4: at 1e-5 the central-difference roundoff noise
        // (~1e-11 absolute) dominates coordinates whose true gradient is
        // around 1e-6.
        let spec = GradCheckSpec {
            trunk_layers: vec![6, 4],
            ..GradCheckSpec::default()
        };
        let (model, f, y) = gradcheck_instance(&spec, 3).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-4).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradcheck_unconditioned() {
        let spec = GradCheckSpec {
            conditioned: false,
            ..GradCheckSpec::default()
        };
        let (model, f, y) = gradcheck_instance(&spec, 4).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradcheck_identity_override_gradients_vanish() {
        let spec = GradCheckSpec {
            identity: true,
            ..GradCheckSpec::default()
        };
        let (model, f, y) = gradcheck_instance(&spec, 5).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err}");

        // Frozen relevance: analytic and numeric both zero.
        let mut analytic = vec![0.0; model.num_params()];
        model
            .example_backward_flat(&f, &y, 1e-4, &mut analytic)
            .unwrap();
        let mut offset = 0;
        for (role, block) in model.blocks() {
            if role.is_relevance() {
                assert!(analytic[offset..offset + block.len()]
                    .iter()
                    .all(|&g| g == 0.0));
            }
            offset += block.len();
        }
    }

    #[test]
    fn gradcheck_multihead() {
        let spec = GradCheckSpec {
            multihead: Some(3),
            ..GradCheckSpec::default()
        };
        let (model, f, y) = gradcheck_instance(&spec, 6).unwrap();
        let err = gradient_check(&model, &f, &y, 1e-4, 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = toy_corpus(64, 2, 4, 7);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let d = dims(2, 4);
        let run = || {
            let model = AnyModel::Latent(ModelParams::init(&d, 11).unwrap());
            train(&corpus, model, &cfg).unwrap()
        };
        let (m1, log1) = run();
        let (m2, log2) = run();
        assert_eq!(m1.to_vec(), m2.to_vec());
        assert_eq!(log1.step_losses, log2.step_losses);
    }

    #[test]
    fn warmup_freezes_relevance() {
        let corpus = toy_corpus(64, 2, 4, 7);
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: Some(2),
            ..TrainConfig::default()
        };
        let d = dims(2, 4);
        let init = ModelParams::init(&d, 11).unwrap();
        let before_w = init.relevance.weight.clone();
        let before_b = init.relevance.bias.clone();
        let (trained, log) = train(&corpus, AnyModel::Latent(init), &cfg).unwrap();
        let AnyModel::Latent(params) = trained else {
            panic!()
        };
        assert_eq!(params.relevance.weight, before_w);
        assert_eq!(params.relevance.bias, before_b);
        assert!(log.epochs.iter().all(|e| e.phase == Phase::Warmup));
    }

    #[test]
    fn full_warmup_matches_naive_step_for_step() {
        let corpus = toy_corpus(96, 3, 4, 13);
        let d = dims(3, 4);
        let cfg_latent = TrainConfig {
            epochs: 4,
            warmup_epochs: Some(4),
            seed: 5,
            ..TrainConfig::default()
        };
        let cfg_naive = TrainConfig {
            epochs: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let latent = AnyModel::Latent(ModelParams::init(&d, 21).unwrap());
        let naive = build_baseline(BaselineKind::Naive, &d, 21).unwrap();
        let (m_latent, log_latent) = train(&corpus, latent, &cfg_latent).unwrap();
        let (m_naive, log_naive) = train(&corpus, naive, &cfg_naive).unwrap();

        assert_eq!(log_latent.step_losses.len(), log_naive.step_losses.len());
        for (a, b) in log_latent.step_losses.iter().zip(&log_naive.step_losses) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        // Bit-identical parameters, identity flag aside.
        assert_eq!(m_latent.to_vec(), m_naive.to_vec());
    }

    #[test]
    fn phase_markers_follow_schedule() {
        let corpus = toy_corpus(32, 2, 3, 1);
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let model = AnyModel::Latent(ModelParams::init(&dims(2, 3), 2).unwrap());
        let (_, log) = train(&corpus, model, &cfg).unwrap();
        let phases: Vec<Phase> = log.epochs.iter().map(|e| e.phase).collect();
        assert_eq!(
            phases,
            vec![Phase::Warmup, Phase::Warmup, Phase::Joint, Phase::Joint]
        );
    }

    #[test]
    fn separable_toy_corpus_is_learned() {
        // Noise-free labels from a linear rule; training accuracy must
        // reach 0.95 at threshold 0.5.
        let concepts = 2;
        let dim = 4;
        let mut rng = DetRng::new(3);
        let rule: Vec<Vec<f64>> = (0..concepts)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let examples: Vec<CorpusExample> = (0..200)
            .map(|id| {
                let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let refs: Vec<Vec<bool>> = vec![rule
                    .iter()
                    .map(|u| crate::linalg::dot(u, &x) > 0.0)
                    .collect()];
                let labels = union_labels(&refs);
                CorpusExample {
                    id: id as u64,
                    features: Features::single(x).unwrap(),
                    true_presence: None,
                    references: refs,
                    labels,
                }
            })
            .collect();
        let corpus = Corpus {
            vocab: Vocabulary::generic(concepts).unwrap(),
            feature_dim: dim,
            references_per_image: 1,
            regions_per_image: None,
            split: Split::Train,
            generator: None,
            warnings: vec![],
            examples,
        };
        let cfg = TrainConfig {
            epochs: 30,
            warmup_epochs: Some(15),
            learning_rate: 0.5,
            weight_decay: 1e-5,
            ..TrainConfig::default()
        };
        let model = AnyModel::Latent(ModelParams::init(&dims(concepts, dim), 4).unwrap());
        let (trained, log) = train(&corpus, model, &cfg).unwrap();
        assert!(log.epochs.last().unwrap().mean_loss < log.epochs[0].mean_loss);

        let mut correct = 0;
        let mut total = 0;
        for ex in &corpus.examples {
            let (_, h) = trained.predict(&ex.features).unwrap();
            for (w, &label) in ex.labels.iter().enumerate() {
                if (h[w] >= 0.5) == label {
                    correct += 1;
                }
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn exploding_loss_aborts_with_batch_diagnostic() {
        // An absurd learning rate inflates the weights until the L2 term
        // overflows; the trainer must abort naming the offending batch.
        let corpus = toy_corpus(64, 2, 4, 7);
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: Some(0),
            learning_rate: 1e60,
            weight_decay: 1e-4,
            ..TrainConfig::default()
        };
        let model = AnyModel::Latent(ModelParams::init(&dims(2, 4), 11).unwrap());
        let err = train(&corpus, model, &cfg).unwrap_err();
        match err {
            Error::Numerical(msg) => {
                assert!(msg.contains("batch"), "diagnostic lacks batch index: {msg}")
            }
            other => panic!("expected numerical failure, got {other}"),
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let corpus = toy_corpus(8, 2, 4, 7);
        let model = AnyModel::Latent(ModelParams::init(&dims(2, 5), 1).unwrap());
        assert!(matches!(
            train(&corpus, model, &TrainConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn relative_error_uses_absolute_below_threshold() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, -1e-12) < 1e-8);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
