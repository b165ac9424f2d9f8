//! Synthetic corpora with known visual ground truth and a controllable
//! reporting process.
//!
//! Every image draws features from a standard normal; true presence of a
//! concept is logistic in the features. Each of the `k` references then
//! mentions a present concept with a per-concept probability that is
//! either constant or logistic in the features (so omission can depend on
//! the image), and mentions an absent concept with the false-mention rate.
//! Training labels are the union of the references. Presence and mention
//! models are both logistic so that the optimal presence and relevance
//! predictors are realizable by the model family: recovery failures point
//! at bugs, not misspecification.

use serde::{Deserialize, Serialize};

use crate::corpus::{union_labels, Corpus, CorpusExample, Split};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::linalg::dot;
use crate::model::{ModelDims, ModelParams};
use crate::rng::DetRng;
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmissionMode {
    Constant,
    ImageDependent,
}

/// Compact generator description; `build` expands it into concrete
/// per-concept parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub concepts: usize,
    pub feature_dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// References (annotators) per image.
    pub references: usize,
    pub omission: OmissionMode,
    /// Per-concept mention probability among present concepts, spread
    /// linearly across concepts (the mean probability in image-dependent
    /// mode).
    pub mention_lo: f64,
    pub mention_hi: f64,
    /// Per-concept presence prior, spread linearly across concepts.
    pub prior_lo: f64,
    pub prior_hi: f64,
    /// Norm of the presence weight vectors.
    pub presence_scale: f64,
    /// Norm of the mention weight vectors (image-dependent mode).
    pub omission_scale: f64,
    /// How strongly a concept's mention weights point against its own
    /// presence weights, in [0, 1]: 0 gives independent random directions,
    /// 1 makes omission a pure function of presence evidence. Typical
    /// concepts in typical contexts going unmentioned is exactly this
    /// anti-alignment.
    pub omission_presence_alignment: f64,
    pub false_mention_rate: f64,
    /// Regions per image; 0 means single-vector examples.
    pub regions: usize,
    /// Bag mode: how many regions receive each concept's signal.
    pub inject_regions: usize,
    pub inject_scale: f64,
    /// Pairs `(attribute, object)`: the attribute's mention weights are
    /// set antiparallel to the object's presence weights, so the attribute
    /// goes unmentioned exactly in its typical context.
    pub typicality_pairs: Vec<(usize, usize)>,
    /// Seed for the generator's own parameter draws (distinct from the
    /// corpus sampling seed).
    pub param_seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::coco_like()
    }
}

impl GeneratorSpec {
    /// Desk-scale preset mirroring caption-style reporting bias: 20
    /// concepts, image-dependent omission spanning [0.3, 0.95], presence
    /// priors in [0.1, 0.5].
    pub fn coco_like() -> Self {
        GeneratorSpec {
            concepts: 20,
            feature_dim: 32,
            train_size: 10_000,
            test_size: 2_000,
            references: 5,
            omission: OmissionMode::ImageDependent,
            mention_lo: 0.3,
            mention_hi: 0.95,
            prior_lo: 0.1,
            prior_hi: 0.5,
            presence_scale: 2.5,
            omission_scale: 3.0,
            omission_presence_alignment: 0.6,
            false_mention_rate: 0.0,
            regions: 0,
            inject_regions: 2,
            inject_scale: 2.0,
            typicality_pairs: vec![],
            param_seed: 1,
        }
    }

    /// Constant (image-independent) omission variant of the default preset.
    pub fn constant_bias() -> Self {
        GeneratorSpec {
            omission: OmissionMode::Constant,
            ..GeneratorSpec::coco_like()
        }
    }

    /// Attribute-style preset: odd concepts are "attributes" whose mention
    /// weights are antiparallel to the previous "object" concept's presence
    /// weights.
    pub fn typicality() -> Self {
        let mut spec = GeneratorSpec::coco_like();
        spec.typicality_pairs = (0..spec.concepts / 2).map(|i| (2 * i + 1, 2 * i)).collect();
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 || self.feature_dim == 0 {
            return Err(Error::Config("concepts and feature_dim must be > 0".into()));
        }
        if self.references == 0 {
            return Err(Error::Config("references must be >= 1".into()));
        }
        for (name, p) in [
            ("mention_lo", self.mention_lo),
            ("mention_hi", self.mention_hi),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        for (name, p) in [("prior_lo", self.prior_lo), ("prior_hi", self.prior_hi)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1)")));
            }
        }
        if !(0.0..=0.05).contains(&self.false_mention_rate) {
            return Err(Error::Config(
                "false_mention_rate must be in [0, 0.05]".into(),
            ));
        }
        if self.regions > 0 && self.inject_regions == 0 {
            return Err(Error::Config(
                "bag mode needs inject_regions >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.omission_presence_alignment) {
            return Err(Error::Config(
                "omission_presence_alignment must be in [0, 1]".into(),
            ));
        }
        for &(attr, obj) in &self.typicality_pairs {
            if attr >= self.concepts || obj >= self.concepts {
                return Err(Error::Config(format!(
                    "typicality pair ({attr}, {obj}) out of range"
                )));
            }
        }
        Ok(())
    }

    /// Expand into concrete per-concept parameters.
    pub fn build(&self) -> Result<GeneratorConfig> {
        self.validate()?;
        let w = self.concepts;
        let d = self.feature_dim;
        let spread = |lo: f64, hi: f64, i: usize| {
            if w > 1 {
                lo + (hi - lo) * i as f64 / (w - 1) as f64
            } else {
                0.5 * (lo + hi)
            }
        };

        let presence_weights: Vec<Vec<f64>> = (0..w)
            .map(|i| {
                let mut rng = DetRng::derive(self.param_seed, &[0, i as u64]);
                random_direction(d, self.presence_scale, &mut rng)
            })
            .collect();
        // Logistic-normal mean approximation: E[sigmoid(u.x + c)] with
        // u.x ~ N(0, s^2) is close to sigmoid(c / sqrt(1 + pi s^2 / 8)).
        let presence_factor = (1.0 + std::f64::consts::PI * self.presence_scale.powi(2) / 8.0).sqrt();
        let presence_offsets: Vec<f64> = (0..w)
            .map(|i| logit(spread(self.prior_lo, self.prior_hi, i)) * presence_factor)
            .collect();

        let omission = match self.omission {
            OmissionMode::Constant => OmissionParams::Constant {
                mention_prob: (0..w)
                    .map(|i| spread(self.mention_lo, self.mention_hi, i))
                    .collect(),
            },
            OmissionMode::ImageDependent => {
                let align = self.omission_presence_alignment;
                let mut weights: Vec<Vec<f64>> = (0..w)
                    .map(|i| {
                        let mut rng = DetRng::derive(self.param_seed, &[1, i as u64]);
                        let raw = random_direction(d, 1.0, &mut rng);
                        // Mix an anti-presence component with the part of
                        // the raw direction orthogonal to the presence
                        // weights.
                        let u = &presence_weights[i];
                        let u_norm = dot(u, u).sqrt().max(1e-12);
                        let along = dot(&raw, u) / (u_norm * u_norm);
                        let mut orth: Vec<f64> =
                            raw.iter().zip(u).map(|(r, uv)| r - along * uv).collect();
                        let orth_norm = dot(&orth, &orth).sqrt();
                        if orth_norm < 1e-9 {
                            orth = random_direction(d, 1.0, &mut rng);
                        } else {
                            for x in orth.iter_mut() {
                                *x /= orth_norm;
                            }
                        }
                        let ortho_part = (1.0 - align * align).sqrt();
                        (0..d)
                            .map(|j| {
                                self.omission_scale
                                    * (-align * u[j] / u_norm + ortho_part * orth[j])
                            })
                            .collect()
                    })
                    .collect();
                for &(attr, obj) in &self.typicality_pairs {
                    let scale = self.omission_scale / self.presence_scale;
                    weights[attr] = presence_weights[obj].iter().map(|v| -v * scale).collect();
                }
                let factor =
                    (1.0 + std::f64::consts::PI * self.omission_scale.powi(2) / 8.0).sqrt();
                let offsets: Vec<f64> = (0..w)
                    .map(|i| {
                        let target = spread(self.mention_lo, self.mention_hi, i).clamp(0.01, 0.99);
                        logit(target) * factor
                    })
                    .collect();
                OmissionParams::ImageDependent { weights, offsets }
            }
        };

        Ok(GeneratorConfig {
            names: (0..w).map(|i| format!("c{i:02}")).collect(),
            feature_dim: d,
            references: self.references,
            presence_weights,
            presence_offsets,
            omission,
            false_mention_rate: self.false_mention_rate,
            bag: (self.regions > 0).then_some(BagSettings {
                regions: self.regions,
                inject_regions: self.inject_regions,
                inject_scale: self.inject_scale,
            }),
            echo: serde_json::to_value(self).ok(),
        })
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn random_direction(dim: usize, scale: f64, rng: &mut DetRng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = dot(&v, &v).sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x *= scale / norm;
    }
    v
}

#[derive(Clone, Debug)]
pub enum OmissionParams {
    /// Per-concept mention probability among present concepts.
    Constant { mention_prob: Vec<f64> },
    /// Mention probability `sigmoid(weights . x + offset)` per concept.
    ImageDependent {
        weights: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct BagSettings {
    pub regions: usize,
    pub inject_regions: usize,
    pub inject_scale: f64,
}

/// Concrete generator parameters: per-concept presence and mention models.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub names: Vec<String>,
    pub feature_dim: usize,
    pub references: usize,
    pub presence_weights: Vec<Vec<f64>>,
    pub presence_offsets: Vec<f64>,
    pub omission: OmissionParams,
    pub false_mention_rate: f64,
    pub bag: Option<BagSettings>,
    /// The [`GeneratorSpec`] this config was built from, echoed into
    /// corpus headers for provenance.
    pub echo: Option<serde_json::Value>,
}

impl GeneratorConfig {
    pub fn concepts(&self) -> usize {
        self.names.len()
    }

    /// Degenerate-configuration warnings (recorded in corpus metadata).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let OmissionParams::Constant { mention_prob } = &self.omission {
            for (w, &q) in mention_prob.iter().enumerate() {
                if q == 0.0 {
                    out.push(format!(
                        "concept {} has mention probability 0 and will never be labeled",
                        self.names[w]
                    ));
                }
            }
        }
        out
    }

    /// Mention probability for a present concept given (pooled) features.
    pub fn mention_prob(&self, concept: usize, pooled: &[f64]) -> f64 {
        match &self.omission {
            OmissionParams::Constant { mention_prob } => mention_prob[concept],
            OmissionParams::ImageDependent { weights, offsets } => {
                sigmoid(dot(&weights[concept], pooled) + offsets[concept])
            }
        }
    }

    /// True presence probability given the example's features.
    pub fn presence_prob(&self, concept: usize, features: &Features) -> f64 {
        let u = &self.presence_weights[concept];
        let signal = features
            .iter_regions()
            .map(|r| dot(u, r))
            .fold(f64::NEG_INFINITY, f64::max);
        sigmoid(signal + self.presence_offsets[concept])
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.concepts();
        if w == 0 {
            return Err(Error::Config("generator needs at least one concept".into()));
        }
        if self.references == 0 {
            return Err(Error::Config("references must be >= 1".into()));
        }
        if self.presence_weights.len() != w || self.presence_offsets.len() != w {
            return Err(Error::Dimension("presence model width != concepts".into()));
        }
        for u in &self.presence_weights {
            if u.len() != self.feature_dim || u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("presence weights malformed".into()));
            }
        }
        match &self.omission {
            OmissionParams::Constant { mention_prob } => {
                if mention_prob.len() != w {
                    return Err(Error::Dimension("mention model width != concepts".into()));
                }
                if mention_prob.iter().any(|q| !(0.0..=1.0).contains(q)) {
                    return Err(Error::Config(
                        "mention probabilities must be in [0, 1]".into(),
                    ));
                }
            }
            OmissionParams::ImageDependent { weights, offsets } => {
                if weights.len() != w || offsets.len() != w {
                    return Err(Error::Dimension("mention model width != concepts".into()));
                }
                for a in weights {
                    if a.len() != self.feature_dim || a.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Config("mention weights malformed".into()));
                    }
                }
            }
        }
        if !(0.0..=0.05).contains(&self.false_mention_rate) {
            return Err(Error::Config(
                "false_mention_rate must be in [0, 0.05]".into(),
            ));
        }
        if let Some(bag) = &self.bag {
            if bag.regions == 0 || bag.inject_regions == 0 {
                return Err(Error::Config("bag settings must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Sample one image. `global_index` keys the image's independent random
/// streams, so a corpus is identical however generation is ordered or
/// split.
fn sample_example(
    config: &GeneratorConfig,
    seed: u64,
    global_index: u64,
    id: u64,
) -> Result<CorpusExample> {
    let d = config.feature_dim;
    let w = config.concepts();

    let mut feature_rng = DetRng::derive(seed, &[global_index, 0]);
    let features = match &config.bag {
        None => Features::single((0..d).map(|_| feature_rng.normal()).collect())?,
        Some(bag) => {
            let mut rows: Vec<Vec<f64>> = (0..bag.regions)
                .map(|_| (0..d).map(|_| feature_rng.normal()).collect())
                .collect();
            // Roughly half the images carry each concept's signal,
            // injected into a few regions; presence is then sampled from
            // the region-max response, so the noisy-OR path has something
            // to localize.
            for u in &config.presence_weights {
                let norm = dot(u, u).sqrt().max(1e-12);
                let picks = feature_rng.distinct_indices(bag.regions, bag.inject_regions);
                if feature_rng.bernoulli(0.5) {
                    for r in picks {
                        for (x, uv) in rows[r].iter_mut().zip(u) {
                            *x += bag.inject_scale * uv / norm;
                        }
                    }
                }
            }
            Features::bag(rows)?
        }
    };

    let mut presence_rng = DetRng::derive(seed, &[global_index, 1]);
    let z: Vec<bool> = (0..w)
        .map(|c| presence_rng.bernoulli(config.presence_prob(c, &features)))
        .collect();

    // Mention models see the mean-pooled features, mirroring how the
    // relevance head pools them.
    let pooled: Vec<f64> = {
        let mut acc = vec![0.0; d];
        for r in features.iter_regions() {
            for (a, x) in acc.iter_mut().zip(r) {
                *a += x;
            }
        }
        let inv = 1.0 / features.regions() as f64;
        acc.iter().map(|a| a * inv).collect()
    };

    // Each reference draws from its own stream so that reference t is the
    // same no matter how many references the corpus asks for.
    let references: Vec<Vec<bool>> = (0..config.references)
        .map(|t| {
            let mut ref_rng = DetRng::derive(seed, &[global_index, 2 + t as u64]);
            (0..w)
                .map(|c| {
                    let p = if z[c] {
                        config.mention_prob(c, &pooled)
                    } else {
                        config.false_mention_rate
                    };
                    ref_rng.bernoulli(p)
                })
                .collect()
        })
        .collect();
    let labels = union_labels(&references);

    Ok(CorpusExample {
        id,
        features,
        true_presence: Some(z),
        references,
        labels,
    })
}

/// Sample a corpus of `n` images whose global stream indices start at
/// `index_offset`.
pub fn sample_corpus(
    config: &GeneratorConfig,
    seed: u64,
    n: usize,
    split: Split,
    index_offset: u64,
) -> Result<Corpus> {
    config.validate()?;
    let examples = (0..n)
        .map(|i| sample_example(config, seed, index_offset + i as u64, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        vocab: Vocabulary::new(config.names.clone())?,
        feature_dim: config.feature_dim,
        references_per_image: config.references,
        regions_per_image: config.bag.as_ref().map(|b| b.regions),
        split,
        generator: config.echo.clone(),
        warnings: config.warnings(),
        examples,
    })
}

/// Train and test splits drawn from disjoint stream-index ranges of the
/// same master seed.
pub fn sample_train_test(
    config: &GeneratorConfig,
    seed: u64,
    train_size: usize,
    test_size: usize,
) -> Result<(Corpus, Corpus)> {
    let train = sample_corpus(config, seed, train_size, Split::Train, 0)?;
    let test = sample_corpus(config, seed, test_size, Split::Test, train_size as u64)?;
    Ok((train, test))
}

/// Empirical reporting bias of a generated corpus.
#[derive(Clone, Debug, Serialize)]
pub struct TrueBiasRow {
    pub concept: String,
    /// `P(union label = 0 | present)`; `None` without present examples.
    pub union_omission: Option<f64>,
    /// `P(a single reference omits | present)` over (image, reference) pairs.
    pub per_reference_omission: Option<f64>,
    pub present_count: usize,
}

/// Exact count-based omission frequencies against the stored true
/// presence. Errors when the corpus lacks presence ground truth.
pub fn true_bias(corpus: &Corpus) -> Result<Vec<TrueBiasRow>> {
    if !corpus.has_true_presence() {
        return Err(Error::InvalidInput(
            "corpus has no true presence ground truth".into(),
        ));
    }
    let w = corpus.concepts();
    let k = corpus.references_per_image;
    let mut rows = Vec::with_capacity(w);
    for c in 0..w {
        let mut present = 0usize;
        let mut union_missed = 0usize;
        let mut ref_missed = 0usize;
        for ex in &corpus.examples {
            if ex.true_presence.as_ref().unwrap()[c] {
                present += 1;
                if !ex.labels[c] {
                    union_missed += 1;
                }
                ref_missed += ex.references.iter().filter(|r| !r[c]).count();
            }
        }
        rows.push(TrueBiasRow {
            concept: corpus.vocab.name(c).to_string(),
            union_omission: (present > 0).then(|| union_missed as f64 / present as f64),
            per_reference_omission: (present > 0)
                .then(|| ref_missed as f64 / (present * k) as f64),
            present_count: present,
        });
    }
    Ok(rows)
}

/// The generator's own presence model as a latent model (identity trunk,
/// near-identity relevance): presence scores are the true posteriors.
/// Single-vector configurations only.
pub fn bayes_presence_model(config: &GeneratorConfig) -> Result<ModelParams> {
    if config.bag.is_some() {
        return Err(Error::Config(
            "analytic reference model requires single-vector mode".into(),
        ));
    }
    let dims = ModelDims {
        concepts: config.concepts(),
        input_dim: config.feature_dim,
        trunk_layers: vec![],
    };
    let mut params = ModelParams::zeros(&dims)?;
    for (c, u) in config.presence_weights.iter().enumerate() {
        params.presence.weight.row_mut(c).copy_from_slice(u);
        params.presence.bias[c] = config.presence_offsets[c];
    }
    params.relevance = crate::model::RelevanceHead::near_identity(
        config.concepts(),
        config.feature_dim,
    );
    Ok(params)
}
