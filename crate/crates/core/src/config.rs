//! Experiment configuration: one JSON document wiring the generator,
//! model, trainer and evaluation together, with every field defaulted so
//! a minimal config is `{}`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{build_baseline, AnyModel, BaselineKind, DEFAULT_MULTIHEAD_HEADS};
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::rng::DetRng;
use crate::synthgen::GeneratorSpec;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// The factored model: presence head plus input-conditioned relevance.
    Latent,
    /// Direct reported-label classifier (identity relevance, permanent).
    Naive,
    /// Latent model whose relevance ignores the input (biases only).
    Unconditioned,
    /// Parameter-count control: several independent output heads.
    Multihead,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Output heads for the multihead control.
    pub heads: usize,
    /// Trunk layer output dims; empty means the identity trunk.
    pub trunk_layers: Vec<usize>,
    /// Parameter init seed; derived from the master seed when absent.
    pub init_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Latent,
            heads: DEFAULT_MULTIHEAD_HEADS,
            trunk_layers: vec![],
            init_seed: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Named groups of concept indices collapsed at evaluation time.
    pub merge_groups: BTreeMap<String, Vec<usize>>,
    pub histogram_bins: usize,
    pub histogram_threshold: f64,
    pub histogram_quantiles: usize,
    /// Fail instead of skipping the presence-vs-truth rows when the
    /// corpus lacks true presence.
    pub require_truth: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            merge_groups: BTreeMap::new(),
            histogram_bins: 20,
            histogram_threshold: crate::metrics::DEFAULT_HISTOGRAM_THRESHOLD,
            histogram_quantiles: crate::metrics::DEFAULT_HISTOGRAM_QUANTILES,
            require_truth: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Default directory for everything a command writes.
    pub out_dir: PathBuf,
    pub corpus_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            out_dir: PathBuf::from("out"),
            corpus_dir: None,
            checkpoint: None,
            report_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed. Section seeds left unset derive from it.
    pub seed: u64,
    pub generator: GeneratorSpec,
    pub training: TrainConfig,
    pub model: ModelSection,
    pub evaluation: EvalSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Corpus sampling seed.
    pub fn sampling_seed(&self) -> u64 {
        DetRng::derive(self.seed, &[1]).next_u64()
    }

    /// SGD seed: the explicit `training.seed` when nonzero, otherwise
    /// derived from the master seed.
    pub fn training_seed(&self) -> u64 {
        if self.training.seed != 0 {
            self.training.seed
        } else {
            DetRng::derive(self.seed, &[2]).next_u64()
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.model
            .init_seed
            .unwrap_or_else(|| DetRng::derive(self.seed, &[3]).next_u64())
    }

    /// Resolved training config (seed materialized).
    pub fn resolved_training(&self) -> TrainConfig {
        TrainConfig {
            seed: self.training_seed(),
            ..self.training.clone()
        }
    }

    /// Build the configured model for a corpus shape.
    pub fn build_model(&self, concepts: usize, input_dim: usize, bag_mode: bool) -> Result<AnyModel> {
        let dims = ModelDims {
            concepts,
            input_dim,
            trunk_layers: self.model.trunk_layers.clone(),
        };
        let seed = self.init_seed();
        let model = match self.model.kind {
            ModelKind::Latent => AnyModel::Latent(ModelParams::init(&dims, seed)?),
            ModelKind::Naive => build_baseline(BaselineKind::Naive, &dims, seed)?,
            ModelKind::Unconditioned => {
                build_baseline(BaselineKind::UnconditionedRelevance, &dims, seed)?
            }
            ModelKind::Multihead => build_baseline(
                BaselineKind::Multihead {
                    heads: self.model.heads,
                },
                &dims,
                seed,
            )?,
        };
        Ok(match model {
            AnyModel::Latent(p) => AnyModel::Latent(p.with_bag_mode(bag_mode)),
            AnyModel::Multihead(p) => AnyModel::Multihead(p.with_bag_mode(bag_mode)),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.training.validate()?;
        if self.model.kind == ModelKind::Multihead && self.model.heads < 2 {
            return Err(Error::Config("multihead needs at least 2 heads".into()));
        }
        if self.evaluation.histogram_bins == 0 || self.evaluation.histogram_quantiles == 0 {
            return Err(Error::Config(
                "histogram bins and quantiles must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.evaluation.histogram_threshold) {
            return Err(Error::Config(
                "histogram threshold must be in [0, 1]".into(),
            ));
        }
        // The checkpoint is a file; pointing it at a directory another
        // command writes into would clobber it.
        if let Some(ckpt) = &self.paths.checkpoint {
            for dir in [Some(&self.paths.out_dir), self.paths.corpus_dir.as_ref(), self.paths.report_dir.as_ref()]
                .into_iter()
                .flatten()
            {
                if ckpt == dir {
                    return Err(Error::Config(format!(
                        "paths.checkpoint ({}) collides with a directory path",
                        ckpt.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.kind, ModelKind::Latent);
        assert_eq!(cfg.generator.concepts, 20);
        assert_eq!(cfg.training.epochs, 4);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"unknown_field": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"training": {"epochz": 4}}"#).is_err());
    }

    #[test]
    fn section_seeds_derive_from_master() {
        let a = ExperimentConfig::from_json(r#"{"seed": 1}"#).unwrap();
        let b = ExperimentConfig::from_json(r#"{"seed": 2}"#).unwrap();
        assert_ne!(a.sampling_seed(), b.sampling_seed());
        assert_ne!(a.training_seed(), b.training_seed());
        // Explicit training seed wins.
        let c = ExperimentConfig::from_json(r#"{"seed": 1, "training": {"seed": 77}}"#).unwrap();
        assert_eq!(c.training_seed(), 77);
    }

    #[test]
    fn builds_each_model_kind() {
        for kind in ["latent", "naive", "unconditioned", "multihead"] {
            let cfg =
                ExperimentConfig::from_json(&format!(r#"{{"model": {{"kind": "{kind}"}}}}"#))
                    .unwrap();
            let model = cfg.build_model(4, 8, false).unwrap();
            assert_eq!(model.concepts(), 4);
            assert_eq!(model.input_dim(), 8);
        }
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
