//! Command-line interface: `gen`, `train`, `eval`, `diagnose` and
//! `gradcheck` subcommands over on-disk corpora, checkpoints and reports.
//!
//! Every command is a pure function of its config, seed and input files;
//! reruns reproduce output files byte for byte (the training log's wall
//! times are the one exception). Exit codes: 0 success, 2 validation
//! error, 3 numerical failure, 4 i/o error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::AnyModel;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, decoupling_histogram, mean_ap, merge_concepts, precision_at_human_recall,
    reporting_bias, ConceptScores, DecouplingHistogram,
};
use crate::report::{fmt_opt, write_csv, write_json};
use crate::synthgen::{sample_train_test, true_bias};
use crate::trainer::{train, TrainLog};

#[derive(Parser)]
#[command(name = "reportbias", version, about = "Train and evaluate classifiers that separate visual presence from human reporting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test corpora with known ground truth
    Gen(GenArgs),
    /// Train a model on a JSONL corpus and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint: mAP, PHR, reporting bias, merged concepts
    Eval(EvalArgs),
    /// Presence-vs-mention decoupling histograms for a latent checkpoint
    Diagnose(DiagnoseArgs),
    /// Check analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (default: paths.corpus_dir or paths.out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training corpus (default: <corpus dir>/train.jsonl)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Checkpoint path (default: paths.checkpoint or <out_dir>/model.ckpt)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation corpus (default: <corpus dir>/test.jsonl)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Report directory (default: paths.report_dir or paths.out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    concepts: usize,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    regions: usize,
    /// Trunk layer dims, comma separated (e.g. "6,4"); empty for identity
    #[arg(long, default_value = "4")]
    trunk: String,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: corrupt one analytic gradient component
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage text; 0 for --help/--version.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(args) => args
            .config
            .load()
            .and_then(|cfg| cmd_gen(&cfg, args.out.as_deref()).map(|_| ())),
        Command::Train(args) => args.config.load().and_then(|cfg| {
            cmd_train(&cfg, args.corpus.as_deref(), args.out.as_deref()).map(|_| ())
        }),
        Command::Eval(args) => args.config.load().and_then(|cfg| {
            cmd_eval(
                &cfg,
                args.checkpoint.as_deref(),
                args.corpus.as_deref(),
                args.out.as_deref(),
            )
            .map(|_| ())
        }),
        Command::Diagnose(args) => args.config.load().and_then(|cfg| {
            cmd_diagnose(
                &cfg,
                args.checkpoint.as_deref(),
                args.corpus.as_deref(),
                args.out.as_deref(),
            )
            .map(|_| ())
        }),
        Command::Gradcheck(args) => cmd_gradcheck(&args).and_then(|worst| {
            if worst < args.tolerance {
                Ok(())
            } else {
                Err(Error::Numerical(format!(
                    "max relative gradient error {worst:e} exceeds tolerance {:e}",
                    args.tolerance
                )))
            }
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug)]
pub struct GenOutputs {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub bias_path: PathBuf,
    pub summary_path: PathBuf,
}

#[derive(Serialize)]
struct GenSummary<'a> {
    config: &'a ExperimentConfig,
    sampling_seed: u64,
    train_images: usize,
    test_images: usize,
    warnings: &'a [String],
    true_bias: Vec<crate::synthgen::TrueBiasRow>,
}

/// Generate train/test corpora plus a true-bias summary.
pub fn cmd_gen(config: &ExperimentConfig, out: Option<&Path>) -> Result<GenOutputs> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.paths.corpus_dir.clone())
        .unwrap_or_else(|| config.paths.out_dir.clone());
    ensure_dir(&dir)?;

    let generator = config.generator.build()?;
    let (train_corpus, test_corpus) = sample_train_test(
        &generator,
        config.sampling_seed(),
        config.generator.train_size,
        config.generator.test_size,
    )?;

    let train_path = dir.join("train.jsonl");
    let test_path = dir.join("test.jsonl");
    train_corpus.write_jsonl(&train_path)?;
    test_corpus.write_jsonl(&test_path)?;

    let bias = true_bias(&train_corpus)?;
    let bias_path = dir.join("true_bias.csv");
    let mut rows = vec![vec![
        "concept".to_string(),
        "present_count".to_string(),
        "union_omission".to_string(),
        "per_reference_omission".to_string(),
    ]];
    for row in &bias {
        rows.push(vec![
            row.concept.clone(),
            row.present_count.to_string(),
            fmt_opt(row.union_omission),
            fmt_opt(row.per_reference_omission),
        ]);
    }
    write_csv(&bias_path, &rows)?;

    let summary_path = dir.join("gen_summary.json");
    write_json(
        &summary_path,
        &GenSummary {
            config,
            sampling_seed: config.sampling_seed(),
            train_images: train_corpus.len(),
            test_images: test_corpus.len(),
            warnings: &train_corpus.warnings,
            true_bias: bias,
        },
    )?;

    println!(
        "wrote {} ({} images), {} ({} images)",
        train_path.display(),
        train_corpus.len(),
        test_path.display(),
        test_corpus.len()
    );
    Ok(GenOutputs {
        train_path,
        test_path,
        bias_path,
        summary_path,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a ExperimentConfig,
    corpus: String,
    images: usize,
    parameters: usize,
    log: &'a TrainLog,
}

/// Train the configured model and write a checkpoint plus a JSON log.
pub fn cmd_train(
    config: &ExperimentConfig,
    corpus_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<TrainOutputs> {
    let corpus_path = corpus_path.map(Path::to_path_buf).unwrap_or_else(|| {
        config
            .paths
            .corpus_dir
            .clone()
            .unwrap_or_else(|| config.paths.out_dir.clone())
            .join("train.jsonl")
    });
    let corpus = Corpus::read_jsonl(&corpus_path)?;

    let checkpoint_path = out
        .map(Path::to_path_buf)
        .or_else(|| config.paths.checkpoint.clone())
        .unwrap_or_else(|| config.paths.out_dir.join("model.ckpt"));
    if let Some(parent) = checkpoint_path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }

    let bag = corpus.regions_per_image.is_some_and(|r| r > 1);
    let model = config.build_model(corpus.concepts(), corpus.feature_dim, bag)?;
    let (trained, log) = train(&corpus, model, &config.resolved_training())?;
    save_checkpoint(&trained, &checkpoint_path)?;

    let log_path = checkpoint_path.with_extension("log.json");
    write_json(
        &log_path,
        &TrainSummary {
            config,
            corpus: corpus_path.display().to_string(),
            images: corpus.len(),
            parameters: trained.num_params(),
            log: &log,
        },
    )?;

    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs (final mean loss {:.6}), wrote {}",
        log.epochs.len(),
        last.mean_loss,
        checkpoint_path.display()
    );
    Ok(TrainOutputs {
        checkpoint_path,
        log_path,
        log,
    })
}

/// Everything `eval` measures for one checkpoint/corpus pair.
#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub images: usize,
    pub concepts: usize,
    pub references: usize,
    /// mAP of the reported-label scores against union labels.
    pub map_mention_vs_labels: f64,
    /// mAP of the presence scores against union labels.
    pub map_presence_vs_labels: f64,
    /// mAP of the presence scores against true presence (needs z).
    pub map_presence_vs_truth: Option<f64>,
    pub map_mention_vs_truth: Option<f64>,
    /// Precision at human recall, averaged over defined concepts.
    pub phr_mention_mean: Option<f64>,
    pub phr_presence_mean: Option<f64>,
    /// Merged-concept mAP against true presence (needs merge groups + z).
    pub merged_map_presence_vs_truth: Option<f64>,
    pub merged_map_mention_vs_truth: Option<f64>,
    /// Mean measured reporting bias P(label=0 | present) over defined
    /// concepts.
    pub mean_reporting_bias: Option<f64>,
    pub undefined_label_ap: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOutputs {
    pub summary: EvalSummary,
    pub per_concept_path: PathBuf,
    pub summary_path: PathBuf,
}

struct ScoreTable {
    ids: Vec<u64>,
    /// `presence[w][i]`, `mention[w][i]`.
    presence: Vec<Vec<f64>>,
    mention: Vec<Vec<f64>>,
    labels: Vec<Vec<bool>>,
    truth: Option<Vec<Vec<bool>>>,
}

fn score_corpus(model: &AnyModel, corpus: &Corpus) -> Result<ScoreTable> {
    let w = corpus.concepts();
    let n = corpus.len();
    let mut table = ScoreTable {
        ids: Vec::with_capacity(n),
        presence: vec![Vec::with_capacity(n); w],
        mention: vec![Vec::with_capacity(n); w],
        labels: vec![Vec::with_capacity(n); w],
        truth: corpus.has_true_presence().then(|| vec![Vec::with_capacity(n); w]),
    };
    for ex in &corpus.examples {
        let (v, h) = model.predict(&ex.features)?;
        table.ids.push(ex.id);
        for c in 0..w {
            table.presence[c].push(v[c]);
            table.mention[c].push(h[c]);
            table.labels[c].push(ex.labels[c]);
            if let Some(truth) = table.truth.as_mut() {
                truth[c].push(ex.true_presence.as_ref().unwrap()[c]);
            }
        }
    }
    Ok(table)
}

fn concept_scores(table: &ScoreTable, scores: &[Vec<f64>], labels: &[Vec<bool>], c: usize) -> ConceptScores {
    ConceptScores {
        ids: table.ids.clone(),
        scores: scores[c].clone(),
        labels: labels[c].clone(),
    }
}

fn load_eval_inputs(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    corpus: Option<&Path>,
) -> Result<(AnyModel, Corpus, PathBuf, PathBuf)> {
    let checkpoint_path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| config.paths.checkpoint.clone())
        .unwrap_or_else(|| config.paths.out_dir.join("model.ckpt"));
    let corpus_path = corpus.map(Path::to_path_buf).unwrap_or_else(|| {
        config
            .paths
            .corpus_dir
            .clone()
            .unwrap_or_else(|| config.paths.out_dir.clone())
            .join("test.jsonl")
    });
    let model = load_checkpoint(&checkpoint_path)?;
    let data = Corpus::read_jsonl(&corpus_path)?;
    if data.concepts() != model.concepts() {
        return Err(Error::Dimension(format!(
            "checkpoint has {} concepts, corpus {}",
            model.concepts(),
            data.concepts()
        )));
    }
    if data.feature_dim != model.input_dim() {
        return Err(Error::Dimension(format!(
            "checkpoint expects dim {}, corpus has {}",
            model.input_dim(),
            data.feature_dim
        )));
    }
    Ok((model, data, checkpoint_path, corpus_path))
}

/// One concept's evaluation row.
#[derive(Clone, Debug, Serialize)]
pub struct ConceptEval {
    pub concept: String,
    pub label_positives: usize,
    pub truth_positives: Option<usize>,
    pub ap_mention_vs_labels: Option<f64>,
    pub ap_presence_vs_labels: Option<f64>,
    pub ap_presence_vs_truth: Option<f64>,
    pub ap_mention_vs_truth: Option<f64>,
    pub phr_mention: Option<f64>,
    pub phr_presence: Option<f64>,
    pub human_recall: Option<f64>,
    pub reporting_bias: Option<f64>,
    pub bias_support: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct EvalComputation {
    pub summary: EvalSummary,
    pub per_concept: Vec<ConceptEval>,
}

/// Score a corpus with a model and measure everything: per-concept and
/// aggregate mAP against union labels (and against true presence when the
/// corpus has it), precision at human recall when `k >= 2`, per-concept
/// reporting bias and merged-concept mAP for the given groups.
pub fn evaluate_model(
    model: &AnyModel,
    data: &Corpus,
    merge_groups: &BTreeMap<String, Vec<usize>>,
) -> Result<EvalComputation> {
    if data.concepts() != model.concepts() {
        return Err(Error::Dimension(format!(
            "model has {} concepts, corpus {}",
            model.concepts(),
            data.concepts()
        )));
    }
    let table = score_corpus(model, data)?;
    let w = data.concepts();
    let k = data.references_per_image;

    let mut ap_mention_labels = Vec::with_capacity(w);
    let mut ap_presence_labels = Vec::with_capacity(w);
    let mut ap_presence_truth = vec![None; w];
    let mut ap_mention_truth = vec![None; w];
    let mut phr_mention = vec![None; w];
    let mut phr_presence = vec![None; w];
    let mut bias = Vec::with_capacity(w);

    for c in 0..w {
        ap_mention_labels
            .push(average_precision(&concept_scores(&table, &table.mention, &table.labels, c))?);
        ap_presence_labels
            .push(average_precision(&concept_scores(&table, &table.presence, &table.labels, c))?);
        if let Some(truth) = &table.truth {
            ap_presence_truth[c] =
                average_precision(&concept_scores(&table, &table.presence, truth, c))?;
            ap_mention_truth[c] =
                average_precision(&concept_scores(&table, &table.mention, truth, c))?;
            bias.push(Some(reporting_bias(&table.labels[c], &truth[c], None)?));
        } else {
            bias.push(None);
        }
        if k >= 2 {
            let mentions: Vec<Vec<bool>> = data
                .examples
                .iter()
                .map(|ex| ex.references.iter().map(|r| r[c]).collect())
                .collect();
            phr_mention[c] =
                precision_at_human_recall(&table.ids, &table.mention[c], &mentions)?;
            phr_presence[c] =
                precision_at_human_recall(&table.ids, &table.presence[c], &mentions)?;
        }
    }

    let merged = if let (false, Some(truth)) = (merge_groups.is_empty(), &table.truth) {
        let presence_concepts: Vec<ConceptScores> = (0..w)
            .map(|c| concept_scores(&table, &table.presence, truth, c))
            .collect();
        let mention_concepts: Vec<ConceptScores> = (0..w)
            .map(|c| concept_scores(&table, &table.mention, truth, c))
            .collect();
        let names = data.vocab.names().to_vec();
        let merged_presence = merge_concepts(&presence_concepts, &names, merge_groups)?;
        let merged_mention = merge_concepts(&mention_concepts, &names, merge_groups)?;
        let ap = |m: &crate::metrics::MergedScores| -> Result<Option<f64>> {
            let aps = m
                .concepts
                .iter()
                .map(average_precision)
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_ap(&aps, None).ok().map(|m| m.overall))
        };
        (ap(&merged_presence)?, ap(&merged_mention)?)
    } else {
        (None, None)
    };

    let map_mention_vs_labels = mean_ap(&ap_mention_labels, None)?;
    let map_presence_vs_labels = mean_ap(&ap_presence_labels, None)?;
    let mean_defined = |xs: &[Option<f64>]| {
        let defined: Vec<f64> = xs.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    };

    let summary = EvalSummary {
        images: data.len(),
        concepts: w,
        references: k,
        map_mention_vs_labels: map_mention_vs_labels.overall,
        map_presence_vs_labels: map_presence_vs_labels.overall,
        map_presence_vs_truth: mean_defined(&ap_presence_truth),
        map_mention_vs_truth: mean_defined(&ap_mention_truth),
        phr_mention_mean: mean_defined(
            &phr_mention.iter().map(|p| p.map(|p| p.precision)).collect::<Vec<_>>(),
        ),
        phr_presence_mean: mean_defined(
            &phr_presence.iter().map(|p| p.map(|p| p.precision)).collect::<Vec<_>>(),
        ),
        merged_map_presence_vs_truth: merged.0,
        merged_map_mention_vs_truth: merged.1,
        mean_reporting_bias: mean_defined(
            &bias
                .iter()
                .map(|b| b.as_ref().and_then(|b| b.probability))
                .collect::<Vec<_>>(),
        ),
        undefined_label_ap: map_mention_vs_labels.excluded,
    };

    let per_concept = (0..w)
        .map(|c| ConceptEval {
            concept: data.vocab.name(c).to_string(),
            label_positives: table.labels[c].iter().filter(|&&b| b).count(),
            truth_positives: table
                .truth
                .as_ref()
                .map(|t| t[c].iter().filter(|&&b| b).count()),
            ap_mention_vs_labels: ap_mention_labels[c],
            ap_presence_vs_labels: ap_presence_labels[c],
            ap_presence_vs_truth: ap_presence_truth[c],
            ap_mention_vs_truth: ap_mention_truth[c],
            phr_mention: phr_mention[c].map(|p| p.precision),
            phr_presence: phr_presence[c].map(|p| p.precision),
            human_recall: phr_mention[c].map(|p| p.human_recall),
            reporting_bias: bias[c].as_ref().and_then(|b| b.probability),
            bias_support: bias[c].as_ref().map(|b| b.support),
        })
        .collect();

    Ok(EvalComputation {
        summary,
        per_concept,
    })
}

/// Evaluate a checkpoint: per-concept CSV plus a JSON summary.
pub fn cmd_eval(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    corpus: Option<&Path>,
    out: Option<&Path>,
) -> Result<EvalOutputs> {
    let (model, data, checkpoint_path, corpus_path) =
        load_eval_inputs(config, checkpoint, corpus)?;
    if config.evaluation.require_truth && !data.has_true_presence() {
        return Err(Error::InvalidInput(
            "corpus records lack the 'z' field required for presence-vs-truth evaluation".into(),
        ));
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.paths.report_dir.clone())
        .unwrap_or_else(|| config.paths.out_dir.clone());
    ensure_dir(&dir)?;

    let computed = evaluate_model(&model, &data, &config.evaluation.merge_groups)?;
    let summary = computed.summary.clone();

    let per_concept_path = dir.join("eval_per_concept.csv");
    let mut rows = vec![vec![
        "concept".to_string(),
        "label_positives".to_string(),
        "truth_positives".to_string(),
        "ap_mention_vs_labels".to_string(),
        "ap_presence_vs_labels".to_string(),
        "ap_presence_vs_truth".to_string(),
        "ap_mention_vs_truth".to_string(),
        "phr_mention".to_string(),
        "phr_presence".to_string(),
        "human_recall".to_string(),
        "reporting_bias".to_string(),
        "bias_support".to_string(),
    ]];
    for row in &computed.per_concept {
        rows.push(vec![
            row.concept.clone(),
            row.label_positives.to_string(),
            row.truth_positives
                .map_or_else(|| "NA".to_string(), |p| p.to_string()),
            fmt_opt(row.ap_mention_vs_labels),
            fmt_opt(row.ap_presence_vs_labels),
            fmt_opt(row.ap_presence_vs_truth),
            fmt_opt(row.ap_mention_vs_truth),
            fmt_opt(row.phr_mention),
            fmt_opt(row.phr_presence),
            fmt_opt(row.human_recall),
            fmt_opt(row.reporting_bias),
            row.bias_support
                .map_or_else(|| "NA".to_string(), |s| s.to_string()),
        ]);
    }
    write_csv(&per_concept_path, &rows)?;

    #[derive(Serialize)]
    struct FullSummary<'a> {
        config: &'a ExperimentConfig,
        checkpoint: String,
        corpus: String,
        #[serde(flatten)]
        summary: &'a EvalSummary,
    }
    let summary_path = dir.join("eval_summary.json");
    write_json(
        &summary_path,
        &FullSummary {
            config,
            checkpoint: checkpoint_path.display().to_string(),
            corpus: corpus_path.display().to_string(),
            summary: &summary,
        },
    )?;

    println!(
        "eval: mAP mention-vs-labels {:.4}, presence-vs-labels {:.4}{}",
        summary.map_mention_vs_labels,
        summary.map_presence_vs_labels,
        summary
            .map_presence_vs_truth
            .map_or(String::new(), |m| format!(", presence-vs-truth {m:.4}"))
    );
    Ok(EvalOutputs {
        summary,
        per_concept_path,
        summary_path,
    })
}

#[derive(Clone, Debug)]
pub struct DiagnoseOutputs {
    pub histogram_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// Per-concept decoupling histograms and quantile representatives.
pub fn cmd_diagnose(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    corpus: Option<&Path>,
    out: Option<&Path>,
) -> Result<DiagnoseOutputs> {
    let (model, data, _, _) = load_eval_inputs(config, checkpoint, corpus)?;
    if model.is_identity_only() {
        return Err(Error::InvalidInput(
            "checkpoint predicts reported labels only (identity relevance); there is no \
             presence/mention decoupling to diagnose"
                .into(),
        ));
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.paths.report_dir.clone())
        .unwrap_or_else(|| config.paths.out_dir.clone());
    ensure_dir(&dir)?;

    let table = score_corpus(&model, &data)?;
    let mut histogram_paths = Vec::new();
    let mut summaries: BTreeMap<String, DecouplingHistogram> = BTreeMap::new();
    for c in 0..data.concepts() {
        let hist = decoupling_histogram(
            &table.ids,
            &table.presence[c],
            &table.mention[c],
            config.evaluation.histogram_bins,
            config.evaluation.histogram_threshold,
            config.evaluation.histogram_quantiles,
        )?;
        let name = data.vocab.name(c);
        let safe: String = name
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
            .collect();
        let path = dir.join(format!("histogram_{safe}.csv"));
        let mut rows = vec![vec![
            "presence_bin".to_string(),
            "mention_bin".to_string(),
            "count".to_string(),
        ]];
        for (vb, row) in hist.counts.iter().enumerate() {
            for (hb, &count) in row.iter().enumerate() {
                rows.push(vec![vb.to_string(), hb.to_string(), count.to_string()]);
            }
        }
        write_csv(&path, &rows)?;
        histogram_paths.push(path);
        summaries.insert(name.to_string(), hist);
    }

    #[derive(Serialize)]
    struct DiagnoseSummary<'a> {
        config: &'a ExperimentConfig,
        images: usize,
        concepts: &'a BTreeMap<String, DecouplingHistogram>,
    }
    let summary_path = dir.join("diagnose_summary.json");
    write_json(
        &summary_path,
        &DiagnoseSummary {
            config,
            images: data.len(),
            concepts: &summaries,
        },
    )?;

    println!(
        "diagnose: wrote {} histograms to {}",
        histogram_paths.len(),
        dir.display()
    );
    Ok(DiagnoseOutputs {
        histogram_paths,
        summary_path,
    })
}

/// Run randomized gradient checks over the mode grid; returns the worst
/// relative error observed.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<f64> {
    let trunk_layers: Vec<usize> = if args.trunk.trim().is_empty() {
        vec![]
    } else {
        args.trunk
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad trunk dim '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let worst = crate::trainer::run_gradcheck_suite(
        args.concepts,
        args.dim,
        &trunk_layers,
        args.regions,
        args.instances,
        args.step,
        args.seed,
        args.corrupt,
        |line| println!("{line}"),
    )?;
    println!("max relative error {worst:e}");
    Ok(worst)
}
