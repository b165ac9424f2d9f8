//! Acceptance suite: runs every shipping criterion at its stated
//! tolerance, printing one pass/fail line per criterion
//! (`cargo test --test acceptance -- --nocapture` to see them live).

use std::time::Instant;

use reportbias::baselines::{build_baseline, AnyModel, BaselineKind};
use reportbias::cli::{cmd_eval, cmd_gen, cmd_train};
use reportbias::config::ExperimentConfig;
use reportbias::corpus::Corpus;
use reportbias::features::Features;
use reportbias::metrics::{
    average_precision, mean_ap, precision_at_human_recall, reporting_bias, ConceptScores,
};
use reportbias::model::{
    marginalize, model_forward, noisy_or, relevance_forward, ModelDims, ModelParams,
    RelevanceHead,
};
use reportbias::rng::DetRng;
use reportbias::synthgen::{
    bayes_presence_model, sample_train_test, GeneratorSpec, OmissionMode,
};
use reportbias::trainer::{run_gradcheck_suite, train, TrainConfig};

/// Regression bound for the decoupling gap, frozen from a ten-seed
/// calibration pilot (observed mean +0.0756, min +0.0691).
const DECOUPLING_MARGIN: f64 = 0.03;

/// Training configuration used by the multi-seed criteria, from the same
/// pilot. Library defaults undertrain at this corpus scale.
fn calibrated_training(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 12,
        warmup_epochs: Some(3),
        learning_rate: 0.1,
        weight_decay: 3e-3,
        seed,
        ..TrainConfig::default()
    }
}

type Outcome = Result<String, String>;

#[test]
fn acceptance() {
    let suite_start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("[PASS] criterion {name}: {detail}"),
        Err(why) => {
            println!("[FAIL] criterion {name}: {why}");
            failures.push(format!("criterion {name}: {why}"));
        }
    };

    check("1 (gradient correctness)", criterion1());
    check("2 (marginalization oracle)", criterion2());
    check("3 (identity collapse)", criterion3());

    let multi = MultiSeed::run();
    check("4 (decoupling recovery)", criterion4(&multi));
    check("5 (conditioning ablation)", criterion5(&multi));
    check("6 (mention/presence specialization)", criterion6(&multi));

    check("7 (reporting-bias estimator)", criterion7());
    check("8 (metric oracles)", criterion8());
    check("9 (byte determinism)", criterion9());

    let elapsed = suite_start.elapsed().as_secs_f64();
    check(
        "10 (suite runtime)",
        if elapsed < 600.0 {
            Ok(format!("criteria 1-9 completed in {elapsed:.1}s (< 600s)"))
        } else {
            Err(format!("suite took {elapsed:.1}s (>= 600s)"))
        },
    );

    assert!(
        failures.is_empty(),
        "{} criterion(s) failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

/// >= 20 randomized instances over the mode grid (single/bag,
/// conditioned/unconditioned, identity freezing, multihead, with and
/// without trunk), max relative error < 1e-5, under 30 seconds.
fn criterion1() -> Outcome {
    let start = Instant::now();
    let worst = run_gradcheck_suite(3, 5, &[4], 3, 24, 1e-4, 1000, false, |_| {})
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if worst >= 1e-5 {
        return Err(format!("max relative error {worst:e} >= 1e-5"));
    }
    if secs >= 30.0 {
        return Err(format!("gradcheck took {secs:.1}s (>= 30s)"));
    }
    Ok(format!(
        "24 instances, max relative error {worst:.2e} in {secs:.2}s"
    ))
}

/// Fused marginalization equals brute-force enumeration over both
/// presence outcomes, exactly, on 10^4 random relevance/presence draws.
fn criterion2() -> Outcome {
    let mut rng = DetRng::new(2002);
    for i in 0..10_000 {
        let mut head = RelevanceHead::zeros(1, 1);
        for b in head.bias.iter_mut() {
            *b = rng.uniform(-6.0, 6.0);
        }
        let rels = relevance_forward(&[0.0], &head, false, false).map_err(|e| e.to_string())?;
        let (_, cond) = rels[0];
        let presence = rng.next_f64();

        let fused = marginalize(presence, &cond);
        let prob_z = [1.0 - presence, presence];
        let mut enumerated = 0.0;
        for z in 0..2 {
            enumerated += cond.p[1][z] * prob_z[z];
        }
        if fused.to_bits() != enumerated.to_bits() {
            return Err(format!(
                "draw {i}: fused {fused:e} != enumerated {enumerated:e}"
            ));
        }
    }
    Ok("fused output bit-equal to the two-outcome enumeration on 10000 draws".into())
}

/// Identity relevance collapses mention to presence on all inputs, and
/// latent training with warmup covering every epoch reproduces naive
/// training step for step.
fn criterion3() -> Outcome {
    // Forward collapse.
    let dims = ModelDims {
        concepts: 4,
        input_dim: 6,
        trunk_layers: vec![5],
    };
    let params = ModelParams::init(&dims, 33)
        .map_err(|e| e.to_string())?
        .with_identity_relevance(true);
    let mut rng = DetRng::new(303);
    for _ in 0..1000 {
        let f = Features::single((0..6).map(|_| rng.normal()).collect())
            .map_err(|e| e.to_string())?;
        for pred in model_forward(&f, &params).map_err(|e| e.to_string())? {
            if (pred.mention - pred.presence).abs() > 1e-12 {
                return Err(format!(
                    "mention {} != presence {} under identity relevance",
                    pred.mention, pred.presence
                ));
            }
        }
    }

    // Training equivalence.
    let spec = GeneratorSpec {
        concepts: 5,
        feature_dim: 8,
        train_size: 400,
        test_size: 0,
        references: 3,
        ..GeneratorSpec::coco_like()
    };
    let gen = spec.build().map_err(|e| e.to_string())?;
    let (corpus, _) = sample_train_test(&gen, 77, 400, 0).map_err(|e| e.to_string())?;
    let d = ModelDims {
        concepts: 5,
        input_dim: 8,
        trunk_layers: vec![],
    };
    let cfg_latent = TrainConfig {
        epochs: 4,
        warmup_epochs: Some(4),
        seed: 9,
        ..TrainConfig::default()
    };
    let cfg_naive = TrainConfig {
        epochs: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let latent = AnyModel::Latent(ModelParams::init(&d, 21).map_err(|e| e.to_string())?);
    let naive = build_baseline(BaselineKind::Naive, &d, 21).map_err(|e| e.to_string())?;
    let (latent, log_l) = train(&corpus, latent, &cfg_latent).map_err(|e| e.to_string())?;
    let (naive, log_n) = train(&corpus, naive, &cfg_naive).map_err(|e| e.to_string())?;
    if log_l.step_losses.len() != log_n.step_losses.len() {
        return Err("step counts differ".into());
    }
    let max_step_diff = log_l
        .step_losses
        .iter()
        .zip(&log_n.step_losses)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if max_step_diff > 1e-12 {
        return Err(format!("step losses diverge by {max_step_diff:e}"));
    }
    if latent.to_vec() != naive.to_vec() {
        return Err("final parameters differ bitwise".into());
    }
    Ok(format!(
        "mention==presence on 1000 inputs; {} training steps identical (max diff {max_step_diff:e})",
        log_l.step_losses.len()
    ))
}

struct SeedOutcome {
    latent_map_mention_labels: f64,
    latent_map_presence_labels: f64,
    latent_map_presence_truth: f64,
    latent_map_mention_truth: f64,
    naive_map_truth: f64,
    uncond_map_mention_labels: f64,
    seconds: f64,
}

struct MultiSeed {
    image_dependent: Vec<SeedOutcome>,
    constant_cond: Vec<f64>,
    constant_uncond: Vec<f64>,
}

fn map_of(scores: &[Vec<f64>], labels: &[Vec<bool>], ids: &[u64]) -> Result<f64, String> {
    let aps = (0..scores.len())
        .map(|c| {
            average_precision(&ConceptScores {
                ids: ids.to_vec(),
                scores: scores[c].clone(),
                labels: labels[c].clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(mean_ap(&aps, None).map_err(|e| e.to_string())?.overall)
}

fn score_all(model: &AnyModel, corpus: &Corpus) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), String> {
    let w = corpus.concepts();
    let mut v = vec![Vec::with_capacity(corpus.len()); w];
    let mut h = vec![Vec::with_capacity(corpus.len()); w];
    for ex in &corpus.examples {
        let (pv, ph) = model.predict(&ex.features).map_err(|e| e.to_string())?;
        for c in 0..w {
            v[c].push(pv[c]);
            h[c].push(ph[c]);
        }
    }
    Ok((v, h))
}

fn label_table(corpus: &Corpus, truth: bool) -> Vec<Vec<bool>> {
    let w = corpus.concepts();
    (0..w)
        .map(|c| {
            corpus
                .examples
                .iter()
                .map(|e| {
                    if truth {
                        e.true_presence.as_ref().unwrap()[c]
                    } else {
                        e.labels[c]
                    }
                })
                .collect()
        })
        .collect()
}

impl MultiSeed {
    /// Ten seeds of the default preset: train the latent model, the naive
    /// baseline and the unconditioned-relevance variant, then evaluate on
    /// the held-out split. A second arm repeats the conditioned vs
    /// unconditioned comparison on constant-bias corpora.
    fn run() -> MultiSeed {
        let spec = GeneratorSpec::coco_like();
        let gen = spec.build().expect("preset builds");
        let dims = ModelDims {
            concepts: spec.concepts,
            input_dim: spec.feature_dim,
            trunk_layers: vec![],
        };

        let mut image_dependent = Vec::with_capacity(10);
        for seed in 0..10u64 {
            let start = Instant::now();
            let master = ExperimentConfig {
                seed,
                ..Default::default()
            };
            let (train_c, test_c) = sample_train_test(
                &gen,
                master.sampling_seed(),
                spec.train_size,
                spec.test_size,
            )
            .expect("sampling");
            let tc = calibrated_training(master.training_seed());
            let init_seed = master.init_seed();

            let latent = AnyModel::Latent(ModelParams::init(&dims, init_seed).unwrap());
            let (latent, _) = train(&train_c, latent, &tc).expect("latent training");
            let naive = build_baseline(BaselineKind::Naive, &dims, init_seed).unwrap();
            let (naive, _) = train(&train_c, naive, &tc).expect("naive training");
            let uncond =
                build_baseline(BaselineKind::UnconditionedRelevance, &dims, init_seed).unwrap();
            let (uncond, _) = train(&train_c, uncond, &tc).expect("unconditioned training");

            let ids: Vec<u64> = test_c.examples.iter().map(|e| e.id).collect();
            let labels = label_table(&test_c, false);
            let truth = label_table(&test_c, true);

            let (lv, lh) = score_all(&latent, &test_c).unwrap();
            let (nv, _) = score_all(&naive, &test_c).unwrap();
            let (_, uh) = score_all(&uncond, &test_c).unwrap();

            image_dependent.push(SeedOutcome {
                latent_map_mention_labels: map_of(&lh, &labels, &ids).unwrap(),
                latent_map_presence_labels: map_of(&lv, &labels, &ids).unwrap(),
                latent_map_presence_truth: map_of(&lv, &truth, &ids).unwrap(),
                latent_map_mention_truth: map_of(&lh, &truth, &ids).unwrap(),
                naive_map_truth: map_of(&nv, &truth, &ids).unwrap(),
                uncond_map_mention_labels: map_of(&uh, &labels, &ids).unwrap(),
                seconds: start.elapsed().as_secs_f64(),
            });
        }

        let const_spec = GeneratorSpec::constant_bias();
        let const_gen = const_spec.build().expect("constant preset builds");
        let mut constant_cond = Vec::with_capacity(10);
        let mut constant_uncond = Vec::with_capacity(10);
        for seed in 0..10u64 {
            let master = ExperimentConfig {
                seed,
                ..Default::default()
            };
            let (train_c, test_c) = sample_train_test(
                &const_gen,
                master.sampling_seed(),
                const_spec.train_size,
                const_spec.test_size,
            )
            .expect("sampling");
            let tc = calibrated_training(master.training_seed());
            let init_seed = master.init_seed();
            let latent = AnyModel::Latent(ModelParams::init(&dims, init_seed).unwrap());
            let (latent, _) = train(&train_c, latent, &tc).expect("latent training");
            let uncond =
                build_baseline(BaselineKind::UnconditionedRelevance, &dims, init_seed).unwrap();
            let (uncond, _) = train(&train_c, uncond, &tc).expect("unconditioned training");

            let ids: Vec<u64> = test_c.examples.iter().map(|e| e.id).collect();
            let labels = label_table(&test_c, false);
            let (_, lh) = score_all(&latent, &test_c).unwrap();
            let (_, uh) = score_all(&uncond, &test_c).unwrap();
            constant_cond.push(map_of(&lh, &labels, &ids).unwrap());
            constant_uncond.push(map_of(&uh, &labels, &ids).unwrap());
        }

        MultiSeed {
            image_dependent,
            constant_cond,
            constant_uncond,
        }
    }
}

/// The latent model's presence scores rank true presence better than the
/// naive baseline's direct predictions: positive gap in >= 9/10 seeds and
/// mean gap at or above the frozen pilot margin; under 3 minutes a seed.
fn criterion4(multi: &MultiSeed) -> Outcome {
    let gaps: Vec<f64> = multi
        .image_dependent
        .iter()
        .map(|s| s.latent_map_presence_truth - s.naive_map_truth)
        .collect();
    let positive = gaps.iter().filter(|&&g| g > 0.0).count();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let slowest = multi
        .image_dependent
        .iter()
        .map(|s| s.seconds)
        .fold(0.0f64, f64::max);
    if positive < 9 {
        return Err(format!("gap positive in only {positive}/10 seeds ({gaps:.4?})"));
    }
    if mean < DECOUPLING_MARGIN {
        return Err(format!(
            "mean gap {mean:.4} below frozen margin {DECOUPLING_MARGIN}"
        ));
    }
    if slowest >= 180.0 {
        return Err(format!("slowest seed took {slowest:.1}s (>= 180s)"));
    }
    Ok(format!(
        "gap positive {positive}/10, mean {mean:+.4} (margin {DECOUPLING_MARGIN}), slowest seed {slowest:.1}s"
    ))
}

/// Image-conditioned relevance beats the input-independent variant on
/// image-dependent corpora (>= 9/10 seeds); on constant-bias corpora the
/// two agree within the across-seed standard deviation.
fn criterion5(multi: &MultiSeed) -> Outcome {
    let gaps: Vec<f64> = multi
        .image_dependent
        .iter()
        .map(|s| s.latent_map_mention_labels - s.uncond_map_mention_labels)
        .collect();
    let positive = gaps.iter().filter(|&&g| g > 0.0).count();
    if positive < 9 {
        return Err(format!(
            "conditioned better in only {positive}/10 seeds ({gaps:.4?})"
        ));
    }

    let stats = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (mean, var.sqrt())
    };
    let (mean_cond, std_cond) = stats(&multi.constant_cond);
    let (mean_uncond, std_uncond) = stats(&multi.constant_uncond);
    let diff = (mean_cond - mean_uncond).abs();
    let band = std_cond.max(std_uncond);
    if diff > band {
        return Err(format!(
            "constant-bias disagreement {diff:.4} exceeds across-seed std {band:.4}"
        ));
    }
    Ok(format!(
        "image-dependent: conditioned better {positive}/10 (mean gap {:+.4}); constant-bias: |diff| {diff:.4} <= std {band:.4}",
        gaps.iter().sum::<f64>() / gaps.len() as f64
    ))
}

/// On every seed, mention scores predict labels at least as well as
/// presence scores, and presence scores predict truth at least as well
/// as mention scores.
fn criterion6(multi: &MultiSeed) -> Outcome {
    for (seed, s) in multi.image_dependent.iter().enumerate() {
        let label_gap = s.latent_map_mention_labels - s.latent_map_presence_labels;
        let truth_gap = s.latent_map_presence_truth - s.latent_map_mention_truth;
        if label_gap < -1e-12 {
            return Err(format!(
                "seed {seed}: mention-vs-labels {:.4} < presence-vs-labels {:.4}",
                s.latent_map_mention_labels, s.latent_map_presence_labels
            ));
        }
        if truth_gap < -1e-12 {
            return Err(format!(
                "seed {seed}: presence-vs-truth {:.4} < mention-vs-truth {:.4}",
                s.latent_map_presence_truth, s.latent_map_mention_truth
            ));
        }
    }
    let min_label_gap = multi
        .image_dependent
        .iter()
        .map(|s| s.latent_map_mention_labels - s.latent_map_presence_labels)
        .fold(f64::INFINITY, f64::min);
    let min_truth_gap = multi
        .image_dependent
        .iter()
        .map(|s| s.latent_map_presence_truth - s.latent_map_mention_truth)
        .fold(f64::INFINITY, f64::min);
    Ok(format!(
        "both orderings hold on all 10 seeds (min gaps {min_label_gap:+.4} / {min_truth_gap:+.4})"
    ))
}

/// Measured omission probability matches the generator's configured
/// single-reference omission within +-0.02 at n = 10000, k = 1.
fn criterion7() -> Outcome {
    let spec = GeneratorSpec {
        concepts: 6,
        feature_dim: 8,
        train_size: 10_000,
        test_size: 0,
        references: 1,
        omission: OmissionMode::Constant,
        mention_lo: 0.6,
        mention_hi: 0.6,
        prior_lo: 0.45,
        prior_hi: 0.55,
        ..GeneratorSpec::coco_like()
    };
    let gen = spec.build().map_err(|e| e.to_string())?;
    let (corpus, _) = sample_train_test(&gen, 12, 10_000, 0).map_err(|e| e.to_string())?;
    let truth = label_table(&corpus, true);
    let labels = label_table(&corpus, false); // k = 1: union == the single reference
    let mut worst = 0.0f64;
    for c in 0..corpus.concepts() {
        let est = reporting_bias(&labels[c], &truth[c], None).map_err(|e| e.to_string())?;
        let measured = est
            .probability
            .ok_or_else(|| format!("concept {c} has no present examples"))?;
        let dev = (measured - 0.4f64).abs();
        worst = worst.max(dev);
        if dev > 0.02 {
            return Err(format!(
                "concept {c}: measured omission {measured:.4} deviates {dev:.4} from configured 0.4 (support {})",
                est.support
            ));
        }
    }
    Ok(format!(
        "6 concepts within +-0.02 of configured 0.4 (worst deviation {worst:.4})"
    ))
}

/// Metric oracles: the hand-worked AP example, a brute-force PR oracle on
/// 100 random instances, the exact noisy-OR product and a Monte Carlo
/// replay of the leave-one-out human-recall estimator.
fn criterion8() -> Outcome {
    // Hand-worked AP example.
    let worked = ConceptScores {
        ids: vec![0, 1, 2, 3],
        scores: vec![0.9, 0.8, 0.7, 0.6],
        labels: vec![true, false, true, true],
    };
    let ap = average_precision(&worked)
        .map_err(|e| e.to_string())?
        .ok_or("worked example undefined")?;
    let expect = (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0;
    if (ap - expect).abs() > 1e-12 {
        return Err(format!("worked AP {ap} != {expect}"));
    }

    // Brute-force oracle on random instances: precision over everything
    // ranked at or above each positive, counted directly.
    let mut rng = DetRng::new(881);
    for i in 0..100 {
        let n = 2 + rng.below(50);
        let c = ConceptScores {
            ids: (0..n as u64).collect(),
            scores: (0..n).map(|_| (rng.below(12) as f64) / 12.0).collect(),
            labels: (0..n).map(|_| rng.bernoulli(0.4)).collect(),
        };
        let got = average_precision(&c).map_err(|e| e.to_string())?;
        let positives: Vec<usize> = (0..n).filter(|&j| c.labels[j]).collect();
        let oracle = if positives.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for &p in &positives {
                let at_or_above = |j: usize| {
                    c.scores[j] > c.scores[p]
                        || (c.scores[j] == c.scores[p] && c.ids[j] <= c.ids[p])
                };
                let total = (0..n).filter(|&j| at_or_above(j)).count();
                let pos = positives.iter().filter(|&&j| at_or_above(j)).count();
                sum += pos as f64 / total as f64;
            }
            Some(sum / positives.len() as f64)
        };
        match (got, oracle) {
            (None, None) => {}
            (Some(a), Some(b)) if (a - b).abs() <= 1e-12 => {}
            other => return Err(format!("instance {i}: AP mismatch {other:?}")),
        }
    }

    // Noisy-OR equals the direct product expression exactly.
    let got = noisy_or(&[0.2, 0.3, 0.4]).map_err(|e| e.to_string())?;
    let product: f64 = 1.0 - (1.0 - 0.2) * (1.0 - 0.3) * (1.0 - 0.4);
    if got.to_bits() != product.to_bits() {
        return Err(format!("noisy-or {got:e} != product {product:e}"));
    }

    // Human-recall estimator vs an independent Monte Carlo replay of the
    // same leave-one-out procedure on fresh draws from the same process.
    let q = 0.55;
    let k = 5;
    let spec = GeneratorSpec {
        concepts: 4,
        feature_dim: 8,
        train_size: 10_000,
        test_size: 0,
        references: k,
        omission: OmissionMode::Constant,
        mention_lo: q,
        mention_hi: q,
        prior_lo: 0.5,
        prior_hi: 0.5,
        ..GeneratorSpec::coco_like()
    };
    let gen = spec.build().map_err(|e| e.to_string())?;
    let (corpus, _) = sample_train_test(&gen, 41, 10_000, 0).map_err(|e| e.to_string())?;
    let ids: Vec<u64> = corpus.examples.iter().map(|e| e.id).collect();

    // Monte Carlo oracle: fresh present-image reference draws, same
    // counting rule.
    let mut mc_rng = DetRng::new(4242);
    let (mut mc_eligible, mut mc_hits) = (0usize, 0usize);
    for _ in 0..10_000 {
        let refs: Vec<bool> = (0..k).map(|_| mc_rng.bernoulli(q)).collect();
        let total = refs.iter().filter(|&&b| b).count();
        for t in 0..k {
            if total - usize::from(refs[t]) > 0 {
                mc_eligible += 1;
                mc_hits += usize::from(refs[t]);
            }
        }
    }
    let mc_recall = mc_hits as f64 / mc_eligible as f64;

    let mut worst = 0.0f64;
    for c in 0..corpus.concepts() {
        let mentions: Vec<Vec<bool>> = corpus
            .examples
            .iter()
            .map(|e| e.references.iter().map(|r| r[c]).collect())
            .collect();
        let scores: Vec<f64> = corpus
            .examples
            .iter()
            .map(|e| if e.labels[c] { 1.0 } else { 0.0 })
            .collect();
        let phr = precision_at_human_recall(&ids, &scores, &mentions)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("concept {c} PHR undefined"))?;
        let dev = (phr.human_recall - mc_recall).abs();
        worst = worst.max(dev);
        if dev > 0.02 {
            return Err(format!(
                "concept {c}: human recall {:.4} vs Monte Carlo {mc_recall:.4} (diff {dev:.4})",
                phr.human_recall
            ));
        }
        // Perfect union scores reach precision 1 at any recall.
        if (phr.precision - 1.0).abs() > 1e-12 {
            return Err(format!("oracle scores gave precision {}", phr.precision));
        }
    }
    Ok(format!(
        "AP worked example + 100 brute-force instances, exact noisy-OR, human recall within {worst:.4} of Monte Carlo"
    ))
}

/// gen + train + eval rerun with identical seeds produce byte-identical
/// corpus, checkpoint and report files.
fn criterion9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = ExperimentConfig::default();
    config.seed = 5;
    config.training = calibrated_training(0);
    config.training.seed = 0; // derive from master
    config.paths.out_dir = dir.path().to_path_buf();

    let run_once = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let gen = cmd_gen(&config, None).map_err(|e| e.to_string())?;
        // Default preset: header line plus 10000 / 2000 records.
        for (path, expect) in [(&gen.train_path, 10_001), (&gen.test_path, 2_001)] {
            let lines = std::fs::read_to_string(path)
                .map_err(|e| e.to_string())?
                .lines()
                .count();
            if lines != expect {
                return Err(format!("{} has {lines} lines, expected {expect}", path.display()));
            }
        }
        let trained = cmd_train(&config, None, None).map_err(|e| e.to_string())?;
        let eval = cmd_eval(&config, None, None, None).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for path in [
            &gen.train_path,
            &gen.test_path,
            &gen.bias_path,
            &gen.summary_path,
            &trained.checkpoint_path,
            &eval.per_concept_path,
            &eval.summary_path,
        ] {
            files.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(path).map_err(|e| e.to_string())?,
            ));
        }
        Ok(files)
    };

    let first = run_once()?;
    let second = run_once()?;
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        if name_a != name_b || bytes_a != bytes_b {
            return Err(format!("{name_a} differs between reruns"));
        }
    }
    Ok(format!(
        "{} files byte-identical across reruns (corpora, checkpoint, reports)",
        first.len()
    ))
}

// Keep the analytic reference model honest: its presence ranking should
// dominate a trained model on its own synthetic world. Not a numbered
// criterion; a regression guard for the eval oracle example.
#[test]
fn bayes_reference_dominates_trained_model() {
    let spec = GeneratorSpec::coco_like();
    let gen = spec.build().unwrap();
    let master = ExperimentConfig {
        seed: 0,
        ..Default::default()
    };
    let (train_c, test_c) =
        sample_train_test(&gen, master.sampling_seed(), spec.train_size, spec.test_size).unwrap();
    let dims = ModelDims {
        concepts: spec.concepts,
        input_dim: spec.feature_dim,
        trunk_layers: vec![],
    };
    let tc = calibrated_training(master.training_seed());
    let latent = AnyModel::Latent(ModelParams::init(&dims, master.init_seed()).unwrap());
    let (latent, _) = train(&train_c, latent, &tc).unwrap();
    let bayes = AnyModel::Latent(bayes_presence_model(&gen).unwrap());

    let ids: Vec<u64> = test_c.examples.iter().map(|e| e.id).collect();
    let truth = label_table(&test_c, true);
    let (lv, _) = score_all(&latent, &test_c).unwrap();
    let (bv, _) = score_all(&bayes, &test_c).unwrap();
    let trained_map = map_of(&lv, &truth, &ids).unwrap();
    let bayes_map = map_of(&bv, &truth, &ids).unwrap();
    assert!(
        bayes_map >= trained_map,
        "analytic reference {bayes_map:.4} below trained model {trained_map:.4}"
    );
}
