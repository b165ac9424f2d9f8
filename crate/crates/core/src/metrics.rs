//! Evaluation stack: average precision / mAP, precision at human recall,
//! reporting-bias measurement, synonym-group merging and the
//! presence-vs-mention decoupling histogram.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// One concept's ranked evaluation data: aligned image ids, model scores
/// and binary ground truth.
#[derive(Clone, Debug)]
pub struct ConceptScores {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ConceptScores {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.scores.len() || self.ids.len() != self.labels.len() {
            return Err(Error::Dimension(
                "ids, scores and labels must align".into(),
            ));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        Ok(())
    }

    /// Indices sorted by descending score, ties by ascending image id.
    fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(self.ids[a].cmp(&self.ids[b]))
        });
        order
    }
}

/// Mean over positives of the precision at each positive's rank (no
/// multi-point interpolation). Ties rank by ascending image id, which
/// makes the value deterministic rather than an average over tie orders.
/// `None` when the concept has no positive ground truth.
pub fn average_precision(concept: &ConceptScores) -> Result<Option<f64>> {
    concept.validate()?;
    let positives = concept.labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in concept.ranking().iter().enumerate() {
        if concept.labels[idx] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanAp {
    /// Unweighted mean over concepts with defined AP.
    pub overall: f64,
    pub defined: usize,
    pub excluded: usize,
    pub per_group: BTreeMap<String, f64>,
}

/// Aggregate per-concept APs, optionally grouped by a tag per concept.
pub fn mean_ap(aps: &[Option<f64>], groups: Option<&[Option<String>]>) -> Result<MeanAp> {
    if let Some(groups) = groups {
        if groups.len() != aps.len() {
            return Err(Error::Dimension("group tags must align with APs".into()));
        }
    }
    let defined: Vec<(usize, f64)> = aps
        .iter()
        .enumerate()
        .filter_map(|(i, ap)| ap.map(|v| (i, v)))
        .collect();
    if defined.is_empty() {
        return Err(Error::InvalidInput(
            "every concept's AP is undefined".into(),
        ));
    }
    let overall = defined.iter().map(|(_, v)| v).sum::<f64>() / defined.len() as f64;
    let mut per_group = BTreeMap::new();
    if let Some(groups) = groups {
        let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for &(i, v) in &defined {
            if let Some(tag) = &groups[i] {
                let entry = sums.entry(tag.as_str()).or_insert((0.0, 0));
                entry.0 += v;
                entry.1 += 1;
            }
        }
        for (tag, (sum, count)) in sums {
            per_group.insert(tag.to_string(), sum / count as f64);
        }
    }
    Ok(MeanAp {
        overall,
        defined: defined.len(),
        excluded: aps.len() - defined.len(),
        per_group,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhrEstimate {
    /// Leave-one-out per-annotator recall.
    pub human_recall: f64,
    /// Model precision at that recall on its PR curve.
    pub precision: f64,
    pub eligible_pairs: usize,
}

/// Precision at human recall for one concept.
///
/// `mentions[i]` holds the `k` per-reference mention flags for image `i`;
/// ground truth is their union. Human recall is estimated leave-one-out:
/// over held-out reference indices `t`, an image is eligible if any of
/// the other references mentions the concept, and a hit if reference `t`
/// does. Model precision is read off the PR curve at the smallest
/// threshold whose recall reaches the human recall, interpolating
/// linearly in recall between adjacent curve points.
pub fn precision_at_human_recall(
    ids: &[u64],
    scores: &[f64],
    mentions: &[Vec<bool>],
) -> Result<Option<PhrEstimate>> {
    if ids.len() != scores.len() || ids.len() != mentions.len() {
        return Err(Error::Dimension(
            "ids, scores and mentions must align".into(),
        ));
    }
    let Some(k) = mentions.first().map(Vec::len) else {
        return Ok(None);
    };
    if k < 2 {
        return Err(Error::InvalidInput(
            "precision at human recall needs k >= 2 references".into(),
        ));
    }
    if mentions.iter().any(|m| m.len() != k) {
        return Err(Error::Dimension("reference counts differ per image".into()));
    }

    let mut eligible = 0usize;
    let mut hits = 0usize;
    for m in mentions {
        let total = m.iter().filter(|&&b| b).count();
        for t in 0..k {
            let others = total - usize::from(m[t]);
            if others > 0 {
                eligible += 1;
                hits += usize::from(m[t]);
            }
        }
    }
    if eligible == 0 {
        return Ok(None);
    }
    let human_recall = hits as f64 / eligible as f64;

    let concept = ConceptScores {
        ids: ids.to_vec(),
        scores: scores.to_vec(),
        labels: mentions.iter().map(|m| m.iter().any(|&b| b)).collect(),
    };
    concept.validate()?;
    let positives = concept.labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }

    // PR curve points from the rank sweep, starting at (recall 0,
    // precision 1).
    let mut prev = (0.0f64, 1.0f64);
    let mut tp = 0usize;
    for (rank0, &idx) in concept.ranking().iter().enumerate() {
        tp += usize::from(concept.labels[idx]);
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (rank0 + 1) as f64;
        if recall >= human_recall {
            let p = if recall > prev.0 {
                prev.1 + (precision - prev.1) * (human_recall - prev.0) / (recall - prev.0)
            } else {
                precision
            };
            return Ok(Some(PhrEstimate {
                human_recall,
                precision: p,
                eligible_pairs: eligible,
            }));
        }
        prev = (recall, precision);
    }
    // recall reaches 1.0 at the last rank, and human_recall <= 1.
    unreachable!("recall sweep must reach human recall");
}

#[derive(Clone, Debug, Serialize)]
pub struct QuartileBias {
    pub probability: Option<f64>,
    pub support: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasEstimate {
    /// `P(label = 0 | present)`; `None` without present examples.
    pub probability: Option<f64>,
    pub support: usize,
    /// Per covariate-quartile estimates (quartiles of the covariate among
    /// present examples), when a covariate is supplied.
    pub quartiles: Option<Vec<QuartileBias>>,
}

/// Count-based reporting-bias estimate for one concept: how often the
/// concept is present but unlabeled.
pub fn reporting_bias(
    labels: &[bool],
    presence: &[bool],
    covariate: Option<&[f64]>,
) -> Result<BiasEstimate> {
    if labels.len() != presence.len() {
        return Err(Error::Dimension("labels and presence must align".into()));
    }
    if let Some(cov) = covariate {
        if cov.len() != labels.len() {
            return Err(Error::Dimension("covariate must align with labels".into()));
        }
        if cov.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("covariate must be finite".into()));
        }
    }
    let present: Vec<usize> = (0..labels.len()).filter(|&i| presence[i]).collect();
    let support = present.len();
    if support == 0 {
        return Ok(BiasEstimate {
            probability: None,
            support: 0,
            quartiles: covariate.map(|_| {
                (0..4)
                    .map(|_| QuartileBias {
                        probability: None,
                        support: 0,
                    })
                    .collect()
            }),
        });
    }
    let missed = present.iter().filter(|&&i| !labels[i]).count();
    let probability = Some(missed as f64 / support as f64);

    let quartiles = covariate.map(|cov| {
        let mut order: Vec<usize> = present.clone();
        order.sort_by(|&a, &b| cov[a].total_cmp(&cov[b]).then(a.cmp(&b)));
        let n = order.len();
        (0..4)
            .map(|q| {
                let lo = n * q / 4;
                let hi = n * (q + 1) / 4;
                let bucket = &order[lo..hi];
                let miss = bucket.iter().filter(|&&i| !labels[i]).count();
                QuartileBias {
                    probability: (!bucket.is_empty())
                        .then(|| miss as f64 / bucket.len() as f64),
                    support: bucket.len(),
                }
            })
            .collect()
    });

    Ok(BiasEstimate {
        probability,
        support,
        quartiles,
    })
}

/// Merged evaluation data: grouped concepts collapse to the max of their
/// members' scores (and the union of their ground truths); ungrouped
/// concepts pass through. Output order: ungrouped concepts in original
/// order, then groups by name.
#[derive(Clone, Debug)]
pub struct MergedScores {
    pub names: Vec<String>,
    pub concepts: Vec<ConceptScores>,
}

pub fn merge_concepts(
    per_concept: &[ConceptScores],
    names: &[String],
    groups: &BTreeMap<String, Vec<usize>>,
) -> Result<MergedScores> {
    if per_concept.len() != names.len() {
        return Err(Error::Dimension("scores and names must align".into()));
    }
    let mut grouped = vec![false; per_concept.len()];
    for (group, members) in groups {
        if members.is_empty() {
            return Err(Error::Config(format!("merge group '{group}' is empty")));
        }
        for &m in members {
            if m >= per_concept.len() {
                return Err(Error::Config(format!(
                    "merge group '{group}' references concept {m} out of range"
                )));
            }
            if grouped[m] {
                return Err(Error::Config(format!(
                    "concept {m} appears in more than one merge group"
                )));
            }
            grouped[m] = true;
        }
    }

    let mut out_names = Vec::new();
    let mut out_concepts = Vec::new();
    for (i, concept) in per_concept.iter().enumerate() {
        concept.validate()?;
        if !grouped[i] {
            out_names.push(names[i].clone());
            out_concepts.push(concept.clone());
        }
    }
    for (group, members) in groups {
        let first = &per_concept[members[0]];
        let n = first.ids.len();
        let mut scores = vec![f64::NEG_INFINITY; n];
        let mut labels = vec![false; n];
        for &m in members {
            let c = &per_concept[m];
            if c.ids != first.ids {
                return Err(Error::InvalidInput(
                    "merge members must cover the same images in the same order".into(),
                ));
            }
            for j in 0..n {
                scores[j] = scores[j].max(c.scores[j]);
                labels[j] = labels[j] || c.labels[j];
            }
        }
        out_names.push(group.clone());
        out_concepts.push(ConceptScores {
            ids: first.ids.clone(),
            scores,
            labels,
        });
    }
    Ok(MergedScores {
        names: out_names,
        concepts: out_concepts,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QuantileRepresentative {
    pub h_lo: f64,
    pub h_hi: f64,
    /// Image whose mention score is closest to the quantile midpoint
    /// (ties broken by smallest id).
    pub image_id: u64,
    pub mention: f64,
    pub presence: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecouplingHistogram {
    pub bins: usize,
    /// `counts[v_bin][h_bin]` over the unit square.
    pub counts: Vec<Vec<u32>>,
    pub threshold: f64,
    /// Images with presence score at or above the threshold.
    pub eligible: usize,
    pub representatives: Vec<QuantileRepresentative>,
    /// Set when fewer eligible images than requested quantiles exist.
    pub truncated: bool,
}

pub const DEFAULT_HISTOGRAM_THRESHOLD: f64 = 0.8;
pub const DEFAULT_HISTOGRAM_QUANTILES: usize = 4;

/// 2D histogram of (presence, mention) scores plus one representative
/// image per mention-quantile among confidently-present images.
pub fn decoupling_histogram(
    ids: &[u64],
    presence: &[f64],
    mention: &[f64],
    bins: usize,
    threshold: f64,
    quantiles: usize,
) -> Result<DecouplingHistogram> {
    if ids.len() != presence.len() || ids.len() != mention.len() {
        return Err(Error::Dimension(
            "ids, presence and mention must align".into(),
        ));
    }
    if bins == 0 || quantiles == 0 {
        return Err(Error::Config("bins and quantiles must be >= 1".into()));
    }
    if presence
        .iter()
        .chain(mention)
        .any(|p| !(0.0..=1.0).contains(p))
    {
        return Err(Error::InvalidInput(
            "scores must be probabilities in [0, 1]".into(),
        ));
    }

    let bin_of = |p: f64| ((p * bins as f64) as usize).min(bins - 1);
    let mut counts = vec![vec![0u32; bins]; bins];
    for i in 0..ids.len() {
        counts[bin_of(presence[i])][bin_of(mention[i])] += 1;
    }

    let mut eligible: Vec<usize> = (0..ids.len()).filter(|&i| presence[i] >= threshold).collect();
    eligible.sort_by(|&a, &b| mention[a].total_cmp(&mention[b]).then(ids[a].cmp(&ids[b])));

    let n = eligible.len();
    let q = quantiles.min(n);
    let truncated = n < quantiles;
    let mut representatives = Vec::with_capacity(q);
    if q > 0 {
        let base = n / q;
        let rem = n % q;
        let mut start = 0;
        for group in 0..q {
            let len = base + usize::from(group < rem);
            let slice = &eligible[start..start + len];
            start += len;
            let h_lo = mention[slice[0]];
            let h_hi = mention[slice[len - 1]];
            let mid = 0.5 * (h_lo + h_hi);
            let mut best = slice[0];
            for &i in slice {
                let d = (mention[i] - mid).abs();
                let best_d = (mention[best] - mid).abs();
                if d < best_d || (d == best_d && ids[i] < ids[best]) {
                    best = i;
                }
            }
            representatives.push(QuantileRepresentative {
                h_lo,
                h_hi,
                image_id: ids[best],
                mention: mention[best],
                presence: presence[best],
            });
        }
    }

    Ok(DecouplingHistogram {
        bins,
        counts,
        threshold,
        eligible: n,
        representatives,
        truncated,
    })
}
