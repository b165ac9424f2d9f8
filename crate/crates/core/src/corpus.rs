//! Labeled corpora and their JSONL on-disk format.
//!
//! A corpus file is one JSON object per line: a header line carrying the
//! format version, concept vocabulary, feature dimension and reference
//! count, followed by one record per image. Records hold either a single
//! feature vector (`features`) or a bag of region vectors (`regions`),
//! the per-reference concept mentions (`refs`, arrays of concept indices)
//! and optionally the true presence set (`z`). Training labels are the
//! union of the references and are recomputed on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Features;
use crate::vocab::Vocabulary;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One labeled image.
#[derive(Clone, Debug)]
pub struct CorpusExample {
    pub id: u64,
    pub features: Features,
    /// True visual presence per concept, when known (synthetic corpora).
    pub true_presence: Option<Vec<bool>>,
    /// Per-reference mention flags, `k x concepts`.
    pub references: Vec<Vec<bool>>,
    /// Union labels: concept mentioned in at least one reference.
    pub labels: Vec<bool>,
}

pub fn union_labels(references: &[Vec<bool>]) -> Vec<bool> {
    let concepts = references[0].len();
    (0..concepts).map(|w| references.iter().any(|r| r[w])).collect()
}

/// An in-memory corpus: vocabulary, generation metadata and examples.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub feature_dim: usize,
    pub references_per_image: usize,
    /// `Some(r)` when every example is a bag of `r` regions.
    pub regions_per_image: Option<usize>,
    pub split: Split,
    /// Echo of the generator configuration, when synthetic.
    pub generator: Option<serde_json::Value>,
    pub warnings: Vec<String>,
    pub examples: Vec<CorpusExample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn concepts(&self) -> usize {
        self.vocab.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.concepts();
        let k = self.references_per_image;
        if k == 0 {
            return Err(Error::Config("corpus needs at least one reference".into()));
        }
        let mut seen_ids = std::collections::BTreeSet::new();
        for ex in &self.examples {
            if !seen_ids.insert(ex.id) {
                return Err(Error::InvalidInput(format!("duplicate image id {}", ex.id)));
            }
            if ex.features.dim() != self.feature_dim {
                return Err(Error::Dimension(format!(
                    "image {} has feature dim {}, corpus dim {}",
                    ex.id,
                    ex.features.dim(),
                    self.feature_dim
                )));
            }
            match self.regions_per_image {
                Some(r) if ex.features.regions() != r => {
                    return Err(Error::Dimension(format!(
                        "image {} has {} regions, corpus declares {r}",
                        ex.id,
                        ex.features.regions()
                    )));
                }
                None if ex.features.regions() != 1 => {
                    return Err(Error::Dimension(format!(
                        "image {} is a bag in a single-vector corpus",
                        ex.id
                    )));
                }
                _ => {}
            }
            if ex.references.len() != k {
                return Err(Error::InvalidInput(format!(
                    "image {} has {} references, corpus declares {k}",
                    ex.id,
                    ex.references.len()
                )));
            }
            for r in &ex.references {
                if r.len() != w {
                    return Err(Error::Dimension("reference width != concept count".into()));
                }
            }
            if ex.labels.len() != w || ex.labels != union_labels(&ex.references) {
                return Err(Error::InvalidInput(format!(
                    "image {} labels are not the union of its references",
                    ex.id
                )));
            }
            if let Some(z) = &ex.true_presence {
                if z.len() != w {
                    return Err(Error::Dimension("presence width != concept count".into()));
                }
            }
        }
        Ok(())
    }

    pub fn has_true_presence(&self) -> bool {
        self.examples.iter().all(|e| e.true_presence.is_some())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = HeaderLine {
            format_version: CORPUS_FORMAT_VERSION,
            w: self.concepts(),
            d: self.feature_dim,
            k: self.references_per_image,
            concepts: self.vocab.names().to_vec(),
            split: self.split,
            regions_per_image: self.regions_per_image,
            generator: self.generator.clone(),
            warnings: self.warnings.clone(),
        };
        write_line(&mut out, path, &header)?;
        for ex in &self.examples {
            let record = RecordLine {
                id: ex.id,
                features: (self.regions_per_image.is_none())
                    .then(|| ex.features.region(0).to_vec()),
                regions: self.regions_per_image.map(|_| {
                    ex.features
                        .iter_regions()
                        .map(<[f64]>::to_vec)
                        .collect::<Vec<_>>()
                }),
                refs: ex.references.iter().map(|r| indices_of(r)).collect(),
                z: ex.true_presence.as_ref().map(|z| indices_of(z)),
            };
            write_line(&mut out, path, &record)?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Corpus> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let header: HeaderLine = match lines.next() {
            None => {
                return Err(Error::CorpusFormat {
                    line: 1,
                    message: "empty file, expected header line".into(),
                })
            }
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| Error::CorpusFormat {
                    line: 1,
                    message: format!("bad header: {e}"),
                })?
            }
        };
        if header.format_version != CORPUS_FORMAT_VERSION {
            return Err(Error::CorpusFormat {
                line: 1,
                message: format!(
                    "unsupported corpus format version {} (expected {CORPUS_FORMAT_VERSION})",
                    header.format_version
                ),
            });
        }
        if header.concepts.len() != header.w {
            return Err(Error::CorpusFormat {
                line: 1,
                message: format!(
                    "header declares w={} but lists {} concepts",
                    header.w,
                    header.concepts.len()
                ),
            });
        }
        let vocab = Vocabulary::new(header.concepts.clone())?;

        let mut examples = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: RecordLine =
                serde_json::from_str(&line).map_err(|e| Error::CorpusFormat {
                    line: line_no,
                    message: format!("bad record: {e}"),
                })?;
            examples.push(record_to_example(record, &header, line_no)?);
        }

        let corpus = Corpus {
            vocab,
            feature_dim: header.d,
            references_per_image: header.k,
            regions_per_image: header.regions_per_image,
            split: header.split,
            generator: header.generator,
            warnings: header.warnings,
            examples,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

fn indices_of(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter_map(|(i, &on)| on.then_some(i))
        .collect()
}

fn flags_of(indices: &[usize], width: usize, line: usize) -> Result<Vec<bool>> {
    let mut flags = vec![false; width];
    for &i in indices {
        if i >= width {
            return Err(Error::CorpusFormat {
                line,
                message: format!("concept index {i} out of range (w = {width})"),
            });
        }
        flags[i] = true;
    }
    Ok(flags)
}

fn record_to_example(
    record: RecordLine,
    header: &HeaderLine,
    line: usize,
) -> Result<CorpusExample> {
    let features = match (record.features, record.regions) {
        (Some(v), None) => Features::single(v),
        (None, Some(rows)) => Features::bag(rows),
        (Some(_), Some(_)) => {
            return Err(Error::CorpusFormat {
                line,
                message: "record has both 'features' and 'regions'".into(),
            })
        }
        (None, None) => {
            return Err(Error::CorpusFormat {
                line,
                message: "record has neither 'features' nor 'regions'".into(),
            })
        }
    }
    .map_err(|e| Error::CorpusFormat {
        line,
        message: e.to_string(),
    })?;

    if record.refs.len() != header.k {
        return Err(Error::CorpusFormat {
            line,
            message: format!("expected {} references, got {}", header.k, record.refs.len()),
        });
    }
    let references = record
        .refs
        .iter()
        .map(|r| flags_of(r, header.w, line))
        .collect::<Result<Vec<_>>>()?;
    let labels = union_labels(&references);
    let true_presence = record
        .z
        .as_deref()
        .map(|z| flags_of(z, header.w, line))
        .transpose()?;

    Ok(CorpusExample {
        id: record.id,
        features,
        true_presence,
        references,
        labels,
    })
}

fn write_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    out.write_all(json.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format_version: u32,
    w: usize,
    d: usize,
    k: usize,
    concepts: Vec<String>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regions_per_image: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regions: Option<Vec<Vec<f64>>>,
    refs: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<Vec<usize>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Corpus {
        let vocab = Vocabulary::generic(3).unwrap();
        let examples = vec![
            CorpusExample {
                id: 0,
                features: Features::single(vec![0.25, -1.5]).unwrap(),
                true_presence: Some(vec![true, false, true]),
                references: vec![vec![true, false, false], vec![true, false, true]],
                labels: vec![true, false, true],
            },
            CorpusExample {
                id: 1,
                features: Features::single(vec![0.0, 2.0]).unwrap(),
                true_presence: Some(vec![false, true, false]),
                references: vec![vec![false, true, false], vec![false, false, false]],
                labels: vec![false, true, false],
            },
        ];
        Corpus {
            vocab,
            feature_dim: 2,
            references_per_image: 2,
            regions_per_image: None,
            split: Split::Train,
            generator: None,
            warnings: vec![],
            examples,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = tiny_corpus();
        corpus.write_jsonl(&path).unwrap();

        let loaded = Corpus::read_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.vocab.names(), corpus.vocab.names());
        assert_eq!(loaded.examples[0].labels, vec![true, false, true]);
        assert_eq!(loaded.examples[0].features, corpus.examples[0].features);
        assert_eq!(
            loaded.examples[1].true_presence,
            Some(vec![false, true, false])
        );

        // Writing again produces identical bytes.
        let path2 = dir.path().join("c2.jsonl");
        loaded.write_jsonl(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn header_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        tiny_corpus().write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3); // header + 2 records
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["format_version"], 1);
        assert_eq!(first["w"], 3);
    }

    #[test]
    fn rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            r#"{"format_version":9,"w":1,"d":1,"k":1,"concepts":["a"],"split":"train"}"#,
        )
        .unwrap();
        assert!(matches!(
            Corpus::read_jsonl(&path),
            Err(Error::CorpusFormat { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"format_version":1,"w":2,"d":1,"k":1,"concepts":["a","b"],"split":"train"}"#,
                "\n",
                r#"{"id":0,"features":[0.5],"refs":[[5]]}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = Corpus::read_jsonl(&path).unwrap_err();
        assert!(matches!(err, Error::CorpusFormat { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_missing_and_double_features() {
        let dir = tempfile::tempdir().unwrap();
        let header =
            r#"{"format_version":1,"w":1,"d":1,"k":1,"concepts":["a"],"split":"train"}"#;
        for bad in [
            r#"{"id":0,"refs":[[0]]}"#,
            r#"{"id":0,"features":[0.1],"regions":[[0.1]],"refs":[[0]]}"#,
        ] {
            let path = dir.path().join("c.jsonl");
            std::fs::write(&path, format!("{header}\n{bad}\n")).unwrap();
            assert!(Corpus::read_jsonl(&path).is_err(), "accepted: {bad}");
        }
    }

    #[test]
    fn union_labels_are_recomputed_on_load() {
        let refs = vec![vec![true, false], vec![false, false], vec![false, true]];
        assert_eq!(union_labels(&refs), vec![true, true]);
    }

    #[test]
    fn random_features_reload_bit_exactly() {
        // Requires serde_json's float_roundtrip parsing; the default
        // parser can be an ulp off.
        let mut rng = crate::rng::DetRng::new(99);
        let examples: Vec<CorpusExample> = (0..50)
            .map(|id| CorpusExample {
                id,
                features: Features::single((0..6).map(|_| rng.normal()).collect()).unwrap(),
                true_presence: None,
                references: vec![vec![rng.bernoulli(0.5), rng.bernoulli(0.5)]],
                labels: vec![false, false],
            })
            .map(|mut ex| {
                ex.labels = union_labels(&ex.references);
                ex
            })
            .collect();
        let corpus = Corpus {
            vocab: Vocabulary::generic(2).unwrap(),
            feature_dim: 6,
            references_per_image: 1,
            regions_per_image: None,
            split: Split::Train,
            generator: None,
            warnings: vec![],
            examples,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        corpus.write_jsonl(&path).unwrap();
        let loaded = Corpus::read_jsonl(&path).unwrap();
        for (a, b) in corpus.examples.iter().zip(&loaded.examples) {
            let bits_a: Vec<u64> = a.features.region(0).iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.features.region(0).iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }
}
