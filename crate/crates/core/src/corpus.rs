//! Summarization corpora: JSONL manifests, leave-one-group-out folds and
//! fixed-size subsampling.
//!
//! Each manifest line is one document:
//!
//! ```json
//! {"doc_id": "cs-001", "group": "CS", "split": "test",
//!  "sentences": ["the dynamic bag", "..."],
//!  "abstractive_ref": "Students were interested in ...",
//!  "extractive_ref": ["..."]}
//! ```
//!
//! `extractive_ref` is optional. Sentences are kept in file order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One source document with its reference summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    /// Course name for leave-one-out corpora, otherwise the split name.
    pub group: String,
    pub split: Split,
    pub sentences: Vec<String>,
    pub abstractive_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractive_ref: Option<Vec<String>>,
}

impl DocumentRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidRecord {
            doc_id: self.doc_id.clone(),
            reason: reason.to_string(),
        };
        if self.sentences.is_empty() {
            return Err(invalid("empty sentence list"));
        }
        if self.abstractive_ref.trim().is_empty() {
            return Err(invalid("empty abstractive_ref"));
        }
        if let Some(ext) = &self.extractive_ref {
            if ext.iter().any(|s| s.trim().is_empty()) {
                return Err(invalid("empty extractive_ref entry"));
            }
        }
        Ok(())
    }

    /// The document as one string, sentences separated by single spaces.
    pub fn document_text(&self) -> String {
        self.sentences.join(" ")
    }
}

/// (train, val, test) document counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }
}

/// The four CourseMirror courses with their leave-one-out fold sizes,
/// keyed by held-out course.
pub fn course_mirror_counts() -> BTreeMap<String, SplitCounts> {
    [
        ("CS", SplitCounts::new(209, 23, 138)),
        ("ENGR", SplitCounts::new(286, 32, 52)),
        ("S2015", SplitCounts::new(254, 28, 88)),
        ("S2016", SplitCounts::new(250, 28, 92)),
    ]
    .into_iter()
    .map(|(g, c)| (g.to_string(), c))
    .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<DocumentRecord>,
    /// Per held-out group fold sizes. Empty when the counts were not declared.
    pub declared_counts: BTreeMap<String, SplitCounts>,
    /// Non-fatal validation findings collected while loading.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, records: Vec<DocumentRecord>) -> Result<Self> {
        for r in &records {
            r.validate()?;
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.doc_id.as_str()) {
                return Err(Error::InvalidRecord {
                    doc_id: r.doc_id.clone(),
                    reason: "duplicate doc_id".into(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            records,
            declared_counts: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct groups in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.iter().any(|g| g == &r.group) {
                out.push(r.group.clone());
            }
        }
        out
    }

    pub fn group_count(&self, group: &str) -> usize {
        self.records.iter().filter(|r| r.group == group).count()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Attaches leave-one-out fold sizes after checking them against the
    /// records: the test count must equal the group's size and train + val
    /// must cover every other record.
    pub fn with_declared_counts(mut self, counts: BTreeMap<String, SplitCounts>) -> Result<Self> {
        let total = self.len();
        for (group, c) in &counts {
            let n = self.group_count(group);
            if n == 0 {
                return Err(Error::CountMismatch {
                    group: group.clone(),
                    reason: "group has no records".into(),
                });
            }
            if c.test != n {
                return Err(Error::CountMismatch {
                    group: group.clone(),
                    reason: format!("declared test {} but group has {n} records", c.test),
                });
            }
            if c.train + c.val != total - n {
                return Err(Error::CountMismatch {
                    group: group.clone(),
                    reason: format!(
                        "declared train {} + val {} but {} records remain",
                        c.train,
                        c.val,
                        total - n
                    ),
                });
            }
        }
        self.declared_counts = counts;
        Ok(self)
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            name: name.into(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            declared_counts: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

/// Options applied while loading a manifest.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Expected sentences per document; mismatches become warnings.
    pub expected_sentences: Option<usize>,
}

impl LoadOptions {
    /// Review corpora summarize exactly eight reviews per product.
    pub fn reviews() -> Self {
        Self {
            expected_sentences: Some(8),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    doc_id: Option<String>,
    group: Option<String>,
    split: Option<String>,
    sentences: Option<Vec<String>>,
    abstractive_ref: Option<String>,
    extractive_ref: Option<Vec<String>>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    load_manifest_with(path, &LoadOptions::default())
}

pub fn load_manifest_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_manifest(name, &path.display().to_string(), BufReader::new(file), opts)
}

/// Parses JSONL manifest text. `origin` is used in error messages.
pub fn read_manifest(
    name: impl Into<String>,
    origin: &str,
    reader: impl BufRead,
    opts: &LoadOptions,
) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: origin.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let missing = |field| Error::MissingField {
            path: origin.to_string(),
            line: line_no,
            field,
        };
        let split_str = raw.split.ok_or_else(|| missing("split"))?;
        let split = split_str.parse().map_err(|message| Error::MalformedLine {
            path: origin.to_string(),
            line: line_no,
            message,
        })?;
        let record = DocumentRecord {
            doc_id: raw.doc_id.ok_or_else(|| missing("doc_id"))?,
            group: raw.group.ok_or_else(|| missing("group"))?,
            split,
            sentences: raw.sentences.ok_or_else(|| missing("sentences"))?,
            abstractive_ref: raw.abstractive_ref.ok_or_else(|| missing("abstractive_ref"))?,
            extractive_ref: raw.extractive_ref,
        };
        records.push(record);
    }
    let mut manifest = DatasetManifest::new(name, records)?;
    if let Some(expected) = opts.expected_sentences {
        for r in &manifest.records {
            if r.sentences.len() != expected {
                let msg = format!(
                    "record `{}` has {} sentences, expected {expected}",
                    r.doc_id,
                    r.sentences.len()
                );
                log::warn!("{msg}");
                manifest.warnings.push(msg);
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest(manifest, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest(manifest: &DatasetManifest, w: &mut impl Write) -> std::io::Result<()> {
    for r in &manifest.records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// How a fold's validation set was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValSource {
    /// Seeded shuffle of the non-test records, this fraction held out.
    Fraction(f64),
    /// Sizes taken from the manifest's declared counts.
    Declared,
    /// Records whose `split` field is `val`.
    SplitField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub test_group: String,
    pub train_groups: Vec<String>,
    pub val_source: ValSource,
    /// Indices into the manifest's records.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts::new(self.train.len(), self.val.len(), self.test.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// One fold per group: the group is the test set and the remaining records
/// are split into train/val by the declared counts, or 90/10 by a seeded
/// shuffle when none were declared.
pub fn make_leave_one_out_folds(manifest: &DatasetManifest, seed: u64) -> Result<FoldPlan> {
    let groups = manifest.groups();
    if groups.len() < 2 {
        return Err(Error::SingleGroup(groups.len()));
    }
    let mut folds = Vec::with_capacity(groups.len());
    for (gi, group) in groups.iter().enumerate() {
        let test: Vec<usize> = (0..manifest.len())
            .filter(|&i| &manifest.records[i].group == group)
            .collect();
        let mut rest: Vec<usize> = (0..manifest.len())
            .filter(|&i| &manifest.records[i].group != group)
            .collect();
        let (n_val, val_source) = match manifest.declared_counts.get(group) {
            Some(c) => (c.val, ValSource::Declared),
            None => (
                (rest.len() as f64 * DEFAULT_VAL_FRACTION).round() as usize,
                ValSource::Fraction(DEFAULT_VAL_FRACTION),
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(gi as u64));
        rest.shuffle(&mut rng);
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold {
            test_group: group.clone(),
            train_groups: groups.iter().filter(|g| *g != group).cloned().collect(),
            val_source,
            train,
            val,
            test,
        });
    }
    Ok(FoldPlan { folds })
}

/// A single fold taken from the records' own `split` fields, for corpora
/// with a fixed held-out test set.
pub fn split_fold(manifest: &DatasetManifest) -> Result<FoldPlan> {
    let fold = Fold {
        test_group: manifest.name.clone(),
        train_groups: vec![manifest.name.clone()],
        val_source: ValSource::SplitField,
        train: manifest.split_indices(Split::Train),
        val: manifest.split_indices(Split::Val),
        test: manifest.split_indices(Split::Test),
    };
    if fold.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    Ok(FoldPlan { folds: vec![fold] })
}

/// Uniform sample without replacement of exactly `(train_n, val_n, test_n)`
/// records from the corresponding splits. Sampled records keep their
/// original relative order.
pub fn subsample_fixed(
    manifest: &DatasetManifest,
    train_n: usize,
    val_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(train_n + val_n + test_n);
    for (split, n) in [(Split::Train, train_n), (Split::Val, val_n), (Split::Test, test_n)] {
        let pool = manifest.split_indices(split);
        if n > pool.len() {
            return Err(Error::InsufficientRecords {
                split: split.to_string(),
                requested: n,
                available: pool.len(),
            });
        }
        let picked = rand::seq::index::sample(&mut rng, pool.len(), n);
        keep.extend(picked.into_iter().map(|k| pool[k]));
    }
    keep.sort_unstable();
    let mut out = manifest.subset(format!("{}-sub", manifest.name), &keep);
    out.warnings = manifest.warnings.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, group: &str, split: Split) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.into(),
            group: group.into(),
            split,
            sentences: vec![format!("sentence of {id}")],
            abstractive_ref: format!("summary of {id}"),
            extractive_ref: None,
        }
    }

    fn parse(text: &str) -> Result<DatasetManifest> {
        read_manifest("t", "t.jsonl", text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn single_record_manifest() {
        let m = parse(
            r#"{"doc_id":"a","group":"g","split":"train","sentences":["one"],"abstractive_ref":"s"}"#,
        )
        .unwrap();
        assert_eq!(m.len(), 1);
        assert!(m.records[0].extractive_ref.is_none());
    }

    #[test]
    fn missing_abstractive_ref_names_the_field() {
        let err = parse(r#"{"doc_id":"a","group":"g","split":"train","sentences":["one"]}"#)
            .unwrap_err();
        match err {
            Error::MissingField { field, line, .. } => {
                assert_eq!(field, "abstractive_ref");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(parse(r#"{"doc_id":"a","group":"g","split":"train","sentences":["one"]}"#)
            .unwrap_err()
            .to_string()
            .contains("abstractive_ref"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = concat!(
            r#"{"doc_id":"a","group":"g","split":"train","sentences":["one"],"abstractive_ref":"s"}"#,
            "\n{not json\n"
        );
        match parse(text).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_sentence_list_rejected() {
        let err = parse(
            r#"{"doc_id":"a","group":"g","split":"train","sentences":[],"abstractive_ref":"s"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { .. }));
    }

    #[test]
    fn empty_extractive_entry_rejected() {
        let err = parse(
            r#"{"doc_id":"a","group":"g","split":"train","sentences":["x"],"abstractive_ref":"s","extractive_ref":[" "]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { .. }));
    }

    #[test]
    fn review_corpora_warn_on_sentence_count() {
        let text = r#"{"doc_id":"a","group":"g","split":"train","sentences":["one","two"],"abstractive_ref":"s"}"#;
        let m = read_manifest("r", "r.jsonl", text.as_bytes(), &LoadOptions::reviews()).unwrap();
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn two_group_folds_test_each_group_once() {
        let m = DatasetManifest::new(
            "two",
            vec![
                rec("a1", "A", Split::Train),
                rec("a2", "A", Split::Train),
                rec("b1", "B", Split::Train),
            ],
        )
        .unwrap();
        let plan = make_leave_one_out_folds(&m, 0).unwrap();
        assert_eq!(plan.folds.len(), 2);
        assert_eq!(plan.folds[0].test, vec![0, 1]);
        assert_eq!(plan.folds[1].test, vec![2]);
    }

    #[test]
    fn single_group_rejected() {
        let m = DatasetManifest::new("one", vec![rec("a", "A", Split::Train)]).unwrap();
        assert!(matches!(
            make_leave_one_out_folds(&m, 0),
            Err(Error::SingleGroup(1))
        ));
    }

    #[test]
    fn subsample_zero_is_empty_and_overdraw_errors() {
        let m = DatasetManifest::new(
            "s",
            vec![rec("a", "s", Split::Train), rec("b", "s", Split::Test)],
        )
        .unwrap();
        assert!(subsample_fixed(&m, 0, 0, 0, 1).unwrap().is_empty());
        assert!(matches!(
            subsample_fixed(&m, 2, 0, 0, 1),
            Err(Error::InsufficientRecords { requested: 2, available: 1, .. })
        ));
    }

    #[test]
    fn declared_counts_are_checked() {
        let m = DatasetManifest::new(
            "two",
            vec![rec("a", "A", Split::Train), rec("b", "B", Split::Train)],
        )
        .unwrap();
        let bad: BTreeMap<_, _> = [("A".to_string(), SplitCounts::new(5, 0, 1))].into();
        assert!(matches!(
            m.clone().with_declared_counts(bad),
            Err(Error::CountMismatch { .. })
        ));
        let good: BTreeMap<_, _> = [("A".to_string(), SplitCounts::new(1, 0, 1))].into();
        assert!(m.with_declared_counts(good).is_ok());
    }
}
