//! Training examples for the five tasks.
//!
//! Heads-mode examples feed the shared encoder plus one task head each;
//! text2text examples turn every task into prefixed input text and target
//! text for a single encoder-decoder.

mod concept;
mod extractive;
mod mlm;
mod paraphrase;
mod text2text;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use concept::{build_concept, concept_spans, tfidf_rank, write_concepts_jsonl, ConceptLabeling};
pub use extractive::{
    build_extractive, extractive_labels, normalize_sentence, oracle_extractive_labels, OracleMode,
};
pub use mlm::{build_mlm, mask_tokens, MaskedTokens, MaskingPolicy};
pub use paraphrase::{build_paraphrase, load_msrp_tsv, parse_msrp_tsv, ParaphrasePair};
pub use text2text::{build_text2text, PrefixTable, Text2TextSource};

use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::tokenizer::{TextEncoder, TokenId, TokenSequence, BOS, CLS, EOS, SEP};

/// Task letters: abstractive (A), extractive (E), concept (C),
/// paraphrase (P), language modeling (L).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    A,
    E,
    C,
    P,
    L,
}

impl TaskId {
    /// Default training order within an epoch.
    pub const ORDER: [TaskId; 5] = [TaskId::A, TaskId::E, TaskId::C, TaskId::P, TaskId::L];
    pub const AUXILIARY: [TaskId; 4] = [TaskId::E, TaskId::C, TaskId::P, TaskId::L];

    pub fn letter(self) -> char {
        match self {
            TaskId::A => 'A',
            TaskId::E => 'E',
            TaskId::C => 'C',
            TaskId::P => 'P',
            TaskId::L => 'L',
        }
    }

    pub fn from_letter(c: char) -> Option<TaskId> {
        match c.to_ascii_uppercase() {
            'A' => Some(TaskId::A),
            'E' => Some(TaskId::E),
            'C' => Some(TaskId::C),
            'P' => Some(TaskId::P),
            'L' => Some(TaskId::L),
            _ => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                TaskId::from_letter(c).ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
            }
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TaskTarget {
    /// `[BOS] tokens [EOS]`: abstractive targets and all text2text targets.
    Sequence(TokenSequence),
    /// Sentence-in-summary (E) or is-paraphrase (P).
    Binary(bool),
    /// Per input token: inside a concept span or not (C).
    TokenLabels(Vec<bool>),
    /// Masked positions and the ids they originally held (L).
    Masked {
        positions: Vec<usize>,
        original: Vec<TokenId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: TaskId,
    /// Document (or pair) this example came from.
    pub source_id: String,
    pub input: TokenSequence,
    pub target: TaskTarget,
}

impl TaskExample {
    pub fn is_text2text(&self) -> bool {
        self.task != TaskId::A && matches!(self.target, TaskTarget::Sequence(_))
    }

    /// Checks that the target variant fits the task and its shape fits the
    /// input.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ShapeMismatch(format!("{}: {msg}", self.source_id)));
        match (&self.target, self.task) {
            (TaskTarget::Sequence(seq), _) if self.task != TaskId::L => {
                if seq.len() < 2 {
                    return bad("sequence target shorter than [BOS] [EOS]".into());
                }
            }
            (TaskTarget::Binary(_), TaskId::E | TaskId::P) => {}
            (TaskTarget::TokenLabels(labels), TaskId::C) => {
                if labels.len() != self.input.len() {
                    return bad(format!(
                        "{} concept labels for {} input tokens",
                        labels.len(),
                        self.input.len()
                    ));
                }
            }
            (TaskTarget::Masked { positions, original }, TaskId::L) => {
                if positions.len() != original.len() {
                    return bad("masked positions and originals differ in length".into());
                }
                if let Some(p) = positions.iter().find(|&&p| p >= self.input.len()) {
                    return bad(format!("masked position {p} outside input"));
                }
            }
            (t, task) => return bad(format!("target {t:?} does not fit task {task}")),
        }
        Ok(())
    }
}

/// Knobs shared by the example builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub max_input_len: usize,
    /// Summary tokens, not counting `[BOS]`/`[EOS]`.
    pub max_summary_len: usize,
    pub concept_top_k: usize,
    pub ngram_max: usize,
    /// Negative (document, other summary) pairs per summarization record.
    pub negative_ratio: f64,
    pub masking: MaskingPolicy,
    pub oracle: OracleMode,
    pub prefixes: PrefixTable,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            max_input_len: 120,
            max_summary_len: 50,
            concept_top_k: 10,
            ngram_max: 2,
            negative_ratio: 1.0,
            masking: MaskingPolicy::default(),
            oracle: OracleMode::Fallback { max_selected: 3 },
            prefixes: PrefixTable::default(),
        }
    }
}

/// `[CLS] s1 [SEP] s2 [SEP] ... sn`, truncated to `max_len`.
pub fn serialize_document<T: TextEncoder + ?Sized>(
    doc: &DocumentRecord,
    enc: &T,
    max_len: usize,
) -> TokenSequence {
    let mut ids = vec![CLS];
    for (i, s) in doc.sentences.iter().enumerate() {
        if i > 0 {
            ids.push(SEP);
        }
        ids.extend(enc.encode_ids(s));
    }
    TokenSequence::bounded(ids, max_len)
}

/// `[CLS] first [SEP] second`, trimming the longer side first until it fits.
pub fn serialize_pair(first: &[TokenId], second: &[TokenId], max_len: usize) -> TokenSequence {
    let budget = max_len.saturating_sub(2);
    let (mut a, mut b) = (first.len(), second.len());
    while a + b > budget {
        if a >= b {
            a -= 1;
        } else {
            b -= 1;
        }
    }
    let truncated = a < first.len() || b < second.len();
    let mut ids = Vec::with_capacity(a + b + 2);
    ids.push(CLS);
    ids.extend_from_slice(&first[..a]);
    ids.push(SEP);
    ids.extend_from_slice(&second[..b]);
    ids.truncate(max_len);
    TokenSequence { ids, truncated }
}

/// `[BOS] text [EOS]` with the text cut to `max_tokens`.
pub fn serialize_target<T: TextEncoder + ?Sized>(
    text: &str,
    enc: &T,
    max_tokens: usize,
) -> TokenSequence {
    let mut body = enc.encode_ids(text);
    let truncated = body.len() > max_tokens;
    body.truncate(max_tokens);
    let mut ids = Vec::with_capacity(body.len() + 2);
    ids.push(BOS);
    ids.extend(body);
    ids.push(EOS);
    TokenSequence { ids, truncated }
}

pub fn build_abstractive<T: TextEncoder + ?Sized>(
    doc: &DocumentRecord,
    enc: &T,
    cfg: &TaskConfig,
) -> TaskExample {
    TaskExample {
        task: TaskId::A,
        source_id: doc.doc_id.clone(),
        input: serialize_document(doc, enc, cfg.max_input_len),
        target: TaskTarget::Sequence(serialize_target(
            &doc.abstractive_ref,
            enc,
            cfg.max_summary_len,
        )),
    }
}

/// Example pools keyed by task.
pub type TaskStreams = BTreeMap<TaskId, Vec<TaskExample>>;

/// Heads-mode pools for `tasks` built from the training documents. The
/// abstractive pool is always built.
pub fn build_heads_streams<T: TextEncoder + ?Sized>(
    train_docs: &[DocumentRecord],
    msrp: &[ParaphrasePair],
    tasks: &[TaskId],
    enc: &T,
    cfg: &TaskConfig,
    seed: u64,
) -> Result<TaskStreams> {
    let mut streams = TaskStreams::new();
    streams.insert(
        TaskId::A,
        train_docs
            .iter()
            .map(|d| build_abstractive(d, enc, cfg))
            .collect(),
    );
    for &task in tasks {
        let pool = match task {
            TaskId::A => continue,
            TaskId::E => {
                let mut out = Vec::new();
                for d in train_docs {
                    out.extend(build_extractive(d, enc, cfg.max_input_len, cfg.oracle)?);
                }
                out
            }
            TaskId::C => {
                let labelings = tfidf_rank(train_docs, cfg.ngram_max, cfg.concept_top_k)?;
                train_docs
                    .iter()
                    .map(|d| build_concept(d, &labelings[&d.doc_id], enc, cfg.max_input_len))
                    .collect::<Result<_>>()?
            }
            TaskId::P => build_paraphrase(train_docs, msrp, cfg.negative_ratio, seed, enc, cfg.max_input_len)?,
            TaskId::L => train_docs
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let mut ex = build_mlm(
                        &d.document_text(),
                        &cfg.masking,
                        seed.wrapping_add(i as u64),
                        enc,
                        cfg.max_input_len,
                    );
                    ex.source_id = d.doc_id.clone();
                    ex
                })
                .collect(),
        };
        streams.insert(task, pool);
    }
    Ok(streams)
}

/// Text2text pools. Language modeling is rejected.
pub fn build_text2text_streams<T: TextEncoder + ?Sized>(
    train_docs: &[DocumentRecord],
    msrp: &[ParaphrasePair],
    tasks: &[TaskId],
    enc: &T,
    cfg: &TaskConfig,
    seed: u64,
) -> Result<TaskStreams> {
    if tasks.contains(&TaskId::L) {
        return Err(Error::LanguageModelingInText2Text);
    }
    let mut streams = TaskStreams::new();
    let mut a_pool = Vec::new();
    for d in train_docs {
        a_pool.push(build_text2text(TaskId::A, &Text2TextSource::Document { doc: d, labeling: None }, enc, cfg)?);
    }
    streams.insert(TaskId::A, a_pool);
    for &task in tasks {
        let pool = match task {
            TaskId::A | TaskId::L => continue,
            TaskId::E => {
                let mut out = Vec::new();
                for d in train_docs {
                    let labels = extractive_labels(d, cfg.oracle)?;
                    let doc_text = d.document_text();
                    for (s, label) in d.sentences.iter().zip(labels) {
                        out.push(build_text2text(
                            TaskId::E,
                            &Text2TextSource::Pair {
                                source_id: &d.doc_id,
                                first: &doc_text,
                                second: s,
                                label,
                            },
                            enc,
                            cfg,
                        )?);
                    }
                }
                out
            }
            TaskId::C => {
                let labelings = tfidf_rank(train_docs, cfg.ngram_max, cfg.concept_top_k)?;
                train_docs
                    .iter()
                    .map(|d| {
                        build_text2text(
                            TaskId::C,
                            &Text2TextSource::Document {
                                doc: d,
                                labeling: Some(&labelings[&d.doc_id]),
                            },
                            enc,
                            cfg,
                        )
                    })
                    .collect::<Result<_>>()?
            }
            TaskId::P => {
                let pairs = paraphrase::paraphrase_pairs(train_docs, msrp, cfg.negative_ratio, seed)?;
                pairs
                    .iter()
                    .map(|p| {
                        build_text2text(
                            TaskId::P,
                            &Text2TextSource::Pair {
                                source_id: &p.source_id,
                                first: &p.first,
                                second: &p.second,
                                label: p.label,
                            },
                            enc,
                            cfg,
                        )
                    })
                    .collect::<Result<_>>()?
            }
        };
        streams.insert(task, pool);
    }
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::tokenizer::build_vocab;

    pub(crate) fn doc(id: &str, sentences: &[&str], summary: &str) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.into(),
            group: "g".into(),
            split: Split::Train,
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
            abstractive_ref: summary.into(),
            extractive_ref: None,
        }
    }

    #[test]
    fn abstractive_single_sentence_input() {
        let d = doc("d", &["the bag adt"], "bags");
        let v = build_vocab(["the bag adt bags"], 1).unwrap();
        let ex = build_abstractive(&d, &v, &TaskConfig::default());
        let mut expected = vec![CLS];
        expected.extend(v.encode_ids("the bag adt"));
        assert_eq!(ex.input.ids, expected);
        ex.validate().unwrap();
    }

    #[test]
    fn abstractive_target_is_capped() {
        let long = (0..80).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let d = doc("d", &["x"], &long);
        let v = build_vocab([long.as_str(), "x"], 1).unwrap();
        let ex = build_abstractive(&d, &v, &TaskConfig::default());
        let TaskTarget::Sequence(t) = &ex.target else { panic!() };
        assert_eq!(t.len(), 52);
        assert_eq!(t.ids[0], BOS);
        assert_eq!(*t.ids.last().unwrap(), EOS);
    }

    #[test]
    fn sentences_are_separated() {
        let d = doc("d", &["a", "b", "c"], "s");
        let v = build_vocab(["a b c s"], 1).unwrap();
        let seq = serialize_document(&d, &v, 100);
        assert_eq!(seq.ids, vec![CLS, v.id("a"), SEP, v.id("b"), SEP, v.id("c")]);
    }

    #[test]
    fn pair_truncation_keeps_both_sides() {
        let first: Vec<TokenId> = (10..40).collect();
        let second: Vec<TokenId> = (50..55).collect();
        let seq = serialize_pair(&first, &second, 12);
        assert_eq!(seq.len(), 12);
        assert!(seq.truncated);
        assert_eq!(seq.ids[0], CLS);
        let sep = seq.ids.iter().position(|&t| t == SEP).unwrap();
        assert_eq!(seq.len() - sep - 1, 5, "short side untouched");
    }

    #[test]
    fn task_letters_roundtrip() {
        for t in TaskId::ORDER {
            assert_eq!(t.to_string().parse::<TaskId>().unwrap(), t);
        }
        assert!("X".parse::<TaskId>().is_err());
    }

    #[test]
    fn validate_catches_mismatched_targets() {
        let ex = TaskExample {
            task: TaskId::C,
            source_id: "d".into(),
            input: TokenSequence::new(vec![CLS, 9, 10]),
            target: TaskTarget::TokenLabels(vec![false, true]),
        };
        assert!(ex.validate().is_err());
        let ex = TaskExample {
            task: TaskId::E,
            source_id: "d".into(),
            input: TokenSequence::new(vec![CLS]),
            target: TaskTarget::TokenLabels(vec![false]),
        };
        assert!(ex.validate().is_err());
    }

    #[test]
    fn text2text_streams_reject_lm() {
        let d = doc("d", &["a"], "b");
        let v = build_vocab(["a b"], 1).unwrap();
        assert!(matches!(
            build_text2text_streams(&[d], &[], &[TaskId::L], &v, &TaskConfig::default(), 0),
            Err(Error::LanguageModelingInText2Text)
        ));
    }
}
