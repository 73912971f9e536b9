use serde::{Deserialize, Serialize};

use super::{serialize_pair, serialize_target, ConceptLabeling, TaskConfig, TaskExample, TaskId, TaskTarget};
use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::tokenizer::{TextEncoder, TokenSequence, CLS, SEP};

/// Input prefixes naming the task for the text2text model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixTable {
    pub summarize: String,
    pub extract: String,
    pub concepts: String,
    pub paraphrase: String,
}

impl Default for PrefixTable {
    fn default() -> Self {
        Self {
            summarize: "summarize:".into(),
            extract: "extract:".into(),
            concepts: "concepts:".into(),
            paraphrase: "paraphrase:".into(),
        }
    }
}

impl PrefixTable {
    pub fn get(&self, task: TaskId) -> Result<&str> {
        match task {
            TaskId::A => Ok(&self.summarize),
            TaskId::E => Ok(&self.extract),
            TaskId::C => Ok(&self.concepts),
            TaskId::P => Ok(&self.paraphrase),
            TaskId::L => Err(Error::LanguageModelingInText2Text),
        }
    }

    /// Every string the text2text vocabulary must cover besides the corpus.
    pub fn vocabulary_text(&self) -> String {
        format!(
            "{} {} {} {} yes no ,",
            self.summarize, self.extract, self.concepts, self.paraphrase
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Text2TextSource<'a> {
    /// Summarization (A) or concept detection (C, needs the labeling).
    Document {
        doc: &'a DocumentRecord,
        labeling: Option<&'a ConceptLabeling>,
    },
    /// Sentence-in-summary (E) or paraphrase (P) pairs.
    Pair {
        source_id: &'a str,
        first: &'a str,
        second: &'a str,
        label: bool,
    },
}

fn yes_no(label: bool) -> &'static str {
    if label {
        "yes"
    } else {
        "no"
    }
}

/// Prefixed input text and answer text for one task.
///
/// * A: `summarize: document` → reference summary
/// * E: `extract: document [SEP] sentence` → `yes` / `no`
/// * C: `concepts: document` → comma-joined concept terms
/// * P: `paraphrase: sent1 [SEP] sent2` → `yes` / `no`
pub fn build_text2text<T: TextEncoder + ?Sized>(
    task: TaskId,
    source: &Text2TextSource<'_>,
    enc: &T,
    cfg: &TaskConfig,
) -> Result<TaskExample> {
    let prefix = enc.encode_ids(cfg.prefixes.get(task)?);
    let (source_id, input, answer) = match (task, source) {
        (TaskId::A | TaskId::C, Text2TextSource::Document { doc, labeling }) => {
            let mut ids = vec![CLS];
            ids.extend(&prefix);
            for (i, s) in doc.sentences.iter().enumerate() {
                if i > 0 {
                    ids.push(SEP);
                }
                ids.extend(enc.encode_ids(s));
            }
            let answer = if task == TaskId::A {
                doc.abstractive_ref.clone()
            } else {
                let labeling = labeling.ok_or(Error::SourceMismatch(task))?;
                if labeling.doc_id != doc.doc_id {
                    return Err(Error::LabelingMismatch {
                        labeling: labeling.doc_id.clone(),
                        doc: doc.doc_id.clone(),
                    });
                }
                labeling
                    .concepts
                    .iter()
                    .map(|(t, _)| t.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            (
                doc.doc_id.clone(),
                TokenSequence::bounded(ids, cfg.max_input_len),
                answer,
            )
        }
        (
            TaskId::E | TaskId::P,
            Text2TextSource::Pair {
                source_id,
                first,
                second,
                label,
            },
        ) => {
            let mut head = prefix;
            head.extend(enc.encode_ids(first));
            let input = serialize_pair(&head, &enc.encode_ids(second), cfg.max_input_len);
            (source_id.to_string(), input, yes_no(*label).to_string())
        }
        _ => return Err(Error::SourceMismatch(task)),
    };
    Ok(TaskExample {
        task,
        source_id,
        input,
        target: TaskTarget::Sequence(serialize_target(&answer, enc, cfg.max_summary_len)),
    })
}
