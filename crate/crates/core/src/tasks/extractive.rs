use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{serialize_pair, TaskExample, TaskId, TaskTarget};
use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::rouge;
use crate::tokenizer::{basic_tokenize, TextEncoder};

/// What to do when a document has no extractive reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    Disabled,
    /// Label with the greedy ROUGE oracle, selecting at most `max_selected`.
    Fallback { max_selected: usize },
}

/// Lowercased alphanumeric tokens joined by single spaces, so reference
/// sentences match their source despite punctuation and spacing edits.
pub fn normalize_sentence(s: &str) -> String {
    basic_tokenize(s)
        .into_iter()
        .filter(|t| t.chars().all(char::is_alphanumeric))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-sentence in-summary labels.
pub fn extractive_labels(doc: &DocumentRecord, oracle: OracleMode) -> Result<Vec<bool>> {
    match (&doc.extractive_ref, oracle) {
        (Some(refs), _) => {
            let wanted: BTreeSet<String> = refs.iter().map(|s| normalize_sentence(s)).collect();
            Ok(doc
                .sentences
                .iter()
                .map(|s| wanted.contains(&normalize_sentence(s)))
                .collect())
        }
        (None, OracleMode::Fallback { max_selected }) => {
            let picked = oracle_extractive_labels(doc, max_selected);
            Ok((0..doc.sentences.len()).map(|i| picked.contains(&i)).collect())
        }
        (None, OracleMode::Disabled) => Err(Error::NoExtractiveReference(doc.doc_id.clone())),
    }
}

fn oracle_gain(doc: &DocumentRecord, selected: &BTreeSet<usize>) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let text = selected
        .iter()
        .map(|&i| doc.sentences[i].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    rouge::score(&text, &doc.abstractive_ref).mean_f1()
}

/// Greedy sentence selection against the abstractive reference: repeatedly
/// add the sentence that most increases mean(R1, R2, RL) F1 of the selected
/// sentences (in document order), stopping when nothing improves or
/// `max_selected` is reached. Ties go to the lowest index.
pub fn oracle_extractive_labels(doc: &DocumentRecord, max_selected: usize) -> BTreeSet<usize> {
    let mut selected = BTreeSet::new();
    let mut best = 0.0;
    while selected.len() < max_selected {
        let mut step: Option<(usize, f64)> = None;
        for i in 0..doc.sentences.len() {
            if selected.contains(&i) {
                continue;
            }
            let mut trial = selected.clone();
            trial.insert(i);
            let gain = oracle_gain(doc, &trial);
            if gain > best && step.is_none_or(|(_, g)| gain > g) {
                step = Some((i, gain));
            }
        }
        match step {
            Some((i, g)) => {
                selected.insert(i);
                best = g;
            }
            None => break,
        }
    }
    selected
}

/// One `[CLS] document [SEP] sentence` example per sentence, labeled by
/// the extractive reference or the oracle.
pub fn build_extractive<T: TextEncoder + ?Sized>(
    doc: &DocumentRecord,
    enc: &T,
    max_len: usize,
    oracle: OracleMode,
) -> Result<Vec<TaskExample>> {
    let labels = extractive_labels(doc, oracle)?;
    let doc_ids = enc.encode_ids(&doc.document_text());
    Ok(doc
        .sentences
        .iter()
        .zip(labels)
        .map(|(s, label)| TaskExample {
            task: TaskId::E,
            source_id: doc.doc_id.clone(),
            input: serialize_pair(&doc_ids, &enc.encode_ids(s), max_len),
            target: TaskTarget::Binary(label),
        })
        .collect())
}
