use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{serialize_document, TaskExample, TaskId, TaskTarget};
use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::tokenizer::{basic_tokenize, TextEncoder, TokenId, UNK};

/// Top-ranked TF-IDF terms of one document. Weights are non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLabeling {
    pub doc_id: String,
    pub concepts: Vec<(String, f64)>,
    pub top_k: usize,
}

/// Word n-grams of each sentence, split at punctuation.
fn document_terms(doc: &DocumentRecord, ngram_max: usize) -> HashMap<String, usize> {
    let mut tf = HashMap::new();
    for s in &doc.sentences {
        let tokens = basic_tokenize(s);
        for run in tokens.split(|t| !t.chars().all(char::is_alphanumeric)) {
            for n in 1..=ngram_max.max(1) {
                if run.len() < n {
                    break;
                }
                for w in run.windows(n) {
                    *tf.entry(w.join(" ")).or_insert(0) += 1;
                }
            }
        }
    }
    tf
}

/// Ranks each document's n-grams (n ≤ `ngram_max`) by `tf · ln(N / df)`.
///
/// `tf` is the raw count in the document, `N` the corpus size and `df` the
/// number of documents containing the term. Ties fall back to higher `tf`
/// and then lexicographic order, so a single-document corpus (all weights
/// zero) ranks by frequency.
pub fn tfidf_rank(
    corpus: &[DocumentRecord],
    ngram_max: usize,
    top_k: usize,
) -> Result<BTreeMap<String, ConceptLabeling>> {
    if corpus.is_empty() {
        return Err(Error::Empty("concept corpus"));
    }
    let per_doc: Vec<HashMap<String, usize>> =
        corpus.iter().map(|d| document_terms(d, ngram_max)).collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for terms in &per_doc {
        for t in terms.keys() {
            *df.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let n = corpus.len() as f64;
    let mut out = BTreeMap::new();
    for (doc, terms) in corpus.iter().zip(&per_doc) {
        let mut ranked: Vec<(&str, usize, f64)> = terms
            .iter()
            .map(|(t, &tf)| (t.as_str(), tf, tf as f64 * (n / df[t.as_str()] as f64).ln()))
            .collect();
        ranked.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| b.1.cmp(&a.1))
                .then_with(|| a.0.cmp(b.0))
        });
        ranked.truncate(top_k);
        out.insert(
            doc.doc_id.clone(),
            ConceptLabeling {
                doc_id: doc.doc_id.clone(),
                concepts: ranked.into_iter().map(|(t, _, w)| (t.to_string(), w)).collect(),
                top_k,
            },
        );
    }
    Ok(out)
}

/// Marks every position of `input` covered by an occurrence of one of
/// `terms`. Terms that encode to nothing or contain an unknown token never
/// match.
pub fn concept_spans(input: &[TokenId], terms: &[Vec<TokenId>]) -> Vec<bool> {
    let mut labels = vec![false; input.len()];
    for term in terms {
        if term.is_empty() || term.contains(&UNK) || term.len() > input.len() {
            continue;
        }
        for start in 0..=input.len() - term.len() {
            if input[start..start + term.len()] == term[..] {
                labels[start..start + term.len()].fill(true);
            }
        }
    }
    labels
}

/// Per-token concept labels over the serialized document.
pub fn build_concept<T: TextEncoder + ?Sized>(
    doc: &DocumentRecord,
    labeling: &ConceptLabeling,
    enc: &T,
    max_len: usize,
) -> Result<TaskExample> {
    if labeling.doc_id != doc.doc_id {
        return Err(Error::LabelingMismatch {
            labeling: labeling.doc_id.clone(),
            doc: doc.doc_id.clone(),
        });
    }
    let input = serialize_document(doc, enc, max_len);
    let mut seen = HashSet::new();
    let terms: Vec<Vec<TokenId>> = labeling
        .concepts
        .iter()
        .filter(|(t, _)| seen.insert(t.as_str()))
        .map(|(t, _)| enc.encode_ids(t))
        .collect();
    let labels = concept_spans(&input.ids, &terms);
    Ok(TaskExample {
        task: TaskId::C,
        source_id: doc.doc_id.clone(),
        input,
        target: TaskTarget::TokenLabels(labels),
    })
}

/// One labeling per line, in doc_id order.
pub fn write_concepts_jsonl(
    labelings: &BTreeMap<String, ConceptLabeling>,
    w: &mut impl Write,
) -> std::io::Result<()> {
    for l in labelings.values() {
        serde_json::to_writer(&mut *w, l)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
