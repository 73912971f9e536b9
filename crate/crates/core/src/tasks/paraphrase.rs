use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{serialize_pair, TaskExample, TaskId, TaskTarget};
use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};
use crate::tokenizer::TextEncoder;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphrasePair {
    pub source_id: String,
    pub first: String,
    pub second: String,
    pub label: bool,
}

/// Parses MSRP-style TSV. Three columns are read as `label, sent1, sent2`;
/// the five-column MSRP release layout (`label, id1, id2, sent1, sent2`) is
/// also accepted. A first line whose label is not 0/1 is a header.
pub fn parse_msrp_tsv(text: &str) -> Result<Vec<ParaphrasePair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (label, a, b) = match cols.len() {
            3 => (cols[0], cols[1], cols[2]),
            5 => (cols[0], cols[3], cols[4]),
            n => {
                return Err(Error::MalformedLine {
                    path: "msrp".into(),
                    line: i + 1,
                    message: format!("expected 3 or 5 tab-separated columns, got {n}"),
                })
            }
        };
        let label = match label.trim() {
            "1" => true,
            "0" => false,
            _ if i == 0 => continue,
            other => {
                return Err(Error::MalformedLine {
                    path: "msrp".into(),
                    line: i + 1,
                    message: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        out.push(ParaphrasePair {
            source_id: format!("msrp-{}", i + 1),
            first: a.to_string(),
            second: b.to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn load_msrp_tsv(path: impl AsRef<Path>) -> Result<Vec<ParaphrasePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_msrp_tsv(&text)
}

/// MSRP pairs followed by, for each summarization record, one positive
/// (document, own summary) pair and on average `negative_ratio` negatives
/// pairing the document with another record's summary.
pub(crate) fn paraphrase_pairs(
    summ_corpus: &[DocumentRecord],
    msrp: &[ParaphrasePair],
    negative_ratio: f64,
    seed: u64,
) -> Result<Vec<ParaphrasePair>> {
    if !(negative_ratio >= 0.0 && negative_ratio.is_finite()) {
        return Err(Error::Config(format!(
            "negative_ratio must be a non-negative number, got {negative_ratio}"
        )));
    }
    let n = summ_corpus.len();
    if negative_ratio > 0.0 && n < 2 {
        return Err(Error::NegativeSampling(n));
    }
    let whole = negative_ratio.floor() as usize;
    let frac = negative_ratio - negative_ratio.floor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ParaphrasePair> = msrp.to_vec();
    for (i, d) in summ_corpus.iter().enumerate() {
        let doc_text = d.document_text();
        out.push(ParaphrasePair {
            source_id: d.doc_id.clone(),
            first: doc_text.clone(),
            second: d.abstractive_ref.clone(),
            label: true,
        });
        let k = whole + usize::from(frac > 0.0 && rng.gen_bool(frac));
        for _ in 0..k {
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.push(ParaphrasePair {
                source_id: d.doc_id.clone(),
                first: doc_text.clone(),
                second: summ_corpus[j].abstractive_ref.clone(),
                label: false,
            });
        }
    }
    Ok(out)
}

/// `[CLS] sent1 [SEP] sent2` classification examples.
pub fn build_paraphrase<T: TextEncoder + ?Sized>(
    summ_corpus: &[DocumentRecord],
    msrp: &[ParaphrasePair],
    negative_ratio: f64,
    seed: u64,
    enc: &T,
    max_len: usize,
) -> Result<Vec<TaskExample>> {
    Ok(paraphrase_pairs(summ_corpus, msrp, negative_ratio, seed)?
        .into_iter()
        .map(|p| TaskExample {
            task: TaskId::P,
            input: serialize_pair(&enc.encode_ids(&p.first), &enc.encode_ids(&p.second), max_len),
            target: TaskTarget::Binary(p.label),
            source_id: p.source_id,
        })
        .collect())
}
