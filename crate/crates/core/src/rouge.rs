//! ROUGE-1, ROUGE-2 and summary-level ROUGE-L.
//!
//! Tokens are lowercased alphanumeric runs; punctuation is dropped and no
//! stemming or stopword removal is applied. The `*_tokens` variants accept
//! pre-tokenized input for parity experiments with other tokenizers.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::SPECIAL_TOKENS;

/// Precision, recall and F1 of one metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn from_overlap(overlap: usize, candidate: usize, reference: usize) -> Self {
        let p = if candidate > 0 {
            overlap as f64 / candidate as f64
        } else {
            0.0
        };
        let r = if reference > 0 {
            overlap as f64 / reference as f64
        } else {
            0.0
        };
        Self::new(p, r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

impl RougeScore {
    /// Score known only by its F1 values (e.g. copied from a published
    /// table); precision and recall are set equal to F1.
    pub fn from_f1(r1: f64, r2: f64, rl: f64) -> Self {
        let p = |f| Prf {
            precision: f,
            recall: f,
            f1: f,
        };
        Self {
            r1: p(r1),
            r2: p(r2),
            rl: p(rl),
        }
    }

    /// Mean of the three F1 values.
    pub fn mean_f1(&self) -> f64 {
        (self.r1.f1 + self.r2.f1 + self.rl.f1) / 3.0
    }

    pub fn f1s(&self) -> [f64; 3] {
        [self.r1.f1, self.r2.f1, self.rl.f1]
    }

    /// Component-wise arithmetic mean. `None` for an empty slice.
    pub fn mean(scores: &[RougeScore]) -> Option<RougeScore> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let avg = |f: &dyn Fn(&RougeScore) -> Prf| {
            let (p, r, f1) = scores.iter().fold((0.0, 0.0, 0.0), |acc, s| {
                let x = f(s);
                (acc.0 + x.precision, acc.1 + x.recall, acc.2 + x.f1)
            });
            Prf {
                precision: p / n,
                recall: r / n,
                f1: f1 / n,
            }
        };
        Some(RougeScore {
            r1: avg(&|s| s.r1),
            r2: avg(&|s| s.r2),
            rl: avg(&|s| s.rl),
        })
    }
}

/// Lowercased alphanumeric runs. Special-token surfaces such as `[PAD]`
/// are dropped first.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    let mut text = text.to_string();
    for special in SPECIAL_TOKENS.in_id_order() {
        if text.contains(special) {
            text = text.replace(special, " ");
        }
    }
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Prf {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_overlap(
        overlap,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    rouge_n_tokens(&rouge_tokens(candidate), &rouge_tokens(reference), n)
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Prf {
    Prf::from_overlap(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    rouge_l_tokens(&rouge_tokens(candidate), &rouge_tokens(reference))
}

pub fn score(candidate: &str, reference: &str) -> RougeScore {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    RougeScore {
        r1: rouge_n_tokens(&c, &r, 1),
        r2: rouge_n_tokens(&c, &r, 2),
        rl: rouge_l_tokens(&c, &r),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    /// Per-group means, in order of first appearance.
    pub per_group: Vec<(String, RougeScore)>,
    /// Arithmetic mean of the group means.
    pub mean: RougeScore,
}

impl AggregateScore {
    /// Mean of R1, R2 and RL F1 of the headline score.
    pub fn avg_of_three(&self) -> f64 {
        self.mean.mean_f1()
    }
}

/// Averages already-computed scores within each group, then averages the
/// group means.
pub fn aggregate_scores(scored: &[(String, RougeScore)]) -> Result<AggregateScore> {
    if scored.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut buckets: HashMap<&str, Vec<RougeScore>> = HashMap::new();
    for (g, s) in scored {
        if !buckets.contains_key(g.as_str()) {
            order.push(g.clone());
        }
        buckets.entry(g.as_str()).or_default().push(*s);
    }
    let per_group: Vec<(String, RougeScore)> = order
        .into_iter()
        .map(|g| {
            let m = RougeScore::mean(&buckets[g.as_str()]).expect("non-empty bucket");
            (g, m)
        })
        .collect();
    let means: Vec<RougeScore> = per_group.iter().map(|(_, s)| *s).collect();
    Ok(AggregateScore {
        mean: RougeScore::mean(&means).expect("non-empty"),
        per_group,
    })
}

/// Scores `(group, candidate, reference)` triples and aggregates them.
pub fn aggregate<G, C, R>(pairs: &[(G, C, R)]) -> Result<AggregateScore>
where
    G: AsRef<str>,
    C: AsRef<str>,
    R: AsRef<str>,
{
    let scored: Vec<(String, RougeScore)> = pairs
        .iter()
        .map(|(g, c, r)| (g.as_ref().to_string(), score(c.as_ref(), r.as_ref())))
        .collect();
    aggregate_scores(&scored)
}

/// CSV with columns `group,task_combo,r1_f1,r2_f1,rl_f1`.
pub fn scores_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a RougeScore)>) -> String {
    let mut out = String::from("group,task_combo,r1_f1,r2_f1,rl_f1\n");
    for (group, combo, s) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(group),
            csv_field(combo),
            s.r1.f1,
            s.r2.f1,
            s.rl.f1
        );
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_sat_vs_cat_ate() {
        let c = "the cat sat";
        let r = "the cat ate";
        assert!((rouge_n(c, r, 1).f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((rouge_n(c, r, 2).f1 - 0.5).abs() < 1e-12);
        assert!((rouge_l(c, r).f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_texts_score_one() {
        let t = "students liked the bag adt";
        for n in 1..=5 {
            let s = rouge_n(t, t, n);
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(rouge_l(t, t).f1, 1.0);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(rouge_n("", "some reference", 1), Prf::default());
        assert_eq!(rouge_l("", "some reference"), Prf::default());
    }

    #[test]
    fn subsequence_has_full_precision() {
        let s = rouge_l("cat on mat", "the cat sat on the mat");
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn disjoint_vocabularies() {
        assert_eq!(rouge_l("a b c", "d e f"), Prf::default());
        assert_eq!(rouge_n("a b c", "d e f", 1), Prf::default());
    }

    #[test]
    fn clipping_limits_repeated_ngrams() {
        let s = rouge_n("the the the", "the cat", 1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_single_pair_is_that_pair() {
        let agg = aggregate(&[("g", "the cat sat", "the cat ate")]).unwrap();
        assert_eq!(agg.mean, score("the cat sat", "the cat ate"));
    }

    #[test]
    fn aggregate_averages_groups_not_documents() {
        let agg = aggregate(&[
            ("a", "x", "x"),
            ("a", "x", "x"),
            ("a", "x", "x"),
            ("b", "x", "y"),
        ])
        .unwrap();
        assert_eq!(agg.per_group.len(), 2);
        assert!((agg.mean.r1.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_empty() {
        let empty: [(&str, &str, &str); 0] = [];
        assert!(aggregate(&empty).is_err());
    }

    #[test]
    fn csv_has_expected_header() {
        let s = score("a", "a");
        let csv = scores_csv([("CS", "A P", &s)]);
        assert!(csv.starts_with("group,task_combo,r1_f1,r2_f1,rl_f1\nCS,A P,1,"));
    }
}
