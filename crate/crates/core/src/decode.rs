//! Beam search and greedy decoding.
//!
//! Scores are raw cumulative log-probabilities with no length penalty.
//! Candidates are ranked by score, then by the rank of the beam they extend,
//! then by token id. Among finished hypotheses with equal scores the one
//! that finished first wins.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecoderState, MultitaskModel};
use crate::tokenizer::{TextEncoder, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_tokens: 50,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_tokens == 0 {
            return Err(Error::Config(format!(
                "beam_width and max_tokens must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Generated tokens (ending with eos when the model emitted it) and their
/// cumulative log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the trailing eos.
    pub fn summary_tokens(&self, eos: TokenId) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.tokens,
        }
    }
}

/// Anything that produces next-token log-probabilities step by step.
pub trait StepModel {
    type State: Clone;

    fn init(&self, source: &[TokenId]) -> Result<Self::State>;

    fn step(&self, state: &Self::State, prev: TokenId) -> Result<(Vec<f64>, Self::State)>;

    fn bos(&self) -> TokenId;

    fn eos(&self) -> TokenId;
}

impl StepModel for MultitaskModel {
    type State = DecoderState;

    fn init(&self, source: &[TokenId]) -> Result<DecoderState> {
        self.start_decoding(source)
    }

    fn step(&self, state: &DecoderState, prev: TokenId) -> Result<(Vec<f64>, DecoderState)> {
        self.decode_step(state, prev)
    }

    fn bos(&self) -> TokenId {
        MultitaskModel::bos(self)
    }

    fn eos(&self) -> TokenId {
        MultitaskModel::eos(self)
    }
}

struct Beam<S> {
    tokens: Vec<TokenId>,
    logprob: f64,
    state: S,
}

/// Highest-scoring finished hypothesis among those explored.
pub fn beam_search<M: StepModel>(model: &M, source: &[TokenId], cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let eos = model.eos();
    let mut live = vec![Beam {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.init(source)?,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..cfg.max_tokens {
        let mut expanded = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (bi, beam) in live.iter().enumerate() {
            let prev = beam.tokens.last().copied().unwrap_or_else(|| model.bos());
            let (logprobs, state) = model.step(&beam.state, prev)?;
            cands.extend(
                logprobs
                    .iter()
                    .enumerate()
                    .map(|(t, &lp)| (beam.logprob + lp, bi, t as TokenId)),
            );
            expanded.push(state);
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        cands.truncate(cfg.beam_width);

        let last_step = step + 1 == cfg.max_tokens;
        let mut next = Vec::with_capacity(cands.len());
        for (score, bi, tok) in cands {
            let mut tokens = live[bi].tokens.clone();
            tokens.push(tok);
            if tok == eos || last_step {
                finished.push(Hypothesis {
                    tokens,
                    logprob: score,
                    finished: true,
                });
            } else {
                next.push(Beam {
                    tokens,
                    logprob: score,
                    state: expanded[bi].clone(),
                });
            }
        }
        live = next;

        // Scores never increase, so no live beam can overtake a finished one
        // that already scores at least as well.
        let best_finished = best_index(&finished).map(|i| finished[i].logprob);
        let best_live = live.iter().map(|b| b.logprob).max_by(f64::total_cmp);
        match (best_finished, best_live) {
            (_, None) => break,
            (Some(f), Some(l)) if f >= l => break,
            _ => {}
        }
    }

    let i = best_index(&finished).expect("every search finishes at least one hypothesis");
    Ok(finished.swap_remove(i))
}

/// First hypothesis with the maximal score.
fn best_index(hyps: &[Hypothesis]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in hyps.iter().enumerate() {
        if best.is_none_or(|b| h.logprob.total_cmp(&hyps[b].logprob) == Ordering::Greater) {
            best = Some(i);
        }
    }
    best
}

/// Takes the most likely token at every step (lowest id on ties).
pub fn greedy<M: StepModel>(model: &M, source: &[TokenId], max_tokens: usize) -> Result<Hypothesis> {
    if max_tokens == 0 {
        return Err(Error::Config("max_tokens must be >= 1".into()));
    }
    let eos = model.eos();
    let mut state = model.init(source)?;
    let mut prev = model.bos();
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    while tokens.len() < max_tokens {
        let (lp, next) = model.step(&state, prev)?;
        let mut best = 0;
        for (t, v) in lp.iter().enumerate() {
            if v.total_cmp(&lp[best]) == Ordering::Greater {
                best = t;
            }
        }
        logprob += lp[best];
        prev = best as TokenId;
        tokens.push(prev);
        if prev == eos {
            break;
        }
        state = next;
    }
    Ok(Hypothesis {
        tokens,
        logprob,
        finished: true,
    })
}

/// One line of decoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSummary {
    pub doc_id: String,
    pub summary: String,
    pub logprob: f64,
}

/// Beam-decodes every `(doc_id, source)` pair in parallel, keeping input
/// order.
pub fn decode_all<T: TextEncoder + Sync + ?Sized>(
    model: &MultitaskModel,
    sources: &[(String, Vec<TokenId>)],
    cfg: &DecodeConfig,
    enc: &T,
) -> Result<Vec<DecodedSummary>> {
    sources
        .par_iter()
        .map(|(doc_id, src)| {
            let hyp = beam_search(model, src, cfg)?;
            Ok(DecodedSummary {
                doc_id: doc_id.clone(),
                summary: enc.decode(hyp.summary_tokens(model.eos())),
                logprob: hyp.logprob,
            })
        })
        .collect()
}

pub fn write_summaries_jsonl(summaries: &[DecodedSummary], w: &mut impl Write) -> std::io::Result<()> {
    for s in summaries {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Next-token distribution depends only on the step index and the
    /// previous token.
    pub(crate) struct TableModel {
        pub vocab: usize,
        pub eos: TokenId,
        pub table: Vec<Vec<Vec<f64>>>,
    }

    impl StepModel for TableModel {
        type State = usize;

        fn init(&self, _: &[TokenId]) -> Result<usize> {
            Ok(0)
        }

        fn step(&self, step: &usize, prev: TokenId) -> Result<(Vec<f64>, usize)> {
            let s = (*step).min(self.table.len() - 1);
            Ok((self.table[s][prev as usize % self.vocab].clone(), step + 1))
        }

        fn bos(&self) -> TokenId {
            0
        }

        fn eos(&self) -> TokenId {
            self.eos
        }
    }

    fn certain_eos() -> TableModel {
        let mut row = vec![f64::NEG_INFINITY; 4];
        row[3] = 0.0;
        TableModel {
            vocab: 4,
            eos: 3,
            table: vec![vec![row; 4]],
        }
    }

    #[test]
    fn certain_eos_gives_empty_summary() {
        let m = certain_eos();
        let h = beam_search(&m, &[], &DecodeConfig::default()).unwrap();
        assert!(h.finished);
        assert!(h.summary_tokens(3).is_empty());
        assert_eq!(h.logprob, 0.0);
        assert_eq!(greedy(&m, &[], 10).unwrap().tokens, vec![3]);
    }

    #[test]
    fn greedy_stops_at_max_tokens() {
        let row = vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let m = TableModel {
            vocab: 3,
            eos: 2,
            table: vec![vec![row; 3]],
        };
        let h = greedy(&m, &[], 4).unwrap();
        assert_eq!(h.tokens, vec![0; 4]);
        let b = beam_search(&m, &[], &DecodeConfig { beam_width: 3, max_tokens: 4 }).unwrap();
        assert_eq!(b.tokens.len(), 4);
    }

    #[test]
    fn invalid_config_rejected() {
        let m = certain_eos();
        assert!(beam_search(&m, &[], &DecodeConfig { beam_width: 0, max_tokens: 5 }).is_err());
    }

    #[test]
    fn jsonl_has_expected_keys() {
        let mut buf = Vec::new();
        write_summaries_jsonl(
            &[DecodedSummary {
                doc_id: "d".into(),
                summary: "s".into(),
                logprob: -1.5,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"doc_id\":\"d\",\"summary\":\"s\",\"logprob\":-1.5}\n");
    }
}
