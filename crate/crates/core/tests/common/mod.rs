#![allow(dead_code)]

use std::collections::HashMap;

use multisum::decode::StepModel;
use multisum::model::{DecoderConfig, EncoderConfig, ModelConfig, ModelMode};
use multisum::tasks::{TaskExample, TaskId, TaskTarget};
use multisum::tokenizer::{TokenId, TokenSequence, BOS, CLS, EOS, NUM_SPECIAL, SEP};
use multisum::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(vocab: usize, mode: ModelMode, tasks: Vec<TaskId>, hidden: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: 1,
            hidden,
            heads: 2,
            ffn_hidden: 2 * hidden,
            max_len: 16,
            vocab_size: vocab,
        },
        decoder: DecoderConfig {
            hidden,
            embed: hidden / 2,
            attention: hidden / 2,
        },
        mode,
        tasks,
        seed: 1,
    }
}

fn random_body(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len)
        .map(|_| rng.gen_range(NUM_SPECIAL as TokenId..vocab as TokenId))
        .collect()
}

/// Target = the first 5 input tokens.
pub fn copy_pool(n: usize, vocab: usize, seed: u64) -> Vec<TaskExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let body = random_body(&mut rng, vocab, 8);
            let mut input = vec![CLS];
            input.extend(&body);
            let mut target = vec![BOS];
            target.extend(&body[..5]);
            target.push(EOS);
            TaskExample {
                task: TaskId::A,
                source_id: format!("doc-{i}"),
                input: TokenSequence::new(input),
                target: TaskTarget::Sequence(TokenSequence::new(target)),
            }
        })
        .collect()
}

/// `[CLS] a [SEP] b` pairs labeled by whether both sides start with the
/// same token.
pub fn pair_pool(task: TaskId, n: usize, vocab: usize, seed: u64) -> Vec<TaskExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = random_body(&mut rng, vocab, 3);
            let mut b = random_body(&mut rng, vocab, 3);
            let label = rng.gen_bool(0.5);
            if label {
                b[0] = a[0];
            }
            let mut input = vec![CLS];
            input.extend(&a);
            input.push(SEP);
            input.extend(&b);
            TaskExample {
                task,
                source_id: format!("pair-{i}"),
                input: TokenSequence::new(input),
                target: TaskTarget::Binary(a[0] == b[0]),
            }
        })
        .collect()
}

pub fn concept_example(vocab: usize, seed: u64) -> TaskExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = vec![CLS];
    input.extend(random_body(&mut rng, vocab, 6));
    let labels = input.iter().map(|&t| t % 2 == 0).collect();
    TaskExample {
        task: TaskId::C,
        source_id: "c".into(),
        input: TokenSequence::new(input),
        target: TaskTarget::TokenLabels(labels),
    }
}

pub fn mlm_example(vocab: usize, seed: u64) -> TaskExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let original = random_body(&mut rng, vocab, 6);
    let mut input = original.clone();
    input[1] = multisum::tokenizer::MASK;
    input[4] = multisum::tokenizer::MASK;
    TaskExample {
        task: TaskId::L,
        source_id: "l".into(),
        input: TokenSequence::new(input),
        target: TaskTarget::Masked {
            positions: vec![1, 4],
            original: vec![original[1], original[4]],
        },
    }
}

/// Next-token log-probabilities that depend only on the step index and the
/// previous token.
pub struct TableModel {
    pub vocab: usize,
    pub eos: TokenId,
    pub table: Vec<Vec<Vec<f64>>>,
}

impl TableModel {
    pub fn random(vocab: usize, steps: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = (0..steps)
            .map(|_| {
                (0..vocab)
                    .map(|_| {
                        let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
                        multisum_nn::log_softmax(&logits)
                    })
                    .collect()
            })
            .collect();
        Self {
            vocab,
            eos: (vocab - 1) as TokenId,
            table,
        }
    }

    /// Best (tokens, logprob) over every sequence that stops at eos or at
    /// `max_tokens`.
    pub fn exhaustive_best(&self, max_tokens: usize) -> (Vec<TokenId>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut stack = vec![(Vec::<TokenId>::new(), 0.0)];
        while let Some((prefix, lp)) = stack.pop() {
            let prev = prefix.last().copied().unwrap_or(BOS) as usize % self.vocab;
            let row = &self.table[prefix.len()][prev];
            for t in 0..self.vocab {
                let mut seq = prefix.clone();
                seq.push(t as TokenId);
                let score = lp + row[t];
                if t as TokenId == self.eos || seq.len() == max_tokens {
                    if score > best.1 {
                        best = (seq, score);
                    }
                } else {
                    stack.push((seq, score));
                }
            }
        }
        best
    }
}

impl StepModel for TableModel {
    type State = usize;

    fn init(&self, _: &[TokenId]) -> Result<usize> {
        Ok(0)
    }

    fn step(&self, step: &usize, prev: TokenId) -> Result<(Vec<f64>, usize)> {
        Ok((self.table[*step][prev as usize % self.vocab].clone(), step + 1))
    }

    fn bos(&self) -> TokenId {
        BOS
    }

    fn eos(&self) -> TokenId {
        self.eos
    }
}

/// Independent ROUGE: n-gram overlap by sorted merge, LCS by enumerating
/// candidate subsequences.
pub mod oracle {
    use super::HashMap;

    pub fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    fn f1(overlap: f64, c: f64, r: f64) -> (f64, f64, f64) {
        let p = if c > 0.0 { overlap / c } else { 0.0 };
        let rec = if r > 0.0 { overlap / r } else { 0.0 };
        let f = if p + rec > 0.0 { 2.0 * p * rec / (p + rec) } else { 0.0 };
        (p, rec, f)
    }

    pub fn rouge_n(c: &[String], r: &[String], n: usize) -> (f64, f64, f64) {
        let grams = |t: &[String]| {
            let mut g: Vec<String> = if t.len() >= n {
                (0..=t.len() - n).map(|i| t[i..i + n].join("\u{1}")).collect()
            } else {
                Vec::new()
            };
            g.sort();
            g
        };
        let (gc, gr) = (grams(c), grams(r));
        let (mut i, mut j, mut overlap) = (0, 0, 0usize);
        while i < gc.len() && j < gr.len() {
            match gc[i].cmp(&gr[j]) {
                std::cmp::Ordering::Equal => {
                    overlap += 1;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        f1(overlap as f64, gc.len() as f64, gr.len() as f64)
    }

    fn is_subsequence(sub: &[&String], seq: &[String]) -> bool {
        let mut it = seq.iter();
        sub.iter().all(|s| it.any(|x| x == *s))
    }

    /// Longest common subsequence by trying every subset of `a` (|a| ≤ 16).
    pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
        assert!(a.len() <= 16, "brute-force LCS limited to 16 tokens");
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let k = mask.count_ones() as usize;
            if k <= best {
                continue;
            }
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
            if is_subsequence(&sub, b) {
                best = k;
            }
        }
        best
    }

    pub fn rouge_l(c: &[String], r: &[String]) -> (f64, f64, f64) {
        f1(lcs_brute(c, r) as f64, c.len() as f64, r.len() as f64)
    }

    /// Unigram multiset counts, for sanity checks.
    pub fn counts(t: &[String]) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for x in t {
            *m.entry(x.as_str()).or_insert(0) += 1;
        }
        m
    }
}
