use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TaskExample, TaskId, TaskTarget};
use crate::error::{Error, Result};
use crate::tokenizer::{TextEncoder, TokenId, TokenSequence, MASK, NUM_SPECIAL};

/// Token selection probability and what happens to a selected token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub mask_prob: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
    pub keep: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            replace_mask: 0.80,
            replace_random: 0.10,
            keep: 0.10,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        let shares = [self.replace_mask, self.replace_random, self.keep];
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.mask_prob) || !shares.iter().all(|&s| in_unit(s)) {
            return Err(Error::Config(format!("masking probabilities outside [0, 1]: {self:?}")));
        }
        if (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "masking replacement shares must sum to 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTokens {
    pub ids: Vec<TokenId>,
    pub positions: Vec<usize>,
    pub original: Vec<TokenId>,
}

/// Selects each position independently with `mask_prob`; a selected token
/// becomes `[MASK]`, a uniformly random regular token, or stays as is.
pub fn mask_tokens(
    ids: &[TokenId],
    policy: &MaskingPolicy,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> MaskedTokens {
    let mut out = MaskedTokens {
        ids: ids.to_vec(),
        positions: Vec::new(),
        original: Vec::new(),
    };
    for (pos, &id) in ids.iter().enumerate() {
        if !rng.gen_bool(policy.mask_prob) {
            continue;
        }
        out.positions.push(pos);
        out.original.push(id);
        let u: f64 = rng.gen();
        out.ids[pos] = if u < policy.replace_mask {
            MASK
        } else if u < policy.replace_mask + policy.replace_random {
            if vocab_size > NUM_SPECIAL {
                rng.gen_range(NUM_SPECIAL as TokenId..vocab_size as TokenId)
            } else {
                MASK
            }
        } else {
            id
        };
    }
    out
}

/// Masked-LM example over the tokens of `text`.
pub fn build_mlm<T: TextEncoder + ?Sized>(
    text: &str,
    policy: &MaskingPolicy,
    seed: u64,
    enc: &T,
    max_len: usize,
) -> TaskExample {
    let seq = enc.encode(text, max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked = mask_tokens(&seq.ids, policy, enc.vocab_size(), &mut rng);
    TaskExample {
        task: TaskId::L,
        source_id: String::new(),
        input: TokenSequence {
            ids: masked.ids,
            truncated: seq.truncated,
        },
        target: TaskTarget::Masked {
            positions: masked.positions,
            original: masked.original,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocab;

    fn vocab() -> crate::tokenizer::Vocabulary {
        build_vocab(["a b c d e f g h"], 1).unwrap()
    }

    #[test]
    fn zero_probability_masks_nothing() {
        let policy = MaskingPolicy {
            mask_prob: 0.0,
            ..Default::default()
        };
        let ex = build_mlm("a b c d e f g h", &policy, 1, &vocab(), 64);
        assert_eq!(
            ex.target,
            TaskTarget::Masked {
                positions: vec![],
                original: vec![]
            }
        );
    }

    #[test]
    fn full_masking_replaces_everything() {
        let policy = MaskingPolicy {
            mask_prob: 1.0,
            replace_mask: 1.0,
            replace_random: 0.0,
            keep: 0.0,
        };
        let v = vocab();
        let ex = build_mlm("a b c d", &policy, 1, &v, 64);
        assert!(ex.input.ids.iter().all(|&t| t == MASK));
        let TaskTarget::Masked { positions, original } = &ex.target else { panic!() };
        assert_eq!(positions, &[0, 1, 2, 3]);
        assert_eq!(original, &v.encode_ids("a b c d"));
        ex.validate().unwrap();
    }

    #[test]
    fn seeded_masking_is_deterministic() {
        let v = vocab();
        let text = "a b c d e f g h a b c d e f g h";
        let p = MaskingPolicy::default();
        assert_eq!(build_mlm(text, &p, 9, &v, 64), build_mlm(text, &p, 9, &v, 64));
    }

    #[test]
    fn policy_validation() {
        assert!(MaskingPolicy::default().validate().is_ok());
        let bad = MaskingPolicy {
            keep: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
