//! Small generated corpora shaped like student-reflection data, for tests,
//! demos and dry runs of the sweep.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{course_mirror_counts, DatasetManifest, DocumentRecord, Split};
use crate::error::Result;
use crate::tasks::ParaphrasePair;

const TOPICS: [&str; 12] = [
    "bags", "arrays", "stacks", "queues", "recursion", "pointers", "graphs", "sorting", "hashing", "trees",
    "loops", "classes",
];

const OPENERS: [&str; 6] = [
    "i liked learning about",
    "the lecture on",
    "i was confused by",
    "the examples of",
    "we talked about",
    "it was interesting to see",
];

const CLOSERS: [&str; 6] = [
    "in class today",
    "with the drawings",
    "and the assignment",
    "in real code",
    "on the whiteboard",
    "and their methods",
];

/// Groups of documents, each with 4-8 reflections about a couple of topics
/// and a summary naming them.
pub fn course_corpus(groups: &[(&str, usize)], seed: u64) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (group, n) in groups {
        for i in 0..*n {
            records.push(document(&format!("{group}-{i:03}"), group, &mut rng));
        }
    }
    DatasetManifest::new("synthetic-course", records)
}

fn document(doc_id: &str, group: &str, rng: &mut ChaCha8Rng) -> DocumentRecord {
    let topics: Vec<&str> = TOPICS.choose_multiple(rng, 2).copied().collect();
    let n = rng.gen_range(4..=8);
    let sentences: Vec<String> = (0..n)
        .map(|_| {
            let topic = if rng.gen_bool(0.7) { topics[0] } else { topics[1] };
            format!(
                "{} {} {}.",
                OPENERS.choose(rng).expect("non-empty"),
                topic,
                CLOSERS.choose(rng).expect("non-empty")
            )
        })
        .collect();
    let extractive: Vec<String> = sentences
        .iter()
        .filter(|s| s.contains(topics[0]))
        .take(2)
        .cloned()
        .collect();
    DocumentRecord {
        doc_id: doc_id.to_string(),
        group: group.to_string(),
        split: Split::Train,
        abstractive_ref: format!("students discussed {} and {}.", topics[0], topics[1]),
        extractive_ref: (!extractive.is_empty()).then_some(extractive),
        sentences,
    }
}

/// 370 documents in four courses with the published per-course split
/// sizes declared.
pub fn course_mirror_shaped(seed: u64) -> Result<DatasetManifest> {
    let counts = course_mirror_counts();
    let groups: Vec<(&str, usize)> = counts.iter().map(|(g, c)| (g.as_str(), c.test)).collect();
    course_corpus(&groups, seed)?.with_declared_counts(counts)
}

/// Sentence pairs labeled by whether both mention the same topic.
pub fn paraphrase_pairs(n: usize, seed: u64) -> Vec<ParaphrasePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = TOPICS.choose(&mut rng).expect("non-empty");
            let same = rng.gen_bool(0.5);
            let b = if same {
                a
            } else {
                TOPICS.iter().filter(|t| *t != a).collect::<Vec<_>>().choose(&mut rng).copied().expect("non-empty")
            };
            ParaphrasePair {
                source_id: format!("pair-{i}"),
                first: format!("{} {}.", OPENERS.choose(&mut rng).expect("non-empty"), a),
                second: format!("{} {}.", OPENERS.choose(&mut rng).expect("non-empty"), b),
                label: same,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn course_mirror_shape() {
        let m = course_mirror_shaped(0).unwrap();
        assert_eq!(m.len(), 370);
        assert_eq!(m.group_count("CS"), 138);
    }

    #[test]
    fn generation_is_seeded() {
        let a = course_corpus(&[("x", 3)], 4).unwrap();
        let b = course_corpus(&[("x", 3)], 4).unwrap();
        assert_eq!(a.records, b.records);
    }
}
