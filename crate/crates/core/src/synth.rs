//! Deterministic synthetic retrieval collection for tests and demos.
//!
//! Documents mix topic-specific words with a background word stream that
//! follows a strong bigram pattern, so both retrieval quality and n-gram
//! learnability can be exercised on data that is cheap to regenerate.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::porter::stem;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    /// Distinct topical words reserved per topic.
    pub words_per_topic: usize,
    pub doc_len: usize,
    /// Probability a document position is drawn from its topic words rather
    /// than the background chain.
    pub topic_word_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            num_docs: 500,
            num_topics: 50,
            vocab_size: 200,
            words_per_topic: 3,
            doc_len: 100,
            topic_word_prob: 0.4,
            seed: 42,
        }
    }
}

#[derive(Debug)]
pub struct SynthCollection {
    pub docs: Vec<Document>,
    /// Topic id -> query words.
    pub queries: BTreeMap<String, Vec<String>>,
    pub qrels: Qrels,
}

/// Invented words built from consonant-vowel syllables, kept only when the
/// stemmer leaves them unchanged so tokenized text round-trips exactly.
fn word_list(count: usize) -> Result<Vec<String>> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut words = Vec::with_capacity(count);
    let mut seen_stems = HashSet::new();
    'outer: for &c1 in CONSONANTS {
        for &v1 in VOWELS {
            for &c2 in CONSONANTS {
                for &v2 in VOWELS {
                    let w = String::from_utf8(vec![c1, v1, c2, v2]).unwrap();
                    let s = stem(&w);
                    if s == w && seen_stems.insert(s) {
                        words.push(w);
                        if words.len() == count {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    if words.len() < count {
        return Err(Error::InvalidArgument(format!(
            "cannot build {count} distinct synthetic words"
        )));
    }
    Ok(words)
}

/// Generates documents, per-topic queries, and relevance judgments. Output is
/// fully determined by the configuration, including the seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCollection> {
    if cfg.num_topics == 0 || cfg.num_docs < cfg.num_topics || cfg.doc_len == 0 {
        return Err(Error::InvalidArgument(
            "synthetic collection needs at least one document per topic".into(),
        ));
    }
    let reserved = cfg.num_topics * cfg.words_per_topic;
    if cfg.vocab_size < reserved + 2 {
        return Err(Error::InvalidArgument(format!(
            "vocab_size {} too small for {} topics x {} words plus background",
            cfg.vocab_size, cfg.num_topics, cfg.words_per_topic
        )));
    }
    let words = word_list(cfg.vocab_size)?;
    let (topic_pool, background) = words.split_at(reserved);
    let nb = background.len();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut queries = BTreeMap::new();
    let mut qrels_topics: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut docs = Vec::with_capacity(cfg.num_docs);
    for d in 0..cfg.num_docs {
        let topic = d % cfg.num_topics;
        let topic_id = format!("{}", topic + 1);
        let topic_words =
            &topic_pool[topic * cfg.words_per_topic..(topic + 1) * cfg.words_per_topic];
        queries
            .entry(topic_id.clone())
            .or_insert_with(|| topic_words.to_vec());
        let doc_id = format!("SYN-{:04}", d + 1);
        qrels_topics
            .entry(topic_id)
            .or_default()
            .insert(doc_id.clone());

        let mut tokens = Vec::with_capacity(cfg.doc_len);
        let mut bg = rng.gen_range(0..nb);
        for _ in 0..cfg.doc_len {
            if rng.gen_bool(cfg.topic_word_prob) {
                tokens.push(topic_words[rng.gen_range(0..topic_words.len())].clone());
            } else {
                // background bigram chain: mostly the fixed successor, so the
                // stream has structure an n-gram model can pick up
                bg = if rng.gen_bool(0.9) {
                    (bg + 1) % nb
                } else {
                    rng.gen_range(0..nb)
                };
                tokens.push(background[bg].clone());
            }
        }
        docs.push(Document { doc_id, tokens });
    }

    Ok(SynthCollection {
        docs,
        queries,
        qrels: Qrels {
            topics: qrels_topics,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            num_docs: 40,
            num_topics: 8,
            vocab_size: 60,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.docs.len(), 40);
        for (x, y) in a.docs.iter().zip(&b.docs) {
            assert_eq!(x.doc_id, y.doc_id);
            assert_eq!(x.tokens, y.tokens);
        }
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.qrels.topics, b.qrels.topics);
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = SynthConfig {
            num_docs: 10,
            num_topics: 2,
            vocab_size: 30,
            seed: 1,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&SynthConfig { seed: 2, ..cfg }).unwrap();
        assert!(a.docs.iter().zip(&b.docs).any(|(x, y)| x.tokens != y.tokens));
    }

    #[test]
    fn words_survive_tokenization_unchanged() {
        let cfg = SynthConfig {
            num_docs: 10,
            num_topics: 2,
            vocab_size: 30,
            ..SynthConfig::default()
        };
        let coll = generate(&cfg).unwrap();
        for doc in &coll.docs {
            let text = doc.tokens.join(" ");
            assert_eq!(tokenize(&text), doc.tokens);
        }
    }

    #[test]
    fn every_topic_has_queries_and_relevant_docs() {
        let coll = generate(&SynthConfig::default()).unwrap();
        assert_eq!(coll.queries.len(), 50);
        assert_eq!(coll.qrels.topics.len(), 50);
        for rel in coll.qrels.topics.values() {
            assert_eq!(rel.len(), 10); // 500 docs round-robin over 50 topics
        }
        // topic word sets are disjoint
        let mut seen = HashSet::new();
        for q in coll.queries.values() {
            for w in q {
                assert!(seen.insert(w.clone()), "topic word {w} reused");
            }
        }
    }

    #[test]
    fn rejects_impossible_configurations() {
        assert!(generate(&SynthConfig {
            vocab_size: 10,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            num_docs: 5,
            num_topics: 10,
            ..SynthConfig::default()
        })
        .is_err());
    }
}
