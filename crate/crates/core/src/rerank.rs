//! Mixed unigram/neural query scoring and candidate-list reranking.
//!
//! A query position contributes
//! `(1 - lambda) * ((1 - gamma) theta_d + gamma theta_C) + lambda * P_NN`,
//! where the neural term conditions on the query's own preceding in-vocabulary
//! terms (left-padded). Query terms outside the neural vocabulary are covered
//! by the unigram mixture alone; no renormalization of lambda is applied.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::Run;
use crate::huffman::HuffmanTree;
use crate::lm::CountLM;
use crate::nn::{context_at, next_token_log_prob, DocVector, DocVectorTable, NeuralParams};

/// Mixture weights of the scoring formula.
#[derive(Debug, Clone, Copy)]
pub struct MixParams {
    /// Neural mixture weight.
    pub lambda: f64,
    /// Collection-vs-document unigram weight.
    pub gamma: f64,
}

impl MixParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "lambda and gamma must be in [0,1], got lambda={} gamma={}",
                self.lambda, self.gamma
            )));
        }
        Ok(())
    }
}

/// Neural model bundle used for query scoring.
pub struct NeuralScorer<'a> {
    pub params: &'a NeuralParams,
    pub tree: &'a HuffmanTree,
    /// The neural vocabulary (min-count filtered).
    pub vocab: &'a Vocabulary,
}

impl NeuralScorer<'_> {
    /// Per-position neural log probabilities for a stemmed query. Positions
    /// whose stem is outside the neural vocabulary yield None; in-vocabulary
    /// positions condition on the preceding in-vocabulary terms.
    pub fn query_log_probs(
        &self,
        stems: &[String],
        dv: Option<&DocVector>,
    ) -> Result<Vec<Option<f64>>> {
        let ids: Vec<Option<u32>> = stems.iter().map(|s| self.vocab.id(s)).collect();
        let seq: Vec<u32> = ids.iter().flatten().copied().collect();
        let ctx_len = self.params.config.context_len();
        let padding = self.params.padding_id();
        let mut out = Vec::with_capacity(stems.len());
        let mut pos = 0usize;
        for id in &ids {
            match id {
                None => out.push(None),
                Some(t) => {
                    let ctx = context_at(&seq, pos, ctx_len, padding);
                    out.push(Some(next_token_log_prob(
                        &ctx, *t, self.params, self.tree, dv,
                    )?));
                    pos += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Query log-likelihood under the mixed model. `doc_lm` and `coll_lm` are
/// unigram count models over the retrieval vocabulary.
pub fn nn_mixed_log_prob(
    stems: &[String],
    doc_lm: &CountLM,
    coll_lm: &CountLM,
    retrieval_vocab: &Vocabulary,
    mix: &MixParams,
    scorer: &NeuralScorer,
    dv: Option<&DocVector>,
) -> Result<f64> {
    mix.validate()?;
    if doc_lm.order() != 1 || coll_lm.order() != 1 {
        return Err(Error::InvalidArgument(
            "mixed scoring expects unigram count models".into(),
        ));
    }
    let nn_log_probs = scorer.query_log_probs(stems, dv)?;
    let mut score = 0.0;
    for (stem, nn_logp) in stems.iter().zip(&nn_log_probs) {
        let (theta_d, theta_c) = match retrieval_vocab.id(stem) {
            Some(t) => (doc_lm.theta(t, &[]), coll_lm.theta(t, &[])),
            None => (0.0, 0.0),
        };
        let unigram = (1.0 - mix.gamma) * theta_d + mix.gamma * theta_c;
        let mut p = (1.0 - mix.lambda) * unigram;
        if let Some(logp) = nn_logp {
            p += mix.lambda * logp.exp();
        }
        score += p.ln(); // -inf allowed when every component vanishes
    }
    Ok(score)
}

/// Everything needed to rescore candidates: the retrieval-side statistics
/// and the neural model.
pub struct RerankModels<'a> {
    pub retrieval_vocab: &'a Vocabulary,
    pub coll_lm: &'a CountLM,
    /// Retrieval-encoded term ids per document.
    pub doc_terms: &'a HashMap<String, Vec<u32>>,
    pub scorer: NeuralScorer<'a>,
    /// When present, candidates are scored with their fitted vectors and a
    /// missing vector is an error.
    pub dv_table: Option<&'a DocVectorTable>,
}

/// Reranks each topic's candidate list by the mixed score, descending, ties
/// broken by ascending doc id. The output is a permutation of the input
/// candidates.
pub fn rerank_run(
    candidates: &Run,
    queries: &BTreeMap<String, Vec<String>>,
    mix: &MixParams,
    models: &RerankModels,
) -> Result<Run> {
    mix.validate()?;
    if let Some(table) = models.dv_table {
        let missing: Vec<&String> = candidates
            .values()
            .flatten()
            .map(|(d, _)| d)
            .filter(|d| !table.vectors.contains_key(*d))
            .collect();
        if !missing.is_empty() {
            let mut ids: Vec<String> = missing.iter().map(|s| s.to_string()).collect();
            ids.sort();
            ids.dedup();
            return Err(Error::Data(format!(
                "missing document vectors for: {}",
                ids.join(", ")
            )));
        }
    }
    let mut out = Run::new();
    for (topic, ranking) in candidates {
        let stems = queries
            .get(topic)
            .ok_or_else(|| Error::Data(format!("no query for topic {topic}")))?;
        let mut scored = Vec::with_capacity(ranking.len());
        for (doc_id, _) in ranking {
            let ids = models
                .doc_terms
                .get(doc_id)
                .ok_or_else(|| Error::Data(format!("unknown candidate document {doc_id:?}")))?;
            let doc_lm = CountLM::from_sequence(ids, 1)?;
            let dv = models.dv_table.and_then(|t| t.get(doc_id));
            let score = nn_mixed_log_prob(
                stems,
                &doc_lm,
                models.coll_lm,
                models.retrieval_vocab,
                mix,
                &models.scorer,
                dv.as_ref(),
            )?;
            scored.push((doc_id.clone(), score));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        out.insert(topic.clone(), scored);
    }
    Ok(out)
}

/// One reranked run per lambda value, each tagged
/// `<arch>-<mode|generic>-l<lambda>-g<gamma>`.
pub fn sweep_lambda(
    candidates: &Run,
    queries: &BTreeMap<String, Vec<String>>,
    lambdas: &[f64],
    gamma: f64,
    models: &RerankModels,
) -> Result<Vec<(f64, String, Run)>> {
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mix = MixParams { lambda, gamma };
        let run = rerank_run(candidates, queries, &mix, models)?;
        let mode = models
            .dv_table
            .map_or("generic", |t| t.mode.name());
        let tag = format!(
            "{}-{}-l{}-g{}",
            models.scorer.params.config.arch.name(),
            mode,
            lambda,
            gamma
        );
        out.push((lambda, tag, run));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Document};
    use crate::huffman::build_huffman;
    use crate::lm::jm_log_prob;
    use crate::nn::{Arch, MergeMode, NeuralConfig};

    struct Fixture {
        vocab: Vocabulary,
        params: NeuralParams,
        tree: HuffmanTree,
        coll_lm: CountLM,
        doc_terms: HashMap<String, Vec<u32>>,
    }

    /// Four equally frequent stems and a zeroed model, so every neural
    /// probability is exactly 1/4 (balanced Huffman tree, sigmoid(0)).
    fn fixture() -> Fixture {
        let texts = [("d1", "a b a c"), ("d2", "b c d d")];
        let docs: Vec<Document> = texts
            .iter()
            .map(|(id, t)| Document {
                doc_id: id.to_string(),
                tokens: tokenize(t),
            })
            .collect();
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let config = NeuralConfig {
            arch: Arch::M1,
            n: 3,
            m0: 4,
            m1: 4,
            m2: 4,
            kappa: 2,
        };
        let mut params = NeuralParams::init(config, vocab.len(), 0).unwrap();
        for (_, t) in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let tree = build_huffman(&[1, 1, 1, 1]).unwrap();
        let mut coll_lm = CountLM::new(1).unwrap();
        let mut doc_terms = HashMap::new();
        for d in &docs {
            let ids = vocab.encode(&d.tokens);
            coll_lm.add_sequence(&ids);
            doc_terms.insert(d.doc_id.clone(), ids);
        }
        Fixture {
            vocab,
            params,
            tree,
            coll_lm,
            doc_terms,
        }
    }

    #[test]
    fn hand_arithmetic_case() {
        // theta_d(a) = 2/3 in [a,b,a]; theta_C(a) = 1/2; P_NN = 1/4:
        // log(0.5 * (0.5*2/3 + 0.5*1/2) + 0.5 * 0.25) = log(0.5*7/12 + 0.125)
        let f = fixture();
        let doc_lm = CountLM::from_sequence(&f.vocab.encode(&tokenize("a b a")), 1).unwrap();
        let coll_lm = CountLM::from_sequence(&f.vocab.encode(&tokenize("a b")), 1).unwrap();
        let scorer = NeuralScorer {
            params: &f.params,
            tree: &f.tree,
            vocab: &f.vocab,
        };
        let mix = MixParams {
            lambda: 0.5,
            gamma: 0.5,
        };
        let stems = tokenize("a");
        let s = nn_mixed_log_prob(&stems, &doc_lm, &coll_lm, &f.vocab, &mix, &scorer, None)
            .unwrap();
        let expect = (0.5f64 * (7.0 / 12.0) + 0.5 * 0.25).ln();
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
    }

    #[test]
    fn lambda_zero_reduces_to_gamma_weighted_jm() {
        let f = fixture();
        let scorer = NeuralScorer {
            params: &f.params,
            tree: &f.tree,
            vocab: &f.vocab,
        };
        let gamma = 0.3;
        let mix = MixParams { lambda: 0.0, gamma };
        let stems = tokenize("a c b");
        let query = f.vocab.encode(&stems);
        for ids in f.doc_terms.values() {
            let doc_lm = CountLM::from_sequence(ids, 1).unwrap();
            let mixed =
                nn_mixed_log_prob(&stems, &doc_lm, &f.coll_lm, &f.vocab, &mix, &scorer, None)
                    .unwrap();
            let jm = jm_log_prob(&query, &doc_lm, &f.coll_lm, gamma).unwrap();
            assert!((mixed - jm).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_one_is_purely_neural() {
        let f = fixture();
        let scorer = NeuralScorer {
            params: &f.params,
            tree: &f.tree,
            vocab: &f.vocab,
        };
        let mix = MixParams {
            lambda: 1.0,
            gamma: 0.5,
        };
        let stems = tokenize("a b");
        let doc_lm = CountLM::from_sequence(&f.doc_terms["d1"], 1).unwrap();
        let s = nn_mixed_log_prob(&stems, &doc_lm, &f.coll_lm, &f.vocab, &mix, &scorer, None)
            .unwrap();
        // two positions at probability 1/4 each
        assert!((s - 2.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_mixture_weights() {
        assert!(MixParams { lambda: -0.1, gamma: 0.5 }.validate().is_err());
        assert!(MixParams { lambda: 0.5, gamma: 1.5 }.validate().is_err());
    }

    fn toy_candidates(_f: &Fixture) -> (Run, BTreeMap<String, Vec<String>>) {
        let mut candidates = Run::new();
        candidates.insert(
            "1".into(),
            vec![("d1".into(), 2.0), ("d2".into(), 1.0)],
        );
        let mut queries = BTreeMap::new();
        queries.insert("1".to_string(), tokenize("a b"));
        (candidates, queries)
    }

    #[test]
    fn rerank_is_a_permutation_and_order_invariant() {
        let f = fixture();
        let models = RerankModels {
            retrieval_vocab: &f.vocab,
            coll_lm: &f.coll_lm,
            doc_terms: &f.doc_terms,
            scorer: NeuralScorer {
                params: &f.params,
                tree: &f.tree,
                vocab: &f.vocab,
            },
            dv_table: None,
        };
        let (candidates, queries) = toy_candidates(&f);
        let mix = MixParams {
            lambda: 0.5,
            gamma: 0.5,
        };
        let out = rerank_run(&candidates, &queries, &mix, &models).unwrap();
        let mut in_docs: Vec<&String> = candidates["1"].iter().map(|(d, _)| d).collect();
        let mut out_docs: Vec<&String> = out["1"].iter().map(|(d, _)| d).collect();
        in_docs.sort();
        out_docs.sort();
        assert_eq!(in_docs, out_docs);

        // permuted input candidate order gives identical output
        let mut permuted = candidates.clone();
        permuted.get_mut("1").unwrap().reverse();
        let out2 = rerank_run(&permuted, &queries, &mix, &models).unwrap();
        assert_eq!(out, out2);

        // single-candidate list keeps its document
        let mut single = Run::new();
        single.insert("1".into(), vec![("d2".into(), 1.0)]);
        let out3 = rerank_run(&single, &queries, &mix, &models).unwrap();
        assert_eq!(out3["1"].len(), 1);
        assert_eq!(out3["1"][0].0, "d2");
    }

    #[test]
    fn identity_vectors_match_generic_reranking() {
        let f = fixture();
        let dim = f.params.config.state_dim();
        let mut table = DocVectorTable::new(MergeMode::Sum, dim);
        for doc_id in f.doc_terms.keys() {
            table
                .vectors
                .insert(doc_id.clone(), DocVector::identity(MergeMode::Sum, dim).values);
        }
        let scorer = NeuralScorer {
            params: &f.params,
            tree: &f.tree,
            vocab: &f.vocab,
        };
        let generic = RerankModels {
            retrieval_vocab: &f.vocab,
            coll_lm: &f.coll_lm,
            doc_terms: &f.doc_terms,
            scorer,
            dv_table: None,
        };
        let specific = RerankModels {
            dv_table: Some(&table),
            scorer: NeuralScorer {
                params: &f.params,
                tree: &f.tree,
                vocab: &f.vocab,
            },
            ..generic
        };
        let (candidates, queries) = toy_candidates(&f);
        let mix = MixParams {
            lambda: 0.7,
            gamma: 0.5,
        };
        let a = rerank_run(&candidates, &queries, &mix, &generic).unwrap();
        let b = rerank_run(&candidates, &queries, &mix, &specific).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_doc_vector_is_an_error_listing_ids() {
        let f = fixture();
        let table = DocVectorTable::new(MergeMode::Sum, f.params.config.state_dim());
        let models = RerankModels {
            retrieval_vocab: &f.vocab,
            coll_lm: &f.coll_lm,
            doc_terms: &f.doc_terms,
            scorer: NeuralScorer {
                params: &f.params,
                tree: &f.tree,
                vocab: &f.vocab,
            },
            dv_table: Some(&table),
        };
        let (candidates, queries) = toy_candidates(&f);
        let mix = MixParams {
            lambda: 0.5,
            gamma: 0.5,
        };
        let err = rerank_run(&candidates, &queries, &mix, &models).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d1") && msg.contains("d2"), "{msg}");
    }

    #[test]
    fn sweep_emits_one_run_per_lambda() {
        let f = fixture();
        let models = RerankModels {
            retrieval_vocab: &f.vocab,
            coll_lm: &f.coll_lm,
            doc_terms: &f.doc_terms,
            scorer: NeuralScorer {
                params: &f.params,
                tree: &f.tree,
                vocab: &f.vocab,
            },
            dv_table: None,
        };
        let (candidates, queries) = toy_candidates(&f);
        let runs = sweep_lambda(&candidates, &queries, &[0.0, 1.0], 0.5, &models).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].1, "M1-generic-l0-g0.5");
        let empty = sweep_lambda(&candidates, &queries, &[], 0.5, &models).unwrap();
        assert!(empty.is_empty());
    }
}
