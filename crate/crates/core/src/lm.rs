//! Count-based n-gram language models, Jelinek-Mercer scoring, BM25 and
//! first-pass top-k retrieval.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    counts: HashMap<u32, u64>,
    total: u64,
}

/// Maximum-likelihood n-gram conditional probability tables: for each
/// observed context (the `n - 1` preceding term ids), the counts of the
/// following term.
#[derive(Debug, Clone, PartialEq)]
pub struct CountLM {
    n: usize,
    tables: HashMap<Vec<u32>, ContextCounts>,
}

impl CountLM {
    pub fn new(n: usize) -> Result<CountLM> {
        if n < 1 {
            return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
        }
        Ok(CountLM {
            n,
            tables: HashMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Adds every full n-gram of the sequence. Sequences shorter than `n`
    /// contribute nothing (all contexts unseen), which is still a valid
    /// model.
    pub fn add_sequence(&mut self, ids: &[u32]) {
        let ctx_len = self.n - 1;
        if ids.len() < self.n {
            return;
        }
        for i in ctx_len..ids.len() {
            let ctx = ids[i - ctx_len..i].to_vec();
            let entry = self.tables.entry(ctx).or_default();
            *entry.counts.entry(ids[i]).or_insert(0) += 1;
            entry.total += 1;
        }
    }

    pub fn from_sequence(ids: &[u32], n: usize) -> Result<CountLM> {
        let mut lm = CountLM::new(n)?;
        lm.add_sequence(ids);
        Ok(lm)
    }

    /// theta(t | ctx): the count ratio, or 0 for unseen contexts/terms.
    pub fn theta(&self, t: u32, ctx: &[u32]) -> f64 {
        match self.tables.get(ctx) {
            Some(entry) if entry.total > 0 => {
                *entry.counts.get(&t).unwrap_or(&0) as f64 / entry.total as f64
            }
            _ => 0.0,
        }
    }

    /// Per-context totals (for normalization checks).
    pub fn contexts(&self) -> impl Iterator<Item = (&Vec<u32>, Vec<(u32, u64)>, u64)> {
        self.tables.iter().map(|(ctx, entry)| {
            let counts: Vec<(u32, u64)> = entry.counts.iter().map(|(t, c)| (*t, *c)).collect();
            (ctx, counts, entry.total)
        })
    }
}

/// Jelinek-Mercer smoothed query log-likelihood:
/// sum_i log[(1 - lambda) theta_d(q_i | ctx) + lambda theta_C(q_i | ctx)].
/// Returns -inf when both components vanish for some query term.
pub fn jm_log_prob(
    query_ids: &[u32],
    doc_lm: &CountLM,
    coll_lm: &CountLM,
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be in [0,1], got {lambda}"
        )));
    }
    if doc_lm.order() != coll_lm.order() {
        return Err(Error::InvalidArgument(format!(
            "model order mismatch: document {} vs collection {}",
            doc_lm.order(),
            coll_lm.order()
        )));
    }
    let ctx_len = doc_lm.order() - 1;
    let mut score = 0.0;
    for i in 0..query_ids.len() {
        let start = i.saturating_sub(ctx_len);
        let ctx = &query_ids[start..i];
        let p = (1.0 - lambda) * doc_lm.theta(query_ids[i], ctx)
            + lambda * coll_lm.theta(query_ids[i], ctx);
        score += p.ln(); // ln(0) = -inf is allowed
    }
    Ok(score)
}

/// BM25 inverted index. Documents are kept sorted by id so postings order
/// and tie-breaking are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u64>,
    postings: HashMap<u32, Vec<(u32, u32)>>, // term -> [(doc index, tf)]
    avgdl: f64,
}

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.5;

impl InvertedIndex {
    /// Builds the index from (doc_id, term ids) pairs.
    pub fn build(docs: &[(String, Vec<u32>)]) -> Result<InvertedIndex> {
        if docs.is_empty() {
            return Err(Error::Data("empty corpus".into()));
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by(|&a, &b| docs[a].0.cmp(&docs[b].0));
        for pair in order.windows(2) {
            if docs[pair[0]].0 == docs[pair[1]].0 {
                return Err(Error::Data(format!(
                    "duplicate doc_id {:?}",
                    docs[pair[0]].0
                )));
            }
        }
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut postings: HashMap<u32, Vec<(u32, u32)>> = HashMap::new();
        for (idx, &orig) in order.iter().enumerate() {
            let (doc_id, ids) = &docs[orig];
            doc_ids.push(doc_id.clone());
            doc_lengths.push(ids.len() as u64);
            let mut tf: HashMap<u32, u32> = HashMap::new();
            for t in ids {
                *tf.entry(*t).or_insert(0) += 1;
            }
            let mut tf: Vec<(u32, u32)> = tf.into_iter().collect();
            tf.sort_unstable();
            for (term, count) in tf {
                postings.entry(term).or_default().push((idx as u32, count));
            }
        }
        let total: u64 = doc_lengths.iter().sum();
        Ok(InvertedIndex {
            avgdl: total as f64 / doc_ids.len() as f64,
            doc_ids,
            doc_lengths,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u64> {
        self.doc_index(doc_id).map(|i| self.doc_lengths[i])
    }

    fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    pub fn document_frequency(&self, term: u32) -> usize {
        self.postings.get(&term).map_or(0, |p| p.len())
    }

    fn idf(&self, term: u32) -> f64 {
        let df = self.document_frequency(term) as f64;
        if df == 0.0 {
            return 0.0;
        }
        let n = self.num_docs() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_in(&self, term: u32, doc_idx: u32) -> u32 {
        self.postings
            .get(&term)
            .and_then(|p| p.binary_search_by_key(&doc_idx, |(d, _)| *d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    /// Okapi BM25 with a plus-one idf (always non-negative).
    pub fn bm25_score(&self, query_ids: &[u32], doc_id: &str, k1: f64, b: f64) -> Result<f64> {
        let idx = self
            .doc_index(doc_id)
            .ok_or_else(|| Error::Data(format!("unknown doc_id {doc_id:?}")))?;
        let dl = self.doc_lengths[idx] as f64;
        let mut score = 0.0;
        for &term in query_ids {
            let tf = self.tf_in(term, idx as u32) as f64;
            if tf == 0.0 {
                continue;
            }
            let norm = tf + k1 * (1.0 - b + b * dl / self.avgdl);
            score += self.idf(term) * tf * (k1 + 1.0) / norm;
        }
        Ok(score)
    }

    /// Top-k documents by BM25, descending score, ties broken by ascending
    /// doc_id. Documents matching no query term are omitted.
    pub fn retrieve_topk(&self, query_ids: &[u32], k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for &term in query_ids {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc_idx, tf) in postings {
                let dl = self.doc_lengths[doc_idx as usize] as f64;
                let tf = tf as f64;
                let norm = tf + k1 * (1.0 - b + b * dl / self.avgdl);
                *scores.entry(doc_idx).or_insert(0.0) += idf * tf * (k1 + 1.0) / norm;
            }
        }
        let mut ranked: Vec<(String, f64)> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(idx, s)| (self.doc_ids[idx as usize].clone(), s))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }

    const MAGIC: &'static [u8; 4] = b"NIDX";
    const VERSION: u32 = 1;

    /// Binary layout: magic `NIDX`, version, doc count, avgdl, then per-doc
    /// id + length, then term count and per-term postings.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| {
            w.write_all(Self::MAGIC).map_err(|e| Error::io(path, e))?;
            io::put_u32(w, Self::VERSION, path)?;
            io::put_u64(w, self.doc_ids.len() as u64, path)?;
            io::put_f64(w, self.avgdl, path)?;
            for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
                io::put_str(w, id, path)?;
                io::put_u64(w, *len, path)?;
            }
            let mut terms: Vec<u32> = self.postings.keys().copied().collect();
            terms.sort_unstable();
            io::put_u64(w, terms.len() as u64, path)?;
            for term in terms {
                let postings = &self.postings[&term];
                io::put_u32(w, term, path)?;
                io::put_u64(w, postings.len() as u64, path)?;
                for (doc_idx, tf) in postings {
                    io::put_u32(w, *doc_idx, path)?;
                    io::put_u32(w, *tf, path)?;
                }
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<InvertedIndex> {
        let mut r = io::open_reader(path)?;
        io::expect_magic(&mut r, Self::MAGIC, path)?;
        let version = io::get_u32(&mut r, path)?;
        if version != Self::VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported index version {version}",
                path.display()
            )));
        }
        let n_docs = io::get_u64(&mut r, path)? as usize;
        let avgdl = io::get_f64(&mut r, path)?;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_ids.push(io::get_str(&mut r, path)?);
            doc_lengths.push(io::get_u64(&mut r, path)?);
        }
        let n_terms = io::get_u64(&mut r, path)? as usize;
        let mut postings = HashMap::with_capacity(n_terms);
        for _ in 0..n_terms {
            let term = io::get_u32(&mut r, path)?;
            let len = io::get_u64(&mut r, path)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let doc_idx = io::get_u32(&mut r, path)?;
                let tf = io::get_u32(&mut r, path)?;
                list.push((doc_idx, tf));
            }
            postings.insert(term, list);
        }
        Ok(InvertedIndex {
            doc_ids,
            doc_lengths,
            postings,
            avgdl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unigram_counts() {
        let lm = CountLM::from_sequence(&[0, 1, 0], 1).unwrap();
        assert!((lm.theta(0, &[]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((lm.theta(1, &[]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bigram_counts() {
        let lm = CountLM::from_sequence(&[0, 0, 1], 2).unwrap();
        assert!((lm.theta(0, &[0]) - 0.5).abs() < 1e-15);
        assert!((lm.theta(1, &[0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn collection_counts_concatenate() {
        let mut lm = CountLM::new(1).unwrap();
        lm.add_sequence(&[0]);
        lm.add_sequence(&[1]);
        assert!((lm.theta(0, &[]) - 0.5).abs() < 1e-15);
        assert!((lm.theta(1, &[]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn order_larger_than_sequence_is_empty_model() {
        let lm = CountLM::from_sequence(&[0, 1], 5).unwrap();
        assert_eq!(lm.theta(0, &[0, 0, 0, 0]), 0.0);
    }

    #[test]
    fn per_context_normalization() {
        let lm = CountLM::from_sequence(&[0, 1, 0, 2, 0, 1, 1, 2, 0], 2).unwrap();
        for (ctx, counts, total) in lm.contexts() {
            let sum: f64 = counts.iter().map(|(t, _)| lm.theta(*t, ctx)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(counts.iter().map(|(_, c)| c).sum::<u64>(), total);
        }
    }

    #[test]
    fn jm_endpoints() {
        let doc = CountLM::from_sequence(&[0, 1, 0], 1).unwrap();
        let coll = CountLM::from_sequence(&[0, 1], 1).unwrap();
        // lambda = 1: only the collection model
        let s = jm_log_prob(&[0], &doc, &coll, 1.0).unwrap();
        assert!((s - 0.5f64.ln()).abs() < 1e-15);
        // lambda = 0 and term absent from doc: -inf
        let s = jm_log_prob(&[2], &doc, &coll, 0.0).unwrap();
        assert_eq!(s, f64::NEG_INFINITY);
    }

    #[test]
    fn jm_hand_arithmetic() {
        // doc [a,b,a], collection [a,b], query [a], lambda=0.5:
        // log(0.5 * 2/3 + 0.5 * 1/2) = log(7/12)
        let doc = CountLM::from_sequence(&[0, 1, 0], 1).unwrap();
        let coll = CountLM::from_sequence(&[0, 1], 1).unwrap();
        let s = jm_log_prob(&[0], &doc, &coll, 0.5).unwrap();
        assert!((s - (7.0f64 / 12.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn jm_rejects_bad_lambda() {
        let lm = CountLM::from_sequence(&[0], 1).unwrap();
        assert!(jm_log_prob(&[0], &lm, &lm, -0.1).is_err());
        assert!(jm_log_prob(&[0], &lm, &lm, 1.1).is_err());
    }

    fn toy_index() -> InvertedIndex {
        // two docs of equal length, term 0 in doc a only
        InvertedIndex::build(&[
            ("a".into(), vec![0, 1, 1]),
            ("b".into(), vec![1, 2, 2]),
        ])
        .unwrap()
    }

    #[test]
    fn bm25_hand_arithmetic() {
        // N=2, df=1, tf=1, dl=avgdl, k1=1.2, b=0.5:
        // idf = ln(1 + 1.5/1.5) = ln 2; score = ln2 * 2.2/2.2 = ln 2
        let index = toy_index();
        let s = index.bm25_score(&[0], "a", 1.2, 0.5).unwrap();
        assert!((s - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bm25_absent_terms_contribute_zero() {
        let index = toy_index();
        assert_eq!(index.bm25_score(&[7], "a", 1.2, 0.5).unwrap(), 0.0);
        assert_eq!(index.bm25_score(&[], "a", 1.2, 0.5).unwrap(), 0.0);
        assert!(index.bm25_score(&[0], "zzz", 1.2, 0.5).is_err());
    }

    #[test]
    fn bm25_additive_and_order_invariant() {
        let index = toy_index();
        let s01 = index.bm25_score(&[0, 1], "a", 1.2, 0.5).unwrap();
        let s10 = index.bm25_score(&[1, 0], "a", 1.2, 0.5).unwrap();
        let s0 = index.bm25_score(&[0], "a", 1.2, 0.5).unwrap();
        let s1 = index.bm25_score(&[1], "a", 1.2, 0.5).unwrap();
        assert!((s01 - s10).abs() < 1e-15);
        assert!((s01 - (s0 + s1)).abs() < 1e-12);
    }

    #[test]
    fn topk_matches_brute_force() {
        let docs: Vec<(String, Vec<u32>)> = vec![
            ("d1".into(), vec![0, 0, 1]),
            ("d2".into(), vec![0, 2]),
            ("d3".into(), vec![1, 1, 1, 2]),
            ("d4".into(), vec![3]),
        ];
        let index = InvertedIndex::build(&docs).unwrap();
        let query = [0u32, 1];
        let ranked = index.retrieve_topk(&query, 10, 1.2, 0.5);
        // brute force: score every document, sort the same way
        let mut brute: Vec<(String, f64)> = docs
            .iter()
            .map(|(id, _)| {
                (
                    id.clone(),
                    index.bm25_score(&query, id, 1.2, 0.5).unwrap(),
                )
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        assert_eq!(ranked.len(), brute.len());
        for ((d1, s1), (d2, s2)) in ranked.iter().zip(&brute) {
            assert_eq!(d1, d2);
            assert!((s1 - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_ties_break_by_doc_id() {
        let index = InvertedIndex::build(&[
            ("z".into(), vec![0]),
            ("a".into(), vec![0]),
        ])
        .unwrap();
        let ranked = index.retrieve_topk(&[0], 2, 1.2, 0.5);
        assert_eq!(ranked[0].0, "a");
        assert_eq!(ranked[1].0, "z");
        // k = 1 keeps only the argmax
        assert_eq!(index.retrieve_topk(&[0], 1, 1.2, 0.5).len(), 1);
        // k beyond corpus size returns all matches
        assert_eq!(index.retrieve_topk(&[0], 50, 1.2, 0.5).len(), 2);
    }

    #[test]
    fn index_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        let index = toy_index();
        index.save(&path).unwrap();
        let loaded = InvertedIndex::load(&path).unwrap();
        assert_eq!(index, loaded);
    }
}
