//! Tokenization, vocabulary construction and document encoding.
//!
//! Two vocabularies are used in practice: retrieval structures (BM25 index,
//! count language models) are built with `min_count = 1`, while the neural
//! model's vocabulary drops stems occurring fewer than 5 times.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::porter;

/// A document after preprocessing: its identifier and stemmed tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Lowercases, splits on non-alphanumeric runs and Porter-stems each token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_filtered(text, None)
}

/// `tokenize` with an optional stop-word list applied before stemming.
pub fn tokenize_filtered(text: &str, stopwords: Option<&HashSet<String>>) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| stopwords.is_none_or(|s| !s.contains(*t)))
        .map(porter::stem)
        .collect()
}

/// Stem -> dense id map with corpus frequencies.
///
/// Ids are assigned by descending corpus frequency, ties broken
/// lexicographically, so construction is deterministic. The padding id is
/// `len()` (one past the last real stem); it has an embedding row in the
/// neural model but no frequency and no Huffman leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    by_stem: HashMap<String, u32>,
    /// (stem, corpus frequency), indexed by id.
    entries: Vec<(String, u64)>,
    pub min_count: u64,
}

impl Vocabulary {
    /// Builds the vocabulary from a token stream, keeping stems with corpus
    /// frequency >= `min_count`.
    pub fn build<'a, I>(docs: I, min_count: u64) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        if min_count < 1 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut seen_doc = false;
        for doc in docs {
            seen_doc = true;
            for tok in &doc.tokens {
                *counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
        if !seen_doc {
            return Err(Error::Data("empty corpus".into()));
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let by_stem = entries
            .iter()
            .enumerate()
            .map(|(i, (s, _))| (s.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            by_stem,
            entries,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reserved id used to left-pad contexts; not a real stem.
    pub fn padding_id(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn id(&self, stem: &str) -> Option<u32> {
        self.by_stem.get(stem).copied()
    }

    pub fn stem(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|(s, _)| s.as_str())
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.entries.get(id as usize).map_or(0, |(_, f)| *f)
    }

    /// Corpus frequencies indexed by id (Huffman tree weights).
    pub fn frequencies(&self) -> Vec<u64> {
        self.entries.iter().map(|(_, f)| *f).collect()
    }

    pub fn total_tokens(&self) -> u64 {
        self.entries.iter().map(|(_, f)| *f).sum()
    }

    /// Encodes stemmed tokens, dropping out-of-vocabulary stems.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }

    /// Writes `stem<TAB>id<TAB>frequency` lines sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            for (id, (stem, freq)) in self.entries.iter().enumerate() {
                writeln!(w, "{stem}\t{id}\t{freq}").map_err(|e| Error::io(path, e))?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let reader = crate::io::open_reader(path)?;
        let mut entries = Vec::new();
        let mut min_count = u64::MAX;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (stem, id, freq) = match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(i), Some(f)) => (s, i, f),
                _ => return Err(Error::parse(path, lineno + 1, "expected stem<TAB>id<TAB>freq")),
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad id"))?;
            let freq: u64 = freq
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad frequency"))?;
            if id != entries.len() {
                return Err(Error::parse(path, lineno + 1, "ids must be dense and sorted"));
            }
            min_count = min_count.min(freq);
            entries.push((stem.to_string(), freq));
        }
        if entries.is_empty() {
            return Err(Error::Data(format!("{}: empty vocabulary", path.display())));
        }
        let by_stem = entries
            .iter()
            .enumerate()
            .map(|(i, (s, _))| (s.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            by_stem,
            entries,
            min_count,
        })
    }
}

#[derive(Deserialize)]
struct RawRecord {
    doc_id: String,
    text: String,
}

/// Reads a line-delimited JSON corpus (`{"doc_id": ..., "text": ...}` per
/// line) and preprocesses each document.
pub fn read_jsonl(path: &Path, stopwords: Option<&HashSet<String>>) -> Result<Vec<Document>> {
    let reader = crate::io::open_reader(path)?;
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        docs.push(Document {
            doc_id: rec.doc_id,
            tokens: tokenize_filtered(&rec.text, stopwords),
        });
    }
    Ok(docs)
}

/// Minimal TREC-SGML reader: recognizes `<DOC>`, `<DOCNO>` and `<TEXT>`
/// elements; everything inside `<TEXT>` blocks is concatenated.
pub fn read_trec_sgml(path: &Path, stopwords: Option<&HashSet<String>>) -> Result<Vec<Document>> {
    let reader = crate::io::open_reader(path)?;
    let mut docs = Vec::new();
    let mut doc_id: Option<String> = None;
    let mut text = String::new();
    let mut in_text = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.starts_with("<DOC>") {
            doc_id = None;
            text.clear();
            in_text = false;
        } else if trimmed.starts_with("</DOC>") {
            let id = doc_id
                .take()
                .ok_or_else(|| Error::parse(path, lineno + 1, "document without <DOCNO>"))?;
            docs.push(Document {
                doc_id: id,
                tokens: tokenize_filtered(&text, stopwords),
            });
            text.clear();
        } else if let Some(rest) = trimmed.strip_prefix("<DOCNO>") {
            let id = rest.trim_end_matches("</DOCNO>").trim();
            doc_id = Some(id.to_string());
        } else if trimmed.starts_with("<TEXT>") {
            in_text = true;
            let rest = trimmed.trim_start_matches("<TEXT>");
            if let Some(body) = rest.strip_suffix("</TEXT>") {
                text.push_str(body);
                text.push(' ');
                in_text = false;
            } else {
                text.push_str(rest);
                text.push(' ');
            }
        } else if trimmed.starts_with("</TEXT>") {
            in_text = false;
        } else if in_text {
            text.push_str(trimmed);
            text.push(' ');
        }
    }
    Ok(docs)
}

/// Reads a stop-word file: one word per line, lowercased verbatim.
pub fn read_stopwords(path: &Path) -> Result<HashSet<String>> {
    let reader = crate::io::open_reader(path)?;
    let mut out = HashSet::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let w = line.trim().to_lowercase();
        if !w.is_empty() {
            out.insert(w);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.to_string(),
            tokens: tokenize(text),
        }
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_stems_and_splits() {
        assert_eq!(tokenize("Freedom trails"), vec!["freedom", "trail"]);
        assert_eq!(tokenize("a, a; a"), vec!["a", "a", "a"]);
    }

    #[test]
    fn tokenize_idempotent_on_own_output() {
        let texts = ["Freedom trails!", "The cats were motoring, happily."];
        for t in texts {
            let once = tokenize(t);
            let twice = tokenize(&once.join(" "));
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn vocabulary_min_count_filter() {
        let docs = vec![doc("1", "x x x x y y y y y")];
        let v = Vocabulary::build(&docs, 5).unwrap();
        assert!(v.id("x").is_none());
        assert_eq!(v.frequency(v.id("y").unwrap()), 5);
    }

    #[test]
    fn vocabulary_tie_break_is_lexicographic() {
        let docs = vec![doc("1", "b a b a")];
        let v = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
    }

    #[test]
    fn vocabulary_orders_by_frequency() {
        let docs = vec![doc("1", "rare common common common")];
        let v = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(v.id("common"), Some(0));
        assert_eq!(v.id("rare"), Some(1));
        assert_eq!(v.padding_id(), 2);
    }

    #[test]
    fn empty_corpus_errors() {
        let docs: Vec<Document> = vec![];
        assert!(Vocabulary::build(&docs, 1).is_err());
    }

    #[test]
    fn encode_drops_oov_and_keeps_order() {
        let docs = vec![doc("1", "a a b")];
        let v = Vocabulary::build(&docs, 1).unwrap();
        let toks: Vec<String> = ["a", "zzz", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            v.encode(&toks),
            vec![v.id("a").unwrap(), v.id("b").unwrap()]
        );
        let oov: Vec<String> = vec!["zzz".into()];
        assert!(v.encode(&oov).is_empty());
        let dup: Vec<String> = ["a", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(v.encode(&dup).len(), 3);
    }

    #[test]
    fn vocabulary_build_is_deterministic() {
        let docs = vec![doc("1", "c b a c b c"), doc("2", "a b a")];
        let v1 = Vocabulary::build(&docs, 1).unwrap();
        let v2 = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn vocabulary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let docs = vec![doc("1", "alpha beta alpha gamma")];
        let v = Vocabulary::build(&docs, 1).unwrap();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(v.entries, loaded.entries);
    }

    #[test]
    fn trec_sgml_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.sgml");
        std::fs::write(
            &path,
            "<DOC>\n<DOCNO> FT911-3 </DOCNO>\n<TEXT>\nFreedom trails\nin Boston\n</TEXT>\n</DOC>\n",
        )
        .unwrap();
        let docs = read_trec_sgml(&path, None).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].doc_id, "FT911-3");
        assert_eq!(docs[0].tokens, vec!["freedom", "trail", "in", "boston"]);
    }
}
