//! Relevance judgments, run files and MAP/GMAP evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Floor applied to per-topic AP before the geometric mean.
pub const GMAP_EPSILON: f64 = 1e-5;

/// Binary relevance judgments: topic id -> relevant doc ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    pub topics: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn relevant(&self, topic: &str) -> Option<&BTreeSet<String>> {
        self.topics.get(topic)
    }
}

/// A ranked result list per topic.
pub type Run = BTreeMap<String, Vec<(String, f64)>>;

/// Reads TREC qrels: whitespace-separated `topic 0 docid rel` lines.
/// Grades >= 1 count as relevant; grade-0 lines are parsed and ignored.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let reader = crate::io::open_reader(path)?;
    let mut qrels = Qrels::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected 4 fields, got {}", parts.len()),
            ));
        }
        let rel: i32 = parts[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, "bad relevance grade"))?;
        let topic = qrels.topics.entry(parts[0].to_string()).or_default();
        if rel >= 1 {
            topic.insert(parts[2].to_string());
        }
    }
    Ok(qrels)
}

/// Writes a TREC run: `topic Q0 docid rank score tag` lines, ranks starting
/// at 1 per topic.
pub fn write_run(path: &Path, run: &Run, tag: &str) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        for (topic, ranking) in run {
            for (rank, (doc_id, score)) in ranking.iter().enumerate() {
                writeln!(w, "{topic} Q0 {doc_id} {} {score} {tag}", rank + 1)
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    })
}

/// Reads a TREC run file, preserving each topic's rank order.
pub fn read_run(path: &Path) -> Result<Run> {
    let reader = crate::io::open_reader(path)?;
    let mut run: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected 6 fields, got {}", parts.len()),
            ));
        }
        let rank: usize = parts[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, "bad rank"))?;
        let score: f64 = parts[4]
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, "bad score"))?;
        run.entry(parts[0].to_string())
            .or_default()
            .push((rank, parts[2].to_string(), score));
    }
    Ok(run
        .into_iter()
        .map(|(topic, mut entries)| {
            entries.sort_by_key(|(rank, _, _)| *rank);
            (
                topic,
                entries.into_iter().map(|(_, d, s)| (d, s)).collect(),
            )
        })
        .collect())
}

/// Average precision of a ranking against a relevant set: the mean over
/// relevant documents of precision at each relevant hit; relevant documents
/// never retrieved contribute zero. Returns None for an empty relevant set
/// (AP undefined; the topic should be excluded with a warning).
pub fn average_precision(ranking: &[String], relevant: &BTreeSet<String>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().enumerate() {
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

/// MAP (arithmetic mean) and GMAP (geometric mean with AP floored at
/// `GMAP_EPSILON`).
pub fn map_gmap(aps: &[f64]) -> Result<(f64, f64)> {
    if aps.is_empty() {
        return Err(Error::Data("no topics to evaluate".into()));
    }
    let n = aps.len() as f64;
    let map = aps.iter().sum::<f64>() / n;
    let gmap = (aps.iter().map(|ap| ap.max(GMAP_EPSILON).ln()).sum::<f64>() / n).exp();
    Ok((map, gmap))
}

/// Mean over topics of AP(specific) - AP(generic). Topic sets must match.
pub fn delta_report(
    ap_specific: &BTreeMap<String, f64>,
    ap_generic: &BTreeMap<String, f64>,
) -> Result<f64> {
    if ap_specific.len() != ap_generic.len()
        || !ap_specific.keys().eq(ap_generic.keys())
    {
        return Err(Error::Data("topic sets differ between runs".into()));
    }
    if ap_specific.is_empty() {
        return Err(Error::Data("no topics to compare".into()));
    }
    let sum: f64 = ap_specific
        .iter()
        .map(|(topic, ap)| ap - ap_generic[topic])
        .sum();
    Ok(sum / ap_specific.len() as f64)
}

/// Per-topic APs of a run against qrels. Topics with empty/missing
/// judgments are skipped and returned in the second list.
pub fn evaluate_run(run: &Run, qrels: &Qrels) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut aps = BTreeMap::new();
    let mut skipped = Vec::new();
    for (topic, ranking) in run {
        let docs: Vec<String> = ranking.iter().map(|(d, _)| d.clone()).collect();
        match qrels.relevant(topic).and_then(|rel| average_precision(&docs, rel)) {
            Some(ap) => {
                aps.insert(topic.clone(), ap);
            }
            None => skipped.push(topic.clone()),
        }
    }
    (aps, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(docs: &[&str]) -> BTreeSet<String> {
        docs.iter().map(|d| d.to_string()).collect()
    }

    fn ranking(docs: &[&str]) -> Vec<String> {
        docs.iter().map(|d| d.to_string()).collect()
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&ranking(&["r", "n"]), &rel(&["r"])), Some(1.0));
        assert_eq!(average_precision(&ranking(&["n", "r"]), &rel(&["r"])), Some(0.5));
        // [R, N, R] with 2 relevant: (1/1 + 2/3)/2 = 5/6
        let ap = average_precision(&ranking(&["r1", "n", "r2"]), &rel(&["r1", "r2"])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        // empty relevant set: undefined
        assert_eq!(average_precision(&ranking(&["a"]), &rel(&[])), None);
    }

    /// Brute-force AP: for each cutoff where a relevant document appears,
    /// compute precision from scratch.
    fn brute_force_ap(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
        let mut sum = 0.0;
        for cutoff in 1..=ranking.len() {
            if relevant.contains(&ranking[cutoff - 1]) {
                let hits = ranking[..cutoff]
                    .iter()
                    .filter(|d| relevant.contains(*d))
                    .count();
                sum += hits as f64 / cutoff as f64;
            }
        }
        sum / relevant.len() as f64
    }

    #[test]
    fn ap_matches_brute_force_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        for _ in 0..500 {
            let n = rng.gen_range(1..=20);
            let docs: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let n_rel = rng.gen_range(1..=5.min(n));
            let mut relevant = BTreeSet::new();
            while relevant.len() < n_rel {
                relevant.insert(format!("d{}", rng.gen_range(0..n + 4)));
            }
            let ap = average_precision(&docs, &relevant).unwrap();
            let brute = brute_force_ap(&docs, &relevant);
            assert_eq!(ap, brute);
        }
    }

    #[test]
    fn map_gmap_cases() {
        let (map, gmap) = map_gmap(&[0.5, 0.5]).unwrap();
        assert!((map - 0.5).abs() < 1e-15 && (gmap - 0.5).abs() < 1e-12);
        let (map, gmap) = map_gmap(&[1.0, 0.0]).unwrap();
        assert!((map - 0.5).abs() < 1e-15);
        assert!((gmap - GMAP_EPSILON.sqrt()).abs() < 1e-12);
        let (map, gmap) = map_gmap(&[0.2, 0.8]).unwrap();
        assert!((map - 0.5).abs() < 1e-15 && (gmap - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gmap_never_exceeds_map() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100 {
            let aps: Vec<f64> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (map, gmap) = map_gmap(&aps).unwrap();
            assert!(gmap <= map + 1e-12);
        }
    }

    #[test]
    fn delta_report_cases() {
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for (t, ap_a, ap_b) in [("1", 0.5, 0.4), ("2", 0.3, 0.25), ("3", 0.9, 0.8)] {
            a.insert(t.to_string(), ap_a);
            b.insert(t.to_string(), ap_b);
        }
        // identical runs -> 0
        assert_eq!(delta_report(&a, &a).unwrap(), 0.0);
        // hand-computed mean difference: (0.1 + 0.05 + 0.1)/3
        let d = delta_report(&a, &b).unwrap();
        assert!((d - 0.25 / 3.0).abs() < 1e-12);
        assert!(d > 0.0, "strictly better on every topic gives positive delta");
        // topic mismatch
        let mut c = a.clone();
        c.remove("1");
        assert!(delta_report(&c, &b).is_err());
    }

    #[test]
    fn qrels_and_run_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let qpath = dir.path().join("qrels.txt");
        std::fs::write(&qpath, "51 0 FT911-3 1\n51 0 FT911-4 0\n52 0 FT911-3 2\n").unwrap();
        let qrels = read_qrels(&qpath).unwrap();
        assert!(qrels.relevant("51").unwrap().contains("FT911-3"));
        assert!(!qrels.relevant("51").unwrap().contains("FT911-4"));
        assert!(qrels.relevant("52").unwrap().contains("FT911-3"));

        let rpath = dir.path().join("out.run");
        let mut run = Run::new();
        run.insert(
            "51".into(),
            vec![("FT911-3".into(), 12.5), ("FT911-4".into(), 3.0)],
        );
        write_run(&rpath, &run, "tag").unwrap();
        let loaded = read_run(&rpath).unwrap();
        assert_eq!(run, loaded);
        let text = std::fs::read_to_string(&rpath).unwrap();
        assert!(text.starts_with("51 Q0 FT911-3 1 12.5 tag"));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let qpath = dir.path().join("qrels.txt");
        std::fs::write(&qpath, "51 0 FT911-3 1\nbad line\n").unwrap();
        let err = read_qrels(&qpath).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }
}
