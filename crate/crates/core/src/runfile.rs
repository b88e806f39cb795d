//! Run files: one `qid<TAB>docid<TAB>rank<TAB>score` line per result.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::reduce::RankedResults;

/// Ranked document ids per query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub queries: BTreeMap<String, Vec<(String, f32)>>,
}

impl Run {
    /// Uses the position of each result list as its query id.
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a RankedResults>) -> Self {
        let queries = results
            .into_iter()
            .enumerate()
            .map(|(q, r)| {
                let docs = r
                    .entries()
                    .iter()
                    .map(|&(d, s)| (d.to_string(), s))
                    .collect();
                (q.to_string(), docs)
            })
            .collect();
        Self { queries }
    }

    pub fn ranked_docs(&self, qid: &str) -> Option<Vec<&str>> {
        self.queries
            .get(qid)
            .map(|docs| docs.iter().map(|(d, _)| d.as_str()).collect())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut ranked: BTreeMap<String, Vec<(usize, String, f32)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Qrels {
                line: i + 1,
                reason: format!("run file: {reason}"),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [qid, docid, rank, score] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let rank: usize = rank.parse().map_err(|_| bad("rank is not an integer"))?;
            let score: f32 = score.parse().map_err(|_| bad("score is not a number"))?;
            ranked
                .entry(qid.to_string())
                .or_default()
                .push((rank, docid.to_string(), score));
        }
        let queries = ranked
            .into_iter()
            .map(|(q, mut docs)| {
                docs.sort_by_key(|d| d.0);
                (q, docs.into_iter().map(|(_, d, s)| (d, s)).collect())
            })
            .collect();
        Ok(Self { queries })
    }
}

/// Formats results as a run file, query ids taken from list position.
pub fn format_run(results: &[&RankedResults]) -> String {
    let mut out = String::new();
    for (q, r) in results.iter().enumerate() {
        for (rank, &(doc, score)) in r.entries().iter().enumerate() {
            writeln!(out, "{q}\t{doc}\t{}\t{score:.6}", rank + 1).unwrap();
        }
    }
    out
}

pub fn write_run(results: &[&RankedResults], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_run(results)).map_err(|e| Error::io(path, e))
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Run::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_and_parse() {
        let a = RankedResults::from_unsorted(vec![(3, 0.5), (7, 1.25)]);
        let b = RankedResults::from_unsorted(vec![(1, -0.1)]);
        let text = format_run(&[&a, &b]);
        assert_eq!(
            text,
            "0\t7\t1\t1.250000\n0\t3\t2\t0.500000\n1\t1\t1\t-0.100000\n"
        );
        let run = Run::parse(&text).unwrap();
        assert_eq!(run.ranked_docs("0").unwrap(), vec!["7", "3"]);
        assert_eq!(run, Run::from_results([&a, &b]));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Run::parse("0\t1\t1").is_err());
        assert!(Run::parse("0\t1\tx\t0.5").is_err());
    }
}
