//! Relevance judgments, one `qid docid grade` triple per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Graded judgments keyed by query id, then document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment; repeated pairs keep the larger grade.
    pub fn insert(&mut self, qid: impl Into<String>, docid: impl Into<String>, grade: u32) {
        let slot = self
            .judgments
            .entry(qid.into())
            .or_default()
            .entry(docid.into())
            .or_insert(grade);
        *slot = (*slot).max(grade);
    }

    pub fn grade(&self, qid: &str, docid: &str) -> Option<u32> {
        self.judgments.get(qid)?.get(docid).copied()
    }

    pub fn query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.judgments.iter().map(|(q, j)| (q.as_str(), j))
    }

    pub fn n_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn n_judgments(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Parses whitespace- or tab-separated `qid docid grade` lines. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut qrels = Qrels::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, docid, grade] = fields[..] else {
                return Err(Error::Qrels {
                    line: line_no,
                    reason: format!("expected 3 fields, found {}", fields.len()),
                });
            };
            let grade: u32 = grade.parse().map_err(|_| Error::Qrels {
                line: line_no,
                reason: format!("grade {grade:?} is not a non-negative integer"),
            })?;
            qrels.insert(qid, docid, grade);
        }
        Ok(qrels)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                out.push_str(&format!("{q}\t{d}\t{g}\n"));
            }
        }
        out
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Qrels::parse(&text)
}
