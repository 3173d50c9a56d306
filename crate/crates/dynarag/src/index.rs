//! Inverted index with TF-IDF statistics and Okapi BM25 ranking.
//!
//! The index owns the corpus documents so that retrieval can hand whole
//! documents back to the caller. It is immutable after build and persists
//! to a line-oriented file that round-trips exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::types::Document;

const K1: f64 = 1.2;
const B: f64 = 0.75;

const FILE_FORMAT: &str = "dynarag-index";
const FILE_VERSION: u32 = 1;

/// A document id paired with its retrieval score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
}

/// Inverted index over a fixed corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InvertedIndex {
    docs: BTreeMap<String, Document>,
    lengths: BTreeMap<String, u64>,
    postings: BTreeMap<String, BTreeMap<String, u64>>,
}

impl InvertedIndex {
    /// Builds the index from a corpus with unique document ids.
    pub fn build(corpus: &[Document]) -> Result<Self> {
        let mut index = InvertedIndex::default();
        for doc in corpus {
            doc.validate()?;
            if index.docs.contains_key(&doc.id) {
                return Err(Error::Validation(format!("duplicate document id: {}", doc.id)));
            }
            let terms = index_terms(&doc.text);
            index.lengths.insert(doc.id.clone(), terms.len() as u64);
            for term in terms {
                *index
                    .postings
                    .entry(term)
                    .or_default()
                    .entry(doc.id.clone())
                    .or_insert(0) += 1;
            }
            index.docs.insert(doc.id.clone(), doc.clone());
        }
        Ok(index)
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Mean document length in indexed tokens, 0 for an empty corpus.
    pub fn avg_doc_len(&self) -> f64 {
        if self.lengths.is_empty() {
            return 0.0;
        }
        self.lengths.values().sum::<u64>() as f64 / self.lengths.len() as f64
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.docs.get(id)
    }

    /// All documents in ascending id order.
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    pub fn doc_len(&self, id: &str) -> Option<u64> {
        self.lengths.get(id).copied()
    }

    /// Number of documents containing the term.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(&term.to_lowercase()).map_or(0, |p| p.len())
    }

    /// Occurrences of the term in one document.
    pub fn tf(&self, term: &str, doc_id: &str) -> u64 {
        self.postings
            .get(&term.to_lowercase())
            .and_then(|p| p.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// `tf × ln((N + 1)/(df + 1))`; 0 when the term is absent from the doc.
    pub fn tf_idf(&self, term: &str, doc_id: &str) -> Result<f64> {
        if !self.docs.contains_key(doc_id) {
            return Err(Error::Lookup(format!("unknown document id: {doc_id}")));
        }
        let tf = self.tf(term, doc_id);
        if tf == 0 {
            return Ok(0.0);
        }
        let idf = ((self.n_docs() as f64 + 1.0) / (self.df(term) as f64 + 1.0)).ln();
        Ok(tf as f64 * idf)
    }

    /// Highest tf-idf the term reaches in any document, 0 if unseen.
    pub fn max_tf_idf(&self, term: &str) -> f64 {
        let Some(postings) = self.postings.get(&term.to_lowercase()) else {
            return 0.0;
        };
        let idf = ((self.n_docs() as f64 + 1.0) / (postings.len() as f64 + 1.0)).ln();
        postings.values().map(|&tf| tf as f64 * idf).fold(0.0, f64::max)
    }

    /// The document's `k` highest tf-idf terms, score descending, ties by
    /// ascending term.
    pub fn top_tf_idf_terms(&self, doc_id: &str, k: usize) -> Result<Vec<String>> {
        if !self.docs.contains_key(doc_id) {
            return Err(Error::Lookup(format!("unknown document id: {doc_id}")));
        }
        let mut scored: Vec<(String, f64)> = self
            .postings
            .iter()
            .filter(|(_, p)| p.contains_key(doc_id))
            .map(|(term, _)| {
                let score = self.tf_idf(term, doc_id).expect("doc id checked above");
                (term.clone(), score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(term, _)| term).collect())
    }

    /// Okapi BM25 score of one document for a set of query terms.
    ///
    /// Multiword terms are tokenized, so an entity like a two-word name
    /// queries both words.
    pub fn bm25_score(&self, query_terms: &[String], doc_id: &str) -> Result<f64> {
        if !self.docs.contains_key(doc_id) {
            return Err(Error::Lookup(format!("unknown document id: {doc_id}")));
        }
        Ok(self.bm25_expanded(&expand_terms(query_terms), doc_id))
    }

    fn bm25_expanded(&self, terms: &[String], doc_id: &str) -> f64 {
        let n = self.n_docs() as f64;
        let avg = self.avg_doc_len();
        let len = self.doc_len(doc_id).unwrap_or(0) as f64;
        let mut score = 0.0;
        for term in terms {
            let tf = self.tf(term, doc_id) as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self.df(term) as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = if avg > 0.0 { 1.0 - B + B * len / avg } else { 1.0 };
            score += idf * tf * (K1 + 1.0) / (tf + K1 * norm);
        }
        score
    }

    /// Top-k documents by BM25, score descending, ties by ascending id.
    ///
    /// Only documents containing at least one query term are returned, so
    /// the result may be shorter than `k`.
    pub fn search(&self, query_terms: &[String], k: usize) -> Vec<ScoredDoc> {
        let terms = expand_terms(query_terms);
        let mut matched: Vec<&String> = terms
            .iter()
            .filter_map(|t| self.postings.get(t))
            .flat_map(|p| p.keys())
            .collect();
        matched.sort_unstable();
        matched.dedup();
        let mut scored: Vec<ScoredDoc> = matched
            .into_iter()
            .map(|id| ScoredDoc { id: id.clone(), score: self.bm25_expanded(&terms, id) })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(k);
        scored
    }

    /// Writes the index to one line-oriented file with a versioned header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<std::fs::File>, value: String| {
            writeln!(out, "{value}").map_err(|e| Error::io(path, e))
        };
        let header = serde_json::to_string(&Header {
            format: FILE_FORMAT.into(),
            version: FILE_VERSION,
            docs: self.docs.len() as u64,
            terms: self.postings.len() as u64,
        })
        .map_err(|e| Error::Format(format!("index header: {e}")))?;
        write(&mut out, header)?;
        for (id, doc) in &self.docs {
            let line = Line::Doc {
                id: id.clone(),
                title: doc.title.clone(),
                text: doc.text.clone(),
                length: self.lengths[id],
            };
            write(&mut out, serde_json::to_string(&line).expect("index line serializes"))?;
        }
        for (term, postings) in &self.postings {
            let line = Line::Term {
                term: term.clone(),
                postings: postings.iter().map(|(id, &tf)| (id.clone(), tf)).collect(),
            };
            write(&mut out, serde_json::to_string(&line).expect("index line serializes"))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads an index written by [`InvertedIndex::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::Format("index file is empty".into())),
        };
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| Error::Format(format!("index header: {e}")))?;
        if header.format != FILE_FORMAT {
            return Err(Error::Format(format!("not an index file: format {:?}", header.format)));
        }
        if header.version != FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported index version {} (expected {FILE_VERSION})",
                header.version
            )));
        }
        let mut index = InvertedIndex::default();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("index line {}: {e}", lineno + 2)))?;
            match parsed {
                Line::Doc { id, title, text, length } => {
                    let doc = Document { id: id.clone(), title, text };
                    doc.validate()?;
                    if index.docs.insert(id.clone(), doc).is_some() {
                        return Err(Error::Format(format!("duplicate document id: {id}")));
                    }
                    index.lengths.insert(id, length);
                }
                Line::Term { term, postings } => {
                    let mut map = BTreeMap::new();
                    for (id, tf) in postings {
                        if !index.docs.contains_key(&id) {
                            return Err(Error::Format(format!(
                                "posting for term {term:?} references unknown document {id}"
                            )));
                        }
                        if tf == 0 {
                            return Err(Error::Format(format!(
                                "posting for term {term:?} in {id} has zero frequency"
                            )));
                        }
                        map.insert(id, tf);
                    }
                    if index.postings.insert(term.clone(), map).is_some() {
                        return Err(Error::Format(format!("duplicate term entry: {term:?}")));
                    }
                }
            }
        }
        if index.docs.len() as u64 != header.docs || index.postings.len() as u64 != header.terms {
            return Err(Error::Format(format!(
                "index header declares {} docs / {} terms, file has {} / {}",
                header.docs,
                header.terms,
                index.docs.len(),
                index.postings.len()
            )));
        }
        Ok(index)
    }
}

/// Lowercased alphanumeric-bearing tokens of a text; pure punctuation is
/// not indexed.
fn index_terms(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.surface.chars().any(char::is_alphanumeric))
        .map(|t| t.surface.to_lowercase())
        .collect()
}

/// Expands query terms the same way documents are indexed.
fn expand_terms(query_terms: &[String]) -> Vec<String> {
    query_terms.iter().flat_map(|t| index_terms(t)).collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    docs: u64,
    terms: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Doc { id: String, title: String, text: String, length: u64 },
    Term { term: String, postings: Vec<(String, u64)> },
}
