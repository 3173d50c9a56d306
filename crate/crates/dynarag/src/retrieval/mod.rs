//! Contextual retrieval optimization: keyword importance ranking before
//! retrieval, stepwise document selection with concept merging after it,
//! plus chunking and prompt assembly.

mod chunk;
mod prompt;

pub use chunk::{block_score, chunk_document, Block, SEED_COHERENCE};
pub use prompt::{assemble_plain_prompt, assemble_prompt};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::text::{cosine, embed, extract_entities};
use crate::types::{Document, TokenRecord};

/// One ranked retrieval keyword with its raw score components.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordScore {
    pub surface: String,
    /// 1-based position in the source sequence; breaks total ties.
    pub position: usize,
    /// Attention component.
    pub a: f64,
    /// TF-IDF component: max over the documents containing the term.
    pub t: f64,
    /// Positional component, position / sequence length.
    pub p: f64,
    /// Semantic component: embedding cosine against the query.
    pub s: f64,
    /// Weighted sum of the min-max normalized components.
    pub total: f64,
}

/// Position fraction pos / n_tokens for a 1-based position.
pub fn positional_score(pos: usize, n_tokens: usize) -> Result<f64> {
    if pos < 1 || pos > n_tokens {
        return Err(Error::Contract(format!(
            "position {pos} outside 1..={n_tokens}"
        )));
    }
    Ok(pos as f64 / n_tokens as f64)
}

/// Min-max normalizes in place; a constant component maps to 0.5
/// everywhere so it cannot dominate the weighted sum.
fn min_max(values: &mut [f64]) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        values.iter_mut().for_each(|v| *v = 0.5);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - min) / (max - min));
    }
}

/// Scores and ranks candidate keywords by descending importance.
///
/// Components per candidate: its attention (0 when absent), the best
/// TF-IDF of its surface across the corpus, its position fraction in a
/// sequence of `n_tokens`, and embedding similarity to the query. Each
/// component is min-max normalized across the candidates before the
/// weighted sum. Ties resolve by ascending position.
pub fn score_keywords(
    candidates: &[TokenRecord],
    n_tokens: usize,
    query: &str,
    index: &InvertedIndex,
    weights: &[f64; 4],
) -> Result<Vec<KeywordScore>> {
    if candidates.is_empty() {
        return Err(Error::Contract("cannot score an empty candidate list".into()));
    }
    let query_embedding = embed(query);
    let mut scores: Vec<KeywordScore> = candidates
        .iter()
        .map(|token| {
            Ok(KeywordScore {
                surface: token.surface.clone(),
                position: token.position,
                a: token.attention.unwrap_or(0.0),
                t: index.max_tf_idf(&token.surface),
                p: positional_score(token.position, n_tokens)?,
                s: cosine(&embed(&token.surface), &query_embedding)
                    .expect("embeddings share one dimension"),
                total: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let mut columns = [
        scores.iter().map(|k| k.a).collect::<Vec<f64>>(),
        scores.iter().map(|k| k.t).collect(),
        scores.iter().map(|k| k.p).collect(),
        scores.iter().map(|k| k.s).collect(),
    ];
    columns.iter_mut().for_each(|c| min_max(c));
    for (i, k) in scores.iter_mut().enumerate() {
        k.total = weights.iter().zip(&columns).map(|(w, c)| w * c[i]).sum();
    }
    scores.sort_by(|x, y| y.total.total_cmp(&x.total).then(x.position.cmp(&y.position)));
    Ok(scores)
}

/// Concepts a batch of documents introduces: entity surfaces and each
/// document's top five TF-IDF terms, lowercased, with already-known
/// keywords removed, in first-appearance order.
pub fn extract_new_concepts(
    docs: &[Document],
    index: &InvertedIndex,
    known: &BTreeSet<String>,
) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |concept: String| {
        if !known.contains(&concept) && seen.insert(concept.clone()) {
            out.push(concept);
        }
    };
    for doc in docs {
        for entity in extract_entities(&doc.text) {
            push(entity.surface.to_lowercase());
        }
        for term in index.top_tf_idf_terms(&doc.id, 5).unwrap_or_default() {
            push(term);
        }
    }
    out
}

/// What one retrieval produced: the documents in selection order and the
/// size of each search batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseRetrieval {
    pub documents: Vec<Document>,
    pub batch_sizes: Vec<usize>,
}

/// Iterative halving retrieval.
///
/// Each round searches a candidate pool of `top_k_pool` documents with
/// the current keyword set, keeps the best `max(1, remaining/2)` unseen
/// documents, merges the batch's new concepts into the keywords, and
/// repeats until `n` documents are selected or the pool adds nothing new.
pub fn stepwise_retrieve(
    keywords: &[String],
    n: usize,
    index: &InvertedIndex,
    top_k_pool: usize,
) -> StepwiseRetrieval {
    let mut keywords: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let mut known: BTreeSet<String> = keywords.iter().cloned().collect();
    let mut selected_ids: BTreeSet<String> = BTreeSet::new();
    let mut documents = Vec::new();
    let mut batch_sizes = Vec::new();
    while documents.len() < n {
        let batch = search_batch(
            &keywords,
            index,
            top_k_pool,
            &selected_ids,
            (n - documents.len()).div_euclid(2).max(1),
        );
        if batch.is_empty() {
            break;
        }
        batch_sizes.push(batch.len());
        for doc in &batch {
            selected_ids.insert(doc.id.clone());
        }
        let concepts = extract_new_concepts(&batch, index, &known);
        known.extend(concepts.iter().cloned());
        keywords.extend(concepts);
        documents.extend(batch);
    }
    StepwiseRetrieval { documents, batch_sizes }
}

/// Single-batch retrieval used when stepwise selection is disabled: one
/// search, the best `n` documents.
pub fn single_shot_retrieve(
    keywords: &[String],
    n: usize,
    index: &InvertedIndex,
    top_k_pool: usize,
) -> StepwiseRetrieval {
    let documents = search_batch(keywords, index, top_k_pool, &BTreeSet::new(), n);
    let batch_sizes = if documents.is_empty() { Vec::new() } else { vec![documents.len()] };
    StepwiseRetrieval { documents, batch_sizes }
}

/// Pool search returning up to `take` fresh documents in score order.
fn search_batch(
    keywords: &[String],
    index: &InvertedIndex,
    top_k_pool: usize,
    exclude: &BTreeSet<String>,
    take: usize,
) -> Vec<Document> {
    index
        .search(keywords, top_k_pool)
        .into_iter()
        .filter(|hit| !exclude.contains(&hit.id))
        .take(take)
        .map(|hit| index.document(&hit.id).expect("search returns indexed ids").clone())
        .collect()
}
