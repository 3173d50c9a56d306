//! Prompt assembly for continuation passes.
//!
//! Two renderings: the chunked template used on the main path, and a
//! plain whole-document template used when chunking is disabled. Both are
//! pinned byte-for-byte by golden files under fixtures/golden.

use super::chunk::Block;
use crate::text::normalize_ws;
use crate::types::Document;

const INSTRUCTION: &str =
    "Using the external knowledge provided above, please answer the following question:";

fn finish(mut lines: Vec<String>, question: &str, truncated: &str) -> String {
    lines.push(String::new());
    lines.push(INSTRUCTION.to_string());
    lines.push(String::new());
    lines.push(format!("Question: {question}"));
    lines.push(String::new());
    lines.push(format!("Answer: {truncated}"));
    lines.join("\n")
}

/// Renders the chunked knowledge template.
///
/// Every document becomes one line: its 1-based rank in brackets, then
/// each block as "(j). text". The question and the truncated answer so
/// far fill the fixed trailer.
pub fn assemble_prompt(docs: &[Vec<Block>], question: &str, truncated: &str) -> String {
    let mut lines = vec!["External Knowledge After Chunk:".to_string()];
    for (i, blocks) in docs.iter().enumerate() {
        let rendered: Vec<String> = blocks
            .iter()
            .enumerate()
            .map(|(j, b)| format!("({}). {}", j + 1, normalize_ws(&b.text)))
            .collect();
        lines.push(format!("[{}] {}", i + 1, rendered.join(" ")));
    }
    finish(lines, question, truncated)
}

/// Renders the whole-document template used when chunking is off.
pub fn assemble_plain_prompt(docs: &[Document], question: &str, truncated: &str) -> String {
    let mut lines = vec!["External Knowledge:".to_string()];
    for (i, doc) in docs.iter().enumerate() {
        lines.push(format!("[{}] {}", i + 1, normalize_ws(&doc.text)));
    }
    finish(lines, question, truncated)
}
