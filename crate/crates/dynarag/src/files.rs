//! Line-oriented JSON file helpers for corpora, QA datasets and traces.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Document, QAExample};

/// Reads one JSON value per line, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}: line {}: {e}", path.display(), i + 1))
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates a corpus of one document per line.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(path)?;
    for doc in &docs {
        doc.validate()?;
    }
    Ok(docs)
}

/// Loads and validates a QA dataset of one example per line.
pub fn load_qa(path: &Path) -> Result<Vec<QAExample>> {
    let examples: Vec<QAExample> = read_jsonl(path)?;
    for qa in &examples {
        qa.validate()?;
    }
    Ok(examples)
}
