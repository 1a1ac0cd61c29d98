use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamped exogenous document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextDoc {
    pub start: i64,
    pub end: i64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl TextDoc {
    pub fn new(start: i64, end: i64, text: impl Into<String>) -> Self {
        TextDoc {
            start,
            end,
            text: text.into(),
            embedding: None,
        }
    }

    /// Length of `[start,end] ∩ [lo,hi]`, or `None` when they do not intersect.
    pub fn overlap(&self, lo: i64, hi: i64) -> Option<i64> {
        let a = self.start.max(lo);
        let b = self.end.min(hi);
        (a <= b).then_some(b - a)
    }
}

fn validate(doc: &TextDoc, d_model: Option<usize>) -> std::result::Result<(), String> {
    if doc.start > doc.end {
        return Err(format!("start {} after end {}", doc.start, doc.end));
    }
    match &doc.embedding {
        Some(e) => {
            if let Some(d) = d_model {
                if e.len() != d {
                    return Err(format!("embedding length {} != d_model {d}", e.len()));
                }
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err("non-finite embedding value".into());
            }
        }
        None if doc.text.trim().is_empty() => return Err("empty text and no embedding".into()),
        None => {}
    }
    Ok(())
}

/// Reads one JSON document per line; blank lines are skipped. Output is
/// sorted by `start` (stable, so equal starts keep file order).
pub fn load_text(path: &Path, d_model: Option<usize>) -> Result<Vec<TextDoc>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_text(std::io::BufReader::new(file), &path.display().to_string(), d_model)
}

pub fn parse_text<R: BufRead>(reader: R, source: &str, d_model: Option<usize>) -> Result<Vec<TextDoc>> {
    let mut docs = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            row: k + 1,
            msg,
        };
        let doc: TextDoc = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        validate(&doc, d_model).map_err(err)?;
        docs.push(doc);
    }
    docs.sort_by_key(|d| d.start);
    Ok(docs)
}

pub fn write_text(docs: &[TextDoc], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for d in docs {
        serde_json::to_writer(&mut f, d)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
