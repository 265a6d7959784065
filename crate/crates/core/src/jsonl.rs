//! JSON-lines helpers shared by the artifact writers.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encode(#[from] serde_json::Error),
}

/// Writes one compact JSON document per line.
pub fn write<W: Write, T: Serialize>(mut out: W, items: impl IntoIterator<Item = T>) -> Result<(), JsonlError> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads every non-blank line as a `T`.
pub fn read<R: BufRead, T: DeserializeOwned>(input: R) -> Result<Vec<T>, JsonlError> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(items)
}

pub fn to_string<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String, JsonlError> {
    let mut buf = Vec::new();
    write(&mut buf, items)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
