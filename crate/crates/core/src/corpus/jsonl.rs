//! JSON-lines persistence for raw datasets.
//!
//! One compact JSON object per line, fields in declaration order, so that a
//! load–save round trip of a file this crate wrote is byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

use super::{RawQaInstance, RawTextInstance};

fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_text_jsonl(path: &Path) -> Result<Vec<RawTextInstance>> {
    load_jsonl(path)
}

pub fn load_qa_jsonl(path: &Path) -> Result<Vec<RawQaInstance>> {
    load_jsonl(path)
}

pub fn save_text_jsonl(path: &Path, items: &[RawTextInstance]) -> Result<()> {
    save_jsonl(path, items)
}

pub fn save_qa_jsonl(path: &Path, items: &[RawQaInstance]) -> Result<()> {
    save_jsonl(path, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let items = vec![
            RawTextInstance { id: "a-0".into(), text: "one two".into(), label: 0 },
            RawTextInstance { id: "a-1".into(), text: "three".into(), label: 1 },
        ];
        save_text_jsonl(&path, &items).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_text_jsonl(&path).unwrap();
        assert_eq!(loaded, items);
        save_text_jsonl(&path, &loaded).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn qa_round_trip_preserves_span_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let items = vec![RawQaInstance {
            id: "q-0".into(),
            passage: "p q r s".into(),
            question: "what r".into(),
            answer_start_token: 2,
            answer_end_token: 2,
        }];
        save_qa_jsonl(&path, &items).unwrap();
        assert_eq!(load_qa_jsonl(&path).unwrap(), items);
    }

    #[test]
    fn malformed_line_errors_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\nnot json\n").unwrap();
        let err = load_text_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "error should name line 2: {err}");
    }

    #[test]
    fn blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaps.jsonl");
        std::fs::write(&path, "\n{\"id\":\"a\",\"text\":\"x\",\"label\":0}\n\n").unwrap();
        assert_eq!(load_text_jsonl(&path).unwrap().len(), 1);
    }
}
