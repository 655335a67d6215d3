//! JSON-lines dataset manifests.
//!
//! One record per line: `{"id", "image_path", "captions": [...], "question"?,
//! "answer"?}`. Relative image paths resolve against the manifest's directory.
//! Blank lines are skipped but still counted for line numbers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub image_path: String,
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl DatasetRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.id.contains(['/', '\\']) || self.id == "." || self.id == ".." {
            return Err(format!("id {:?} is not a valid file stem", self.id));
        }
        if self.image_path.trim().is_empty() {
            return Err("empty image_path".into());
        }
        if self.captions.is_empty() || self.captions.iter().any(|c| c.trim().is_empty()) {
            return Err("captions must be a non-empty list of non-empty strings".into());
        }
        if self.question.is_some() != self.answer.is_some() {
            return Err("question and answer must be given together".into());
        }
        Ok(())
    }

    pub fn has_vqa(&self) -> bool {
        self.question.is_some() && self.answer.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    pub fn image_path(&self, record: &DatasetRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn parse_manifest(text: &str, root: PathBuf) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| Error::Manifest {
            line: line_no,
            message,
        })?;
        if let Some(first) = seen.insert(record.id.clone(), line_no) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("duplicate id {:?} (first seen on line {first})", record.id),
            });
        }
        records.push(record);
    }
    Ok(Manifest { root, records })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&text, root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str) -> String {
        format!(r#"{{"id":"{id}","image_path":"{id}.png","captions":["a cat"]}}"#)
    }

    #[test]
    fn empty_and_single() {
        assert!(parse_manifest("", ".".into()).unwrap().is_empty());
        let m = parse_manifest(&line("x"), "/data".into()).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].id, "x");
        assert_eq!(m.records[0].captions, vec!["a cat"]);
        assert_eq!(m.image_path(&m.records[0]), PathBuf::from("/data/x.png"));
    }

    #[test]
    fn duplicate_names_its_line() {
        let text: Vec<String> = ["a", "b", "c", "d", "e", "f", "c"]
            .iter()
            .map(|s| line(s))
            .collect();
        match parse_manifest(&text.join("\n"), ".".into()) {
            Err(Error::Manifest { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("line 3"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        let text = format!("{}\n\n{{not json", line("a"));
        assert!(matches!(
            parse_manifest(&text, ".".into()),
            Err(Error::Manifest { line: 3, .. })
        ));
        let bad = [
            r#"{"id":"a","image_path":"a.png","captions":[]}"#,
            r#"{"id":"a","image_path":"a.png","captions":["x"],"question":"q"}"#,
            r#"{"id":"../a","image_path":"a.png","captions":["x"]}"#,
            r#"{"id":"a","image_path":"a.png","captions":["x"],"extra":1}"#,
        ];
        for b in bad {
            assert!(parse_manifest(b, ".".into()).is_err(), "{b}");
        }
    }

    #[test]
    fn reads_from_disk_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, line("q")).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.image_path(&m.records[0]), dir.path().join("q.png"));
        assert!(matches!(
            load_manifest(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
