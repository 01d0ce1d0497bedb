//! JSONL dataset format: a header record followed by edit items and
//! preservation queries, one JSON object per line.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edit::{EditItem, PreservationQuery};
use crate::metrics::{GroundTruthAnswer, LabeledQuery};

use super::HarnessError;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Edit targets contradict the recorded facts; every edit item carries a
    /// target_old, enabling C-accuracy and contrastive efficacy.
    Counterfactual,
    Factual,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetKind::Counterfactual => f.write_str("counterfactual"),
            DatasetKind::Factual => f.write_str("factual"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: String,
    #[serde(flatten)]
    pub item: EditItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationRecord {
    pub id: String,
    #[serde(flatten)]
    pub query: PreservationQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_answer: Option<GroundTruthAnswer>,
}

/// One loaded dataset: the edit set S* and the preservation set S.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: DatasetKind,
    pub edit_items: Vec<EditRecord>,
    pub preservation: Vec<PreservationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header { schema_version: u32, name: String, kind: DatasetKind },
    Edit(EditRecord),
    Preservation(PreservationRecord),
}

fn line_err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Dataset { line, message: message.into() }
}

impl Dataset {
    pub fn new(
        name: String,
        kind: DatasetKind,
        edit_items: Vec<EditRecord>,
        preservation: Vec<PreservationRecord>,
    ) -> Result<Self, HarnessError> {
        let ds = Self { name, kind, edit_items, preservation };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let mut ids = std::collections::HashSet::new();
        // line numbers here follow the canonical save order: header first
        for (offset, record) in self.edit_items.iter().enumerate() {
            let line = 2 + offset;
            record
                .item
                .validate()
                .map_err(|message| line_err(line, message))?;
            if self.kind == DatasetKind::Counterfactual && record.item.target_old.is_none() {
                return Err(line_err(
                    line,
                    format!("counterfactual record {} lacks target_old", record.id),
                ));
            }
            if !ids.insert(record.id.clone()) {
                return Err(line_err(line, format!("duplicate id {}", record.id)));
            }
        }
        for (offset, record) in self.preservation.iter().enumerate() {
            let line = 2 + self.edit_items.len() + offset;
            if record.query.query.is_empty() {
                return Err(line_err(line, "preservation query must be non-empty"));
            }
            if !ids.insert(record.id.clone()) {
                return Err(line_err(line, format!("duplicate id {}", record.id)));
            }
        }
        Ok(())
    }

    /// Preservation queries that carry ground-truth answers, ready for the
    /// GT-based metrics.
    pub fn labeled_queries(&self) -> Vec<LabeledQuery> {
        self.preservation
            .iter()
            .filter_map(|r| {
                r.gt_answer.as_ref().map(|answer| LabeledQuery {
                    query: r.query.query.clone(),
                    answer: answer.clone(),
                })
            })
            .collect()
    }

    pub fn preservation_queries(&self) -> Vec<PreservationQuery> {
        self.preservation.iter().map(|r| r.query.clone()).collect()
    }

    pub fn preservation_query_strings(&self) -> Vec<String> {
        self.preservation.iter().map(|r| r.query.query.clone()).collect()
    }

    pub fn items(&self) -> Vec<EditItem> {
        self.edit_items.iter().map(|r| r.item.clone()).collect()
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut header: Option<(String, DatasetKind)> = None;
        let mut edit_items = Vec::new();
        let mut preservation = Vec::new();
        let mut saw_any = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            saw_any = true;
            let record: Record = serde_json::from_str(trimmed)
                .map_err(|e| line_err(line, format!("invalid record: {e}")))?;
            match record {
                Record::Header { schema_version, name, kind } => {
                    if header.is_some() {
                        return Err(line_err(line, "duplicate header record"));
                    }
                    if !edit_items.is_empty() || !preservation.is_empty() {
                        return Err(line_err(line, "header must be the first record"));
                    }
                    if schema_version != DATASET_SCHEMA_VERSION {
                        return Err(line_err(
                            line,
                            format!("unsupported schema_version {schema_version}"),
                        ));
                    }
                    header = Some((name, kind));
                }
                Record::Edit(record) => {
                    if header.is_none() {
                        return Err(line_err(line, "record precedes the header"));
                    }
                    edit_items.push(record);
                }
                Record::Preservation(record) => {
                    if header.is_none() {
                        return Err(line_err(line, "record precedes the header"));
                    }
                    preservation.push(record);
                }
            }
        }
        if !saw_any {
            return Err(line_err(1, "empty dataset file"));
        }
        let (name, kind) = header.ok_or_else(|| line_err(1, "missing header record"))?;
        Dataset::new(name, kind, edit_items, preservation)
    }

    /// Write in canonical order: header, edit items, preservation queries.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), HarnessError> {
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(self.serialize_jsonl()?.as_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn serialize_jsonl(&self) -> Result<String, HarnessError> {
        let mut lines = Vec::with_capacity(1 + self.edit_items.len() + self.preservation.len());
        lines.push(serde_json::to_string(&Record::Header {
            schema_version: DATASET_SCHEMA_VERSION,
            name: self.name.clone(),
            kind: self.kind,
        })?);
        for record in &self.edit_items {
            lines.push(serde_json::to_string(&Record::Edit(record.clone()))?);
        }
        for record in &self.preservation {
            lines.push(serde_json::to_string(&Record::Preservation(record.clone()))?);
        }
        lines.push(String::new());
        Ok(lines.join("\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(
            "sample".into(),
            DatasetKind::Counterfactual,
            vec![EditRecord {
                id: "edit-000".into(),
                item: EditItem {
                    query: "alice works at".into(),
                    target_new: "globex corp".into(),
                    target_old: Some("acme corp".into()),
                    decisive_index: None,
                    paraphrases: vec!["alice is employed by".into()],
                    neighborhood_queries: vec!["bob works at".into()],
                },
            }],
            vec![PreservationRecord {
                id: "pres-000".into(),
                query: PreservationQuery { query: "carol lives in".into(), decisive_index: None },
                gt_answer: Some(GroundTruthAnswer::new("acme labs").unwrap()),
            }],
        )
        .unwrap()
    }

    #[test]
    fn empty_file_is_a_dataset_error() {
        assert!(matches!(Dataset::parse(""), Err(HarnessError::Dataset { .. })));
    }

    #[test]
    fn roundtrip_is_identical() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.jsonl");
        ds.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(ds, loaded);
        // and the serialized bytes are stable
        let again = loaded.serialize_jsonl().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), again);
    }

    #[test]
    fn counterfactual_record_without_target_old_is_rejected_naming_the_field() {
        let ds = sample();
        let text = ds
            .serialize_jsonl()
            .unwrap()
            .replace(",\"target_old\":\"acme corp\"", "");
        let err = Dataset::parse(&text).unwrap_err();
        match err {
            HarnessError::Dataset { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("target_old"), "message: {message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let ds = sample();
        let text = ds.serialize_jsonl().unwrap().replace("pres-000", "edit-000");
        assert!(matches!(Dataset::parse(&text), Err(HarnessError::Dataset { .. })));
    }

    #[test]
    fn header_must_come_first() {
        let ds = sample();
        let mut lines: Vec<String> =
            ds.serialize_jsonl().unwrap().lines().map(String::from).collect();
        lines.swap(0, 1);
        let text = lines.join("\n");
        assert!(matches!(Dataset::parse(&text), Err(HarnessError::Dataset { .. })));
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let text = r#"{"type":"header","schema_version":9,"name":"x","kind":"factual"}"#;
        assert!(matches!(Dataset::parse(text), Err(HarnessError::Dataset { line: 1, .. })));
    }

    #[test]
    fn empty_gt_answer_is_rejected_at_parse_time() {
        let text = concat!(
            r#"{"type":"header","schema_version":1,"name":"x","kind":"factual"}"#,
            "\n",
            r#"{"type":"preservation","id":"p0","query":"alice works at","gt_answer":""}"#,
        );
        assert!(matches!(Dataset::parse(text), Err(HarnessError::Dataset { line: 2, .. })));
    }
}
