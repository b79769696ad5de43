//! Adapter for GRBENCH-style graph and QA files.
//!
//! A GRBENCH graph file maps `<type>_nodes` to objects keyed by node id,
//! each with `features` (attribute values) and `neighbors` (relation name to
//! a list of neighbor ids). Relation names become edge types and the schema
//! is inferred from the instance.

use std::collections::{BTreeMap, BTreeSet};

use graphrunner_core::graph::{Edge, GraphDocument, Node};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrbenchError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("top-level key `{0}` does not end in `_nodes`")]
    BadSection(String),
    #[error("node `{id}` appears under both `{first}` and `{second}`")]
    DuplicateNode { id: String, first: String, second: String },
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
}

#[derive(Debug, Deserialize)]
struct RawNode {
    #[serde(default)]
    features: BTreeMap<String, Value>,
    #[serde(default)]
    neighbors: BTreeMap<String, Vec<Value>>,
}

/// Text form of a JSON scalar or compound value.
fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(text_of).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

#[derive(Debug)]
pub struct Converted {
    pub document: GraphDocument,
    /// Neighbor references to ids that have no node record.
    pub dropped_references: usize,
}

pub fn convert_graph(source: &str) -> Result<Converted, GrbenchError> {
    let raw: BTreeMap<String, BTreeMap<String, RawNode>> =
        serde_json::from_str(source).map_err(|e| GrbenchError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;

    let mut type_of: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut nodes = Vec::new();
    for (section, entries) in &raw {
        let node_type = section
            .strip_suffix("_nodes")
            .filter(|t| !t.is_empty())
            .ok_or_else(|| GrbenchError::BadSection(section.clone()))?;
        for (id, record) in entries {
            if let Some((_, first)) = type_of.insert(id.clone(), (node_type.to_string(), section.clone())) {
                return Err(GrbenchError::DuplicateNode {
                    id: id.clone(),
                    first,
                    second: section.clone(),
                });
            }
            let mut node = Node::new(id.as_str(), node_type);
            for (k, v) in &record.features {
                if !k.is_empty() {
                    node.attributes.insert(k.clone(), text_of(v));
                }
            }
            nodes.push(node);
        }
    }

    let mut edges = BTreeSet::new();
    let mut dropped = 0;
    for entries in raw.values() {
        for (id, record) in entries {
            for (relation, targets) in &record.neighbors {
                for t in targets {
                    let target = text_of(t);
                    if type_of.contains_key(&target) {
                        edges.insert(Edge::new(id.as_str(), target.as_str(), relation.as_str()));
                    } else {
                        dropped += 1;
                    }
                }
            }
        }
    }
    Ok(Converted {
        document: GraphDocument {
            schema: None,
            nodes,
            edges: edges.into_iter().collect(),
        },
        dropped_references: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
}

/// One QA record from either the native layout (`id`) or GRBENCH (`qid`).
/// List answers are joined with `, `.
pub fn qa_record(value: &Value, index: usize) -> Result<QaRecord, GrbenchError> {
    let err = |message: &str| GrbenchError::Record {
        index,
        message: message.into(),
    };
    let obj = value.as_object().ok_or_else(|| err("not a JSON object"))?;
    let id = obj
        .get("id")
        .or_else(|| obj.get("qid"))
        .filter(|v| !v.is_null())
        .map(text_of)
        .ok_or_else(|| err("missing `id`"))?;
    let question = obj
        .get("question")
        .and_then(Value::as_str)
        .ok_or_else(|| err("missing `question`"))?;
    let answer = obj.get("answer").map(text_of).unwrap_or_default();
    Ok(QaRecord {
        id,
        question: question.into(),
        answer,
    })
}
