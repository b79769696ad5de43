//! Traversal plans: typed steps, the JSON wire format, lenient extraction
//! from model output, and structural validation.
//!
//! Wire format:
//!
//! ```json
//! {
//!   "query": "Who wrote ...?",
//!   "rationale": "optional",
//!   "steps": [
//!     {"id": "s1", "action": "find_node", "params": {"hint": "...", "node_type": "paper"}},
//!     {"id": "s2", "action": "fetch_neighbors", "params": {"source": "s1", "edge_type": "written-by"}},
//!     {"id": "s3", "action": "fetch_neighbors", "params": {"source": "s1", "node_type": "institution", "max_hops": 2}},
//!     {"id": "s4", "action": "find_common_nodes",
//!      "params": {"inputs": [{"source": "s2", "edge_type": "x"}, {"source": "s3", "edge_type": "y"}]}}
//!   ]
//! }
//! ```
//!
//! Steps whose action is not one of the three known actions, or whose params
//! do not fit the action, are kept as [`StepKind::Unchecked`] so the verifier
//! can report them. Everything else about the document is checked here.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::actions::{ParamKind, TraversalParam, FETCH_NEIGHBORS, FIND_COMMON_NODES, FIND_NODE};

/// Reference to the output of an earlier step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepRef(pub String);

impl StepRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StepRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonInput {
    pub source: StepRef,
    pub edge_type: String,
}

impl CommonInput {
    pub fn new(source: impl Into<String>, edge_type: impl Into<String>) -> Self {
        Self {
            source: StepRef::new(source),
            edge_type: edge_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepKind {
    FindNode {
        hint: String,
        node_type: String,
    },
    FetchNeighbors {
        source: StepRef,
        param: TraversalParam,
        /// Overrides the configured hop bound for node-type traversal.
        max_hops: Option<u32>,
    },
    FindCommonNodes {
        inputs: Vec<CommonInput>,
    },
    /// Unknown action, or params that do not fit the action.
    Unchecked {
        action: String,
        params: Value,
        problem: String,
    },
}

impl StepKind {
    pub fn action(&self) -> &str {
        match self {
            StepKind::FindNode { .. } => FIND_NODE,
            StepKind::FetchNeighbors { .. } => FETCH_NEIGHBORS,
            StepKind::FindCommonNodes { .. } => FIND_COMMON_NODES,
            StepKind::Unchecked { action, .. } => action,
        }
    }

    pub fn references(&self) -> Vec<&StepRef> {
        match self {
            StepKind::FetchNeighbors { source, .. } => alloc::vec![source],
            StepKind::FindCommonNodes { inputs } => inputs.iter().map(|i| &i.source).collect(),
            _ => Vec::new(),
        }
    }

    fn params_value(&self) -> Value {
        match self {
            StepKind::FindNode { hint, node_type } => json!({ "hint": hint, "node_type": node_type }),
            StepKind::FetchNeighbors {
                source,
                param,
                max_hops,
            } => {
                let mut m = Map::new();
                m.insert("source".into(), Value::String(source.0.clone()));
                let key = match param.kind {
                    ParamKind::EdgeType => "edge_type",
                    ParamKind::NodeType => "node_type",
                };
                m.insert(key.into(), Value::String(param.name.clone()));
                if let Some(h) = max_hops {
                    m.insert("max_hops".into(), Value::from(*h));
                }
                Value::Object(m)
            }
            StepKind::FindCommonNodes { inputs } => json!({
                "inputs": inputs
                    .iter()
                    .map(|i| json!({ "source": i.source.0, "edge_type": i.edge_type }))
                    .collect::<Vec<_>>()
            }),
            StepKind::Unchecked { params, .. } => params.clone(),
        }
    }

    /// Interpret `params` for `action`. Anything that does not fit comes back
    /// as [`StepKind::Unchecked`] with the reason.
    pub fn from_wire(action: &str, params: &Value) -> Self {
        let typed = match action {
            FIND_NODE => parse_find_node(params),
            FETCH_NEIGHBORS => parse_fetch_neighbors(params),
            FIND_COMMON_NODES => parse_find_common(params),
            _ => Err(format!("`{action}` is not a known action")),
        };
        typed.unwrap_or_else(|problem| StepKind::Unchecked {
            action: action.into(),
            params: params.clone(),
            problem,
        })
    }
}

fn object(params: &Value) -> Result<&Map<String, Value>, String> {
    params.as_object().ok_or_else(|| "params must be a JSON object".to_string())
}

fn text_field(m: &Map<String, Value>, key: &str) -> Result<Option<String>, String> {
    match m.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.trim().is_empty() => Err(format!("`{key}` must not be empty")),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(format!("`{key}` must be a string")),
    }
}

fn required_text(m: &Map<String, Value>, key: &str) -> Result<String, String> {
    text_field(m, key)?.ok_or_else(|| format!("missing `{key}`"))
}

fn parse_find_node(params: &Value) -> Result<StepKind, String> {
    let m = object(params)?;
    Ok(StepKind::FindNode {
        hint: required_text(m, "hint")?,
        node_type: required_text(m, "node_type")?,
    })
}

fn parse_fetch_neighbors(params: &Value) -> Result<StepKind, String> {
    let m = object(params)?;
    let source = StepRef(required_text(m, "source")?);
    let max_hops = match m.get("max_hops") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(h) if h >= 1 && h <= u64::from(u32::MAX) => Some(h as u32),
            _ => return Err("`max_hops` must be a positive integer".into()),
        },
    };
    let param = match (text_field(m, "edge_type")?, text_field(m, "node_type")?) {
        (Some(e), None) => {
            if max_hops.is_some() {
                return Err("`max_hops` only applies to node_type traversal".into());
            }
            TraversalParam::edge_type(e)
        }
        (None, Some(t)) => TraversalParam::node_type(t),
        (Some(_), Some(_)) => return Err("give either `edge_type` or `node_type`, not both".into()),
        (None, None) => return Err("missing `edge_type` or `node_type`".into()),
    };
    Ok(StepKind::FetchNeighbors {
        source,
        param,
        max_hops,
    })
}

fn parse_find_common(params: &Value) -> Result<StepKind, String> {
    let m = object(params)?;
    let list = m
        .get("inputs")
        .and_then(Value::as_array)
        .ok_or_else(|| "missing `inputs` array".to_string())?;
    if list.len() < 2 {
        return Err(format!("`inputs` needs at least 2 entries, got {}", list.len()));
    }
    let inputs = list
        .iter()
        .map(|entry| {
            let e = entry
                .as_object()
                .ok_or_else(|| "each input must be an object".to_string())?;
            Ok(CommonInput {
                source: StepRef(required_text(e, "source")?),
                edge_type: required_text(e, "edge_type")?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(StepKind::FindCommonNodes { inputs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub id: String,
    pub kind: StepKind,
}

impl PlanStep {
    pub fn new(id: impl Into<String>, kind: StepKind) -> Self {
        Self { id: id.into(), kind }
    }

    pub fn find_node(id: &str, hint: &str, node_type: &str) -> Self {
        Self::new(
            id,
            StepKind::FindNode {
                hint: hint.into(),
                node_type: node_type.into(),
            },
        )
    }

    pub fn fetch_edge(id: &str, source: &str, edge_type: &str) -> Self {
        Self::new(
            id,
            StepKind::FetchNeighbors {
                source: StepRef::new(source),
                param: TraversalParam::edge_type(edge_type),
                max_hops: None,
            },
        )
    }

    pub fn fetch_type(id: &str, source: &str, node_type: &str, max_hops: Option<u32>) -> Self {
        Self::new(
            id,
            StepKind::FetchNeighbors {
                source: StepRef::new(source),
                param: TraversalParam::node_type(node_type),
                max_hops,
            },
        )
    }

    pub fn common(id: &str, inputs: &[(&str, &str)]) -> Self {
        Self::new(
            id,
            StepKind::FindCommonNodes {
                inputs: inputs.iter().map(|(s, e)| CommonInput::new(*s, *e)).collect(),
            },
        )
    }

    pub fn action(&self) -> &str {
        self.kind.action()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlanDocument", try_from = "PlanDocument")]
pub struct TraversalPlan {
    pub query: String,
    pub rationale: Option<String>,
    pub steps: Vec<PlanStep>,
}

impl TraversalPlan {
    /// Build a plan, enforcing the structural rules.
    pub fn new(
        query: impl Into<String>,
        rationale: Option<String>,
        steps: Vec<PlanStep>,
    ) -> Result<Self, PlanFormatError> {
        let plan = Self {
            query: query.into(),
            rationale,
            steps,
        };
        plan.check_structure()?;
        Ok(plan)
    }

    pub fn step(&self, id: &str) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.id == id)
    }

    /// At least one step, the first one a `find_node`, unique non-empty ids,
    /// and references only to earlier steps.
    pub fn check_structure(&self) -> Result<(), PlanFormatError> {
        let Some(first) = self.steps.first() else {
            return Err(PlanFormatError::structure(None, StructureRule::NoSteps, "plan has no steps"));
        };
        if first.action() != FIND_NODE {
            return Err(PlanFormatError::structure(
                Some(&first.id),
                StructureRule::FirstStepNotFindNode,
                format!("first step must be find_node, but step `{}` is {}", first.id, first.action()),
            ));
        }
        let all: Vec<&str> = self.steps.iter().map(|s| s.id.as_str()).collect();
        let mut earlier = BTreeSet::new();
        for step in &self.steps {
            if step.id.trim().is_empty() {
                return Err(PlanFormatError::structure(None, StructureRule::EmptyStepId, "a step has an empty id"));
            }
            if earlier.contains(step.id.as_str()) {
                return Err(PlanFormatError::structure(
                    Some(&step.id),
                    StructureRule::DuplicateStepId,
                    format!("step id `{}` is used more than once", step.id),
                ));
            }
            for r in step.kind.references() {
                if earlier.contains(r.as_str()) {
                    continue;
                }
                let (rule, why) = if r.as_str() == step.id {
                    (StructureRule::SelfReference, "refers to itself")
                } else if all.contains(&r.as_str()) {
                    (StructureRule::ForwardReference, "refers to a later step")
                } else {
                    (StructureRule::UnknownReference, "refers to a step that does not exist")
                };
                return Err(PlanFormatError::structure(
                    Some(&step.id),
                    rule,
                    format!("step `{}` {why}: `{}`", step.id, r),
                ));
            }
            earlier.insert(step.id.as_str());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanDocument {
    #[serde(default)]
    query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<String>,
    steps: Vec<StepDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StepDocument {
    id: String,
    action: String,
    #[serde(default)]
    params: Value,
}

impl From<TraversalPlan> for PlanDocument {
    fn from(plan: TraversalPlan) -> Self {
        PlanDocument {
            query: plan.query,
            rationale: plan.rationale,
            steps: plan
                .steps
                .into_iter()
                .map(|s| StepDocument {
                    params: s.kind.params_value(),
                    action: s.kind.action().into(),
                    id: s.id,
                })
                .collect(),
        }
    }
}

impl TryFrom<PlanDocument> for TraversalPlan {
    type Error = PlanFormatError;

    fn try_from(doc: PlanDocument) -> Result<Self, Self::Error> {
        let steps = doc
            .steps
            .into_iter()
            .map(|s| PlanStep {
                kind: StepKind::from_wire(&s.action, &s.params),
                id: s.id,
            })
            .collect();
        TraversalPlan::new(doc.query, doc.rationale, steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureRule {
    DocumentShape,
    NoSteps,
    FirstStepNotFindNode,
    EmptyStepId,
    DuplicateStepId,
    SelfReference,
    ForwardReference,
    UnknownReference,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanFormatError {
    #[error("no plan document found in the output")]
    NoDocument,
    #[error("malformed plan document at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid plan: {message}")]
    Structure {
        step: Option<String>,
        rule: StructureRule,
        message: String,
    },
}

impl PlanFormatError {
    fn structure(step: Option<&str>, rule: StructureRule, message: impl Into<String>) -> Self {
        PlanFormatError::Structure {
            step: step.map(Into::into),
            rule,
            message: message.into(),
        }
    }

    /// Text suitable for sending back to the planner.
    pub fn feedback(&self) -> String {
        match self {
            PlanFormatError::NoDocument => {
                "The previous answer contained no plan. Reply with one JSON object that has a \"steps\" array.".into()
            }
            PlanFormatError::Malformed { line, column, message } => format!(
                "The previous plan was not valid JSON (line {line}, column {column}: {message}). Reply with one well-formed JSON object."
            ),
            PlanFormatError::Structure { message, .. } => {
                format!("The previous plan was rejected: {message}.")
            }
        }
    }
}

/// Pull the first plan document out of free text and validate it.
///
/// The text may wrap the document in prose or code fences. The first
/// balanced JSON object with a `steps` key wins.
pub fn parse_plan(text: &str) -> Result<TraversalPlan, PlanFormatError> {
    let (start, value) = extract_document(text)?;
    let doc: PlanDocument = serde_json::from_value(value).map_err(|e| {
        let (line, column) = position(text, start);
        PlanFormatError::Structure {
            step: None,
            rule: StructureRule::DocumentShape,
            message: format!("plan document starting at line {line}, column {column} has the wrong shape: {e}"),
        }
    })?;
    TraversalPlan::try_from(doc)
}

/// Canonical, pretty-printed wire form. Equal plans give identical text.
pub fn serialize_plan(plan: &TraversalPlan) -> String {
    serde_json::to_string_pretty(plan).expect("plans always serialize")
}

fn extract_document(text: &str) -> Result<(usize, Value), PlanFormatError> {
    let mut first_error: Option<PlanFormatError> = None;
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_end(text, start) else {
            if first_error.is_none() && text[start..].contains("\"steps\"") {
                let (line, column) = position(text, start);
                first_error = Some(PlanFormatError::Malformed {
                    line,
                    column,
                    message: "unterminated JSON object".into(),
                });
            }
            continue;
        };
        let candidate = &text[start..=end];
        match serde_json::from_str::<Value>(candidate) {
            Ok(v) if v.get("steps").is_some() => return Ok((start, v)),
            Ok(_) => {}
            Err(e) => {
                if first_error.is_none() && candidate.contains("\"steps\"") {
                    let (l0, c0) = position(text, start);
                    let (line, column) = if e.line() <= 1 {
                        (l0, c0 + e.column().saturating_sub(1))
                    } else {
                        (l0 + e.line() - 1, e.column())
                    };
                    first_error = Some(PlanFormatError::Malformed {
                        line,
                        column,
                        message: format!("{e}"),
                    });
                }
            }
        }
    }
    Err(first_error.unwrap_or(PlanFormatError::NoDocument))
}

/// Index of the `}` closing the object opened at `start`, skipping braces
/// inside strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in text.as_bytes()[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i);
                }
            }
            _ => {}
        }
    }
    None
}

/// 1-based line and column of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
