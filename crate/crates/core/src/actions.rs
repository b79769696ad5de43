//! The three traversal actions: node lookup by similarity, neighbor fetching
//! (single-hop by edge type or bounded multi-hop by node type), and shared
//! neighbors across several node sets.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, KnowledgeGraph, NodeId};
use crate::similarity::{canonical_text, similarity, EmbedError, Embedder, SimilarityConfig};

pub const FIND_NODE: &str = "find_node";
pub const FETCH_NEIGHBORS: &str = "fetch_neighbors";
pub const FIND_COMMON_NODES: &str = "find_common_nodes";

pub const DEFAULT_MAX_HOPS: u32 = 3;

/// Scores this close count as equal when ranking candidates, so rounding
/// noise in the cosine does not decide between exactly tied nodes.
pub const SCORE_TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeFindingHint(String);

impl NodeFindingHint {
    pub fn new(text: impl Into<String>) -> Result<Self, ActionError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ActionError::EmptyHint);
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    EdgeType,
    NodeType,
}

/// What `fetch_neighbors` follows: one edge type for a single hop, or a node
/// type to walk towards.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TraversalParam {
    pub kind: ParamKind,
    pub name: String,
}

impl TraversalParam {
    pub fn edge_type(name: impl Into<String>) -> Self {
        Self {
            kind: ParamKind::EdgeType,
            name: name.into(),
        }
    }

    pub fn node_type(name: impl Into<String>) -> Self {
        Self {
            kind: ParamKind::NodeType,
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSet {
    pub members: BTreeSet<NodeId>,
    /// Step that produced the set, when it came out of a plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    /// `find_node` found nothing at or above the threshold and fell back to
    /// its single best candidate.
    #[serde(default)]
    pub below_threshold: bool,
    /// `find_node` had no nodes of the requested type to score.
    #[serde(default)]
    pub no_candidates: bool,
    /// Members beyond the per-step cap were dropped.
    #[serde(default)]
    pub truncated: bool,
}

impl NodeSet {
    pub fn from_members(members: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            members: members.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn with_provenance(mut self, step: impl Into<String>) -> Self {
        self.provenance = Some(step.into());
        self
    }

    /// Keep the `cap` smallest ids; flags the set when anything was dropped.
    pub fn truncate(&mut self, cap: usize) {
        if self.members.len() > cap {
            self.members = core::mem::take(&mut self.members).into_iter().take(cap).collect();
            self.truncated = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("node finding hint is empty")]
    EmptyHint,
    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),
    #[error("unknown edge type `{0}`")]
    UnknownEdgeType(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("fetch_neighbors needs at least one source node")]
    EmptySources,
    #[error("max_hops must be at least 1")]
    ZeroHops,
    #[error("find_common_nodes needs at least 2 inputs, got {0}")]
    TooFewInputs(usize),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

impl From<GraphError> for ActionError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownEdgeType(t) => ActionError::UnknownEdgeType(t),
            GraphError::UnknownNodeType(t) => ActionError::UnknownNodeType(t),
            GraphError::UnknownNode(n) => ActionError::UnknownNode(n),
            other => ActionError::UnknownNode(alloc::format!("{other}")),
        }
    }
}

/// A scored `find_node` candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredNode {
    pub id: NodeId,
    pub score: f64,
}

/// Score every node of `node_type` against the hint, best first, ties broken
/// by ascending id.
pub fn score_candidates(
    graph: &KnowledgeGraph,
    hint: &NodeFindingHint,
    node_type: &str,
    embedder: &dyn Embedder,
) -> Result<Vec<ScoredNode>, ActionError> {
    let ids = graph.nodes_of_type(node_type)?;
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = ids
        .iter()
        .map(|id| canonical_text(graph.node(id.as_str()).expect("type index is consistent")))
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = embedder.embed_batch(&refs)?;
    if vectors.len() != ids.len() {
        return Err(EmbedError::CountMismatch {
            expected: ids.len(),
            got: vectors.len(),
        }
        .into());
    }
    let query = embedder.embed(hint.as_str())?;
    let mut scored = Vec::with_capacity(ids.len());
    for (id, v) in ids.iter().zip(&vectors) {
        let score = similarity(&query, v).map_err(|e| EmbedError::Dimension {
            expected: e.left,
            got: e.right,
        })?;
        scored.push(ScoredNode {
            id: id.clone(),
            score,
        });
    }
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    // runs of near-equal neighbors are ordered by id
    let mut start = 0;
    for i in 1..=scored.len() {
        if i == scored.len() || scored[i - 1].score - scored[i].score > SCORE_TIE_EPSILON {
            scored[start..i].sort_by(|a, b| a.id.cmp(&b.id));
            start = i;
        }
    }
    Ok(scored)
}

/// Nodes of `node_type` whose canonical text scores at least `theta` against
/// the hint, at most `top_k` of them. When none qualify the single best
/// candidate is returned with `below_threshold` set.
pub fn find_node(
    graph: &KnowledgeGraph,
    hint: &NodeFindingHint,
    node_type: &str,
    embedder: &dyn Embedder,
    config: &SimilarityConfig,
) -> Result<NodeSet, ActionError> {
    let scored = score_candidates(graph, hint, node_type, embedder)?;
    let Some(best) = scored.first() else {
        return Ok(NodeSet {
            no_candidates: true,
            ..NodeSet::default()
        });
    };
    if best.score < config.theta {
        return Ok(NodeSet {
            below_threshold: true,
            ..NodeSet::from_members([best.id.clone()])
        });
    }
    Ok(NodeSet::from_members(
        scored
            .into_iter()
            .take_while(|s| s.score >= config.theta)
            .take(config.top_k)
            .map(|s| s.id),
    ))
}

/// Union over the sources of either the one-hop neighbors along an edge type,
/// or the nodes of a target type reachable within `max_hops`.
///
/// In the node-type case a branch stops at the first node of the target type
/// and a source is never part of its own result.
pub fn fetch_neighbors(
    graph: &KnowledgeGraph,
    sources: &BTreeSet<NodeId>,
    param: &TraversalParam,
    max_hops: u32,
) -> Result<NodeSet, ActionError> {
    check_param(graph, param)?;
    if sources.is_empty() {
        return Err(ActionError::EmptySources);
    }
    if let Some(missing) = sources.iter().find(|s| !graph.contains(s.as_str())) {
        return Err(ActionError::UnknownNode(missing.as_str().into()));
    }
    let mut out = BTreeSet::new();
    match param.kind {
        ParamKind::EdgeType => {
            for v in sources {
                out.extend(graph.neighbors(v.as_str(), &param.name)?.iter().cloned());
            }
        }
        ParamKind::NodeType => {
            if max_hops == 0 {
                return Err(ActionError::ZeroHops);
            }
            for v in sources {
                out.extend(reach_type(graph, v, &param.name, max_hops));
            }
        }
    }
    Ok(NodeSet::from_members(out))
}

pub(crate) fn check_param(graph: &KnowledgeGraph, param: &TraversalParam) -> Result<(), ActionError> {
    let schema = graph.schema();
    match param.kind {
        ParamKind::EdgeType if !schema.has_edge_type(&param.name) => {
            Err(ActionError::UnknownEdgeType(param.name.clone()))
        }
        ParamKind::NodeType if !schema.has_node_type(&param.name) => {
            Err(ActionError::UnknownNodeType(param.name.clone()))
        }
        _ => Ok(()),
    }
}

fn reach_type(graph: &KnowledgeGraph, start: &NodeId, target_type: &str, max_hops: u32) -> Vec<NodeId> {
    let is_target = |id: &NodeId| graph.node(id.as_str()).is_some_and(|n| n.node_type == target_type);
    let mut visited = BTreeSet::new();
    visited.insert(start.clone());
    let mut queue = VecDeque::new();
    queue.push_back((start.clone(), 0u32));
    let mut found = Vec::new();
    while let Some((v, depth)) = queue.pop_front() {
        if depth == max_hops {
            continue;
        }
        for u in graph.all_neighbors(v.as_str()) {
            if !visited.insert(u.clone()) {
                continue;
            }
            if is_target(u) {
                found.push(u.clone());
            } else {
                queue.push_back((u.clone(), depth + 1));
            }
        }
    }
    found
}

/// Intersection over the inputs of each input's one-hop neighbors along its
/// edge type.
pub fn find_common_nodes(
    graph: &KnowledgeGraph,
    inputs: &[(&BTreeSet<NodeId>, &str)],
) -> Result<NodeSet, ActionError> {
    if inputs.len() < 2 {
        return Err(ActionError::TooFewInputs(inputs.len()));
    }
    let mut acc: Option<BTreeSet<NodeId>> = None;
    for (nodes, edge_type) in inputs {
        if !graph.schema().has_edge_type(edge_type) {
            return Err(ActionError::UnknownEdgeType((*edge_type).into()));
        }
        let mut reached = BTreeSet::new();
        for v in nodes.iter() {
            reached.extend(graph.neighbors(v.as_str(), edge_type)?.iter().cloned());
        }
        acc = Some(match acc {
            None => reached,
            Some(prev) => prev.intersection(&reached).cloned().collect(),
        });
    }
    Ok(NodeSet::from_members(acc.unwrap_or_default()))
}
