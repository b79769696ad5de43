//! Typed, attributed, directed multigraph with a schema and a per-edge-type
//! neighbor index.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(value: &str) -> Self {
        Self(value.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl Node {
    pub fn new(id: impl Into<String>, node_type: impl Into<String>) -> Self {
        Self {
            id: NodeId::new(id),
            node_type: node_type.into(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    #[serde(rename = "type")]
    pub edge_type: String,
}

impl Edge {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        edge_type: impl Into<String>,
    ) -> Self {
        Self {
            source: NodeId::new(source),
            target: NodeId::new(target),
            edge_type: edge_type.into(),
        }
    }
}

fn default_bidirectional() -> bool {
    true
}

/// One allowed (edge type, source node type, target node type) combination.
///
/// `bidirectional` records may also be walked from target to source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeTypeRecord {
    pub name: String,
    pub source: String,
    pub target: String,
    #[serde(default = "default_bidirectional")]
    pub bidirectional: bool,
}

impl EdgeTypeRecord {
    pub fn new(
        name: impl Into<String>,
        source: impl Into<String>,
        target: impl Into<String>,
        bidirectional: bool,
    ) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            target: target.into(),
            bidirectional,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSchema {
    /// Node type name to the attribute keys nodes of that type may carry.
    #[serde(default)]
    pub node_types: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub edge_types: Vec<EdgeTypeRecord>,
}

impl GraphSchema {
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for record in &self.edge_types {
            if record.name.is_empty() {
                return Err(GraphError::InvalidSchema("edge type with empty name".into()));
            }
            for endpoint in [&record.source, &record.target] {
                if !self.node_types.contains_key(endpoint.as_str()) {
                    return Err(GraphError::InvalidSchema(alloc::format!(
                        "edge type `{}` references undeclared node type `{}`",
                        record.name, endpoint
                    )));
                }
            }
            if !seen.insert((&record.name, &record.source, &record.target)) {
                return Err(GraphError::InvalidSchema(alloc::format!(
                    "duplicate edge type record ({}, {}, {})",
                    record.name, record.source, record.target
                )));
            }
        }
        if self.node_types.contains_key("") {
            return Err(GraphError::InvalidSchema("node type with empty name".into()));
        }
        Ok(())
    }

    pub fn has_node_type(&self, name: &str) -> bool {
        self.node_types.contains_key(name)
    }

    pub fn has_edge_type(&self, name: &str) -> bool {
        self.edge_types.iter().any(|r| r.name == name)
    }

    pub fn node_type_names(&self) -> impl Iterator<Item = &str> {
        self.node_types.keys().map(String::as_str)
    }

    pub fn edge_type_names(&self) -> BTreeSet<&str> {
        self.edge_types.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn record(&self, name: &str, source: &str, target: &str) -> Option<&EdgeTypeRecord> {
        self.edge_types
            .iter()
            .find(|r| r.name == name && r.source == source && r.target == target)
    }

    /// Node types reachable in one hop from `source_type` along edges named
    /// `name`, honoring each record's direction flag.
    pub fn edge_targets(&self, source_type: &str, name: &str) -> BTreeSet<&str> {
        self.traversable_from(source_type)
            .into_iter()
            .filter(|(edge, _)| *edge == name)
            .map(|(_, target)| target)
            .collect()
    }

    /// Every `(edge type, node type)` pair one hop away from `source_type`.
    pub fn traversable_from(&self, source_type: &str) -> BTreeSet<(&str, &str)> {
        let mut out = BTreeSet::new();
        for r in &self.edge_types {
            if r.source == source_type {
                out.insert((r.name.as_str(), r.target.as_str()));
            }
            if r.bidirectional && r.target == source_type {
                out.insert((r.name.as_str(), r.source.as_str()));
            }
        }
        out
    }

    /// Node types one hop away from `node_type` over any edge type.
    pub fn type_successors(&self, node_type: &str) -> BTreeSet<&str> {
        self.traversable_from(node_type)
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph file is not valid JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("node with empty id")]
    EmptyNodeId,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
    #[error("node `{node}` has an empty attribute key")]
    EmptyAttributeKey { node: NodeId },
    #[error("node `{node}` has type `{node_type}`, which the schema does not declare")]
    UndeclaredNodeType { node: NodeId, node_type: String },
    #[error("node `{node}` carries attribute `{key}`, which is not declared for type `{node_type}`")]
    UndeclaredAttribute {
        node: NodeId,
        node_type: String,
        key: String,
    },
    #[error("edge {from} -[{edge_type}]-> {to} references missing node `{missing}`")]
    DanglingEdge {
        from: NodeId,
        to: NodeId,
        edge_type: String,
        missing: NodeId,
    },
    #[error(
        "edge {from} -[{edge_type}]-> {to} connects {source_type} -> {target_type}, \
         which no schema edge type record allows"
    )]
    EdgeViolatesSchema {
        from: NodeId,
        to: NodeId,
        edge_type: String,
        source_type: String,
        target_type: String,
    },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown edge type `{0}`")]
    UnknownEdgeType(String),
    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),
}

/// The on-disk graph document: optional schema plus node and edge lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<GraphSchema>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl GraphDocument {
    pub fn parse(source: &str) -> Result<Self, GraphError> {
        serde_json::from_str(source).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: alloc::format!("{e}"),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph documents always serialize")
    }
}

/// Derive a schema from an instance: every observed node type with the union
/// of its attribute keys, and every observed (edge type, source type, target
/// type) triple, walkable in both directions.
pub fn infer_schema(nodes: &[Node], edges: &[Edge]) -> Result<GraphSchema, GraphError> {
    let mut types: BTreeMap<&str, &str> = BTreeMap::new();
    let mut node_types: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for node in nodes {
        types.insert(node.id.as_str(), node.node_type.as_str());
        node_types
            .entry(node.node_type.clone())
            .or_default()
            .extend(node.attributes.keys().cloned());
    }
    let mut triples = BTreeSet::new();
    for edge in edges {
        let source_type = endpoint_type(&types, edge, &edge.source)?;
        let target_type = endpoint_type(&types, edge, &edge.target)?;
        triples.insert((edge.edge_type.as_str(), source_type, target_type));
    }
    Ok(GraphSchema {
        node_types: node_types
            .into_iter()
            .map(|(t, keys)| (t, keys.into_iter().collect()))
            .collect(),
        edge_types: triples
            .into_iter()
            .map(|(name, s, t)| EdgeTypeRecord::new(name, s, t, true))
            .collect(),
    })
}

fn endpoint_type<'a>(
    types: &BTreeMap<&str, &'a str>,
    edge: &Edge,
    endpoint: &NodeId,
) -> Result<&'a str, GraphError> {
    types
        .get(endpoint.as_str())
        .copied()
        .ok_or_else(|| GraphError::DanglingEdge {
            from: edge.source.clone(),
            to: edge.target.clone(),
            edge_type: edge.edge_type.clone(),
            missing: endpoint.clone(),
        })
}

/// Per node, per edge type: the nodes reachable in one hop. Reverse entries
/// exist only for edges whose schema record is bidirectional.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    index: BTreeMap<NodeId, BTreeMap<String, BTreeSet<NodeId>>>,
}

impl Adjacency {
    pub fn build(nodes: &BTreeMap<NodeId, Node>, edges: &[Edge], schema: &GraphSchema) -> Self {
        let mut index: BTreeMap<NodeId, BTreeMap<String, BTreeSet<NodeId>>> = BTreeMap::new();
        for edge in edges {
            index
                .entry(edge.source.clone())
                .or_default()
                .entry(edge.edge_type.clone())
                .or_default()
                .insert(edge.target.clone());
            let reversible = match (nodes.get(&edge.source), nodes.get(&edge.target)) {
                (Some(s), Some(t)) => schema
                    .record(&edge.edge_type, &s.node_type, &t.node_type)
                    .is_some_and(|r| r.bidirectional),
                _ => false,
            };
            if reversible {
                index
                    .entry(edge.target.clone())
                    .or_default()
                    .entry(edge.edge_type.clone())
                    .or_default()
                    .insert(edge.source.clone());
            }
        }
        Self { index }
    }

    pub fn get(&self, node: &str, edge_type: &str) -> Option<&BTreeSet<NodeId>> {
        self.index.get(node).and_then(|m| m.get(edge_type))
    }

    pub fn by_edge_type(&self, node: &str) -> Option<&BTreeMap<String, BTreeSet<NodeId>>> {
        self.index.get(node)
    }
}

static EMPTY: BTreeSet<NodeId> = BTreeSet::new();

/// An immutable, validated knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    schema: GraphSchema,
    adjacency: Adjacency,
    by_type: BTreeMap<String, BTreeSet<NodeId>>,
}

impl KnowledgeGraph {
    /// Validate and index a graph. Without a schema one is inferred from the
    /// instance; with one, every node and edge is checked against it.
    /// Parallel edges of the same type collapse into one.
    pub fn new(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        schema: Option<GraphSchema>,
    ) -> Result<Self, GraphError> {
        let mut by_id = BTreeMap::new();
        for node in nodes {
            if node.id.as_str().is_empty() {
                return Err(GraphError::EmptyNodeId);
            }
            if node.attributes.keys().any(String::is_empty) {
                return Err(GraphError::EmptyAttributeKey { node: node.id });
            }
            if by_id.contains_key(&node.id) {
                return Err(GraphError::DuplicateNode(node.id));
            }
            by_id.insert(node.id.clone(), node);
        }

        let declared = schema.is_some();
        let schema = match schema {
            Some(s) => s,
            None => {
                let all: Vec<Node> = by_id.values().cloned().collect();
                infer_schema(&all, &edges)?
            }
        };
        schema.validate()?;

        for node in by_id.values() {
            let Some(keys) = schema.node_types.get(&node.node_type) else {
                return Err(GraphError::UndeclaredNodeType {
                    node: node.id.clone(),
                    node_type: node.node_type.clone(),
                });
            };
            if declared {
                if let Some(key) = node.attributes.keys().find(|k| !keys.contains(k)) {
                    return Err(GraphError::UndeclaredAttribute {
                        node: node.id.clone(),
                        node_type: node.node_type.clone(),
                        key: key.clone(),
                    });
                }
            }
        }

        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(edges.len());
        for edge in edges {
            let lookup = |id: &NodeId| {
                by_id.get(id).ok_or_else(|| GraphError::DanglingEdge {
                    from: edge.source.clone(),
                    to: edge.target.clone(),
                    edge_type: edge.edge_type.clone(),
                    missing: id.clone(),
                })
            };
            let source = lookup(&edge.source)?;
            let target = lookup(&edge.target)?;
            if schema
                .record(&edge.edge_type, &source.node_type, &target.node_type)
                .is_none()
            {
                return Err(GraphError::EdgeViolatesSchema {
                    from: edge.source.clone(),
                    to: edge.target.clone(),
                    edge_type: edge.edge_type.clone(),
                    source_type: source.node_type.clone(),
                    target_type: target.node_type.clone(),
                });
            }
            if seen.insert(edge.clone()) {
                kept.push(edge);
            }
        }

        let adjacency = Adjacency::build(&by_id, &kept, &schema);
        let mut by_type: BTreeMap<String, BTreeSet<NodeId>> = schema
            .node_types
            .keys()
            .map(|t| (t.clone(), BTreeSet::new()))
            .collect();
        for node in by_id.values() {
            by_type
                .entry(node.node_type.clone())
                .or_default()
                .insert(node.id.clone());
        }

        Ok(Self {
            nodes: by_id,
            edges: kept,
            schema,
            adjacency,
            by_type,
        })
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        Self::new(doc.nodes, doc.edges, doc.schema)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            schema: Some(self.schema.clone()),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `V_t`: the ids of every node of type `node_type`.
    pub fn nodes_of_type(&self, node_type: &str) -> Result<&BTreeSet<NodeId>, GraphError> {
        self.by_type
            .get(node_type)
            .ok_or_else(|| GraphError::UnknownNodeType(node_type.into()))
    }

    /// `N_{e_t}(v)`: one-hop neighbors of `node` over `edge_type`, including
    /// reverse hops for bidirectional edge types.
    pub fn neighbors(&self, node: &str, edge_type: &str) -> Result<&BTreeSet<NodeId>, GraphError> {
        if !self.nodes.contains_key(node) {
            return Err(GraphError::UnknownNode(node.into()));
        }
        if !self.schema.has_edge_type(edge_type) {
            return Err(GraphError::UnknownEdgeType(edge_type.into()));
        }
        Ok(self.adjacency.get(node, edge_type).unwrap_or(&EMPTY))
    }

    /// One-hop neighbors over every edge type.
    pub fn all_neighbors(&self, node: &str) -> impl Iterator<Item = &NodeId> {
        self.adjacency
            .by_edge_type(node)
            .into_iter()
            .flat_map(|m| m.values())
            .flatten()
    }
}

/// Parse a graph file. An explicit `schema` takes precedence over one
/// declared in the file; with neither, the schema is inferred.
pub fn load_graph(source: &str, schema: Option<GraphSchema>) -> Result<KnowledgeGraph, GraphError> {
    let doc = GraphDocument::parse(source)?;
    KnowledgeGraph::new(doc.nodes, doc.edges, schema.or(doc.schema))
}
