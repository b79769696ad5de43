//! Random schemas, graphs and plans, plus brute-force oracles for the
//! traversal actions. The oracles read only the raw node and edge lists and
//! share no code with the library beyond the data types.
#![allow(dead_code)]

pub mod criteria;

use std::collections::{BTreeMap, BTreeSet};

use graphrunner_core::graph::{Edge, EdgeTypeRecord, GraphSchema, KnowledgeGraph, Node};
use graphrunner_core::plan::{PlanStep, TraversalPlan};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub const VOCAB: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "graph", "river", "stone", "maple", "quartz", "ember", "lotus", "nova",
];
const NODE_TYPES: [&str; 4] = ["paper", "author", "venue", "topic"];
const EDGE_TYPES: [&str; 6] = ["cites", "writes", "hosts", "covers", "mentors", "links"];

/// Thresholds p/100 with p prime and larger than any reachable dot product,
/// so no cosine score can equal one exactly.
pub const THETAS: [f64; 6] = [0.0, 0.29, 0.47, 0.53, 0.61, 0.83];

#[derive(Debug, Clone)]
pub struct RawGraph {
    pub schema: GraphSchema,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl RawGraph {
    pub fn build(&self) -> KnowledgeGraph {
        KnowledgeGraph::new(self.nodes.clone(), self.edges.clone(), Some(self.schema.clone()))
            .expect("generated graphs conform to their schema")
    }

    fn type_of(&self, id: &str) -> &str {
        &self.nodes.iter().find(|n| n.id.as_str() == id).unwrap().node_type
    }

    fn reversible(&self, e: &Edge) -> bool {
        let (s, t) = (self.type_of(e.source.as_str()), self.type_of(e.target.as_str()));
        self.schema
            .edge_types
            .iter()
            .any(|r| r.name == e.edge_type && r.source == s && r.target == t && r.bidirectional)
    }

    /// Every (from, to, edge type) step a walk may take.
    fn arcs(&self) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for e in &self.edges {
            out.push((e.source.to_string(), e.target.to_string(), e.edge_type.clone()));
            if self.reversible(e) {
                out.push((e.target.to_string(), e.source.to_string(), e.edge_type.clone()));
            }
        }
        out
    }
}

pub fn random_words(rng: &mut StdRng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_schema(rng: &mut StdRng) -> GraphSchema {
    let n_types = rng.gen_range(1..=4);
    let types = &NODE_TYPES[..n_types];
    let mut node_types = BTreeMap::new();
    for t in types {
        node_types.insert(t.to_string(), vec!["name".to_string(), "label".to_string()]);
    }
    let n_edges = rng.gen_range(1..=6);
    let mut seen = BTreeSet::new();
    let mut edge_types = Vec::new();
    for name in &EDGE_TYPES[..n_edges] {
        // one to three records per name
        for _ in 0..rng.gen_range(1..=3) {
            let s = types.choose(rng).unwrap().to_string();
            let t = types.choose(rng).unwrap().to_string();
            if seen.insert((name.to_string(), s.clone(), t.clone())) {
                edge_types.push(EdgeTypeRecord::new(*name, s, t, rng.gen_bool(0.7)));
            }
        }
    }
    GraphSchema { node_types, edge_types }
}

/// An instance of `schema` with at most `max_nodes` nodes. Some node types
/// may end up with no nodes.
pub fn random_instance(rng: &mut StdRng, schema: &GraphSchema, max_nodes: usize) -> RawGraph {
    let types: Vec<&String> = schema.node_types.keys().collect();
    let n = rng.gen_range(1..=max_nodes);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let t = types.choose(rng).unwrap();
        let mut node = Node::new(format!("n{i:02}"), t.as_str());
        node.attributes.insert("name".into(), random_words(rng, 1, 3));
        if rng.gen_bool(0.4) {
            node.attributes.insert("label".into(), random_words(rng, 1, 2));
        }
        nodes.push(node);
    }
    let mut edges = Vec::new();
    let target_edges = rng.gen_range(0..=n * 2);
    for _ in 0..target_edges {
        let r = schema.edge_types.choose(rng).unwrap();
        let sources: Vec<&Node> = nodes.iter().filter(|x| x.node_type == r.source).collect();
        let targets: Vec<&Node> = nodes.iter().filter(|x| x.node_type == r.target).collect();
        if let (Some(s), Some(t)) = (sources.choose(rng), targets.choose(rng)) {
            edges.push(Edge::new(s.id.as_str(), t.id.as_str(), r.name.as_str()));
        }
    }
    RawGraph {
        schema: schema.clone(),
        nodes,
        edges,
    }
}

pub fn random_graph(rng: &mut StdRng, max_nodes: usize) -> RawGraph {
    let schema = random_schema(rng);
    random_instance(rng, &schema, max_nodes)
}

// ---- find_node oracle ----

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x100000001b3))
}

/// Sparse bucket counts of the lowercased alphanumeric tokens of `text`.
pub fn bucket_counts(text: &str, dimension: usize) -> BTreeMap<usize, i64> {
    let mut counts = BTreeMap::new();
    let mut token = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_alphanumeric() {
            token.extend(c.to_lowercase());
        } else if !token.is_empty() {
            *counts.entry((fnv(token.as_bytes()) % dimension as u64) as usize).or_insert(0) += 1;
            token.clear();
        }
    }
    counts
}

fn node_text(node: &Node) -> String {
    node.attributes.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n")
}

/// Cosine as the exact triple (dot, |a|^2, |b|^2).
fn cosine_parts(a: &BTreeMap<usize, i64>, b: &BTreeMap<usize, i64>) -> (i64, i64, i64) {
    let dot = a.iter().map(|(k, v)| v * b.get(k).copied().unwrap_or(0)).sum();
    let na = a.values().map(|v| v * v).sum();
    let nb = b.values().map(|v| v * v).sum();
    (dot, na, nb)
}

/// score >= p/100, decided in integers. Scores are never negative.
fn at_least(parts: (i64, i64, i64), theta: f64) -> bool {
    let (dot, na, nb) = parts;
    let p = (theta * 100.0).round() as i128;
    if na == 0 || nb == 0 {
        return p <= 0;
    }
    (dot as i128).pow(2) * 10_000 >= p * p * na as i128 * nb as i128
}

/// Full scan: all nodes of `node_type` scoring at least theta, or the best
/// one (lowest id among equals) flagged below-threshold.
pub fn oracle_find_node(g: &RawGraph, hint: &str, node_type: &str, theta: f64, dimension: usize) -> (BTreeSet<String>, bool) {
    let h = bucket_counts(hint, dimension);
    let mut cands: Vec<(&Node, (i64, i64, i64))> = g
        .nodes
        .iter()
        .filter(|n| n.node_type == node_type)
        .map(|n| (n, cosine_parts(&bucket_counts(&node_text(n), dimension), &h)))
        .collect();
    if cands.is_empty() {
        return (BTreeSet::new(), false);
    }
    let hits: BTreeSet<String> = cands
        .iter()
        .filter(|(_, p)| at_least(*p, theta))
        .map(|(n, _)| n.id.to_string())
        .collect();
    if !hits.is_empty() {
        return (hits, false);
    }
    // compare dot/sqrt(na) across candidates (nb is shared): d1^2 * n2 vs d2^2 * n1
    cands.sort_by(|(a, pa), (b, pb)| {
        let (da, na, _) = *pa;
        let (db, nb, _) = *pb;
        let lhs = if na == 0 { 0 } else { (da as i128).pow(2) * nb.max(1) as i128 };
        let rhs = if nb == 0 { 0 } else { (db as i128).pow(2) * na.max(1) as i128 };
        rhs.cmp(&lhs).then_with(|| a.id.cmp(&b.id))
    });
    (BTreeSet::from([cands[0].0.id.to_string()]), true)
}

// ---- fetch_neighbors oracles ----

/// One hop along `edge_type` from any source, scanning the edge list.
pub fn oracle_edge_neighbors(g: &RawGraph, sources: &BTreeSet<String>, edge_type: &str) -> BTreeSet<String> {
    g.arcs()
        .into_iter()
        .filter(|(from, _, t)| t == edge_type && sources.contains(from))
        .map(|(_, to, _)| to)
        .collect()
}

/// Enumerate every simple path of length 1..=max_hops from each source whose
/// interior avoids `target_type`; endpoints of that type other than the
/// path's own source form the result.
pub fn oracle_type_reach(g: &RawGraph, sources: &BTreeSet<String>, target_type: &str, max_hops: u32) -> BTreeSet<String> {
    let arcs = g.arcs();
    let types: BTreeMap<String, String> = g.nodes.iter().map(|n| (n.id.to_string(), n.node_type.clone())).collect();
    let mut out = BTreeSet::new();
    fn walk(
        path: &mut Vec<String>,
        arcs: &[(String, String, String)],
        types: &BTreeMap<String, String>,
        target: &str,
        left: u32,
        out: &mut BTreeSet<String>,
    ) {
        if left == 0 {
            return;
        }
        let here = path.last().unwrap().clone();
        for (from, to, _) in arcs {
            if *from != here || path.contains(to) {
                continue;
            }
            if types[to] == target {
                out.insert(to.clone());
            } else {
                path.push(to.clone());
                walk(path, arcs, types, target, left - 1, out);
                path.pop();
            }
        }
    }
    for s in sources {
        walk(&mut vec![s.clone()], &arcs, &types, target_type, max_hops, &mut out);
    }
    out
}

/// Nodes adjacent, along each input's edge type, to some member of every
/// input: a scan over all nodes, testing each input pairwise.
pub fn oracle_common(g: &RawGraph, inputs: &[(BTreeSet<String>, &str)]) -> BTreeSet<String> {
    let arcs = g.arcs();
    g.nodes
        .iter()
        .map(|n| n.id.to_string())
        .filter(|u| {
            inputs.iter().all(|(set, edge)| {
                arcs.iter().any(|(from, to, t)| t == edge && to == u && set.contains(from))
            })
        })
        .collect()
}

// ---- plans ----

/// Node types a walk may reach from `from` within `hops`, stopping at
/// `target` (type level, breadth first).
fn type_reachable(schema: &GraphSchema, from: &BTreeSet<String>, target: &str, hops: u32) -> bool {
    let mut frontier = from.clone();
    let mut seen = from.clone();
    for _ in 0..hops {
        let mut next = BTreeSet::new();
        for t in &frontier {
            for (_, succ) in schema.traversable_from(t) {
                if succ == target {
                    return true;
                }
                if seen.insert(succ.to_string()) {
                    next.insert(succ.to_string());
                }
            }
        }
        frontier = next;
    }
    false
}

/// A random plan built to follow the schema. Most pass verification; callers
/// filter on the verdict.
pub fn random_plan(rng: &mut StdRng, schema: &GraphSchema, hops: u32) -> TraversalPlan {
    let types: Vec<&String> = schema.node_types.keys().collect();
    let mut steps: Vec<PlanStep> = Vec::new();
    let mut out_types: Vec<BTreeSet<String>> = Vec::new();
    let first = types.choose(rng).unwrap().to_string();
    steps.push(PlanStep::find_node("s1", &random_words(rng, 1, 3), &first));
    out_types.push(BTreeSet::from([first]));
    let extra = rng.gen_range(0..=3);
    for k in 0..extra {
        let id = format!("s{}", k + 2);
        match rng.gen_range(0..4) {
            0 => {
                let t = types.choose(rng).unwrap().to_string();
                steps.push(PlanStep::find_node(&id, &random_words(rng, 1, 2), &t));
                out_types.push(BTreeSet::from([t]));
            }
            1 => {
                let j = rng.gen_range(0..steps.len());
                let leaving: Vec<(String, String)> = out_types[j]
                    .iter()
                    .flat_map(|t| schema.traversable_from(t))
                    .map(|(e, t)| (e.to_string(), t.to_string()))
                    .collect();
                let Some((edge, _)) = leaving.choose(rng).cloned() else { continue };
                let targets = leaving.iter().filter(|(e, _)| *e == edge).map(|(_, t)| t.clone()).collect();
                steps.push(PlanStep::fetch_edge(&id, &steps[j].id.clone(), &edge));
                out_types.push(targets);
            }
            2 => {
                let j = rng.gen_range(0..steps.len());
                let t = types.choose(rng).unwrap().to_string();
                let h = if rng.gen_bool(0.5) { Some(rng.gen_range(1..=hops)) } else { None };
                if !type_reachable(schema, &out_types[j], &t, h.unwrap_or(hops)) {
                    continue;
                }
                steps.push(PlanStep::fetch_type(&id, &steps[j].id.clone(), &t, h));
                out_types.push(BTreeSet::from([t]));
            }
            _ => {
                if steps.len() < 2 {
                    continue;
                }
                let picks: Vec<usize> = (0..steps.len()).collect::<Vec<_>>().choose_multiple(rng, 2).copied().collect();
                let mut inputs = Vec::new();
                let mut common: Option<BTreeSet<String>> = None;
                for j in picks {
                    let leaving: Vec<(String, String)> = out_types[j]
                        .iter()
                        .flat_map(|t| schema.traversable_from(t))
                        .map(|(e, t)| (e.to_string(), t.to_string()))
                        .collect();
                    let Some((edge, _)) = leaving.choose(rng).cloned() else { break };
                    let targets: BTreeSet<String> =
                        leaving.iter().filter(|(e, _)| *e == edge).map(|(_, t)| t.clone()).collect();
                    common = Some(match common {
                        None => targets,
                        Some(c) => c.intersection(&targets).cloned().collect(),
                    });
                    inputs.push((steps[j].id.clone(), edge));
                }
                if inputs.len() < 2 {
                    continue;
                }
                let refs: Vec<(&str, &str)> = inputs.iter().map(|(s, e)| (s.as_str(), e.as_str())).collect();
                steps.push(PlanStep::common(&id, &refs));
                out_types.push(common.unwrap_or_default());
            }
        }
    }
    TraversalPlan::new("generated", None, steps).expect("steps only read earlier steps")
}
