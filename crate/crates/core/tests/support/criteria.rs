//! Randomised checks shared by the integration tests (small counts) and the
//! acceptance runner (full counts). Each returns a one-line summary or the
//! first counterexample.

use std::collections::BTreeSet;
use std::str::FromStr;

use graphrunner_core::actions::{fetch_neighbors, find_common_nodes, find_node, NodeFindingHint, TraversalParam};
use graphrunner_core::eval::{inference_cost, rouge_l, PricingTable};
use graphrunner_core::executor::{execute_plan, ExecutionConfig, ExecutionStatus};
use graphrunner_core::graph::{EdgeTypeRecord, GraphSchema, NodeId};
use graphrunner_core::model::{section, FrozenClock, ScriptedModel};
use graphrunner_core::plan::{parse_plan, serialize_plan, PlanStep, TraversalPlan};
use graphrunner_core::planner::{plan_with_verification, PlannerConfig, PlanningFailure, FEEDBACK_HEADER};
use graphrunner_core::similarity::{HashedTokenEmbedder, SimilarityConfig, BUILTIN_DIMENSION};
use graphrunner_core::verifier::{verify_plan, Rule, Severity};
use graphrunner_core::ACTION_CATALOG;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

use super::*;

fn ids(set: &BTreeSet<NodeId>) -> BTreeSet<String> {
    set.iter().map(|n| n.to_string()).collect()
}

fn random_subset(rng: &mut StdRng, g: &RawGraph) -> BTreeSet<String> {
    let k = rng.gen_range(1..=3.min(g.nodes.len()));
    g.nodes.choose_multiple(rng, k).map(|n| n.id.to_string()).collect()
}

fn node_ids(set: &BTreeSet<String>) -> BTreeSet<NodeId> {
    set.iter().map(|s| NodeId::new(s.as_str())).collect()
}

#[derive(Debug, Default)]
pub struct OracleStats {
    pub graphs: usize,
    pub find_node: usize,
    pub edge_fetch: usize,
    pub type_fetch: usize,
    pub common: usize,
    /// Checks where the expected set was non-empty.
    pub nonempty: usize,
    pub below_threshold: usize,
}

/// Every action against its brute-force oracle on `graphs` random graphs of
/// at most 50 nodes.
pub fn action_oracles(rng: &mut StdRng, graphs: usize) -> Result<OracleStats, String> {
    let embedder = HashedTokenEmbedder::new(BUILTIN_DIMENSION);
    let mut st = OracleStats::default();
    for gi in 0..graphs {
        let raw = random_graph(rng, 50);
        let g = raw.build();
        st.graphs += 1;
        let types: Vec<String> = raw.schema.node_types.keys().cloned().collect();
        let edge_names: Vec<String> = raw.schema.edge_type_names().into_iter().map(String::from).collect();

        for t in &types {
            let hint = random_words(rng, 1, 3);
            let theta = *THETAS.choose(rng).unwrap();
            let got = find_node(
                &g,
                &NodeFindingHint::new(hint.as_str()).unwrap(),
                t,
                &embedder,
                &SimilarityConfig::unlimited(theta).unwrap(),
            )
            .map_err(|e| format!("graph {gi}: find_node failed: {e}"))?;
            let (want, below) = oracle_find_node(&raw, &hint, t, theta, BUILTIN_DIMENSION);
            if ids(&got.members) != want || got.below_threshold != below || got.no_candidates != want.is_empty() {
                return Err(format!(
                    "graph {gi}: find_node({hint:?}, {t}, theta {theta}) gave {:?} (below {}), oracle {want:?} (below {below})",
                    got.members, got.below_threshold
                ));
            }
            st.find_node += 1;
            st.nonempty += usize::from(!want.is_empty());
            st.below_threshold += usize::from(below);
        }

        for _ in 0..3 {
            let sources = random_subset(rng, &raw);
            for e in &edge_names {
                let got = fetch_neighbors(&g, &node_ids(&sources), &TraversalParam::edge_type(e.as_str()), 1)
                    .map_err(|err| format!("graph {gi}: fetch_neighbors failed: {err}"))?;
                let want = oracle_edge_neighbors(&raw, &sources, e);
                if ids(&got.members) != want {
                    return Err(format!("graph {gi}: fetch {sources:?} via {e}: got {:?}, oracle {want:?}", got.members));
                }
                st.edge_fetch += 1;
                st.nonempty += usize::from(!want.is_empty());
            }
            for t in &types {
                let hops = rng.gen_range(1..=3);
                let got = fetch_neighbors(&g, &node_ids(&sources), &TraversalParam::node_type(t.as_str()), hops)
                    .map_err(|err| format!("graph {gi}: fetch_neighbors failed: {err}"))?;
                let want = oracle_type_reach(&raw, &sources, t, hops);
                if ids(&got.members) != want {
                    return Err(format!(
                        "graph {gi}: fetch {sources:?} to type {t} within {hops}: got {:?}, oracle {want:?}",
                        got.members
                    ));
                }
                st.type_fetch += 1;
                st.nonempty += usize::from(!want.is_empty());
            }
            let n_inputs = rng.gen_range(2..=3);
            let inputs: Vec<(BTreeSet<String>, &str)> = (0..n_inputs)
                .map(|_| (random_subset(rng, &raw), edge_names.choose(rng).unwrap().as_str()))
                .collect();
            let converted: Vec<(BTreeSet<NodeId>, &str)> = inputs.iter().map(|(s, e)| (node_ids(s), *e)).collect();
            let refs: Vec<(&BTreeSet<NodeId>, &str)> = converted.iter().map(|(s, e)| (s, *e)).collect();
            let got = find_common_nodes(&g, &refs).map_err(|err| format!("graph {gi}: find_common_nodes failed: {err}"))?;
            let want = oracle_common(&raw, &inputs);
            if ids(&got.members) != want {
                return Err(format!("graph {gi}: common {inputs:?}: got {:?}, oracle {want:?}", got.members));
            }
            st.common += 1;
            st.nonempty += usize::from(!want.is_empty());
        }
    }
    Ok(st)
}

#[derive(Debug, Default)]
pub struct VerifierStats {
    pub passing_plans: usize,
    pub drawn: usize,
    pub execution_breaks: usize,
    pub first_break: Option<String>,
    /// (applied, detected) per mutation kind: action, node type, edge type.
    pub mutations: [(usize, usize); 3],
}

const BAD_ACTION: &str = "find_path";
const BAD_TYPE: &str = "undeclared_type";
const BAD_EDGE: &str = "undeclared_edge";

/// Mutate one step of the wire form. Returns the mutated step id, or `None`
/// when the plan has no step the mutation applies to.
fn mutate(rng: &mut StdRng, plan: &TraversalPlan, kind: usize) -> Option<(String, String)> {
    let mut wire: Value = serde_json::from_str(&serialize_plan(plan)).unwrap();
    let steps = wire["steps"].as_array_mut().unwrap();
    let candidates: Vec<usize> = (0..steps.len())
        .filter(|&i| match kind {
            // the first step must stay find_node for the plan to parse at all
            0 => i > 0,
            1 => steps[i]["params"].get("node_type").is_some(),
            _ => steps[i]["params"].get("edge_type").is_some() || steps[i]["params"].get("inputs").is_some(),
        })
        .collect();
    let &i = candidates.choose(rng)?;
    let step = &mut steps[i];
    match kind {
        0 => step["action"] = Value::from(BAD_ACTION),
        1 => step["params"]["node_type"] = Value::from(BAD_TYPE),
        _ => {
            if step["params"].get("edge_type").is_some() {
                step["params"]["edge_type"] = Value::from(BAD_EDGE);
            } else {
                let inputs = step["params"]["inputs"].as_array_mut().unwrap();
                let k = rng.gen_range(0..inputs.len());
                inputs[k]["edge_type"] = Value::from(BAD_EDGE);
            }
        }
    }
    let id = step["id"].as_str().unwrap().to_string();
    Some((id, wire.to_string()))
}

/// Random passing plans execute without a break on conforming instances, and
/// every hallucinated action, node type or edge type is caught.
pub fn verifier_soundness(rng: &mut StdRng, triples: usize) -> Result<VerifierStats, String> {
    let embedder = HashedTokenEmbedder::new(BUILTIN_DIMENSION);
    let mut st = VerifierStats::default();
    while st.passing_plans < triples {
        st.drawn += 1;
        if st.drawn > triples * 20 {
            return Err(format!("only {} passing plans in {} draws", st.passing_plans, st.drawn));
        }
        let schema = random_schema(rng);
        let hops = rng.gen_range(1..=3);
        let plan = random_plan(rng, &schema, hops);
        let report = verify_plan(&plan, &schema, &ACTION_CATALOG, hops);
        if !report.passed() {
            continue;
        }
        st.passing_plans += 1;
        let raw = random_instance(rng, &schema, 30);
        let graph = raw.build();
        let config = ExecutionConfig {
            default_max_hops: hops,
            similarity: SimilarityConfig::new(*THETAS.choose(rng).unwrap(), rng.gen_range(1..=5)).unwrap(),
            ..ExecutionConfig::default()
        };
        let trace = execute_plan(&graph, &plan, &embedder, &config, &FrozenClock);
        if trace.status != ExecutionStatus::Complete {
            st.execution_breaks += 1;
            if st.first_break.is_none() {
                st.first_break = Some(format!("{:?}\n{}", trace.execution_break, serialize_plan(&plan)));
            }
        }

        for (kind, rule) in [Rule::UnknownAction, Rule::UnknownNodeType, Rule::UnknownEdgeType]
            .into_iter()
            .enumerate()
        {
            let Some((step_id, text)) = mutate(rng, &plan, kind) else { continue };
            st.mutations[kind].0 += 1;
            let mutated = parse_plan(&text).map_err(|e| format!("mutated plan does not parse: {e}\n{text}"))?;
            let r = verify_plan(&mutated, &schema, &ACTION_CATALOG, hops);
            let caught = !r.passed()
                && r.findings
                    .iter()
                    .any(|f| f.severity == Severity::Fatal && f.rule == rule && f.step_id == step_id);
            if !caught {
                return Err(format!("mutation {} at step {step_id} not reported: {}\n{text}", rule.as_str(), r.to_json()));
            }
            st.mutations[kind].1 += 1;
        }
    }
    Ok(st)
}

pub fn academic_schema() -> GraphSchema {
    GraphSchema {
        node_types: [
            ("paper".to_string(), vec!["title".to_string(), "year".to_string()]),
            ("author".to_string(), vec!["name".to_string()]),
            ("institution".to_string(), vec!["name".to_string()]),
        ]
        .into_iter()
        .collect(),
        edge_types: vec![
            EdgeTypeRecord::new("written-by", "paper", "author", true),
            EdgeTypeRecord::new("affiliated-with", "author", "institution", true),
            EdgeTypeRecord::new("cites", "paper", "paper", false),
        ],
    }
}

/// A plan that fails verification with a name unique to `attempt`.
fn bad_plan(attempt: usize) -> String {
    let plan = TraversalPlan::new(
        "q",
        Some(format!("rationale of attempt {attempt}")),
        vec![
            PlanStep::find_node("s1", "Chen Wei", "author"),
            PlanStep::fetch_edge("s2", "s1", &format!("hallucinated-edge-{attempt}")),
        ],
    )
    .unwrap();
    serialize_plan(&plan)
}

fn good_plan() -> String {
    let plan = TraversalPlan::new(
        "q",
        None,
        vec![PlanStep::find_node("s1", "Chen Wei", "author"), PlanStep::fetch_edge("s2", "s1", "affiliated-with")],
    )
    .unwrap();
    serialize_plan(&plan)
}

/// Fatal findings of a plan, as (step id, rule name, message) triples.
fn fatal_findings(text: &str, schema: &GraphSchema) -> Vec<(String, &'static str, String)> {
    let plan = parse_plan(text).unwrap();
    verify_plan(&plan, schema, &ACTION_CATALOG, 3)
        .findings
        .into_iter()
        .filter(|f| f.severity == Severity::Fatal)
        .map(|f| (f.step_id, f.rule.as_str(), f.message))
        .collect()
}

/// k failures then success: k+1 attempts, and each retry prompt carries the
/// previous attempt's fatal findings and nothing older.
pub fn retry_success_after(k: usize) -> Result<(), String> {
    let schema = academic_schema();
    let mut script: Vec<String> = (0..k).map(bad_plan).collect();
    script.push(good_plan());
    let model = ScriptedModel::new(script.iter().map(String::as_str));
    let out = plan_with_verification(&model, "Which institution is Chen Wei affiliated with?", &schema, &[], &PlannerConfig::default())
        .map_err(|e| format!("k={k}: planning failed: {e}"))?;
    if out.attempts as usize != k + 1 || model.calls() != k + 1 {
        return Err(format!("k={k}: {} attempts, {} calls", out.attempts, model.calls()));
    }
    let prompts = model.prompts();
    if section(&prompts[0], FEEDBACK_HEADER).is_some() {
        return Err(format!("k={k}: first prompt carries feedback"));
    }
    for i in 1..=k {
        let fb = section(&prompts[i], FEEDBACK_HEADER).ok_or_else(|| format!("k={k}: prompt {i} has no feedback"))?;
        let want = fatal_findings(&script[i - 1], &schema);
        let lines: Vec<&str> = fb.lines().collect();
        if lines.len() != want.len() {
            return Err(format!("k={k}: prompt {i} has {} feedback lines for {} findings", lines.len(), want.len()));
        }
        for (line, (step, rule, message)) in lines.iter().zip(&want) {
            let prefix = format!("step {step}: {rule}: {message}");
            if !line.starts_with(&prefix) {
                return Err(format!("k={k}: prompt {i} line {line:?} does not start with {prefix:?}"));
            }
        }
        for j in 0..i {
            // the failing plan text itself never comes back
            if prompts[i].contains(&format!("rationale of attempt {j}")) {
                return Err(format!("k={k}: prompt {i} repeats the plan of attempt {j}"));
            }
            if j + 1 < i && prompts[i].contains(&format!("hallucinated-edge-{j}")) {
                return Err(format!("k={k}: prompt {i} repeats findings of attempt {j}"));
            }
        }
    }
    Ok(())
}

/// A planner that never verifies exhausts at exactly max_retries + 1.
pub fn retry_exhaustion(max_retries: u32) -> Result<(), String> {
    let model = ScriptedModel::new([bad_plan(0).as_str()]).repeating_last();
    let config = PlannerConfig {
        max_retries,
        ..PlannerConfig::default()
    };
    match plan_with_verification(&model, "q", &academic_schema(), &[], &config) {
        Ok(_) => Err(format!("max_retries={max_retries}: a failing plan was accepted")),
        Err(e) => {
            let n = max_retries + 1;
            if e.failure != PlanningFailure::Exhausted(n) || e.attempts != n || model.calls() != n as usize {
                Err(format!("max_retries={max_retries}: {:?} after {} attempts, {} calls", e.failure, e.attempts, model.calls()))
            } else {
                Ok(())
            }
        }
    }
}

fn decimal_rate(rng: &mut StdRng) -> String {
    let whole = rng.gen_range(0..200u32);
    let digits = rng.gen_range(0..=6usize);
    if digits == 0 {
        return whole.to_string();
    }
    let frac: String = (0..digits).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect();
    format!("{whole}.{frac}")
}

fn rational_of_decimal(text: &str) -> BigRational {
    let (w, f) = text.split_once('.').unwrap_or((text, ""));
    let num = BigInt::from_str(&format!("{w}{f}")).unwrap();
    BigRational::new(num, BigInt::from(10u32).pow(f.len() as u32))
}

/// Exact cost against rational arithmetic on `pairs` random token pairs and
/// rates.
pub fn cost_exactness(rng: &mut StdRng, pairs: usize) -> Result<(), String> {
    let million = BigRational::from_integer(BigInt::from(1_000_000u32));
    for _ in 0..pairs {
        let (ri, ro) = (decimal_rate(rng), decimal_rate(rng));
        let pricing = PricingTable::from_decimal(&ri, &ro).map_err(|e| e.to_string())?;
        let tin: u64 = rng.gen_range(0..10_000_000_000);
        let tout: u64 = rng.gen_range(0..10_000_000_000);
        let want = (rational_of_decimal(&ri) * BigRational::from_integer(tin.into())
            + rational_of_decimal(&ro) * BigRational::from_integer(tout.into()))
            / &million;
        let cost = inference_cost(tin, tout, &pricing);
        let got = BigRational::new(BigInt::from(cost.picodollars()), BigInt::from(10u64.pow(12)));
        let shown = rational_of_decimal(&cost.to_string());
        if got != want || shown != want {
            return Err(format!("cost({tin}, {tout}) at {ri}/{ro}: got {cost}, want {want}"));
        }
    }
    Ok(())
}

/// Full-table LCS.
fn lcs_table(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

/// ROUGE-L against the table oracle on `pairs` random word sequences of at
/// most 30 words.
pub fn rouge_exactness(rng: &mut StdRng, pairs: usize) -> Result<(), String> {
    let words = ["the", "graph", "plan", "node", "edge", "paper", "author", "river", "a", "of"];
    for _ in 0..pairs {
        let seq = |rng: &mut StdRng| -> Vec<&str> {
            let n = rng.gen_range(0..=30);
            (0..n).map(|_| *words.choose(rng).unwrap()).collect()
        };
        let (c, r) = (seq(rng), seq(rng));
        let got = rouge_l(&c.join(" "), &r.join(" "));
        let lcs = lcs_table(&c, &r) as f64;
        let (p, rec, f) = if c.is_empty() || r.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (lcs / c.len() as f64, lcs / r.len() as f64, 2.0 * lcs / (c.len() + r.len()) as f64)
        };
        if (got.precision - p).abs() > 1e-9 || (got.recall - rec).abs() > 1e-9 || (got.f1 - f).abs() > 1e-9 {
            return Err(format!("rouge_l({c:?}, {r:?}) = {got:?}, oracle p={p} r={rec} f={f}"));
        }
    }
    Ok(())
}
