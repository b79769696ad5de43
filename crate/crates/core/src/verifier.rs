//! Static plan verification against the action catalog and the graph schema.
//!
//! Each step's possible output node types are propagated through the plan.
//! A step fails when its action is not in the catalog, its params do not fit
//! the action, or the schema cannot connect its inputs to its outputs. No
//! instance data is read, so a passing plan may still return empty sets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ParamKind;
use crate::graph::GraphSchema;
use crate::plan::{StepKind, StepRef, TraversalPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Fatal,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    UnknownAction,
    BadParams,
    UnknownNodeType,
    UnknownEdgeType,
    EdgeNotConnectedToSourceType,
    TargetTypeUnreachable,
    CommonNodesTypeMismatch,
    /// Non-fatal: the target type is only reachable at exactly the hop bound.
    TargetAtHopLimit,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::UnknownAction => "unknown-action",
            Rule::BadParams => "bad-params",
            Rule::UnknownNodeType => "unknown-node-type",
            Rule::UnknownEdgeType => "unknown-edge-type",
            Rule::EdgeNotConnectedToSourceType => "edge-not-connected-to-source-type",
            Rule::TargetTypeUnreachable => "target-type-unreachable",
            Rule::CommonNodesTypeMismatch => "common-nodes-type-mismatch",
            Rule::TargetAtHopLimit => "target-at-hop-limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationFinding {
    pub step_id: String,
    pub severity: Severity,
    pub rule: Rule,
    /// The offending identifier (action, type name, or step id).
    pub subject: String,
    pub message: String,
    /// Valid replacements for `subject` according to the schema or catalog.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Step id to the node types that step's output may contain.
pub type TypeState = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub findings: Vec<VerificationFinding>,
    pub type_state: TypeState,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn fatal(&self) -> impl Iterator<Item = &VerificationFinding> {
        self.findings.iter().filter(|f| f.severity == Severity::Fatal)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

struct Checker<'a> {
    schema: &'a GraphSchema,
    findings: Vec<VerificationFinding>,
    state: TypeState,
}

impl Checker<'_> {
    fn fatal(&mut self, step: &str, rule: Rule, subject: &str, message: String, alternatives: Vec<String>) {
        self.findings.push(VerificationFinding {
            step_id: step.into(),
            severity: Severity::Fatal,
            rule,
            subject: subject.into(),
            message,
            alternatives,
        });
    }

    /// Output types of a referenced step; `None` when that step failed.
    fn source_types(&mut self, step: &str, source: &StepRef, earlier: &BTreeSet<&str>) -> Option<BTreeSet<String>> {
        if let Some(types) = self.state.get(source.as_str()) {
            return Some(types.clone());
        }
        if !earlier.contains(source.as_str()) {
            self.fatal(
                step,
                Rule::BadParams,
                source.as_str(),
                format!("step `{step}` reads from `{source}`, which is not an earlier step"),
                earlier.iter().map(|s| s.to_string()).collect(),
            );
        }
        None
    }

    /// Target types of `edge` from any of `sources`, or a finding.
    fn edge_targets(&mut self, step: &str, sources: &BTreeSet<String>, edge: &str) -> Option<BTreeSet<String>> {
        let leaving: BTreeSet<(&str, &str)> = sources
            .iter()
            .flat_map(|t| self.schema.traversable_from(t))
            .collect();
        if !self.schema.has_edge_type(edge) {
            let alternatives = leaving.iter().map(|(e, _)| e.to_string()).collect::<BTreeSet<_>>();
            self.fatal(
                step,
                Rule::UnknownEdgeType,
                edge,
                format!("step `{step}` uses edge type `{edge}`, which the graph does not have"),
                alternatives.into_iter().collect(),
            );
            return None;
        }
        let targets: BTreeSet<String> = leaving
            .iter()
            .filter(|(e, _)| *e == edge)
            .map(|(_, t)| t.to_string())
            .collect();
        if targets.is_empty() {
            let alternatives = leaving.iter().map(|(e, t)| format!("{e} (to {t})")).collect();
            self.fatal(
                step,
                Rule::EdgeNotConnectedToSourceType,
                edge,
                format!(
                    "step `{step}`: edge type `{edge}` does not leave {}",
                    join_types(sources)
                ),
                alternatives,
            );
            return None;
        }
        Some(targets)
    }
}

fn join_types(types: &BTreeSet<String>) -> String {
    let names: Vec<String> = types.iter().map(|t| format!("`{t}`")).collect();
    names.join(" or ")
}

/// Fewest type-level hops (1..=max_hops) from any of `sources` to `target`.
pub fn type_reach_depth(schema: &GraphSchema, sources: &BTreeSet<String>, target: &str, max_hops: u32) -> Option<u32> {
    let mut frontier: BTreeSet<String> = sources.clone();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for depth in 1..=max_hops {
        let next: BTreeSet<String> = frontier
            .iter()
            .flat_map(|t| schema.type_successors(t))
            .map(String::from)
            .collect();
        if next.contains(target) {
            return Some(depth);
        }
        frontier = next.difference(&seen).cloned().collect();
        seen.extend(next);
        if frontier.is_empty() {
            break;
        }
    }
    None
}

/// Check every step of `plan`; see the module docs for the rules.
///
/// `default_max_hops` bounds node-type traversal for steps that give no
/// `max_hops` of their own.
pub fn verify_plan(
    plan: &TraversalPlan,
    schema: &GraphSchema,
    action_catalog: &[&str],
    default_max_hops: u32,
) -> VerificationReport {
    let mut c = Checker {
        schema,
        findings: Vec::new(),
        state: TypeState::new(),
    };
    let mut earlier: BTreeSet<&str> = BTreeSet::new();

    for step in &plan.steps {
        let id = step.id.as_str();
        let action = step.action();
        if !action_catalog.contains(&action) {
            c.fatal(
                id,
                Rule::UnknownAction,
                action,
                format!("step `{id}` uses action `{action}`, which is not a supported traversal action"),
                action_catalog.iter().map(|a| a.to_string()).collect(),
            );
            earlier.insert(id);
            continue;
        }
        let output = match &step.kind {
            StepKind::Unchecked { problem, .. } => {
                c.fatal(id, Rule::BadParams, action, format!("step `{id}` ({action}): {problem}"), Vec::new());
                None
            }
            StepKind::FindNode { hint, node_type } => {
                if hint.trim().is_empty() {
                    c.fatal(id, Rule::BadParams, action, format!("step `{id}` has an empty hint"), Vec::new());
                    None
                } else if !schema.has_node_type(node_type) {
                    c.fatal(
                        id,
                        Rule::UnknownNodeType,
                        node_type,
                        format!("step `{id}` looks for node type `{node_type}`, which the graph does not have"),
                        schema.node_type_names().map(String::from).collect(),
                    );
                    None
                } else {
                    Some(BTreeSet::from([node_type.clone()]))
                }
            }
            StepKind::FetchNeighbors { source, param, max_hops } => {
                match c.source_types(id, source, &earlier) {
                    None => None,
                    Some(sources) => match param.kind {
                        ParamKind::EdgeType => c.edge_targets(id, &sources, &param.name),
                        ParamKind::NodeType => {
                            let hops = max_hops.unwrap_or(default_max_hops);
                            let target = param.name.as_str();
                            if hops == 0 {
                                c.fatal(id, Rule::BadParams, "max_hops", format!("step `{id}` allows 0 hops"), Vec::new());
                                None
                            } else if !schema.has_node_type(target) {
                                c.fatal(
                                    id,
                                    Rule::UnknownNodeType,
                                    target,
                                    format!("step `{id}` walks towards node type `{target}`, which the graph does not have"),
                                    schema.node_type_names().map(String::from).collect(),
                                );
                                None
                            } else {
                                match type_reach_depth(schema, &sources, target, hops) {
                                    None => {
                                        c.fatal(
                                            id,
                                            Rule::TargetTypeUnreachable,
                                            target,
                                            format!(
                                                "step `{id}`: node type `{target}` cannot be reached from {} within {hops} hops",
                                                join_types(&sources)
                                            ),
                                            Vec::new(),
                                        );
                                        None
                                    }
                                    Some(depth) => {
                                        if depth == hops {
                                            c.findings.push(VerificationFinding {
                                                step_id: id.into(),
                                                severity: Severity::Warning,
                                                rule: Rule::TargetAtHopLimit,
                                                subject: target.into(),
                                                message: format!(
                                                    "step `{id}`: node type `{target}` is only reachable at the hop limit ({hops})"
                                                ),
                                                alternatives: Vec::new(),
                                            });
                                        }
                                        Some(BTreeSet::from([target.to_string()]))
                                    }
                                }
                            }
                        }
                    },
                }
            }
            StepKind::FindCommonNodes { inputs } => {
                if inputs.len() < 2 {
                    c.fatal(
                        id,
                        Rule::BadParams,
                        action,
                        format!("step `{id}` needs at least 2 inputs, got {}", inputs.len()),
                        Vec::new(),
                    );
                    None
                } else {
                    let before = c.findings.len();
                    let mut per_input = Vec::new();
                    let mut complete = true;
                    for input in inputs {
                        match c.source_types(id, &input.source, &earlier) {
                            Some(sources) => match c.edge_targets(id, &sources, &input.edge_type) {
                                Some(t) => per_input.push(t),
                                None => complete = false,
                            },
                            None => complete = false,
                        }
                    }
                    if !complete || c.findings.len() > before {
                        None
                    } else {
                        let mut common = per_input[0].clone();
                        for t in &per_input[1..] {
                            common = common.intersection(t).cloned().collect();
                        }
                        if common.is_empty() {
                            let sets: Vec<String> = per_input.iter().map(join_types).collect();
                            c.fatal(
                                id,
                                Rule::CommonNodesTypeMismatch,
                                action,
                                format!("step `{id}`: the inputs lead to disjoint node types ({})", sets.join("; ")),
                                Vec::new(),
                            );
                            None
                        } else {
                            Some(common)
                        }
                    }
                }
            }
        };
        if let Some(types) = output {
            c.state.insert(id.into(), types);
        }
        earlier.insert(id);
    }

    let verdict = if c.findings.iter().any(|f| f.severity == Severity::Fatal) {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    VerificationReport {
        verdict,
        findings: c.findings,
        type_state: c.state,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("retry feedback requested for a report without fatal findings")]
pub struct PassingReport;

/// One line per fatal finding, in plan order, naming the step, the rule, the
/// offending identifier and the valid alternatives.
pub fn feedback_for_retry(report: &VerificationReport) -> Result<String, PassingReport> {
    if report.verdict == Verdict::Pass {
        return Err(PassingReport);
    }
    let lines: Vec<String> = report
        .fatal()
        .map(|f| {
            let mut line = format!("step {}: {}: {}", f.step_id, f.rule.as_str(), f.message);
            if !f.alternatives.is_empty() {
                line.push_str(". Valid choices: ");
                line.push_str(&f.alternatives.join(", "));
            }
            line
        })
        .collect();
    Ok(lines.join("\n"))
}
