//! Planning prompt assembly and the generate-verify-regenerate loop.

mod template;

pub use template::{PlanTemplate, TemplateError, TemplatePlanner, NO_MATCH_REPLY};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{DEFAULT_MAX_HOPS, FETCH_NEIGHBORS, FIND_COMMON_NODES, FIND_NODE};
use crate::graph::GraphSchema;
use crate::model::{CompletionRequest, LanguageModel, ProviderError, Purpose, TokenUsage, QUESTION_HEADER};
use crate::plan::{parse_plan, serialize_plan, PlanFormatError, TraversalPlan};
use crate::verifier::{feedback_for_retry, verify_plan, VerificationFinding, VerificationReport};
use crate::ACTION_CATALOG;

pub const DEFAULT_MAX_RETRIES: u32 = 3;

pub const ACTIONS_HEADER: &str = "## Traversal actions";
pub const GRAPH_HEADER: &str = "## Graph structure";
pub const EXAMPLES_HEADER: &str = "## Examples";
pub const FEEDBACK_HEADER: &str = "## Feedback from the previous attempt";
pub const FORMAT_HEADER: &str = "## Output format";

const PREAMBLE: &str = "You plan retrieval over a knowledge graph. Write the complete traversal plan \
that answers the question, using only the actions and graph elements listed below. \
Do not answer the question yourself.";

const OUTPUT_FORMAT: &str = r#"Reply with a single JSON object and nothing else:
{"query": "<the question>", "rationale": "<optional, one sentence>", "steps": [{"id": "s1", "action": "find_node", "params": {...}}, ...]}
The first step must be find_node. Step ids must be unique, and a step may only read from earlier steps."#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub plan: TraversalPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub query: String,
    pub graph_description: String,
    pub action_docs: String,
    pub few_shot_examples: Vec<FewShotExample>,
    pub retry_feedback: Option<String>,
}

impl PromptBundle {
    pub fn new(query: &str, schema: &GraphSchema, catalog: &[&str], few_shot: &[FewShotExample]) -> Self {
        Self {
            query: query.into(),
            graph_description: describe_schema(schema),
            action_docs: describe_actions(catalog),
            few_shot_examples: few_shot.to_vec(),
            retry_feedback: None,
        }
    }
}

/// Every node type with its attribute keys, then every edge-type record.
pub fn describe_schema(schema: &GraphSchema) -> String {
    let mut out = String::from("Node types:\n");
    for (name, keys) in &schema.node_types {
        if keys.is_empty() {
            out.push_str(&format!("- {name}\n"));
        } else {
            out.push_str(&format!("- {name} (attributes: {})\n", keys.join(", ")));
        }
    }
    out.push_str("Edge types:\n");
    for r in &schema.edge_types {
        let dir = if r.bidirectional {
            "traversable both ways"
        } else {
            "one way only"
        };
        out.push_str(&format!("- {}: {} -> {} ({dir})\n", r.name, r.source, r.target));
    }
    out.pop();
    out
}

fn action_doc(action: &str) -> Option<&'static str> {
    Some(match action {
        FIND_NODE => {
            "- find_node: locate nodes of one type by semantic similarity to a hint, such as a name or title.\n  \
             params: {\"hint\": str, \"node_type\": str}"
        }
        FETCH_NEIGHBORS => {
            "- fetch_neighbors: from the nodes of an earlier step, either follow one edge type for a single hop, \
             or walk any edges until nodes of a target type are reached (at most max_hops hops).\n  \
             params: {\"source\": step id, \"edge_type\": str} or {\"source\": step id, \"node_type\": str, \"max_hops\": int (optional)}"
        }
        FIND_COMMON_NODES => {
            "- find_common_nodes: nodes that are neighbors of every input, each input being an earlier step \
             and the edge type to follow from it.\n  \
             params: {\"inputs\": [{\"source\": step id, \"edge_type\": str}, ...]} (two or more inputs)"
        }
        _ => return None,
    })
}

/// Documentation of the actions in `catalog`, in catalog order.
pub fn describe_actions(catalog: &[&str]) -> String {
    let docs: Vec<String> = catalog
        .iter()
        .map(|a| action_doc(a).map(String::from).unwrap_or_else(|| format!("- {a}")))
        .collect();
    docs.join("\n")
}

/// Render the planning prompt. Sections always appear in the same order and
/// the feedback section only when there is feedback.
pub fn build_prompt(bundle: &PromptBundle) -> String {
    let mut sections: Vec<String> = Vec::new();
    sections.push(PREAMBLE.into());
    sections.push(format!("{ACTIONS_HEADER}\n{}", bundle.action_docs));
    sections.push(format!("{GRAPH_HEADER}\n{}", bundle.graph_description));
    let examples = if bundle.few_shot_examples.is_empty() {
        String::from("(none)")
    } else {
        let rendered: Vec<String> = bundle
            .few_shot_examples
            .iter()
            .map(|e| format!("Question: {}\nPlan:\n{}", e.query, serialize_plan(&e.plan)))
            .collect();
        rendered.join("\n\n")
    };
    sections.push(format!("{EXAMPLES_HEADER}\n{examples}"));
    if let Some(fb) = &bundle.retry_feedback {
        sections.push(format!("{FEEDBACK_HEADER}\n{fb}"));
    }
    sections.push(format!("{QUESTION_HEADER}\n{}", bundle.query));
    sections.push(format!("{FORMAT_HEADER}\n{OUTPUT_FORMAT}"));
    sections.join("\n\n")
}

/// Raw planner output and its parse.
#[derive(Debug, Clone)]
pub struct GeneratedPlan {
    pub text: String,
    pub plan: Result<TraversalPlan, PlanFormatError>,
    pub usage: TokenUsage,
}

/// One provider call with the rendered prompt, parsed with [`parse_plan`].
pub fn generate_plan(model: &dyn LanguageModel, bundle: &PromptBundle) -> Result<GeneratedPlan, ProviderError> {
    let request = CompletionRequest::single(Purpose::Plan, build_prompt(bundle));
    let completion = model.complete(&request)?;
    Ok(GeneratedPlan {
        plan: parse_plan(&completion.text),
        text: completion.text,
        usage: completion.usage,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerConfig {
    pub max_retries: u32,
    pub default_max_hops: u32,
    pub action_catalog: Vec<String>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            default_max_hops: DEFAULT_MAX_HOPS,
            action_catalog: ACTION_CATALOG.iter().map(|a| a.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttemptOutcome {
    Verified,
    ParseError,
    VerificationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub outcome: AttemptOutcome,
    /// Feedback that was included in this attempt's prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<VerificationFinding>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOutcome {
    pub plan: TraversalPlan,
    pub report: VerificationReport,
    pub attempts: u32,
    pub token_usage: TokenUsage,
    pub attempt_log: Vec<AttemptRecord>,
}

impl PlannerOutcome {
    /// Attempts whose plan the verifier rejected.
    pub fn hallucinations_blocked(&self) -> u32 {
        count_rejected(&self.attempt_log)
    }
}

fn count_rejected(log: &[AttemptRecord]) -> u32 {
    log.iter()
        .filter(|a| a.outcome == AttemptOutcome::VerificationFailed)
        .count() as u32
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanningFailure {
    #[error("no verified plan after {0} attempts")]
    Exhausted(u32),
    #[error("planner provider failed: {0}")]
    Provider(ProviderError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{failure}")]
pub struct PlanningError {
    pub failure: PlanningFailure,
    pub attempts: u32,
    pub token_usage: TokenUsage,
    pub attempt_log: Vec<AttemptRecord>,
    /// Report of the last attempt that parsed.
    pub last_report: Option<VerificationReport>,
    pub last_plan: Option<TraversalPlan>,
    pub last_parse_error: Option<PlanFormatError>,
}

impl PlanningError {
    pub fn hallucinations_blocked(&self) -> u32 {
        count_rejected(&self.attempt_log)
    }
}

/// Generate, parse and verify until a plan passes or `max_retries + 1`
/// attempts have been made. Every retry prompt carries only the previous
/// attempt's failures.
#[allow(clippy::result_large_err)] // one error per query, off the hot path
pub fn plan_with_verification(
    model: &dyn LanguageModel,
    query: &str,
    schema: &GraphSchema,
    few_shot: &[FewShotExample],
    config: &PlannerConfig,
) -> Result<PlannerOutcome, PlanningError> {
    let catalog: Vec<&str> = config.action_catalog.iter().map(String::as_str).collect();
    let mut bundle = PromptBundle::new(query, schema, &catalog, few_shot);
    let mut usage = TokenUsage::default();
    let mut log: Vec<AttemptRecord> = Vec::new();
    let mut last_report = None;
    let mut last_plan = None;
    let mut last_parse_error = None;

    for attempt in 1..=config.max_retries + 1 {
        let generated = match generate_plan(model, &bundle) {
            Ok(g) => g,
            Err(e) => {
                return Err(PlanningError {
                    failure: PlanningFailure::Provider(e),
                    attempts: attempt,
                    token_usage: usage,
                    attempt_log: log,
                    last_report,
                    last_plan,
                    last_parse_error,
                });
            }
        };
        usage += generated.usage;
        let mut record = AttemptRecord {
            attempt,
            outcome: AttemptOutcome::ParseError,
            feedback: bundle.retry_feedback.take(),
            parse_error: None,
            findings: Vec::new(),
            usage: generated.usage,
        };
        match generated.plan {
            Err(e) => {
                record.parse_error = Some(e.to_string());
                bundle.retry_feedback = Some(e.feedback());
                last_parse_error = Some(e);
            }
            Ok(mut plan) => {
                if plan.query.trim().is_empty() {
                    plan.query = query.into();
                }
                let report = verify_plan(&plan, schema, &catalog, config.default_max_hops);
                record.findings = report.findings.clone();
                if report.passed() {
                    record.outcome = AttemptOutcome::Verified;
                    log.push(record);
                    return Ok(PlannerOutcome {
                        plan,
                        report,
                        attempts: attempt,
                        token_usage: usage,
                        attempt_log: log,
                    });
                }
                record.outcome = AttemptOutcome::VerificationFailed;
                bundle.retry_feedback = Some(feedback_for_retry(&report).expect("failing report"));
                last_parse_error = None;
                last_report = Some(report);
                last_plan = Some(plan);
            }
        }
        log.push(record);
    }
    Err(PlanningError {
        failure: PlanningFailure::Exhausted(config.max_retries + 1),
        attempts: config.max_retries + 1,
        token_usage: usage,
        attempt_log: log,
        last_report,
        last_plan,
        last_parse_error,
    })
}
