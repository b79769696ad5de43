//! Step-by-step plan execution and the final answer call.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::actions::{self, check_param, NodeFindingHint, NodeSet, ParamKind, DEFAULT_MAX_HOPS};
use crate::graph::{KnowledgeGraph, Node, NodeId};
use crate::model::{
    token_count, Clock, CompletionRequest, LanguageModel, ProviderError, Purpose, TokenUsage, CONTEXT_HEADER,
    QUESTION_HEADER,
};
use crate::plan::{StepKind, TraversalPlan};
use crate::similarity::{Embedder, SimilarityConfig};

pub const DEFAULT_STEP_CAP: usize = 200;
pub const DEFAULT_CONTEXT_WINDOW: u64 = 8192;

/// Context text used when the last step retrieved nothing.
pub const EMPTY_CONTEXT: &str = "(no nodes were retrieved)";

pub const ANSWER_HEADER: &str = "## Answer";

const ANSWER_PREAMBLE: &str = "Answer the question using only the retrieved knowledge-graph context. \
If the context does not contain the answer, say so.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionConfig {
    pub similarity: SimilarityConfig,
    /// Hop bound for node-type traversal when a step gives none.
    pub default_max_hops: u32,
    /// Largest node set a step may hand on; extra members are dropped by
    /// ascending id.
    pub step_cap: usize,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::default(),
            default_max_hops: DEFAULT_MAX_HOPS,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_id: String,
    pub action: String,
    pub params: Value,
    pub result_size: usize,
    pub truncated: bool,
    #[serde(default)]
    pub below_threshold: bool,
    #[serde(default)]
    pub no_candidates: bool,
    pub duration_micros: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionStatus {
    Complete,
    ExecutionBreak,
    ContextWindowExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionBreak {
    pub step_id: String,
    pub reason: String,
}

/// The last step's nodes, one rendered block per node in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenderedContext {
    pub blocks: Vec<String>,
    /// The producing step hit the result cap.
    pub truncated: bool,
}

impl RenderedContext {
    /// The first `keep` blocks as prompt text, or [`EMPTY_CONTEXT`].
    pub fn text(&self, keep: usize) -> String {
        if keep == 0 || self.blocks.is_empty() {
            return EMPTY_CONTEXT.into();
        }
        self.blocks[..keep.min(self.blocks.len())].join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub steps: Vec<StepRecord>,
    pub status: ExecutionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution_break: Option<ExecutionBreak>,
    /// Present iff `status` is complete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_context: Option<RenderedContext>,
}

/// `[(type) id]` followed by one `key: value` line per attribute.
pub fn render_node(node: &Node) -> String {
    let mut out = format!("[({}) {}]", node.node_type, node.id);
    for (k, v) in &node.attributes {
        out.push('\n');
        out.push_str(k);
        out.push_str(": ");
        out.push_str(v);
    }
    out
}

pub fn render_context(graph: &KnowledgeGraph, nodes: &NodeSet) -> RenderedContext {
    RenderedContext {
        blocks: nodes
            .members
            .iter()
            .filter_map(|id| graph.node(id.as_str()))
            .map(render_node)
            .collect(),
        truncated: nodes.truncated,
    }
}

fn run_step(
    graph: &KnowledgeGraph,
    kind: &StepKind,
    outputs: &BTreeMap<String, NodeSet>,
    embedder: &dyn Embedder,
    config: &ExecutionConfig,
) -> Result<NodeSet, String> {
    let input = |step: &str| outputs.get(step).ok_or_else(|| format!("step `{step}` has no output"));
    match kind {
        StepKind::FindNode { hint, node_type } => {
            let hint = NodeFindingHint::new(hint.as_str()).map_err(|e| e.to_string())?;
            actions::find_node(graph, &hint, node_type, embedder, &config.similarity).map_err(|e| e.to_string())
        }
        StepKind::FetchNeighbors { source, param, max_hops } => {
            check_param(graph, param).map_err(|e| e.to_string())?;
            let hops = max_hops.unwrap_or(config.default_max_hops);
            if param.kind == ParamKind::NodeType && hops == 0 {
                return Err(actions::ActionError::ZeroHops.to_string());
            }
            let sources = input(source.as_str())?;
            if sources.is_empty() {
                return Ok(NodeSet::default());
            }
            actions::fetch_neighbors(graph, &sources.members, param, hops).map_err(|e| e.to_string())
        }
        StepKind::FindCommonNodes { inputs } => {
            let mut resolved = Vec::with_capacity(inputs.len());
            for i in inputs {
                resolved.push((&input(i.source.as_str())?.members, i.edge_type.as_str()));
            }
            actions::find_common_nodes(graph, &resolved).map_err(|e| e.to_string())
        }
        StepKind::Unchecked { action, problem, .. } => {
            if crate::ACTION_CATALOG.contains(&action.as_str()) {
                Err(problem.clone())
            } else {
                Err(format!("unknown action `{action}`"))
            }
        }
    }
}

/// Run the steps in order, feeding each step the sets of the steps it names.
///
/// Empty sets flow on to later steps. A step that cannot run at all (an
/// unknown action or type, which verification rules out) stops execution
/// with an execution break.
pub fn execute_plan(
    graph: &KnowledgeGraph,
    plan: &TraversalPlan,
    embedder: &dyn Embedder,
    config: &ExecutionConfig,
    clock: &dyn Clock,
) -> ExecutionTrace {
    let mut outputs: BTreeMap<String, NodeSet> = BTreeMap::new();
    let mut records = Vec::with_capacity(plan.steps.len());
    let wire = serde_json::to_value(plan).unwrap_or(Value::Null);

    for (i, step) in plan.steps.iter().enumerate() {
        let started = clock.now_micros();
        let result = run_step(graph, &step.kind, &outputs, embedder, config);
        let duration_micros = clock.now_micros().saturating_sub(started);
        let mut set = match result {
            Ok(set) => set,
            Err(reason) => {
                return ExecutionTrace {
                    steps: records,
                    status: ExecutionStatus::ExecutionBreak,
                    execution_break: Some(ExecutionBreak {
                        step_id: step.id.clone(),
                        reason,
                    }),
                    final_context: None,
                };
            }
        };
        set.truncate(config.step_cap);
        records.push(StepRecord {
            step_id: step.id.clone(),
            action: step.action().into(),
            params: wire["steps"][i]["params"].clone(),
            result_size: set.len(),
            truncated: set.truncated,
            below_threshold: set.below_threshold,
            no_candidates: set.no_candidates,
            duration_micros,
        });
        outputs.insert(step.id.clone(), set.with_provenance(step.id.as_str()));
    }

    let last = plan.steps.last().map(|s| s.id.as_str()).unwrap_or_default();
    let final_context = outputs.get(last).map(|set| render_context(graph, set));
    ExecutionTrace {
        steps: records,
        status: ExecutionStatus::Complete,
        execution_break: None,
        final_context: Some(final_context.unwrap_or_default()),
    }
}

/// Ids of the nodes in a rendered block list, read back from the headers.
pub fn context_node_ids(context: &RenderedContext) -> Vec<NodeId> {
    context
        .blocks
        .iter()
        .filter_map(|b| {
            let header = b.lines().next()?;
            let inner = header.strip_prefix("[(")?.strip_suffix(']')?;
            let (_, id) = inner.split_once(") ")?;
            Some(NodeId::new(id))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerConfig {
    pub context_window_tokens: u64,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self {
            context_window_tokens: DEFAULT_CONTEXT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub answer: String,
    pub token_usage: TokenUsage,
    /// Context blocks sent to the model.
    pub context_blocks: usize,
    /// Blocks dropped from the end to fit the context window.
    pub dropped_blocks: usize,
    pub prompt_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("execution did not complete")]
    NotComplete,
    #[error("the answer prompt needs {needed} tokens even without context, but the window is {window}")]
    ContextWindowExceeded { needed: u64, window: u64 },
    #[error("answer provider failed: {0}")]
    Provider(ProviderError),
    #[error("the answer provider returned an empty answer")]
    EmptyAnswer,
}

pub fn answer_prompt(query: &str, context: &str) -> String {
    format!("{ANSWER_PREAMBLE}\n\n{QUESTION_HEADER}\n{query}\n\n{CONTEXT_HEADER}\n{context}\n\n{ANSWER_HEADER}\n")
}

/// One answer call with the query and the final context. Whole blocks are
/// dropped from the end until the prompt fits the window.
pub fn generate_answer(
    model: &dyn LanguageModel,
    query: &str,
    trace: &ExecutionTrace,
    config: &AnswerConfig,
) -> Result<AnswerRecord, AnswerError> {
    let context = match (&trace.status, &trace.final_context) {
        (ExecutionStatus::Complete, Some(c)) => c,
        _ => return Err(AnswerError::NotComplete),
    };
    let window = config.context_window_tokens;
    let fits = |keep: usize| {
        let prompt = answer_prompt(query, &context.text(keep));
        let tokens = token_count(model, &prompt);
        (tokens <= window, prompt, tokens)
    };
    // prompt length grows with the number of kept blocks
    let (mut lo, mut hi) = (0usize, context.blocks.len());
    let (ok, _, needed) = fits(0);
    if !ok {
        return Err(AnswerError::ContextWindowExceeded { needed, window });
    }
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid).0 {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let (_, prompt, prompt_tokens) = fits(lo);
    let completion = model
        .complete(&CompletionRequest::single(Purpose::Answer, prompt))
        .map_err(AnswerError::Provider)?;
    if completion.text.trim().is_empty() {
        return Err(AnswerError::EmptyAnswer);
    }
    Ok(AnswerRecord {
        answer: completion.text,
        token_usage: completion.usage,
        context_blocks: lo,
        dropped_blocks: context.blocks.len() - lo,
        prompt_tokens,
    })
}
