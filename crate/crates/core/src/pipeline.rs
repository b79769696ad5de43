//! End-to-end query runs: plan with verification, execute, answer.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::executor::{
    execute_plan, generate_answer, AnswerConfig, AnswerError, ExecutionConfig, ExecutionStatus, ExecutionTrace,
};
use crate::graph::KnowledgeGraph;
use crate::model::{Clock, LanguageModel, TokenUsage};
use crate::plan::TraversalPlan;
use crate::planner::{
    plan_with_verification, AttemptRecord, FewShotExample, PlannerConfig, PlannerOutcome, PlanningError,
    PlanningFailure,
};
use crate::similarity::Embedder;
use crate::verifier::VerificationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    None,
    PlanningExhausted,
    ExecutionBreak,
    ContextWindowExceeded,
    ProviderFailure,
}

impl ErrorClass {
    pub const FAILURES: [ErrorClass; 4] = [
        ErrorClass::PlanningExhausted,
        ErrorClass::ExecutionBreak,
        ErrorClass::ContextWindowExceeded,
        ErrorClass::ProviderFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::None => "none",
            ErrorClass::PlanningExhausted => "planning-exhausted",
            ErrorClass::ExecutionBreak => "execution-break",
            ErrorClass::ContextWindowExceeded => "context-window-exceeded",
            ErrorClass::ProviderFailure => "provider-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub planning_micros: u64,
    pub execution_micros: u64,
    pub answer_micros: u64,
    /// Sum of the three phases.
    pub total_micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query: String,
    pub error_class: ErrorClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    pub plan_attempts: u32,
    /// Attempts whose plan the verifier rejected before execution.
    pub hallucinations_blocked: u32,
    pub attempt_log: Vec<AttemptRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<TraversalPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<ExecutionTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Context blocks dropped to fit the answer prompt into the window.
    pub dropped_context_blocks: usize,
    pub planning_usage: TokenUsage,
    pub answer_usage: TokenUsage,
    pub token_usage: TokenUsage,
    pub provider_calls: u32,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub planner: PlannerConfig,
    pub execution: ExecutionConfig,
    pub answer: AnswerConfig,
}

impl PipelineConfig {
    /// Use one hop bound for both verification and execution.
    pub fn with_max_hops(mut self, hops: u32) -> Self {
        self.planner.default_max_hops = hops;
        self.execution.default_max_hops = hops;
        self
    }
}

/// Everything a query run needs. The graph and providers are shared; runs
/// are independent of each other.
pub struct Pipeline<'a> {
    pub graph: &'a KnowledgeGraph,
    pub planner: &'a dyn LanguageModel,
    pub answerer: &'a dyn LanguageModel,
    pub embedder: &'a dyn Embedder,
    pub few_shot: &'a [FewShotExample],
    pub config: PipelineConfig,
    pub clock: &'a dyn Clock,
}

impl Pipeline<'_> {
    /// Planning only, for dry runs.
    #[allow(clippy::result_large_err)]
    pub fn plan_only(&self, query: &str) -> Result<PlannerOutcome, PlanningError> {
        plan_with_verification(self.planner, query, self.graph.schema(), self.few_shot, &self.config.planner)
    }

    pub fn run(&self, query: &str) -> RunRecord {
        let mut record = RunRecord {
            query: query.into(),
            error_class: ErrorClass::None,
            error_detail: None,
            plan_attempts: 0,
            hallucinations_blocked: 0,
            attempt_log: Vec::new(),
            plan: None,
            verification: None,
            trace: None,
            answer: None,
            dropped_context_blocks: 0,
            planning_usage: TokenUsage::default(),
            answer_usage: TokenUsage::default(),
            token_usage: TokenUsage::default(),
            provider_calls: 0,
            timing: Timing::default(),
        };

        let t0 = self.clock.now_micros();
        let planned = self.plan_only(query);
        let t1 = self.clock.now_micros();
        record.timing.planning_micros = t1.saturating_sub(t0);

        let outcome = match planned {
            Ok(o) => o,
            Err(e) => {
                record.error_class = match e.failure {
                    PlanningFailure::Exhausted(_) => ErrorClass::PlanningExhausted,
                    PlanningFailure::Provider(_) => ErrorClass::ProviderFailure,
                };
                record.error_detail = Some(e.to_string());
                record.plan_attempts = e.attempts;
                record.provider_calls = e.attempts;
                record.hallucinations_blocked = e.hallucinations_blocked();
                record.planning_usage = e.token_usage;
                record.token_usage = e.token_usage;
                record.attempt_log = e.attempt_log;
                record.plan = e.last_plan;
                record.verification = e.last_report;
                record.timing.total_micros = record.timing.planning_micros;
                return record;
            }
        };
        record.plan_attempts = outcome.attempts;
        record.provider_calls = outcome.attempts;
        record.hallucinations_blocked = outcome.hallucinations_blocked();
        record.planning_usage = outcome.token_usage;
        record.token_usage = outcome.token_usage;
        record.attempt_log = outcome.attempt_log;
        record.verification = Some(outcome.report);

        let mut trace = execute_plan(self.graph, &outcome.plan, self.embedder, &self.config.execution, self.clock);
        record.plan = Some(outcome.plan);
        let t2 = self.clock.now_micros();
        record.timing.execution_micros = t2.saturating_sub(t1);

        if trace.status == ExecutionStatus::Complete {
            let answered = generate_answer(self.answerer, query, &trace, &self.config.answer);
            let t3 = self.clock.now_micros();
            record.timing.answer_micros = t3.saturating_sub(t2);
            match answered {
                Ok(a) => {
                    record.provider_calls += 1;
                    record.answer_usage = a.token_usage;
                    record.token_usage += a.token_usage;
                    record.dropped_context_blocks = a.dropped_blocks;
                    record.answer = Some(a.answer);
                }
                Err(e) => {
                    record.error_class = match e {
                        AnswerError::ContextWindowExceeded { .. } => {
                            trace.status = ExecutionStatus::ContextWindowExceeded;
                            trace.final_context = None;
                            ErrorClass::ContextWindowExceeded
                        }
                        AnswerError::Provider(_) | AnswerError::EmptyAnswer => {
                            record.provider_calls += 1;
                            ErrorClass::ProviderFailure
                        }
                        AnswerError::NotComplete => ErrorClass::ExecutionBreak,
                    };
                    record.error_detail = Some(e.to_string());
                }
            }
        } else {
            record.error_class = ErrorClass::ExecutionBreak;
            record.error_detail = trace
                .execution_break
                .as_ref()
                .map(|b| alloc::format!("step {}: {}", b.step_id, b.reason));
        }
        record.trace = Some(trace);
        let t = &mut record.timing;
        t.total_micros = t.planning_micros + t.execution_micros + t.answer_micros;
        record
    }
}
