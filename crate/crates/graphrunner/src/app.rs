//! Command implementations behind the `graphrunner` binary.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use graphrunner_core::eval::{EvalSummary, PricingTable};
use graphrunner_core::executor::{execute_plan, ExecutionConfig, ExecutionTrace};
use graphrunner_core::graph::KnowledgeGraph;
use graphrunner_core::model::{Clock, EchoAnswerer, FrozenClock, LanguageModel, ScriptedModel, ScriptedResponse};
use graphrunner_core::pipeline::Pipeline;
use graphrunner_core::planner::{FewShotExample, PlannerOutcome, PlanningError, TemplatePlanner};
use graphrunner_core::similarity::{Embedder, HashedTokenEmbedder, BUILTIN_DIMENSION};
use graphrunner_core::verifier::{verify_plan, VerificationReport};
use graphrunner_core::ACTION_CATALOG;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::batch::{normalize_timings, run_batch, summary_of, ResultLine};
use crate::clients::{ChatClient, HttpEmbedder, RetryingModel};
use crate::clock::MonotonicClock;
use crate::config::{AnswererKind, EmbedderKind, ExternalSection, PlannerKind, RunConfig};
use crate::io;

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub nodes: usize,
    pub edges: usize,
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
    /// GRBENCH neighbor references to missing nodes, skipped on conversion.
    pub dropped_references: usize,
}

/// Load and validate a graph, optionally writing it back in native form.
pub fn ingest(input: &Path, grbench: bool, out: Option<&Path>) -> Result<IngestSummary> {
    let (doc, dropped) = io::read_graph_document(input, grbench)?;
    let graph = KnowledgeGraph::from_document(doc).with_context(|| format!("invalid graph {}", input.display()))?;
    if let Some(out) = out {
        io::ensure_parent(out)?;
        fs::write(out, graph.to_document().to_json()).with_context(|| format!("cannot write {}", out.display()))?;
    }
    let schema = graph.schema();
    Ok(IngestSummary {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        node_types: schema.node_type_names().map(String::from).collect(),
        edge_types: schema.edge_type_names().into_iter().map(String::from).collect(),
        dropped_references: dropped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutput {
    pub report: VerificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<ExecutionTrace>,
}

/// Verify a plan file against a graph's schema. With `execute`, the plan is
/// run regardless of the verdict.
pub fn verify(
    graph: &Path,
    plan: &Path,
    max_hops: u32,
    execute: Option<&ExecutionConfig>,
    frozen_clock: bool,
) -> Result<VerifyOutput> {
    let graph = io::read_graph(graph)?;
    let plan = io::read_plan(plan)?;
    let report = verify_plan(&plan, graph.schema(), &ACTION_CATALOG, max_hops);
    let trace = execute.map(|config| {
        let clock = make_clock(frozen_clock);
        let embedder = HashedTokenEmbedder::new(BUILTIN_DIMENSION);
        execute_plan(&graph, &plan, &embedder, config, clock.as_ref())
    });
    Ok(VerifyOutput { report, trace })
}

fn make_clock(frozen: bool) -> Box<dyn Clock> {
    if frozen {
        Box::new(FrozenClock)
    } else {
        Box::new(MonotonicClock::new())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Text(String),
    Full(ScriptedResponse),
}

/// A JSON array of responses, each a string or `{"text", "usage"}`.
fn read_script(path: &Path) -> Result<ScriptedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let entries: Vec<ScriptEntry> =
        serde_json::from_str(&text).with_context(|| format!("invalid script file {}", path.display()))?;
    Ok(ScriptedModel::new(entries.into_iter().map(|e| match e {
        ScriptEntry::Text(text) => ScriptedResponse { text, usage: None },
        ScriptEntry::Full(r) => r,
    })))
}

fn api_key(var: Option<&str>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(name) => env::var(name)
            .map(Some)
            .with_context(|| format!("environment variable {name} is not set")),
    }
}

fn chat_model(external: Option<&ExternalSection>) -> Result<Box<dyn LanguageModel>> {
    let Some(e) = external else {
        bail!("missing section `[external]` (required by an external provider)");
    };
    let client = ChatClient::new(
        &e.endpoint,
        &e.model,
        e.temperature,
        api_key(e.api_key_env.as_deref())?,
        Duration::from_secs(e.timeout_secs),
    );
    Ok(Box::new(RetryingModel::new(client)))
}

/// Graph, providers and settings for pipeline runs, built from a config.
pub struct Session {
    pub config: RunConfig,
    pub graph: KnowledgeGraph,
    pub few_shot: Vec<FewShotExample>,
    pub pricing: PricingTable,
    planner: Box<dyn LanguageModel>,
    answerer: Box<dyn LanguageModel>,
    embedder: Box<dyn Embedder>,
    clock: Box<dyn Clock>,
}

impl Session {
    pub fn new(config: RunConfig, frozen_clock: bool) -> Result<Self> {
        config.validate()?;
        let graph_path = config.graph.as_deref().context("missing field `graph`")?;
        let graph = io::read_graph(graph_path)?;
        let few_shot = match &config.few_shot {
            Some(p) => io::read_few_shot(p)?,
            None => Vec::new(),
        };
        let planner: Box<dyn LanguageModel> = match config.planner.kind {
            PlannerKind::Template => {
                let path = config.planner.templates.as_deref().context("missing field `planner.templates`")?;
                Box::new(TemplatePlanner::new(io::read_templates(path)?).with_context(|| format!("in {}", path.display()))?)
            }
            PlannerKind::Script => Box::new(read_script(config.planner.script.as_deref().context("missing field `planner.script`")?)?),
            PlannerKind::External => chat_model(config.external.as_ref())?,
        };
        let answerer: Box<dyn LanguageModel> = match config.answerer.kind {
            AnswererKind::Echo => Box::new(EchoAnswerer::new()),
            AnswererKind::Script => Box::new(read_script(config.answerer.script.as_deref().context("missing field `answerer.script`")?)?),
            AnswererKind::External => chat_model(config.external.as_ref())?,
        };
        let r = &config.retrieval;
        let embedder: Box<dyn Embedder> = match r.embedder {
            EmbedderKind::Hashed => Box::new(HashedTokenEmbedder::new(BUILTIN_DIMENSION)),
            EmbedderKind::Http => Box::new(HttpEmbedder::new(
                r.embedding_endpoint.as_deref().context("missing field `retrieval.embedding_endpoint`")?,
                api_key(r.embedding_api_key_env.as_deref())?,
                r.embedding_dimension,
                r.embedding_max_in_flight,
                Duration::from_secs(config.external.as_ref().map_or(60, |e| e.timeout_secs)),
            )),
        };
        Ok(Self {
            pricing: config.pricing()?,
            config,
            graph,
            few_shot,
            planner,
            answerer,
            embedder,
            clock: make_clock(frozen_clock),
        })
    }

    pub fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            graph: &self.graph,
            planner: self.planner.as_ref(),
            answerer: self.answerer.as_ref(),
            embedder: self.embedder.as_ref(),
            few_shot: &self.few_shot,
            config: self.config.pipeline_config(),
            clock: self.clock.as_ref(),
        }
    }

    /// Scripted providers replay responses in call order, so they force a
    /// sequential batch.
    fn parallelism(&self) -> usize {
        if self.config.planner.kind == PlannerKind::Script || self.config.answerer.kind == AnswererKind::Script {
            1
        } else {
            self.config.eval.parallelism
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DryRun {
    pub query: String,
    pub verified: bool,
    pub plan_attempts: u32,
    pub hallucinations_blocked: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<graphrunner_core::TraversalPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DryRun {
    fn from_planning(query: &str, planned: Result<PlannerOutcome, PlanningError>) -> Self {
        match planned {
            Ok(o) => Self {
                query: query.into(),
                verified: true,
                plan_attempts: o.attempts,
                hallucinations_blocked: o.hallucinations_blocked(),
                plan: Some(o.plan),
                verification: Some(o.report),
                error: None,
            },
            Err(e) => Self {
                query: query.into(),
                verified: false,
                plan_attempts: e.attempts,
                hallucinations_blocked: e.hallucinations_blocked(),
                error: Some(e.to_string()),
                plan: e.last_plan,
                verification: e.last_report,
            },
        }
    }
}

/// One query through the pipeline, as JSON. A dry run stops after planning.
pub fn run_query(session: &Session, query: &str, dry_run: bool) -> Result<Value> {
    let pipeline = session.pipeline();
    let value = if dry_run {
        serde_json::to_value(DryRun::from_planning(query, pipeline.plan_only(query)))?
    } else {
        serde_json::to_value(pipeline.run(query))?
    };
    Ok(value)
}

pub struct EvalPaths {
    pub questions: PathBuf,
    pub results: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl EvalPaths {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            questions: config.questions.clone().context("missing field `questions`")?,
            results: config.results.clone(),
            summary: config.summary.clone(),
        })
    }
}

/// Run the question file and write per-question lines and the summary.
/// With `normalize`, timing fields are zeroed in both outputs.
pub fn eval(session: &Session, paths: &EvalPaths, normalize: bool) -> Result<EvalSummary> {
    let questions = io::read_questions(&paths.questions)?;
    let lines = run_batch(&session.pipeline(), &questions, &session.pricing, session.parallelism());
    let summary = summary_of(&lines, session.config.eval.rouge_floor);
    if let Some(path) = &paths.results {
        let mut values = lines.iter().map(serde_json::to_value).collect::<Result<Vec<Value>, _>>()?;
        if normalize {
            values.iter_mut().for_each(normalize_timings);
        }
        io::ensure_parent(path)?;
        let file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        io::write_jsonl(std::io::BufWriter::new(file), &values)?;
    }
    if let Some(path) = &paths.summary {
        let mut value = serde_json::to_value(&summary.aggregates)?;
        if normalize {
            normalize_timings(&mut value);
        }
        io::ensure_parent(path)?;
        fs::write(path, serde_json::to_string_pretty(&value)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(summary)
}

/// Read back a results file written by [`eval`].
pub fn read_results(path: &Path) -> Result<Vec<ResultLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}
