//! Run configuration: one TOML file, overridable from the command line.
//!
//! ```toml
//! graph = "../data/academic/graph.json"
//! few_shot = "../data/academic/few_shot.json"
//! questions = "../data/academic/questions.jsonl"
//! results = "../results/academic.jsonl"
//! summary = "../results/academic-summary.json"
//!
//! [planner]
//! kind = "template"          # template | script | external
//! templates = "../data/academic/templates.json"
//! max_retries = 3
//!
//! [answerer]
//! kind = "echo"              # echo | script | external
//!
//! [external]
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! model = "gpt-4"
//! temperature = 0.0
//! api_key_env = "OPENAI_API_KEY"
//!
//! [retrieval]
//! theta = 0.5
//! top_k = 5
//! max_hops = 3
//! step_cap = 200
//!
//! [answer]
//! context_window = 8192
//!
//! [pricing]
//! input_per_million = "30"
//! output_per_million = "60"
//!
//! [eval]
//! parallelism = 4
//! rouge_floor = 0.1
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. Secrets are never stored in the file; `api_key_env` names the
//! environment variable to read them from.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graphrunner_core::eval::{PricingTable, DEFAULT_ROUGE_FLOOR};
use graphrunner_core::executor::{AnswerConfig, ExecutionConfig, DEFAULT_CONTEXT_WINDOW, DEFAULT_STEP_CAP};
use graphrunner_core::pipeline::PipelineConfig;
use graphrunner_core::planner::{PlannerConfig, DEFAULT_MAX_RETRIES};
use graphrunner_core::similarity::{SimilarityConfig, BUILTIN_DIMENSION, DEFAULT_THETA, DEFAULT_TOP_K};
use graphrunner_core::actions::DEFAULT_MAX_HOPS;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Template,
    Script,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnswererKind {
    Echo,
    Script,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hashed,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub kind: PlannerKind,
    pub templates: Option<PathBuf>,
    pub script: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswererSection {
    pub kind: AnswererKind,
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSection {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub theta: f64,
    pub top_k: usize,
    pub max_hops: u32,
    pub step_cap: usize,
    pub embedder: EmbedderKind,
    pub embedding_endpoint: Option<String>,
    pub embedding_api_key_env: Option<String>,
    pub embedding_dimension: usize,
    pub embedding_max_in_flight: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            top_k: DEFAULT_TOP_K,
            max_hops: DEFAULT_MAX_HOPS,
            step_cap: DEFAULT_STEP_CAP,
            embedder: EmbedderKind::Hashed,
            embedding_endpoint: None,
            embedding_api_key_env: None,
            embedding_dimension: BUILTIN_DIMENSION,
            embedding_max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnswerSection {
    pub context_window: u64,
}

impl Default for AnswerSection {
    fn default() -> Self {
        Self {
            context_window: DEFAULT_CONTEXT_WINDOW,
        }
    }
}

/// A rate written either as a TOML number or a decimal string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Text(String),
    Integer(u64),
    Float(f64),
}

impl Rate {
    fn as_decimal(&self) -> String {
        match self {
            Rate::Text(s) => s.clone(),
            Rate::Integer(i) => i.to_string(),
            Rate::Float(f) => format!("{f}"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub input_per_million: Rate,
    pub output_per_million: Rate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub parallelism: usize,
    pub rouge_floor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            parallelism: 1,
            rouge_floor: DEFAULT_ROUGE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub few_shot: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub planner: PlannerSection,
    pub answerer: AnswererSection,
    pub external: Option<ExternalSection>,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub answer: AnswerSection,
    pub pricing: Option<PricingSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

fn default_timeout() -> u64 {
    60
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.to_string().trim_end()))?;
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.graph);
        fix(&mut self.few_shot);
        fix(&mut self.questions);
        fix(&mut self.results);
        fix(&mut self.summary);
        fix(&mut self.planner.templates);
        fix(&mut self.planner.script);
        fix(&mut self.answerer.script);
    }

    pub fn pricing(&self) -> Result<PricingTable> {
        match &self.pricing {
            None => Ok(PricingTable::default()),
            Some(p) => Ok(PricingTable::from_decimal(
                &p.input_per_million.as_decimal(),
                &p.output_per_million.as_decimal(),
            )?),
        }
    }

    /// Range checks and cross-field requirements. Run after flag overrides.
    pub fn validate(&self) -> Result<()> {
        let r = &self.retrieval;
        SimilarityConfig::new(r.theta, r.top_k).context("retrieval")?;
        if r.max_hops == 0 {
            bail!("retrieval.max_hops must be at least 1");
        }
        if r.step_cap == 0 {
            bail!("retrieval.step_cap must be at least 1");
        }
        if self.answer.context_window == 0 {
            bail!("answer.context_window must be at least 1");
        }
        if self.eval.parallelism == 0 {
            bail!("eval.parallelism must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.eval.rouge_floor) {
            bail!("eval.rouge_floor must lie in [0, 1]");
        }
        match self.planner.kind {
            PlannerKind::Template if self.planner.templates.is_none() => {
                bail!("missing field `planner.templates` (required when planner.kind = \"template\")")
            }
            PlannerKind::Script if self.planner.script.is_none() => {
                bail!("missing field `planner.script` (required when planner.kind = \"script\")")
            }
            _ => {}
        }
        if self.answerer.kind == AnswererKind::Script && self.answerer.script.is_none() {
            bail!("missing field `answerer.script` (required when answerer.kind = \"script\")");
        }
        let needs_external =
            self.planner.kind == PlannerKind::External || self.answerer.kind == AnswererKind::External;
        match &self.external {
            None if needs_external => bail!("missing section `[external]` (required by an external provider)"),
            Some(e) if !(0.0..=2.0).contains(&e.temperature) => bail!("external.temperature must lie in [0, 2]"),
            _ => {}
        }
        if r.embedder == EmbedderKind::Http {
            if r.embedding_endpoint.is_none() {
                bail!("missing field `retrieval.embedding_endpoint` (required when retrieval.embedder = \"http\")");
            }
            if r.embedding_dimension == 0 || r.embedding_max_in_flight == 0 {
                bail!("retrieval.embedding_dimension and retrieval.embedding_max_in_flight must be at least 1");
            }
        }
        self.pricing()?;
        for (name, path) in [
            ("graph", &self.graph),
            ("few_shot", &self.few_shot),
            ("planner.templates", &self.planner.templates),
            ("planner.script", &self.planner.script),
            ("answerer.script", &self.answerer.script),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{name}: {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let r = &self.retrieval;
        PipelineConfig {
            planner: PlannerConfig {
                max_retries: self.planner.max_retries,
                ..PlannerConfig::default()
            },
            execution: ExecutionConfig {
                similarity: SimilarityConfig {
                    theta: r.theta,
                    top_k: r.top_k,
                },
                default_max_hops: r.max_hops,
                step_cap: r.step_cap,
            },
            answer: AnswerConfig {
                context_window_tokens: self.answer.context_window,
            },
        }
        .with_max_hops(r.max_hops)
    }
}
