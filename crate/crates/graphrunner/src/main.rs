use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use graphrunner::app::{self, EvalPaths, Session};
use graphrunner::config::{AnswererKind, PlannerKind, RunConfig};
use graphrunner::core::executor::ExecutionConfig;
use graphrunner::core::similarity::SimilarityConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "graphrunner", version, about = "Plan, verify and execute knowledge-graph retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a graph file, optionally converting it.
    Ingest {
        input: PathBuf,
        /// Input uses the GRBENCH layout.
        #[arg(long)]
        grbench: bool,
        /// Write the graph in native form.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a plan file against a graph. Exits 1 when the plan fails.
    Verify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Also execute the plan, whatever the verdict.
        #[arg(long)]
        execute: bool,
        #[arg(long, default_value_t = graphrunner::core::actions::DEFAULT_MAX_HOPS)]
        max_hops: u32,
        #[arg(long, default_value_t = graphrunner::core::similarity::DEFAULT_THETA)]
        theta: f64,
        #[arg(long, default_value_t = graphrunner::core::similarity::DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long)]
        frozen_clock: bool,
    },
    /// Answer one question.
    Run {
        #[command(flatten)]
        common: Common,
        question: String,
        /// Plan and verify only. Exits 1 when no plan verifies.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run a question file and write results and a summary.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Zero all timing fields in the written files.
        #[arg(long)]
        normalize_timings: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Timings read zero.
    #[arg(long)]
    frozen_clock: bool,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum)]
    planner: Option<PlannerKind>,
    #[arg(long, value_enum)]
    answerer: Option<AnswererKind>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    max_hops: Option<u32>,
    #[arg(long)]
    step_cap: Option<usize>,
    #[arg(long)]
    context_window: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(g) = &self.graph {
            c.graph = Some(g.clone());
        }
        if let Some(k) = self.planner {
            c.planner.kind = k;
        }
        if let Some(k) = self.answerer {
            c.answerer.kind = k;
        }
        if let Some(v) = self.max_retries {
            c.planner.max_retries = v;
        }
        let r = &mut c.retrieval;
        r.theta = self.theta.unwrap_or(r.theta);
        r.top_k = self.top_k.unwrap_or(r.top_k);
        r.max_hops = self.max_hops.unwrap_or(r.max_hops);
        r.step_cap = self.step_cap.unwrap_or(r.step_cap);
        if let Some(w) = self.context_window {
            c.answer.context_window = w;
        }
        Ok(c)
    }

    fn session(&self) -> Result<Session> {
        Session::new(self.load()?, self.frozen_clock)
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { input, grbench, out } => {
            print_json(&app::ingest(&input, grbench, out.as_deref())?)?;
        }
        Command::Verify {
            graph,
            plan,
            execute,
            max_hops,
            theta,
            top_k,
            frozen_clock,
        } => {
            let config = ExecutionConfig {
                similarity: SimilarityConfig::new(theta, top_k)?,
                default_max_hops: max_hops,
                ..ExecutionConfig::default()
            };
            if max_hops == 0 {
                anyhow::bail!("--max-hops must be at least 1");
            }
            let out = app::verify(&graph, &plan, max_hops, execute.then_some(&config), frozen_clock)?;
            print_json(&out)?;
            if !out.report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Run {
            common,
            question,
            dry_run,
        } => {
            let session = common.session()?;
            let out = app::run_query(&session, &question, dry_run)?;
            print_json(&out)?;
            if dry_run && out["verified"] == false {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Eval {
            common,
            questions,
            results,
            summary,
            parallelism,
            normalize_timings,
        } => {
            let mut config = common.load()?;
            if let Some(p) = parallelism {
                config.eval.parallelism = p;
            }
            let paths = EvalPaths {
                questions: match questions.or(config.questions.clone()) {
                    Some(q) => q,
                    None => anyhow::bail!("missing field `questions` (set it in the config or pass --questions)"),
                },
                results: results.or(config.results.clone()),
                summary: summary.or(config.summary.clone()),
            };
            let session = Session::new(config, common.frozen_clock)?;
            let out = app::eval(&session, &paths, normalize_timings)?;
            print_json(&out.aggregates)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
