use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphrunner::core::plan::{serialize_plan, PlanStep, TraversalPlan};
use serde_json::{json, Value};
use tempfile::TempDir;

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn graphrunner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphrunner")).args(args).output().unwrap()
}

fn json_out(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn academic_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "graph = {:?}\nquestions = {:?}\n\n[answerer]\nkind = \"echo\"\n\n[planner]\nkind = \"template\"\ntemplates = {:?}\n{extra}",
        s(&data("academic/graph.json")),
        s(&data("academic/questions.jsonl")),
        s(&data("academic/templates.json")),
    );
    fs::write(&path, text).unwrap();
    path
}

fn write_plan(dir: &Path, steps: Vec<PlanStep>) -> PathBuf {
    let path = dir.join("plan.json");
    fs::write(&path, serialize_plan(&TraversalPlan::new("q", None, steps).unwrap())).unwrap();
    path
}

#[test]
fn ingest_native_graph() {
    let dir = TempDir::new().unwrap();
    let copy = dir.path().join("out/graph.json");
    let out = graphrunner(&["ingest", s(&data("academic/graph.json")), "--out", s(&copy)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = json_out(&out);
    assert_eq!(summary["nodes"], 12);
    assert_eq!(summary["node_types"], json!(["author", "institution", "paper"]));
    assert_eq!(summary["dropped_references"], 0);

    // the written copy ingests to the same summary
    let again = graphrunner(&["ingest", s(&copy)]);
    assert_eq!(json_out(&again), summary);
}

#[test]
fn ingest_grbench_drops_dangling_references() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("grbench.json");
    let doc = json!({
        "paper_nodes": {
            "p1": {"features": {"title": "Graph Walks"}, "neighbors": {"author": ["a1", "a9"]}}
        },
        "author_nodes": {
            "a1": {"features": {"name": "Ada"}, "neighbors": {"paper": ["p1"]}}
        }
    });
    fs::write(&input, doc.to_string()).unwrap();
    let out = graphrunner(&["ingest", "--grbench", s(&input)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = json_out(&out);
    assert_eq!(summary["nodes"], 2);
    assert_eq!(summary["dropped_references"], 1);
}

#[test]
fn ingest_reports_bad_input() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("broken.json");
    fs::write(&input, "{\"nodes\": [").unwrap();
    let out = graphrunner(&["ingest", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn verify_passing_plan() {
    let dir = TempDir::new().unwrap();
    let plan = write_plan(
        dir.path(),
        vec![
            PlanStep::find_node("s1", "Chen Wei", "author"),
            PlanStep::fetch_edge("s2", "s1", "affiliated-with"),
        ],
    );
    let out = graphrunner(&["verify", "--graph", s(&data("academic/graph.json")), "--plan", s(&plan)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json_out(&out);
    assert_eq!(v["report"]["verdict"], "pass");
    assert!(v.get("trace").is_none());
}

#[test]
fn verify_rejects_hallucinated_edge() {
    let dir = TempDir::new().unwrap();
    let plan = write_plan(
        dir.path(),
        vec![PlanStep::find_node("s1", "Chen Wei", "author"), PlanStep::fetch_edge("s2", "s1", "employs")],
    );
    let out = graphrunner(&["verify", "--graph", s(&data("academic/graph.json")), "--plan", s(&plan)]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_out(&out);
    assert_eq!(v["report"]["verdict"], "fail");
    let findings = v["report"]["findings"].as_array().unwrap();
    assert!(findings.iter().any(|f| f["step_id"] == "s2" && f["subject"] == "employs"), "{findings:?}");
}

#[test]
fn verify_execute_runs_plan() {
    let dir = TempDir::new().unwrap();
    let plan = write_plan(
        dir.path(),
        vec![
            PlanStep::find_node("s1", "Chen Wei", "author"),
            PlanStep::fetch_edge("s2", "s1", "affiliated-with"),
        ],
    );
    let out = graphrunner(&[
        "verify",
        "--graph",
        s(&data("academic/graph.json")),
        "--plan",
        s(&plan),
        "--execute",
        "--frozen-clock",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = &json_out(&out)["trace"];
    assert_eq!(trace["status"], "complete");
    let blocks = trace["final_context"]["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 1);
    assert!(blocks[0].as_str().unwrap().starts_with("[(institution) I2]"));
}

#[test]
fn run_answers_question() {
    let dir = TempDir::new().unwrap();
    let config = academic_config(dir.path(), "");
    let out = graphrunner(&[
        "run",
        "--config",
        s(&config),
        "--frozen-clock",
        "Who wrote the paper Efficient Multi-Hop Question Answering?",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json_out(&out);
    assert_eq!(v["error_class"], "none");
    assert_eq!(v["provider_calls"], 2);
    assert!(v["answer"].as_str().unwrap().contains("(author) A3]"));
    assert_eq!(v["timing"]["total_micros"], 0);
}

#[test]
fn run_dry_run_stops_after_planning() {
    let dir = TempDir::new().unwrap();
    let config = academic_config(dir.path(), "");
    let out = graphrunner(&[
        "run",
        "--config",
        s(&config),
        "--dry-run",
        "Who wrote the paper Efficient Multi-Hop Question Answering?",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json_out(&out);
    assert_eq!(v["verified"], true);
    assert_eq!(v["plan_attempts"], 1);
    assert!(v.get("trace").is_none() && v.get("answer").is_none());

    let out = graphrunner(&["run", "--config", s(&config), "--dry-run", "--max-retries", "1", "What is the weather?"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_out(&out);
    assert_eq!(v["verified"], false);
    assert_eq!(v["plan_attempts"], 2);
}

#[test]
fn run_scripted_planner_retries_rejected_plan() {
    let dir = TempDir::new().unwrap();
    let bad = serialize_plan(
        &TraversalPlan::new(
            "q",
            None,
            vec![PlanStep::find_node("s1", "Chen Wei", "author"), PlanStep::fetch_edge("s2", "s1", "employs")],
        )
        .unwrap(),
    );
    let good = bad.replace("employs", "affiliated-with");
    let script = dir.path().join("planner.json");
    fs::write(&script, json!([bad, good]).to_string()).unwrap();
    let config = academic_config(dir.path(), "");
    let out = graphrunner(&[
        "run",
        "--config",
        s(&config),
        "--planner",
        "script",
        "--frozen-clock",
        "Where does Chen Wei work?",
    ]);
    // the config has no script path yet
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("planner.script"), "{}", stderr(&out));

    let config = academic_config(dir.path(), &format!("script = {:?}\n", s(&script)));
    let out = graphrunner(&[
        "run",
        "--config",
        s(&config),
        "--planner",
        "script",
        "--frozen-clock",
        "Where does Chen Wei work?",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json_out(&out);
    assert_eq!(v["error_class"], "none");
    assert_eq!(v["plan_attempts"], 2);
    assert_eq!(v["hallucinations_blocked"], 1);
    assert_eq!(v["provider_calls"], 3);
}

#[test]
fn eval_writes_normalized_outputs() {
    let dir = TempDir::new().unwrap();
    let config = academic_config(dir.path(), "");
    let results = dir.path().join("out/results.jsonl");
    let summary = dir.path().join("out/summary.json");
    let out = graphrunner(&[
        "eval",
        "--config",
        s(&config),
        "--results",
        s(&results),
        "--summary",
        s(&summary),
        "--normalize-timings",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<Value> = fs::read_to_string(&results)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    let ids: Vec<&str> = lines.iter().map(|l| l["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["q1", "q2", "q3", "q4", "q5", "q6"]);
    for l in &lines {
        assert_eq!(l["run"]["timing"]["total_micros"], 0);
        assert_eq!(l["error_class"], "none");
    }
    let written: Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(written["questions"], 6);
}

#[test]
fn eval_needs_questions() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bare.toml");
    let text = format!(
        "graph = {:?}\n[planner]\nkind = \"template\"\ntemplates = {:?}\n[answerer]\nkind = \"echo\"\n",
        s(&data("academic/graph.json")),
        s(&data("academic/templates.json")),
    );
    fs::write(&config, text).unwrap();
    let out = graphrunner(&["eval", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("questions"));
}

#[test]
fn bad_config_and_usage_errors() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "graph = [1, 2\n").unwrap();
    let out = graphrunner(&["run", "--config", s(&config), "q"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));

    let out = graphrunner(&["run", "--config", s(&dir.path().join("missing.toml")), "q"]);
    assert_eq!(out.status.code(), Some(2));

    let out = graphrunner(&["verify", "--graph", "g.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = graphrunner(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
