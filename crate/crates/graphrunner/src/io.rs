//! Reading and writing the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use graphrunner_core::graph::{load_graph, GraphDocument, KnowledgeGraph};
use graphrunner_core::planner::{FewShotExample, PlanTemplate};
use graphrunner_core::plan::{parse_plan, TraversalPlan};
use serde::Serialize;
use serde_json::Value;

use crate::grbench::{self, QaRecord};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_graph(path: &Path) -> Result<KnowledgeGraph> {
    load_graph(&read(path)?, None).with_context(|| format!("invalid graph file {}", path.display()))
}

/// Native graph file, or GRBENCH layout converted on the fly.
pub fn read_graph_document(path: &Path, grbench_format: bool) -> Result<(GraphDocument, usize)> {
    let text = read(path)?;
    if grbench_format {
        let c = grbench::convert_graph(&text).with_context(|| format!("invalid GRBENCH file {}", path.display()))?;
        Ok((c.document, c.dropped_references))
    } else {
        let doc = GraphDocument::parse(&text).with_context(|| format!("invalid graph file {}", path.display()))?;
        Ok((doc, 0))
    }
}

pub fn read_plan(path: &Path) -> Result<TraversalPlan> {
    parse_plan(&read(path)?).with_context(|| format!("{} does not hold a valid plan", path.display()))
}

pub fn read_few_shot(path: &Path) -> Result<Vec<FewShotExample>> {
    serde_json::from_str(&read(path)?).with_context(|| format!("invalid few-shot file {}", path.display()))
}

pub fn read_templates(path: &Path) -> Result<Vec<PlanTemplate>> {
    serde_json::from_str(&read(path)?).with_context(|| format!("invalid template file {}", path.display()))
}

/// Questions as JSON lines, or a JSON array of the same records. Records may
/// use the GRBENCH field names.
pub fn parse_questions(text: &str) -> Result<Vec<QaRecord>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let items: Vec<Value> = serde_json::from_str(text)?;
        return items
            .iter()
            .enumerate()
            .map(|(i, v)| grbench::qa_record(v, i + 1).map_err(Into::into))
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| anyhow!("line {}, column {}: {e}", i + 1, e.column()))?;
        out.push(grbench::qa_record(&v, i + 1)?);
    }
    Ok(out)
}

pub fn read_questions(path: &Path) -> Result<Vec<QaRecord>> {
    parse_questions(&read(path)?).with_context(|| format!("invalid questions file {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}
