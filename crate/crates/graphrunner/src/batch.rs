//! Batch evaluation over a question file.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use graphrunner_core::eval::{summarize, EvalSummary, PricingTable, QuestionRecord};
use graphrunner_core::pipeline::{Pipeline, RunRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::grbench::QaRecord;

/// One line of the results file: the scored record plus the full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    #[serde(flatten)]
    pub record: QuestionRecord,
    pub run: RunRecord,
}

/// Runs every question, `parallelism` at a time. Output order follows the
/// input order whatever the scheduling.
pub fn run_batch(
    pipeline: &Pipeline<'_>,
    questions: &[QaRecord],
    pricing: &PricingTable,
    parallelism: usize,
) -> Vec<ResultLine> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ResultLine>>> = Mutex::new(vec![None; questions.len()]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(q) = questions.get(i) else { break };
        let run = pipeline.run(&q.question);
        let record = QuestionRecord::from_run(&q.id, &q.question, &q.answer, &run, pricing);
        slots.lock().unwrap()[i] = Some(ResultLine { record, run });
    };
    let workers = parallelism.clamp(1, questions.len().max(1));
    if workers == 1 {
        work();
    } else {
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    slots.into_inner().unwrap().into_iter().flatten().collect()
}

pub fn summary_of(lines: &[ResultLine], rouge_floor: f64) -> EvalSummary {
    summarize(lines.iter().map(|l| l.record.clone()).collect(), rouge_floor)
}

/// Zero every `*_micros` field, so outputs of two runs can be compared
/// byte for byte.
pub fn normalize_timings(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if k.ends_with("_micros") && (v.is_number() || v.is_null()) {
                    *v = Value::from(0);
                } else {
                    normalize_timings(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(normalize_timings),
        _ => {}
    }
}
