use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use xfnl_core::jsonl;
use xfnl_core::metrics::LabeledPrediction;
use xfnl_core::parse_corpus;
use xfnl_core::review::{agreement_report, build_review_tasks, AnnotationRecord, ReviewTask};

use crate::args::ReviewCommand;
use crate::Failure;

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::read(path, e))?;
    jsonl::parse(&bytes).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Annotation log, empty when the file does not exist yet.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, Failure> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body).map_err(|e| Failure::other(format!("{}: {e}", path.display())))
}

pub fn review(command: ReviewCommand) -> Result<(), Failure> {
    match command {
        ReviewCommand::Build {
            predictions,
            dataset,
            taxonomy,
            k,
            seed,
            out,
        } => {
            let preds: Vec<LabeledPrediction> = read_jsonl(&predictions)?;
            let dataset = fs::read(&dataset).map_err(|e| Failure::read(&dataset, e))?;
            let taxonomy = fs::read(&taxonomy).map_err(|e| Failure::read(&taxonomy, e))?;
            let corpus =
                parse_corpus(&dataset, &taxonomy).map_err(|e| Failure::config(e.to_string()))?;
            let tasks = build_review_tasks(&preds, &corpus, k, seed)
                .map_err(|e| Failure::config(e.to_string()))?;
            write(&out, &jsonl::to_string(&tasks))?;
            println!("wrote {} tasks to {}", tasks.len(), out.display());
            Ok(())
        }
        ReviewCommand::Report {
            tasks,
            annotations,
            out,
        } => {
            let tasks: Vec<ReviewTask> = read_jsonl(&tasks)?;
            let annotations = read_annotations(&annotations)?;
            let report = agreement_report(&annotations, &tasks)
                .map_err(|e| Failure::other(e.to_string()))?;
            let body = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(path) => write(&path, &body)?,
                None => println!("{body}"),
            }
            Ok(())
        }
    }
}
