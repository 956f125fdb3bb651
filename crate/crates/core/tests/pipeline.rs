mod common;

use std::collections::HashMap;
use std::fs;

use serde_json::json;

use common::{write_corpus, MockServer};
use xfnl_core::backends::{make_test_embedder, CorruptionSpec, GenerationRequest, Generator};
use xfnl_core::corpus::Split;
use xfnl_core::pipeline::{EmbeddingSource, GenerationSource, Journal};
use xfnl_core::prompting::{plan_prompts, PromptRenderer};
use xfnl_core::synthetic::{self, SyntheticSpec};
use xfnl_core::{run_pipeline, Corpus, PipelineError};

fn small() -> Corpus {
    synthetic::corpus(&SyntheticSpec {
        n_statements: 60,
        seed: 4,
        ..SyntheticSpec::default()
    })
}

#[test]
fn deleting_every_word_aborts_with_exit_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = write_corpus(&small(), dir.path());
    config.generation = GenerationSource::Corrupt {
        spec: CorruptionSpec::new(1.0, 0.0).unwrap(),
        seed: 1,
    };
    let err = run_pipeline(&config).unwrap_err();
    assert!(matches!(err, PipelineError::FailureThreshold { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn failures_under_threshold_are_reported_not_fatal() {
    let corpus = small();
    let dir = tempfile::tempdir().unwrap();
    let mut config = write_corpus(&corpus, dir.path());
    // the mock fails one prompt in every ten
    let plan = plan_prompts(
        &corpus,
        Split::Test,
        &PromptRenderer::with_default_instruction(config.mode),
    )
    .unwrap();
    let oracle: HashMap<String, String> = plan
        .instances()
        .map(|p| (p.input_text.clone(), p.expected_target.clone()))
        .collect();
    let bad: Vec<String> = plan
        .groups
        .iter()
        .step_by(10)
        .map(|g| g.input_text.clone())
        .collect();
    let server = MockServer::start(move |_, body| {
        let input = body["input"].as_str().unwrap_or_default();
        if bad.iter().any(|b| b == input) {
            (400, "rejected".into())
        } else {
            (200, json!({"text": oracle[input]}).to_string())
        }
    });
    config.generation = GenerationSource::Url(server.url.clone());
    config.failure_threshold = 0.5;
    config.artifacts_dir = Some(dir.path().join("out"));
    let outcome = run_pipeline(&config).unwrap();
    let failed: usize = plan
        .groups
        .iter()
        .step_by(10)
        .map(|g| g.members.len())
        .sum();
    assert_eq!(outcome.failures.len(), failed);
    assert_eq!(outcome.report.n_failures, failed);
    assert_eq!(outcome.report.n_examples + failed, plan.mention_count());
    assert_eq!(outcome.report.hits_at(1), Some(1.0));
    let lines = fs::read_to_string(dir.path().join("out/failures.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), failed);

    config.failure_threshold = 0.0;
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 3);
}

#[test]
fn http_backends_match_in_process_backends() {
    let corpus = small();
    let dir = tempfile::tempdir().unwrap();
    let mut config = write_corpus(&corpus, dir.path());
    let local = run_pipeline(&config).unwrap();

    let plan = plan_prompts(
        &corpus,
        Split::Test,
        &PromptRenderer::with_default_instruction(config.mode),
    )
    .unwrap();
    let oracle: HashMap<String, String> = plan
        .instances()
        .map(|p| (p.input_text.clone(), p.expected_target.clone()))
        .collect();
    let embedder = make_test_embedder(1024, 0);
    let server = MockServer::start(move |path, body| match path {
        "/v1/generate" => match oracle.get(body["input"].as_str().unwrap_or_default()) {
            Some(t) => (200, json!({ "text": t }).to_string()),
            None => (404, "unknown prompt".into()),
        },
        "/v1/embed" => {
            let vectors: Vec<Vec<f64>> = body["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| embedder.embed_one(t.as_str().unwrap()).into_values())
                .collect();
            (200, json!({"vectors": vectors, "dim": 1024}).to_string())
        }
        _ => (404, String::new()),
    });
    config.generation = GenerationSource::Url(server.url.clone());
    config.embedding = EmbeddingSource::Url(server.url.clone());
    let remote = run_pipeline(&config).unwrap();
    assert_eq!(remote.report.to_json(), local.report.to_json());
    assert_eq!(remote.index_fingerprint, local.index_fingerprint);
}

#[test]
fn resume_skips_journaled_mentions() {
    let corpus = small();
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let mut config = write_corpus(&corpus, dir.path());
    config.journal = Some(journal.clone());
    let first = run_pipeline(&config).unwrap();
    let recorded = fs::read_to_string(&journal).unwrap();
    assert_eq!(recorded.lines().count(), first.predictions.len());

    // keep half of the journal, then resume against a generator that only
    // knows the prompts of the missing half
    let kept: Vec<&str> = recorded.lines().take(first.predictions.len() / 2).collect();
    fs::write(&journal, kept.join("\n") + "\n").unwrap();
    let (_, done) = Journal::open(&journal, true).unwrap();
    assert_eq!(done.len(), kept.len());

    let server = {
        let renderer = PromptRenderer::with_default_instruction(config.mode);
        let plan = plan_prompts(&corpus, Split::Test, &renderer).unwrap();
        let done: Vec<(String, usize)> = done
            .iter()
            .map(|p| (p.sid.clone(), p.mention_index))
            .collect();
        let remaining: HashMap<String, String> = plan
            .instances()
            .filter(|p| !done.contains(&(p.sid.clone(), p.mention_index)))
            .map(|p| (p.input_text.clone(), p.expected_target.clone()))
            .collect();
        MockServer::start(move |_, body| {
            match remaining.get(body["input"].as_str().unwrap_or_default()) {
                Some(t) => (200, json!({ "text": t }).to_string()),
                None => (400, "already done".into()),
            }
        })
    };
    config.generation = GenerationSource::Url(server.url.clone());
    config.resume = true;
    config.failure_threshold = 0.0;
    let resumed = run_pipeline(&config).unwrap();
    assert_eq!(resumed.report.to_json(), first.report.to_json());
    assert!(server.request_count() < first.plan.groups.len());
    let lines = fs::read_to_string(&journal).unwrap().lines().count();
    assert_eq!(lines, first.predictions.len());
}

#[test]
fn index_cache_is_written_then_reused() {
    let corpus = small();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("index.bin");
    let mut config = write_corpus(&corpus, dir.path());
    config.index_cache = Some(cache.clone());
    let first = run_pipeline(&config).unwrap();
    assert!(cache.is_file());
    let second = run_pipeline(&config).unwrap();
    assert_eq!(second.report.hits_at(1), first.report.hits_at(1));

    config.embedding = EmbeddingSource::Test { dim: 64, seed: 0 };
    let err = run_pipeline(&config).unwrap_err();
    assert!(err.to_string().contains("dim"), "{err}");
}

#[test]
fn precomputed_embeddings_replace_the_index() {
    let corpus = small();
    let dir = tempfile::tempdir().unwrap();
    let embedder = make_test_embedder(1024, 0);
    let rows: String = corpus
        .taxonomy()
        .records()
        .iter()
        .map(|r| {
            json!({"tag": r.tag_id, "vector": embedder.embed_one(&r.documentation).values()})
                .to_string()
                + "\n"
        })
        .collect();
    let path = dir.path().join("vectors.jsonl");
    fs::write(&path, &rows).unwrap();
    let mut config = write_corpus(&corpus, dir.path());
    let built = run_pipeline(&config).unwrap();
    config.precomputed_embeddings = Some(path.clone());
    let loaded = run_pipeline(&config).unwrap();
    assert_eq!(loaded.index_fingerprint, built.index_fingerprint);

    let partial: String = rows.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&path, partial).unwrap();
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = write_corpus(&small(), dir.path());
    config.k = 0;
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 2);

    let mut config = write_corpus(&small(), dir.path());
    config.dataset = dir.path().join("missing.jsonl");
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 2);

    let mut config = write_corpus(&small(), dir.path());
    config.resume = true;
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 2);

    let config = write_corpus(&small(), dir.path());
    fs::write(&config.dataset, "{\"sid\": 1}\n").unwrap();
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 2);
}

#[test]
fn oracle_truncates_to_token_cap() {
    let corpus = small();
    let renderer = PromptRenderer::with_default_instruction(Default::default());
    let plan = plan_prompts(&corpus, Split::Test, &renderer).unwrap();
    let oracle = xfnl_core::backends::OracleGenerator::from_instances(plan.instances());
    let first = plan
        .instances()
        .find(|p| p.expected_target != "others")
        .unwrap();
    let out = oracle
        .generate(&GenerationRequest::new(first.input_text.clone()).with_max_new_tokens(2))
        .unwrap();
    assert_eq!(out.text.split_whitespace().count(), 2);
}
