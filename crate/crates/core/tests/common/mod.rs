#![allow(dead_code)]

use std::fs;
use std::path::Path;

use xfnl_core::corpus::{Corpus, Split, TagId};
use xfnl_core::matcher::{Prediction, ScoredTag};
use xfnl_core::metrics::LabeledPrediction;
use xfnl_core::PipelineConfig;

/// Writes `corpus` as dataset/taxonomy files under `dir` and returns a
/// config pointing at them.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> PipelineConfig {
    let dataset = dir.join("dataset.jsonl");
    let taxonomy = dir.join("taxonomy.jsonl");
    fs::write(&dataset, corpus.to_dataset_jsonl()).unwrap();
    fs::write(&taxonomy, corpus.taxonomy().to_jsonl()).unwrap();
    PipelineConfig::new(dataset, taxonomy)
}

pub fn ranked(tags: &[&TagId]) -> Prediction {
    Prediction {
        ranked: tags
            .iter()
            .enumerate()
            .map(|(r, t)| ScoredTag {
                tag: (*t).clone(),
                score: 1.0 - r as f64 / 64.0,
            })
            .collect(),
        query_text: String::new(),
    }
}

/// Test-split predictions that rank the gold tag first.
pub fn perfect_predictions(corpus: &Corpus) -> Vec<LabeledPrediction> {
    corpus
        .mentions(Split::Test)
        .map(|(s, i, m)| LabeledPrediction {
            sid: s.sid.clone(),
            mention_index: i,
            gold: m.gold_tag.clone(),
            prediction: ranked(&[&m.gold_tag]),
        })
        .collect()
}

pub type Handler = dyn Fn(&str, &serde_json::Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each POST through `handler`. Every
/// response closes its connection.
pub struct MockServer {
    pub url: String,
    pub requests: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl MockServer {
    pub fn start(
        handler: impl Fn(&str, &serde_json::Value) -> (u16, String) + Send + Sync + 'static,
    ) -> Self {
        use std::io::{BufRead, BufReader, Read, Write};
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        let handler: Arc<Handler> = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let handler = handler.clone();
                let counter = counter.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream);
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("/").to_owned();
                    let mut length = 0;
                    loop {
                        let mut header = String::new();
                        if reader.read_line(&mut header).unwrap_or(0) == 0 || header == "\r\n" {
                            break;
                        }
                        if let Some((k, v)) = header.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut body = vec![0; length];
                    if reader.read_exact(&mut body).is_err() {
                        return;
                    }
                    counter.fetch_add(1, Ordering::SeqCst);
                    let json = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
                    let (status, reply) = handler(&path, &json);
                    let mut stream = reader.into_inner();
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                });
            }
        });
        MockServer { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(std::sync::atomic::Ordering::SeqCst)
    }
}
