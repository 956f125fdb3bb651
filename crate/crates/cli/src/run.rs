use std::time::Duration;

use xfnl_core::backends::RetryPolicy;
use xfnl_core::corpus::BucketEdges;
use xfnl_core::metrics::{ClassSetMode, EvalOptions};
use xfnl_core::{run_pipeline, PipelineConfig};

use crate::args::{ClassSetArg, RunArgs};
use crate::{backends, Failure};

/// Translates `run` flags into a pipeline configuration.
pub fn config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut config = PipelineConfig::new(&args.dataset, &args.taxonomy);
    config.instruction_file = args.instruction_file.clone();
    config.mode = backends::prompt_mode(args.mode, args.target);
    config.generation = backends::generation(
        args.gen_url.as_deref(),
        args.gen_test,
        args.corrupt_rate,
        args.substitute_rate,
        args.seed,
    )?;
    config.embedding = backends::embedding(
        args.embed_url.as_deref(),
        args.embed_test,
        args.dim,
        args.seed,
    )?;
    config.precomputed_embeddings = args.embed_precomputed.clone();
    config.k = args.k;
    config.max_new_tokens = args.max_new_tokens;
    config.eval = EvalOptions {
        max_k: args.k,
        class_set: match args.class_set {
            ClassSetArg::Gold => ClassSetMode::GoldTags,
            ClassSetArg::Taxonomy => ClassSetMode::Taxonomy,
        },
        include_others_in_macro: !args.exclude_others_macro,
        include_others_in_hits: !args.exclude_others_hits,
        bucket_edges: args
            .bucket_edges
            .parse::<BucketEdges>()
            .map_err(|e| Failure::config(e.to_string()))?,
        ..EvalOptions::default()
    };
    config.report_out = args.report_out.clone();
    config.index_cache = args.index_cache.clone();
    config.artifacts_dir = args.artifacts_dir.clone();
    config.journal = args.journal.clone();
    config.resume = args.resume;
    config.concurrency = args.concurrency;
    config.failure_threshold = args.failure_threshold;
    config.retry = RetryPolicy {
        deadline: args.retry_deadline_secs.map(Duration::from_secs),
        ..RetryPolicy::default()
    };
    Ok(config)
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    let config = config(args)?;
    let outcome = run_pipeline(&config)?;
    for w in &outcome.plan.warnings {
        log::warn!("{w}");
    }
    if args.json {
        println!("{}", outcome.report.to_json());
    } else {
        print!("{}", outcome.report.render_table());
    }
    Ok(())
}
