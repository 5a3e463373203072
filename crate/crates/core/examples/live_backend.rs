//! One scan iteration against an OpenAI-compatible endpoint.
//!
//! ```text
//! PROMPTSCAN_API_KEY=... cargo run --example live_backend -- https://api.example.com/v1 model-name
//! ```
//!
//! Set `PROMPTSCAN_RECORD=dir` to save every exchange as a replayable fixture.

use std::time::Duration;

use promptscan::backend::http::{ChatTransport, RecordingTransport, ReqwestTransport};
use promptscan::backend::{HttpBackend, HttpConfig};
use promptscan::context::Playbook;
use promptscan::pipeline::{run_iteration, StrategyConfig, TaskSample};

fn main() {
    let mut args = std::env::args().skip(1);
    let (Some(base_url), Some(model)) = (args.next(), args.next()) else {
        eprintln!("usage: live_backend <base-url> <model>");
        std::process::exit(2);
    };
    let config = HttpConfig::new(base_url, model);
    let Ok(key) = std::env::var(&config.api_key_env) else {
        eprintln!("set {} to run against a live endpoint", config.api_key_env);
        std::process::exit(2);
    };
    let reqwest = ReqwestTransport::new(Duration::from_secs_f64(config.timeout_s)).unwrap();
    let transport: Box<dyn ChatTransport> = match std::env::var("PROMPTSCAN_RECORD") {
        Ok(dir) => {
            std::fs::create_dir_all(&dir).unwrap();
            Box::new(RecordingTransport::new(reqwest, dir))
        }
        Err(_) => Box::new(reqwest),
    };
    let backend = HttpBackend::new(config, key, transport);

    let tasks = [
        "What is 15% of 240?",
        "A loan of 1000 at 5% simple interest for 3 years: total repaid?",
        "Convert 2.5 hours to minutes.",
        "Net margin when revenue is 400 and net income is 36?",
    ];
    let batch: Vec<TaskSample> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| TaskSample::new(format!("live-{i}"), *t))
        .collect();

    match run_iteration(
        &batch,
        &Playbook::new(),
        &StrategyConfig::scan(batch.len(), 0),
        &backend,
        0,
        4,
    ) {
        Ok(out) => {
            println!(
                "{} requests, {:.1} s",
                backend.request_count(),
                out.delays.total_s
            );
            println!("{}", out.playbook.to_markdown());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(7);
        }
    }
}
