//! Train from offline trajectories instead of executing tasks.
//!
//! ```text
//! cargo run --example trace_ingest -- traces.jsonl
//! ```
//!
//! Without an argument a small trace file is written to a temp directory.
//! The mapper shows how to adapt a foreign layout.

use std::io::Write;

use promptscan::backend::SimBackend;
use promptscan::context::Playbook;
use promptscan::harness::traces::{ingest_traces, parse_traces};
use promptscan::pipeline::{run_epoch, EpochOptions, StrategyConfig};
use serde_json::{json, Value};

fn main() {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let path = std::env::temp_dir().join("promptscan-traces.jsonl");
            let mut f = std::fs::File::create(&path).unwrap();
            for i in 0..24 {
                let outcome = if i % 4 == 0 { "failure" } else { "success" };
                writeln!(
                    f,
                    r#"{{"task_id":"tb-{i:02}","steps":["ls","make"],"outcome":"{outcome}","insights":["ins-{:04}"],"model":"x"}}"#,
                    i % 10
                )
                .unwrap();
            }
            path
        }
    };

    let corpus = ingest_traces(&path).unwrap();
    println!("{} samples from {}", corpus.len(), path.display());
    let out = run_epoch(
        &corpus,
        &Playbook::new(),
        &StrategyConfig::scan(8, 0),
        &SimBackend::default(),
        EpochOptions::default(),
    )
    .unwrap();
    println!(
        "{} iterations, {} entries",
        out.records.len(),
        out.playbook.len()
    );

    // foreign layout: {"id", "transcript", "passed"}
    let foreign = r#"{"id":"q1","transcript":["plan","run"],"passed":true,"tags":["ins-0001"]}"#;
    let mapper = |v: Value| -> Result<Value, String> {
        Ok(json!({
            "task_id": v["id"],
            "steps": v["transcript"],
            "outcome": if v["passed"] == json!(true) { "success" } else { "failure" },
            "insights": v["tags"],
        }))
    };
    let mapped = parse_traces(foreign.as_bytes(), &mapper).unwrap();
    println!(
        "mapped sample {} with insights {:?}",
        mapped[0].task_id, mapped[0].required_insights
    );
}
