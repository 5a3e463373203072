//! Full experiment: profile, train, persist, report.
//!
//! ```text
//! cargo run --example run_experiment -- [output-dir]
//! ```

use promptscan::controller::ControllerConfig;
use promptscan::harness::{report, run_experiment, CorpusSpec, ExperimentConfig, StrategySpec};
use promptscan::pipeline::StrategyKind;

fn main() -> Result<(), promptscan::Error> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("promptscan-run"));
    let mut cfg = ExperimentConfig::synthetic(
        CorpusSpec::default(),
        StrategySpec {
            kind: StrategyKind::Scan,
            batch_size: 1,
            duplication: 2,
            subgroup_count: None,
        },
        7,
        &out,
    );
    cfg.controller = Some(ControllerConfig::default());
    cfg.epochs = 2;
    cfg.reshuffle = true;

    let summary = run_experiment(&cfg, &mut std::io::stdout())?;
    let r = report(&out)?;
    println!(
        "\n{} iterations, {} entries ({} tokens), {} helpful / {} harmful marks, replay verified: {}",
        r.iterations, r.final_entries, r.token_size, r.total_helpful, r.total_harmful, r.replay_verified
    );
    println!(
        "final accuracy proxy {:.3}",
        summary.last().metrics.accuracy_proxy
    );
    println!("outputs in {}", out.display());
    Ok(())
}
