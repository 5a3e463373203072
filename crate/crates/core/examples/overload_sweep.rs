//! Naive vs scan aggregation across batch sizes on the simulated backend.
//!
//! Distinct specific insights retained after one epoch, averaged over seeds.
//!
//! ```text
//! cargo run --release --example overload_sweep -- [seeds]
//! ```

use promptscan::backend::SimBackend;
use promptscan::context::Playbook;
use promptscan::harness::{generate_corpus, CorpusSpec};
use promptscan::pipeline::{run_epoch, score_playbook, EpochOptions, StrategyConfig};

const SIZES: [usize; 6] = [1, 5, 10, 20, 50, 100];

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let backend = SimBackend::default();
    let spec = CorpusSpec::default();

    println!(
        "{:>4} {:>12} {:>12} {:>10} {:>10}",
        "bs", "naive", "scan", "acc naive", "acc scan"
    );
    for bs in SIZES {
        let (mut naive, mut scan, mut acc_n, mut acc_s) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let corpus = generate_corpus(&spec, seed).unwrap();
            for (strategy, kept, acc) in [
                (StrategyConfig::naive(bs, seed), &mut naive, &mut acc_n),
                (StrategyConfig::scan(bs, seed), &mut scan, &mut acc_s),
            ] {
                let out = run_epoch(
                    &corpus,
                    &Playbook::new(),
                    &strategy,
                    &backend,
                    EpochOptions::default(),
                )
                .unwrap();
                let m = score_playbook(&out.playbook, &corpus, backend.coverage_fraction)
                    .unwrap()
                    .metrics;
                *kept += m.specific_insights as f64;
                *acc += m.accuracy_proxy;
            }
        }
        let n = seeds as f64;
        println!(
            "{bs:>4} {:>12.1} {:>12.1} {:>10.3} {:>10.3}",
            naive / n,
            scan / n,
            acc_n / n,
            acc_s / n
        );
    }
}
