//! One iteration at batch size 50: the naive single call against the scan.
//!
//! The scan duplicates each reflection (p = 2), shuffles, curates
//! ⌊√100⌋ = 10 groups concurrently and merges their partial updates.

use promptscan::backend::SimBackend;
use promptscan::context::Playbook;
use promptscan::harness::{generate_corpus, CorpusSpec};
use promptscan::pipeline::{run_iteration, StrategyConfig};

fn main() {
    let corpus = generate_corpus(&CorpusSpec::default(), 1).unwrap();
    let batch = &corpus[..50];
    let backend = SimBackend::default();

    for strategy in [StrategyConfig::naive(50, 1), StrategyConfig::scan(50, 1)] {
        let out = run_iteration(batch, &Playbook::new(), &strategy, &backend, 0, 8).unwrap();
        println!("{}:", strategy.kind);
        if let Some(plan) = &out.plan {
            let sizes: Vec<usize> = plan.groups.iter().map(|g| g.len).collect();
            println!(
                "  leaves {} in {} groups {:?}",
                plan.leaf_count, plan.subgroup_count, sizes
            );
        }
        println!("  curator calls     {}", out.curate_calls);
        println!("  entries added     {}", out.delta.summary().adds);
        println!(
            "  iteration delay   {:.2} s (map {:.2}, reduce {:?})",
            out.delays.total_s, out.delays.map_s, out.delays.reduce_s
        );
    }
}
