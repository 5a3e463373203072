//! Fit the delay curve and pick the plateau batch size.
//!
//! First from the reported naive epoch times of a real run (minutes), then by
//! profiling the simulated backend.

use promptscan::backend::SimBackend;
use promptscan::context::Playbook;
use promptscan::controller::{
    fit_power_law, profile_and_select, select_plateau, ControllerConfig, ProfileMeasurement,
};
use promptscan::harness::{generate_corpus, CorpusSpec};
use promptscan::pipeline::StrategyConfig;

fn main() {
    let cfg = ControllerConfig::default();

    let reported: Vec<_> = [(1, 86.0), (5, 30.0), (10, 19.0), (20, 10.0), (40, 5.0)]
        .iter()
        .map(|&(bs, minutes)| ProfileMeasurement::from_epoch_time(bs, minutes, 90))
        .collect();
    let fit = fit_power_law(&reported).unwrap();
    let choice = select_plateau(&fit, &cfg, 90).unwrap();
    println!(
        "reported times: T = {:.2}·bs^-{:.4} min, tau = {:.4} min/sample -> bs {} (raw {:.2})",
        fit.a, fit.alpha, choice.tau, choice.batch_size, choice.raw
    );

    let corpus = generate_corpus(&CorpusSpec::default(), 0).unwrap();
    for strategy in [StrategyConfig::naive(1, 0), StrategyConfig::scan(1, 0)] {
        let r = profile_and_select(
            &corpus,
            &Playbook::new(),
            &strategy,
            &SimBackend::default(),
            &cfg,
            8,
        )
        .unwrap();
        println!("\nsimulated, {}:", strategy.kind);
        for m in &r.measurements {
            println!(
                "  bs {:>3}  d {:>6.2} s  T {:>7.1} s",
                m.batch_size, m.delay_s, m.epoch_time_s
            );
        }
        println!(
            "  alpha {:.3}, A {:.1} s, rms log residual {:.3} -> bs {}",
            r.fit.alpha,
            r.fit.a,
            r.fit.rms_log_residual,
            r.selected()
        );
    }
}
