//! Generate, train, evaluate and emit plot data, all through the harness.

use mesin::harness::{evaluate_in, generate_in, report_in, train_in, RunConfig, BEST_CHECKPOINT};
use mesin::params::InitScheme;

fn main() -> mesin::error::Result<()> {
    let root = std::env::temp_dir().join("mesin-example-report");
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.generator.patients = 60;
    cfg.hyper.embed_dim = 16;
    cfg.hyper.hidden_dim = 16;
    cfg.hyper.learning_rate = 0.01;
    cfg.hyper.epochs = 60;
    cfg.hyper.dropout = 0.0;
    cfg.hyper.init = InitScheme::Scaled;

    let (cohort, train, eval, report) = (root.join("cohort"), root.join("train"), root.join("eval"), root.join("report"));
    for d in [&train, &eval, &report] {
        std::fs::create_dir_all(d).map_err(|e| mesin::error::MesinError::Io {
            path: d.clone(),
            source: e,
        })?;
    }
    generate_in(&cfg, &cohort)?;
    cfg.cohort = Some(cohort);
    train_in(&cfg, &train)?;
    cfg.checkpoint = Some(train.join(BEST_CHECKPOINT));
    evaluate_in(&cfg, &eval)?;
    cfg.input = Some(eval);
    let summary = report_in(&cfg, &report)?;

    for s in &summary.streams {
        println!(
            "{:<10} {} visits, {} of {} weights exactly zero",
            s.stream, s.visits, s.exact_zeros, s.weights
        );
    }
    println!(
        "{} fusion rows, max |sum - 1| = {:.1e}",
        summary.fusion_rows, summary.fusion_max_deviation
    );
    println!("tables in {}", report.display());
    Ok(())
}
