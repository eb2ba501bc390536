//! A small ablation through the harness: three variants, two seeds.

use mesin::harness::{ablate_in, generate_in, AblationSettings, RunConfig};
use mesin::params::InitScheme;

fn main() -> mesin::error::Result<()> {
    let root = std::env::temp_dir().join("mesin-example-ablation");
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.generator.patients = 150;
    generate_in(&cfg, &root.join("cohort"))?;

    cfg.cohort = Some(root.join("cohort"));
    cfg.hyper.embed_dim = 16;
    cfg.hyper.hidden_dim = 16;
    cfg.hyper.learning_rate = 0.01;
    cfg.hyper.epochs = 80;
    cfg.hyper.dropout = 0.0;
    cfg.hyper.init = InitScheme::Scaled;
    cfg.ablation = AblationSettings {
        variants: vec!["vanilla".into(), "mesin".into(), "nodiag".into()],
        seeds: vec![0, 1],
    };
    let report = ablate_in(&cfg, &root)?;
    print!("{}", report.table());
    println!("written to {}", root.display());
    Ok(())
}
