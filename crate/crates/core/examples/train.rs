//! Train the full model on a small planted cohort and print the epoch trace.

use mesin::config::{HyperParams, ModelConfig, Variant};
use mesin::ehr::Split;
use mesin::model::Mesin;
use mesin::params::InitScheme;
use mesin::synth::{generate_cohort, GeneratorSpec};
use mesin::train::train;

fn main() -> mesin::error::Result<()> {
    let cohort = generate_cohort(
        &GeneratorSpec {
            patients: 80,
            ..Default::default()
        },
        3,
    )?;
    let pick = |s| cohort.manifest.select(&cohort.patients, s).into_iter().cloned().collect::<Vec<_>>();
    let (train_set, validation) = (pick(Split::Train), pick(Split::Validation));

    let config = ModelConfig {
        hyper: HyperParams {
            embed_dim: 16,
            hidden_dim: 16,
            learning_rate: 0.01,
            epochs: 80,
            dropout: 0.0,
            init: InitScheme::Scaled,
            ..Default::default()
        },
        vocab: cohort.manifest.vocabulary,
        variant: Variant::full(),
    };
    let (model, store) = Mesin::initialised(config, 0)?;
    println!("{} parameters", store.num_scalars());
    let out = train(&model, store, &train_set, &validation, 0)?;
    println!("epoch      loss  bce/label  val jaccard");
    for r in &out.trace {
        let j = r.validation.as_ref().map_or(f64::NAN, |v| v.jaccard);
        println!("{:>5} {:>9.4} {:>10.4} {:>12.4}", r.epoch, r.loss, r.bce_per_label, j);
    }
    println!("best validation epoch {}", out.best.epoch);
    Ok(())
}
