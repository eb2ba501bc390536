//! Score a briefly trained model on the test split and show one visit's
//! attention at every level.

use mesin::config::{HyperParams, ModelConfig, Variant};
use mesin::ehr::Split;
use mesin::metrics::evaluate;
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
        4,
    )?;
    let pick = |s| cohort.manifest.select(&cohort.patients, s).into_iter().cloned().collect::<Vec<_>>();
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
    let (model, store) = Mesin::initialised(config, 1)?;
    let out = train(&model, store, &pick(Split::Train), &pick(Split::Validation), 1)?;
    let report = evaluate(&model, &out.best.store()?, &pick(Split::Test))?;
    print!("{}", report.table());

    let row = &report.rows[1];
    let att = &report.attention[1];
    println!("\npatient {} visit {}", row.patient_id, row.visit);
    println!("truth     {:?}", row.truth);
    println!("predicted {:?}", row.predicted);
    for (name, rec) in [("lab", &att.lab), ("diagnosis", &att.diagnosis), ("medication", &att.medication)] {
        if let Some(r) = rec {
            let pairs: Vec<String> = r.keys.iter().zip(&r.weights).map(|(k, w)| format!("{k}:{w:.3}")).collect();
            println!("{name:<10} {}", pairs.join(" "));
        }
    }
    if let Some(f) = &att.fusion {
        let pairs: Vec<String> = att.fusion_sources.iter().zip(f).map(|(s, w)| format!("{}:{w:.3}", s.name())).collect();
        println!("{:<10} {}", "fusion", pairs.join(" "));
    }
    Ok(())
}
