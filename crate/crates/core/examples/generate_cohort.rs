//! Sample a planted cohort, save it, reload it and print a few statistics.

use mesin::ehr::{load_cohort, save_cohort, Split};
use mesin::synth::{generate_cohort, GeneratorSpec};

fn main() -> mesin::error::Result<()> {
    let spec = GeneratorSpec {
        patients: 60,
        ..Default::default()
    };
    let cohort = generate_cohort(&spec, 7)?;
    let dir = std::env::temp_dir().join("mesin-example-cohort");
    save_cohort(&dir, &cohort.patients, &cohort.manifest)?;
    let (patients, manifest) = load_cohort(&dir)?;
    assert_eq!(patients, cohort.patients);

    let visits: usize = patients.iter().map(|p| p.visits.len()).sum();
    let meds: usize = patients.iter().flat_map(|p| &p.visits).map(|v| v.medications.len()).sum();
    let diags: usize = patients.iter().flat_map(|p| &p.visits).map(|v| v.diagnoses.len()).sum();
    println!("wrote {}", dir.display());
    println!("patients {} visits {visits}", patients.len());
    println!(
        "per visit: {:.2} diagnoses, {:.2} medications",
        diags as f64 / visits as f64,
        meds as f64 / visits as f64
    );
    for s in [Split::Train, Split::Validation, Split::Test] {
        println!("{s:?}: {}", manifest.select(&patients, s).len());
    }
    let prescribing = cohort.structure.prescribing.iter().filter(|p| p.is_some()).count();
    println!("{prescribing} of {} diagnosis codes prescribe a medication", spec.diagnoses);
    Ok(())
}
