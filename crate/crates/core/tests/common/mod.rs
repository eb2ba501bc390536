#![allow(dead_code)]

pub mod criteria;
pub mod oracle;

use mesin::config::{HyperParams, ModelConfig, Variant};
use mesin::ehr::{LabChannel, PatientRecord, Visit, Vocabulary};
use mesin::gradcheck::{coordinate_error, grad_check_many};
use mesin::model::Mesin;
use mesin::params::{Bound, ParameterStore};
use mesin::tensor::Tensor;

/// Hidden 2, four diagnosis and medication codes, two lab indicators.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        hyper: HyperParams {
            embed_dim: 2,
            hidden_dim: 2,
            dropout: 0.0,
            ..HyperParams::default()
        },
        vocab: Vocabulary {
            diagnoses: 4,
            medications: 4,
            indicators: 2,
        },
        variant,
    }
}

pub fn two_visit_patient() -> PatientRecord {
    PatientRecord {
        patient_id: "tiny".into(),
        visits: vec![
            Visit::new(
                vec![
                    LabChannel::dense(vec![0.4, -0.3, 0.9]),
                    LabChannel::new(vec![1.2, 0.0], vec![true, false]).unwrap(),
                ],
                vec![0, 2, 3],
                vec![1, 3],
            ),
            Visit::new(
                vec![LabChannel::dense(vec![-0.5, 0.1]), LabChannel::dense(vec![0.7])],
                vec![1, 2],
                vec![0, 1],
            ),
        ],
    }
}

/// Largest finite-difference error of the patient loss, per named parameter.
pub fn loss_gradient_errors(model: &Mesin, store: &ParameterStore, record: &PatientRecord) -> Vec<(String, f64)> {
    let points: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check_many(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let out = model.forward_patient(tape, &bound, record, None)?;
            Ok(model.patient_loss(tape, &out, record)?.total)
        },
        &points,
        1e-5,
        1e-4,
    )
    .unwrap();
    store
        .iter()
        .zip(report.analytic.iter().zip(&report.numeric))
        .map(|((name, _), (a, n))| {
            let worst = a
                .iter()
                .zip(n)
                .map(|(&x, &y)| coordinate_error(x, y))
                .fold(0.0, f64::max);
            (name.to_string(), worst)
        })
        .collect()
}
