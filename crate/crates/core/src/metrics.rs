//! Set-overlap metrics, micro average precision and the evaluation driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr::PatientRecord;
use crate::error::{MesinError, Result};
use crate::loss::{bce_value, loss_joint, margin_value, multi_hot};
use crate::model::{predicted_set, AttentionRecord, FusionSource, Mesin};
use crate::params::ParameterStore;

/// One (patient, visit) prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInstance {
    pub probabilities: Vec<f64>,
    /// Ascending label ids.
    pub predicted: Vec<usize>,
    /// Ascending label ids, nonempty.
    pub truth: Vec<usize>,
}

impl PredictionInstance {
    pub fn from_probabilities(probabilities: Vec<f64>, truth: Vec<usize>, threshold: f64) -> Result<Self> {
        if truth.is_empty() {
            return Err(MesinError::contract("prediction instance needs a nonempty truth set"));
        }
        let predicted = predicted_set(&probabilities, threshold)?;
        Ok(PredictionInstance {
            probabilities,
            predicted,
            truth,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    // both ascending
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Metrics of a single instance. Sets must be ascending and duplicate-free.
pub fn instance_metrics(predicted: &[usize], truth: &[usize]) -> SetMetrics {
    let inter = overlap(predicted, truth) as f64;
    let union = (predicted.len() + truth.len()) as f64 - inter;
    let jaccard = if union > 0.0 { inter / union } else { 0.0 };
    let precision = if predicted.is_empty() {
        0.0
    } else {
        inter / predicted.len() as f64
    };
    let recall = if truth.is_empty() { 0.0 } else { inter / truth.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SetMetrics {
        jaccard,
        precision,
        recall,
        f1,
    }
}

/// Mean over instances of the per-instance metrics.
pub fn set_metrics(instances: &[PredictionInstance]) -> Result<SetMetrics> {
    if instances.is_empty() {
        return Err(MesinError::contract("set_metrics needs at least one instance"));
    }
    let mut acc = SetMetrics {
        jaccard: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for inst in instances {
        let m = instance_metrics(&inst.predicted, &inst.truth);
        acc.jaccard += m.jaccard;
        acc.precision += m.precision;
        acc.recall += m.recall;
        acc.f1 += m.f1;
    }
    let n = instances.len() as f64;
    Ok(SetMetrics {
        jaccard: acc.jaccard / n,
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    })
}

/// Average precision of one ranking: `sum_k P@k * (R_k - R_{k-1})`, with
/// tied scores treated as a single step. No positives gives 0, no negatives 1.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return 0.0;
    }
    if positives == labels.len() {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut ap, mut tp, mut seen) = (0.0, 0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let mut group_tp = 0;
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                group_tp += 1;
            }
            seen += 1;
            k += 1;
        }
        if group_tp > 0 {
            tp += group_tp;
            ap += (tp as f64 / seen as f64) * (group_tp as f64 / positives as f64);
        }
    }
    ap
}

/// Micro-averaged average precision over every (instance, label) pair.
pub fn pr_auc(instances: &[PredictionInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(MesinError::contract("pr_auc needs at least one instance"));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for inst in instances {
        let mut is_true = vec![false; inst.probabilities.len()];
        for &t in &inst.truth {
            *is_true.get_mut(t).ok_or_else(|| {
                MesinError::contract(format!(
                    "truth label {t} outside {} probabilities",
                    inst.probabilities.len()
                ))
            })? = true;
        }
        scores.extend_from_slice(&inst.probabilities);
        labels.extend(is_true);
    }
    Ok(average_precision(&scores, &labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitRow {
    pub patient_id: String,
    pub visit: usize,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitAttention {
    pub patient_id: String,
    pub visit: usize,
    pub lab: Option<AttentionRecord>,
    pub diagnosis: Option<AttentionRecord>,
    pub medication: Option<AttentionRecord>,
    pub fusion_sources: Vec<FusionSource>,
    pub fusion: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jaccard: f64,
    pub pr_auc: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision: f64,
    /// Mean over patients of the joint objective summed over visits.
    pub loss: f64,
    pub instances: usize,
    pub rows: Vec<VisitRow>,
    pub attention: Vec<VisitAttention>,
}

impl MetricsReport {
    pub fn from_instances(
        instances: &[PredictionInstance],
        keys: &[(String, usize)],
        attention: Vec<VisitAttention>,
        loss: f64,
    ) -> Result<Self> {
        let agg = set_metrics(instances)?;
        let rows = instances
            .iter()
            .zip(keys)
            .map(|(inst, (pid, visit))| {
                let m = instance_metrics(&inst.predicted, &inst.truth);
                VisitRow {
                    patient_id: pid.clone(),
                    visit: *visit,
                    truth: inst.truth.clone(),
                    predicted: inst.predicted.clone(),
                    jaccard: m.jaccard,
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                }
            })
            .collect();
        Ok(MetricsReport {
            jaccard: agg.jaccard,
            pr_auc: pr_auc(instances)?,
            recall: agg.recall,
            f1: agg.f1,
            precision: agg.precision,
            loss,
            instances: instances.len(),
            rows,
            attention,
        })
    }

    /// Aggregate metrics as an aligned text table.
    pub fn table(&self) -> String {
        format!(
            "{:<10}{:>10}{:>10}{:>10}{:>10}\n{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
            "", "Jaccard", "PR-AUC", "Recall", "F1", "model", self.jaccard, self.pr_auc, self.recall, self.f1
        )
    }
}

/// Score every visit of every patient in evaluation mode.
pub fn evaluate(model: &Mesin, store: &ParameterStore, patients: &[PatientRecord]) -> Result<MetricsReport> {
    model.check_store(store)?;
    let hyper = &model.config().hyper;
    let threshold = hyper.threshold;
    let m = model.config().vocab.medications;
    let per_patient: Vec<Result<(f64, Vec<_>)>> = patients
        .par_iter()
        .map(|p| {
            let preds = model.predict(store, p)?;
            let mut loss = 0.0;
            for (pred, visit) in preds.iter().zip(&p.visits) {
                let bce = bce_value(&pred.probabilities, &multi_hot(&visit.medications, m));
                let margin = margin_value(&pred.logits, &visit.medications, hyper.margin_pairs);
                loss += loss_joint(bce, margin, hyper)?;
            }
            let rows: Result<Vec<_>> = preds
                .into_iter()
                .zip(&p.visits)
                .enumerate()
                .map(|(t, (pred, visit))| {
                    let inst = PredictionInstance::from_probabilities(
                        pred.probabilities,
                        visit.medications.clone(),
                        threshold,
                    )?;
                    let att = VisitAttention {
                        patient_id: p.patient_id.clone(),
                        visit: t,
                        lab: pred.lab_attention,
                        diagnosis: pred.diag_attention,
                        medication: pred.med_attention,
                        fusion_sources: pred.fusion_sources,
                        fusion: pred.fusion_weights,
                    };
                    Ok((inst, (p.patient_id.clone(), t), att))
                })
                .collect();
            Ok((loss, rows?))
        })
        .collect();
    let mut instances = Vec::new();
    let mut keys = Vec::new();
    let mut attention = Vec::new();
    let mut loss = 0.0;
    for res in per_patient {
        let (patient_loss, rows) = res?;
        loss += patient_loss;
        for (inst, key, att) in rows {
            instances.push(inst);
            keys.push(key);
            attention.push(att);
        }
    }
    let loss = loss / patients.len().max(1) as f64;
    MetricsReport::from_instances(&instances, &keys, attention, loss)
}
