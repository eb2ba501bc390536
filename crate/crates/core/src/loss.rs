//! Training objectives: clamped binary cross-entropy, the multi-label margin
//! loss on raw scores, and their fixed mixture.

use crate::config::{HyperParams, MarginPairs};
use crate::error::{MesinError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are kept this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Binary indicator vector of length `n` with ones at `codes`.
pub fn multi_hot(codes: &[usize], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &c in codes {
        v[c] = 1.0;
    }
    v
}

/// Cross-entropy on plain values, with the same clamping as [`loss_bce`].
pub fn bce_value(probabilities: &[f64], target: &[f64]) -> f64 {
    probabilities
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Margin loss on plain values, matching [`loss_margin`].
pub fn margin_value(scores: &[f64], targets: &[usize], pairs: MarginPairs) -> f64 {
    let n = scores.len();
    let mut total = 0.0;
    for &j in targets {
        for i in 0..n {
            if pairs == MarginPairs::ExcludeTrue && targets.contains(&i) {
                continue;
            }
            total += (1.0 - (scores[j] - scores[i])).max(0.0);
        }
    }
    total / n as f64
}

/// `-sum y log p + (1 - y) log(1 - p)` over labels.
pub fn loss_bce(tape: &mut Tape, probabilities: Var, target: &[f64]) -> Result<Var> {
    let p = tape.value(probabilities);
    if !p.is_vector() || p.len() != target.len() {
        return Err(MesinError::contract(format!(
            "bce: {} probabilities against {} targets",
            p.len(),
            target.len()
        )));
    }
    if target.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(MesinError::contract("bce: targets must be 0 or 1"));
    }
    let n = target.len();
    let clamped = tape.clamp(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.log(clamped)?;
    let one_minus = tape.affine(clamped, -1.0, 1.0)?;
    let log_q = tape.log(one_minus)?;
    let y = tape.constant(Tensor::from_parts(vec![n], target.to_vec()));
    let not_y = tape.constant(Tensor::from_parts(
        vec![n],
        target.iter().map(|y| 1.0 - y).collect(),
    ));
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum(both)?;
    tape.scale(total, -1.0)
}

/// `sum_j sum_i max(0, 1 - (s[y_j] - s[i])) / L` with `L` the number of labels.
pub fn loss_margin(tape: &mut Tape, scores: Var, targets: &[usize], pairs: MarginPairs) -> Result<Var> {
    let s = tape.value(scores);
    if !s.is_vector() {
        return Err(MesinError::contract("margin: scores must be a vector"));
    }
    let n = s.len();
    if targets.is_empty() {
        return Err(MesinError::contract("margin: target set is empty"));
    }
    if let Some(&bad) = targets.iter().find(|&&j| j >= n) {
        return Err(MesinError::contract(format!("margin: target {bad} out of range for {n} labels")));
    }
    let others: Vec<usize> = match pairs {
        MarginPairs::AllLabels => (0..n).collect(),
        MarginPairs::ExcludeTrue => (0..n).filter(|i| !targets.contains(i)).collect(),
    };
    if others.is_empty() {
        return Ok(tape.constant(Tensor::from_parts(vec![1], vec![0.0])));
    }
    let mut true_idx = Vec::with_capacity(targets.len() * others.len());
    let mut other_idx = Vec::with_capacity(targets.len() * others.len());
    for &j in targets {
        for &i in &others {
            true_idx.push(j);
            other_idx.push(i);
        }
    }
    let st = tape.gather(scores, true_idx)?;
    let so = tape.gather(scores, other_idx)?;
    let gap = tape.sub(st, so)?;
    let slack = tape.affine(gap, -1.0, 1.0)?;
    let hinge = tape.relu(slack)?;
    let total = tape.sum(hinge)?;
    tape.scale(total, 1.0 / n as f64)
}

/// `eta * bce + epsilon * margin`.
pub fn loss_joint(bce: f64, margin: f64, hyper: &HyperParams) -> Result<f64> {
    check_mixture(hyper)?;
    Ok(hyper.eta * bce + hyper.epsilon * margin)
}

pub fn loss_joint_on_tape(tape: &mut Tape, bce: Var, margin: Var, hyper: &HyperParams) -> Result<Var> {
    check_mixture(hyper)?;
    let a = tape.scale(bce, hyper.eta)?;
    let b = tape.scale(margin, hyper.epsilon)?;
    tape.add(a, b)
}

fn check_mixture(hyper: &HyperParams) -> Result<()> {
    if hyper.eta < 0.0 || hyper.epsilon < 0.0 || (hyper.eta + hyper.epsilon - 1.0).abs() > 1e-12 {
        return Err(MesinError::Config(format!(
            "loss mixture must satisfy eta + epsilon = 1 (eta = {}, epsilon = {})",
            hyper.eta, hyper.epsilon
        )));
    }
    Ok(())
}
