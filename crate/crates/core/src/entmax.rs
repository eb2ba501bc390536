//! Probability mappings onto the simplex: softmax, sparsemax and α-entmax.
//!
//! α-entmax for `gamma > 1` is
//!
//! ```text
//! p_i = [(gamma - 1) z_i - tau]_+ ^ (1 / (gamma - 1)),   sum_i p_i = 1
//! ```
//!
//! `tau` is found by bisection on `[max(z~) - 1, max(z~)]` where
//! `z~ = (gamma - 1) z`, with a fixed number of halvings. `gamma = 2` is
//! sparsemax and is routed to the exact sort-based algorithm by
//! [`alpha_entmax`]; [`entmax_bisect`] always bisects.
//!
//! Weights below [`ZERO_CLAMP`] are set to exactly zero and the remainder is
//! renormalised, so an entry reported as outside the support is literally 0.

use serde::{Deserialize, Serialize};

use crate::error::{MesinError, Result};

pub const BISECTION_ITERS: usize = 50;
pub const ZERO_CLAMP: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(MesinError::contract("simplex vector must be nonempty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MesinError::contract(format!(
                "simplex weights must be finite and non-negative: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(MesinError::contract(format!(
                "simplex weights sum to {total}, not 1"
            )));
        }
        Ok(SimplexVector(weights))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indices with nonzero weight.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|w| **w > 0.0).count()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = MesinError;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        SimplexVector::new(weights)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(s: SimplexVector) -> Self {
        s.0
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(MesinError::contract("attention scores must be nonempty"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MesinError::NumericFailure {
            op: "attention scores".into(),
        });
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 1.0 {
        Ok(())
    } else {
        Err(MesinError::contract(format!(
            "entmax requires gamma > 1 (got {gamma}); request softmax explicitly"
        )))
    }
}

pub fn softmax(scores: &[f64]) -> Result<SimplexVector> {
    check_scores(scores)?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(SimplexVector(exp.into_iter().map(|e| e / total).collect()))
}

/// Euclidean projection onto the simplex via sorting.
pub fn sparsemax(scores: &[f64]) -> Result<SimplexVector> {
    check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut k = 0;
    let mut tau_sum = 0.0;
    for (i, z) in sorted.iter().enumerate() {
        cumsum += z;
        if 1.0 + (i as f64 + 1.0) * z > cumsum {
            k = i + 1;
            tau_sum = cumsum;
        }
    }
    let tau = (tau_sum - 1.0) / k as f64;
    let p: Vec<f64> = scores.iter().map(|z| (z - tau).max(0.0)).collect();
    Ok(clamp_and_normalise(p))
}

/// α-entmax solved by bisection, for any `gamma > 1` (including 2).
pub fn entmax_bisect(scores: &[f64], gamma: f64) -> Result<SimplexVector> {
    check_scores(scores)?;
    check_gamma(gamma)?;
    let am1 = gamma - 1.0;
    let exponent = 1.0 / am1;
    let shifted: Vec<f64> = scores.iter().map(|z| z * am1).collect();
    let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mass = |tau: f64| -> f64 {
        shifted
            .iter()
            .map(|z| {
                let d = z - tau;
                if d > 0.0 {
                    d.powf(exponent)
                } else {
                    0.0
                }
            })
            .sum()
    };

    // mass(lo) >= 1 and mass(hi) = 0 on the initial bracket.
    let mut lo = max - 1.0;
    let mut hi = max;
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p: Vec<f64> = shifted
        .iter()
        .map(|z| {
            let d = z - lo;
            if d > 0.0 {
                d.powf(exponent)
            } else {
                0.0
            }
        })
        .collect();
    Ok(clamp_and_normalise(p))
}

/// α-entmax; `gamma == 2` uses exact sparsemax, anything else bisects.
pub fn alpha_entmax(scores: &[f64], gamma: f64) -> Result<SimplexVector> {
    check_gamma(gamma)?;
    if gamma == 2.0 {
        sparsemax(scores)
    } else {
        entmax_bisect(scores, gamma)
    }
}

/// Vector-Jacobian product of α-entmax at `output`.
///
/// With `s_i = p_i^(2 - gamma)` on the support and 0 elsewhere, the
/// Jacobian is `diag(s) - s s^T / sum(s)`.
pub fn alpha_entmax_backward(
    output: &SimplexVector,
    upstream: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    vjp_with_weights(output.weights(), upstream, |p| p.powf(2.0 - gamma))
}

pub fn softmax_backward(output: &SimplexVector, upstream: &[f64]) -> Result<Vec<f64>> {
    vjp_with_weights(output.weights(), upstream, |p| p)
}

fn vjp_with_weights(p: &[f64], upstream: &[f64], weight: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    if p.len() != upstream.len() {
        return Err(MesinError::contract(format!(
            "entmax backward: output has {} entries, upstream {}",
            p.len(),
            upstream.len()
        )));
    }
    let s: Vec<f64> = p
        .iter()
        .map(|&pi| if pi > 0.0 { weight(pi) } else { 0.0 })
        .collect();
    let s_total: f64 = s.iter().sum();
    let sg: f64 = s.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let ratio = sg / s_total;
    Ok(s.iter().zip(upstream).map(|(si, gi)| si * (gi - ratio)).collect())
}

fn clamp_and_normalise(mut p: Vec<f64>) -> SimplexVector {
    for v in p.iter_mut() {
        if *v < ZERO_CLAMP {
            *v = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= total;
    }
    SimplexVector(p)
}
