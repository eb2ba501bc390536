//! Synthetic cohorts with a planted lab → diagnosis → medication chain.
//!
//! Latent disease factors are active at each visit and persist across
//! visits. Each factor owns a group of medications, a matching group of
//! "prescribing" diagnosis codes (one per medication) and a few incidental
//! diagnosis codes that never lead to a prescription. Active factors shift
//! the laboratory trajectories.
//!
//! With `noise = 0` the medication set of a visit is exactly the image of its
//! diagnosis set under the prescribing map. Noise drops explained medications
//! and adds chronic unexplained ones that persist across visits.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ehr::{CohortManifest, LabChannel, PatientRecord, Visit, Vocabulary, DEFAULT_SPLIT};
use crate::error::{MesinError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub patients: usize,
    pub diagnoses: usize,
    pub medications: usize,
    pub indicators: usize,
    pub factors: usize,
    /// Mean visits per patient; every patient has at least two.
    pub avg_visits: f64,
    pub max_visits: usize,
    pub avg_diagnoses: f64,
    pub avg_medications: f64,
    /// Hourly lab slots per visit.
    pub hours: usize,
    /// Probability that an hourly lab slot is missing.
    pub drop_prob: f64,
    /// Probability that an active factor or a medication carries over to the next visit.
    pub persistence: f64,
    /// Per-visit probability of each medication-level corruption.
    pub noise: f64,
    /// Standard deviation of hourly lab measurement noise.
    pub lab_noise: f64,
    /// Scale of the factor-specific lab shifts.
    pub signal: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            patients: 300,
            diagnoses: 40,
            medications: 25,
            indicators: 6,
            factors: 4,
            avg_visits: 2.55,
            max_visits: 8,
            avg_diagnoses: 6.0,
            avg_medications: 4.3,
            hours: 24,
            drop_prob: 0.5,
            persistence: 0.6,
            noise: 0.1,
            lab_noise: 0.3,
            signal: 1.5,
        }
    }
}

impl GeneratorSpec {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            diagnoses: self.diagnoses,
            medications: self.medications,
            indicators: self.indicators,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MesinError::Config(m));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.patients == 0 || self.indicators == 0 || self.medications == 0 || self.hours == 0 {
            return fail("patients, indicators, medications and hours must be positive".into());
        }
        if self.diagnoses < self.medications {
            return fail(format!(
                "need at least one prescribing diagnosis per medication: {} diagnoses < {} medications",
                self.diagnoses, self.medications
            ));
        }
        if self.factors == 0 || self.factors > self.medications {
            return fail(format!(
                "factors must be in 1..={}, got {}",
                self.medications, self.factors
            ));
        }
        if !(self.avg_visits >= 2.0) || self.max_visits < 2 || self.avg_visits > self.max_visits as f64 {
            return fail(format!(
                "avg_visits {} must lie in [2, max_visits = {}]",
                self.avg_visits, self.max_visits
            ));
        }
        if !(self.avg_medications >= 1.0) || self.avg_medications > self.medications as f64 {
            return fail(format!(
                "avg_medications {} must lie in [1, {}]",
                self.avg_medications, self.medications
            ));
        }
        if !(self.avg_diagnoses >= self.avg_medications) || self.avg_diagnoses > self.diagnoses as f64 {
            return fail(format!(
                "avg_diagnoses {} must lie in [avg_medications, {}]",
                self.avg_diagnoses, self.diagnoses
            ));
        }
        if !prob(self.drop_prob) || self.drop_prob >= 1.0 || !prob(self.persistence) || !prob(self.noise) {
            return fail("drop_prob, persistence and noise must be probabilities (drop_prob < 1)".into());
        }
        if !(self.lab_noise >= 0.0) || !(self.signal >= 0.0) {
            return fail("lab_noise and signal must be non-negative".into());
        }
        Ok(())
    }
}

/// The hidden ground truth behind a generated cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    /// Medication prescribed for each diagnosis code, `None` for incidental codes.
    pub prescribing: Vec<Option<usize>>,
    /// Inverse of `prescribing`.
    pub prescribed_by: Vec<usize>,
    pub factor_medications: Vec<Vec<usize>>,
    pub factor_incidental: Vec<Vec<usize>>,
    /// `factors x indicators` lab shifts.
    pub lab_signature: Vec<Vec<f64>>,
    pub lab_baseline: Vec<f64>,
}

impl PlantedStructure {
    /// Medications implied by a diagnosis set.
    pub fn implied_medications(&self, diagnoses: &[usize]) -> Vec<usize> {
        let mut meds: Vec<usize> = diagnoses.iter().filter_map(|&d| self.prescribing[d]).collect();
        meds.sort_unstable();
        meds.dedup();
        meds
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedCohort {
    pub patients: Vec<PatientRecord>,
    pub manifest: CohortManifest,
    pub structure: PlantedStructure,
}

const STRUCTURE_STREAM: u64 = u64::MAX;

fn poisson(rng: &mut impl Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).expect("positive rate").sample(rng) as usize
    }
}

fn plant(spec: &GeneratorSpec, seed: u64) -> PlantedStructure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STRUCTURE_STREAM);

    let mut diag_order: Vec<usize> = (0..spec.diagnoses).collect();
    diag_order.shuffle(&mut rng);
    let mut med_order: Vec<usize> = (0..spec.medications).collect();
    med_order.shuffle(&mut rng);

    let mut prescribing = vec![None; spec.diagnoses];
    let mut prescribed_by = vec![0; spec.medications];
    for (&d, &m) in diag_order.iter().zip(&med_order) {
        prescribing[d] = Some(m);
        prescribed_by[m] = d;
    }

    let mut factor_medications = vec![Vec::new(); spec.factors];
    for (i, &m) in med_order.iter().enumerate() {
        factor_medications[i % spec.factors].push(m);
    }
    let mut factor_incidental = vec![Vec::new(); spec.factors];
    for (i, &d) in diag_order[spec.medications..].iter().enumerate() {
        factor_incidental[i % spec.factors].push(d);
    }

    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let lab_signature = (0..spec.factors)
        .map(|_| (0..spec.indicators).map(|_| spec.signal * unit.sample(&mut rng)).collect())
        .collect();
    let lab_baseline = (0..spec.indicators).map(|_| 0.5 * unit.sample(&mut rng)).collect();

    PlantedStructure {
        prescribing,
        prescribed_by,
        factor_medications,
        factor_incidental,
        lab_signature,
        lab_baseline,
    }
}

fn next_factors(rng: &mut impl Rng, spec: &GeneratorSpec, previous: &[usize]) -> Vec<usize> {
    let target = if spec.factors > 1 && rng.random_bool(0.5) { 2 } else { 1 };
    let mut active: Vec<usize> = previous
        .iter()
        .copied()
        .filter(|_| rng.random_bool(spec.persistence))
        .take(target)
        .collect();
    while active.len() < target {
        let k = rng.random_range(0..spec.factors);
        if !active.contains(&k) {
            active.push(k);
        }
    }
    active.sort_unstable();
    active
}

fn generate_patient(
    spec: &GeneratorSpec,
    s: &PlantedStructure,
    seed: u64,
    index: usize,
) -> PatientRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let n_visits = (2 + poisson(&mut rng, spec.avg_visits - 2.0)).min(spec.max_visits);
    let offsets: Vec<f64> = (0..spec.indicators).map(|_| 0.3 * unit.sample(&mut rng)).collect();

    let mut factors: Vec<usize> = Vec::new();
    let mut prev_meds: Vec<usize> = Vec::new();
    let mut chronic: Vec<usize> = Vec::new();
    let mut visits = Vec::with_capacity(n_visits);

    for _ in 0..n_visits {
        factors = next_factors(&mut rng, spec, &factors);

        let pool: Vec<usize> = factors
            .iter()
            .flat_map(|&k| s.factor_medications[k].iter().copied())
            .collect();
        let n_meds = (1 + poisson(&mut rng, spec.avg_medications - 1.0)).min(pool.len());
        let mut explained: Vec<usize> = prev_meds
            .iter()
            .copied()
            .filter(|m| pool.contains(m) && rng.random_bool(spec.persistence))
            .take(n_meds)
            .collect();
        let mut rest: Vec<usize> = pool.iter().copied().filter(|m| !explained.contains(m)).collect();
        rest.shuffle(&mut rng);
        explained.extend(rest.into_iter().take(n_meds - explained.len()));

        let mut diagnoses: Vec<usize> = explained.iter().map(|&m| s.prescribed_by[m]).collect();
        let incidental: Vec<usize> = factors
            .iter()
            .flat_map(|&k| s.factor_incidental[k].iter().copied())
            .collect();
        let all_incidental: Vec<usize> = s.factor_incidental.concat();
        let n_extra = poisson(&mut rng, spec.avg_diagnoses - spec.avg_medications);
        for _ in 0..n_extra {
            let from = if rng.random_bool(spec.noise) || incidental.is_empty() {
                &all_incidental
            } else {
                &incidental
            };
            if let Some(&d) = from.choose(&mut rng) {
                diagnoses.push(d);
            }
        }

        let mut medications = explained.clone();
        if medications.len() > 1 && rng.random_bool(spec.noise) {
            let drop = rng.random_range(0..medications.len());
            medications.remove(drop);
        }
        chronic.retain(|_| rng.random_bool(spec.persistence));
        if rng.random_bool(spec.noise) {
            let m = rng.random_range(0..spec.medications);
            if !chronic.contains(&m) {
                chronic.push(m);
            }
        }
        medications.extend(chronic.iter().copied());

        let mut labs = Vec::with_capacity(spec.indicators);
        for j in 0..spec.indicators {
            let level = s.lab_baseline[j]
                + offsets[j]
                + factors.iter().map(|&k| s.lab_signature[k][j]).sum::<f64>();
            let slope = 0.3 * unit.sample(&mut rng);
            let mut values = Vec::with_capacity(spec.hours);
            let mut observed = Vec::with_capacity(spec.hours);
            for h in 0..spec.hours {
                let frac = h as f64 / spec.hours as f64 - 0.5;
                values.push(level + slope * frac + spec.lab_noise * unit.sample(&mut rng));
                observed.push(!rng.random_bool(spec.drop_prob));
            }
            labs.push(LabChannel { values, observed });
        }
        if labs.iter().all(|c| c.num_observed() == 0) {
            labs[0].observed[0] = true;
        }

        prev_meds = explained;
        visits.push(Visit::new(labs, diagnoses, medications));
    }

    PatientRecord {
        patient_id: format!("P{index:05}"),
        visits,
    }
}

/// Generate a cohort and its manifest (with a default 2/3 : 1/6 : 1/6 split).
/// Patient `i` draws from its own RNG stream, so records are independent of
/// generation order.
pub fn generate_cohort(spec: &GeneratorSpec, seed: u64) -> Result<GeneratedCohort> {
    spec.validate()?;
    let structure = plant(spec, seed);
    let patients: Vec<PatientRecord> = (0..spec.patients)
        .map(|i| generate_patient(spec, &structure, seed, i))
        .collect();
    let manifest = CohortManifest::new(spec.vocabulary(), Some(spec.clone()), seed, &patients, DEFAULT_SPLIT)?;
    Ok(GeneratedCohort {
        patients,
        manifest,
        structure,
    })
}
