//! Multilevel EHR records, cohort files and train/validation/test splits.
//!
//! # Cohort file format (version 1)
//!
//! A cohort directory holds two files:
//!
//! * `cohort.jsonl`: line-delimited JSON. Line 1 is the header
//!   `{"format":"mesin-cohort","version":1,"patients":N,"vocabulary":{...}}`;
//!   each of the following `N` lines is one [`PatientRecord`].
//! * `manifest.json`: the [`CohortManifest`].
//!
//! Floats are written in shortest round-trip form, so save/load is bit-exact.
//! A file with fewer records than the header announces is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MesinError, Result};
use crate::synth::GeneratorSpec;

pub const COHORT_FORMAT: &str = "mesin-cohort";
pub const COHORT_VERSION: u32 = 1;
pub const COHORT_FILE: &str = "cohort.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One laboratory indicator sampled within a visit. Unobserved slots hold a
/// placeholder value that is never read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabChannel {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl LabChannel {
    pub fn new(values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        let c = LabChannel { values, observed };
        c.validate()?;
        Ok(c)
    }

    /// A channel with every slot observed.
    pub fn dense(values: Vec<f64>) -> Self {
        let observed = vec![true; values.len()];
        LabChannel { values, observed }
    }

    pub fn empty() -> Self {
        LabChannel {
            values: Vec::new(),
            observed: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.observed.len() {
            return Err(MesinError::Data(format!(
                "lab channel has {} values but {} mask entries",
                self.values.len(),
                self.observed.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(MesinError::Data("lab channel holds a non-finite value".into()));
        }
        Ok(())
    }

    pub fn observations(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.observed)
            .filter(|(_, &o)| o)
            .map(|(&v, _)| v)
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub labs: Vec<LabChannel>,
    /// Ascending, duplicate-free diagnosis code ids.
    pub diagnoses: Vec<usize>,
    /// Ascending, duplicate-free medication code ids.
    pub medications: Vec<usize>,
}

impl Visit {
    /// Sorts and deduplicates the code sets.
    pub fn new(labs: Vec<LabChannel>, mut diagnoses: Vec<usize>, mut medications: Vec<usize>) -> Self {
        diagnoses.sort_unstable();
        diagnoses.dedup();
        medications.sort_unstable();
        medications.dedup();
        Visit {
            labs,
            diagnoses,
            medications,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub diagnoses: usize,
    pub medications: usize,
    pub indicators: usize,
}

fn check_codes(codes: &[usize], bound: usize, what: &str, patient: &str, visit: usize) -> Result<()> {
    if codes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MesinError::Data(format!(
            "patient {patient} visit {visit}: {what} codes must be ascending without duplicates"
        )));
    }
    if let Some(bad) = codes.iter().find(|&&c| c >= bound) {
        return Err(MesinError::Data(format!(
            "patient {patient} visit {visit}: {what} code {bad} outside vocabulary of {bound}"
        )));
    }
    Ok(())
}

impl PatientRecord {
    /// Cohort invariants: at least two visits, nonempty medication sets,
    /// codes inside the vocabulary, one lab channel per indicator.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let id = &self.patient_id;
        if self.visits.len() < 2 {
            return Err(MesinError::Data(format!(
                "patient {id} has {} visit(s); at least two are required",
                self.visits.len()
            )));
        }
        for (t, v) in self.visits.iter().enumerate() {
            if v.medications.is_empty() {
                return Err(MesinError::Data(format!(
                    "patient {id} visit {t}: empty medication set"
                )));
            }
            check_codes(&v.diagnoses, vocab.diagnoses, "diagnosis", id, t)?;
            check_codes(&v.medications, vocab.medications, "medication", id, t)?;
            if v.labs.len() != vocab.indicators {
                return Err(MesinError::Data(format!(
                    "patient {id} visit {t}: {} lab channels, vocabulary declares {}",
                    v.labs.len(),
                    vocab.indicators
                )));
            }
            for c in &v.labs {
                c.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    /// Absent for externally ingested cohorts.
    pub generator: Option<GeneratorSpec>,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub splits: BTreeMap<String, Split>,
}

impl CohortManifest {
    pub fn new(
        vocabulary: Vocabulary,
        generator: Option<GeneratorSpec>,
        seed: u64,
        patients: &[PatientRecord],
        ratios: [f64; 3],
    ) -> Result<Self> {
        let parts = split_cohort(patients, ratios, seed)?;
        let mut splits = BTreeMap::new();
        for (which, ids) in [Split::Train, Split::Validation, Split::Test].into_iter().zip(parts) {
            for id in ids {
                splits.insert(id, which);
            }
        }
        Ok(CohortManifest {
            format_version: COHORT_VERSION,
            vocabulary,
            generator,
            seed,
            split_ratios: ratios,
            splits,
        })
    }

    /// Patients assigned to `which`, in cohort order.
    pub fn select<'a>(&self, patients: &'a [PatientRecord], which: Split) -> Vec<&'a PatientRecord> {
        patients
            .iter()
            .filter(|p| self.splits.get(&p.patient_id) == Some(&which))
            .collect()
    }
}

pub const DEFAULT_SPLIT: [f64; 3] = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];

/// Deterministic shuffle-then-cut into train / validation / test ids.
///
/// Train and validation sizes are `round(n * ratio)` (halves round up); the
/// test split receives the remainder. With the default 2/3 : 1/6 : 1/6 ratios
/// 4631 patients give 3087 / 772 / 772.
pub fn split_cohort(patients: &[PatientRecord], ratios: [f64; 3], seed: u64) -> Result<[Vec<String>; 3]> {
    let n = patients.len();
    if n < 3 {
        return Err(MesinError::Config(format!(
            "cannot split a cohort of {n} patients into three sets"
        )));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MesinError::Config(format!(
            "split ratios must be positive and sum to one, got {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * ratios[0]).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * ratios[1]).round() as usize).clamp(1, n - n_train - 1);
    let ids = |range: &[usize]| -> Vec<String> {
        range.iter().map(|&i| patients[i].patient_id.clone()).collect()
    };
    Ok([
        ids(&order[..n_train]),
        ids(&order[n_train..n_train + n_val]),
        ids(&order[n_train + n_val..]),
    ])
}

#[derive(Serialize, Deserialize)]
struct CohortHeader {
    format: String,
    version: u32,
    patients: usize,
    vocabulary: Vocabulary,
}

fn parse_err(path: &Path, record: usize, message: impl Into<String>) -> MesinError {
    MesinError::Parse {
        path: path.display().to_string(),
        record,
        message: message.into(),
    }
}

/// Write the record file alone (see the module docs for the layout).
pub fn write_records(path: &Path, patients: &[PatientRecord], vocab: &Vocabulary) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| MesinError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = CohortHeader {
        format: COHORT_FORMAT.into(),
        version: COHORT_VERSION,
        patients: patients.len(),
        vocabulary: *vocab,
    };
    let io = |e| MesinError::io(path, e);
    serde_json::to_writer(&mut w, &header).map_err(|e| MesinError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for p in patients {
        serde_json::to_writer(&mut w, p).map_err(|e| MesinError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a record file; every record is validated against the header vocabulary.
/// This is also the entry point for externally prepared cohorts.
pub fn read_records(path: &Path) -> Result<(Vec<PatientRecord>, Vocabulary)> {
    let file = fs::File::open(path).map_err(|e| MesinError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "missing header"))?
        .map_err(|e| MesinError::io(path, e))?;
    let header: CohortHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(path, 0, format!("bad header: {e}")))?;
    if header.format != COHORT_FORMAT {
        return Err(parse_err(path, 0, format!("unknown format tag {:?}", header.format)));
    }
    if header.version != COHORT_VERSION {
        return Err(MesinError::Version {
            kind: "cohort",
            found: header.version,
            expected: COHORT_VERSION,
        });
    }
    let mut patients = Vec::with_capacity(header.patients);
    for (i, line) in lines.enumerate() {
        let record = i + 1;
        let line = line.map_err(|e| MesinError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if patients.len() == header.patients {
            return Err(parse_err(path, record, "more records than the header declares"));
        }
        let p: PatientRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, record, e.to_string()))?;
        p.validate(&header.vocabulary)
            .map_err(|e| parse_err(path, record, e.to_string()))?;
        patients.push(p);
    }
    if patients.len() != header.patients {
        return Err(parse_err(
            path,
            patients.len() + 1,
            format!(
                "truncated: header declares {} patients, found {}",
                header.patients,
                patients.len()
            ),
        ));
    }
    Ok((patients, header.vocabulary))
}

pub fn save_cohort(dir: &Path, patients: &[PatientRecord], manifest: &CohortManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MesinError::io(dir, e))?;
    write_records(&dir.join(COHORT_FILE), patients, &manifest.vocabulary)?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| MesinError::io(&mpath, e.into()))?;
    fs::write(&mpath, text + "\n").map_err(|e| MesinError::io(&mpath, e))
}

pub fn load_cohort(dir: &Path) -> Result<(Vec<PatientRecord>, CohortManifest)> {
    let (patients, vocab) = read_records(&dir.join(COHORT_FILE))?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| MesinError::io(&mpath, e))?;
    let manifest: CohortManifest =
        serde_json::from_str(&text).map_err(|e| parse_err(&mpath, 0, e.to_string()))?;
    if manifest.format_version != COHORT_VERSION {
        return Err(MesinError::Version {
            kind: "manifest",
            found: manifest.format_version,
            expected: COHORT_VERSION,
        });
    }
    if manifest.vocabulary != vocab {
        return Err(parse_err(&mpath, 0, "manifest vocabulary disagrees with the cohort header"));
    }
    if manifest.splits.len() != patients.len()
        || patients.iter().any(|p| !manifest.splits.contains_key(&p.patient_id))
    {
        return Err(parse_err(&mpath, 0, "split assignment does not cover the cohort exactly"));
    }
    Ok((patients, manifest))
}

/// Ingest an externally prepared record file and assign fresh splits.
pub fn ingest_records(path: &Path, seed: u64) -> Result<(Vec<PatientRecord>, CohortManifest)> {
    let (patients, vocab) = read_records(path)?;
    let manifest = CohortManifest::new(vocab, None, seed, &patients, DEFAULT_SPLIT)?;
    Ok((patients, manifest))
}
