//! Adam, checkpoints and the seeded mini-batch training loop.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{HyperParams, ModelConfig};
use crate::ehr::PatientRecord;
use crate::error::{MesinError, Result};
use crate::metrics::evaluate;
use crate::model::Mesin;
use crate::params::ParameterStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "mesin-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;
const DROPOUT_SALT: u64 = 0x4452_4f50_4f55_5431;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(hyper: &HyperParams, store: &ParameterStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            lr: hyper.learning_rate,
            beta1: hyper.adam_beta1,
            beta2: hyper.adam_beta2,
            eps: hyper.adam_eps,
            state: AdamState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    pub fn with_state(hyper: &HyperParams, store: &ParameterStore, state: AdamState) -> Result<Self> {
        let mut adam = Adam::new(hyper, store);
        let fits = |ts: &[Tensor]| {
            ts.len() == store.len() && ts.iter().zip(store.iter()).all(|(a, (_, b))| a.shape() == b.shape())
        };
        if !fits(&state.m) || !fits(&state.v) {
            return Err(MesinError::shape("adam state", "moment shapes do not match the parameters"));
        }
        adam.state = state;
        Ok(adam)
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// One bias-corrected update. A zero step leaves the weight untouched.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Tensor]) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((id, g), (m, v)) in store
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(grads)
            .zip(self.state.m.iter_mut().zip(self.state.v.iter_mut()))
        {
            let p = store.get_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                if update != 0.0 {
                    *p -= update;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub jaccard: f64,
    pub pr_auc: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over patients of the joint objective summed over visits (dropout on).
    pub loss: f64,
    /// Training cross-entropy per (visit, label) slot.
    pub bce_per_label: f64,
    pub margin: f64,
    pub validation: Option<ValidationSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub tensors: Vec<NamedTensor>,
    pub adam: Option<AdamState>,
    pub trace: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(model: &Mesin, store: &ParameterStore, seed: u64, epoch: usize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            seed,
            epoch,
            tensors: store
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    tensor: t.clone(),
                })
                .collect(),
            adam: None,
            trace: Vec::new(),
        }
    }

    pub fn store(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for nt in &self.tensors {
            store.insert(nt.name.clone(), nt.tensor.clone())?;
        }
        Ok(store)
    }

    /// Rebuild the model and its weights, checking the layout.
    pub fn restore(&self) -> Result<(Mesin, ParameterStore)> {
        let (model, _) = Mesin::new(self.config.clone())?;
        let store = self.store()?;
        model.check_store(&store)?;
        Ok((model, store))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| MesinError::contract(format!("checkpoint serialisation: {e}")))
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let parse = |message: String| MesinError::Parse {
            path: origin.to_string(),
            record: 0,
            message,
        };
        let header: Header = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(parse(format!("not a checkpoint (format {:?})", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(MesinError::Version {
                kind: "checkpoint",
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| MesinError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MesinError::io(path, e))?;
        Checkpoint::from_json(&text, &path.display().to_string())
    }
}

/// Loss and gradient of one patient.
struct PatientStep {
    grads: Vec<Tensor>,
    loss: f64,
    bce: f64,
    margin: f64,
    slots: usize,
}

fn patient_step(model: &Mesin, store: &ParameterStore, record: &PatientRecord, dropout: Option<ChaCha8Rng>) -> Result<PatientStep> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let mut rng = dropout;
    let outputs = model.forward_patient(
        &mut tape,
        &bound,
        record,
        rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
    )?;
    let loss = model.patient_loss(&mut tape, &outputs, record)?;
    let grads = tape.backward(loss.total)?;
    Ok(PatientStep {
        grads: bound.vars().iter().map(|&v| grads.wrt(v)).collect(),
        loss: tape.value(loss.total).data()[0],
        bce: loss.bce,
        margin: loss.margin,
        slots: loss.label_slots,
    })
}

/// Gradient of the batch objective (mean over patients) without updating anything.
pub fn batch_gradient(model: &Mesin, store: &ParameterStore, batch: &[&PatientRecord]) -> Result<(f64, Vec<Tensor>)> {
    let steps: Vec<PatientStep> = batch
        .iter()
        .map(|p| patient_step(model, store, p, None))
        .collect::<Result<_>>()?;
    let n = steps.len() as f64;
    let mut total: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut loss = 0.0;
    for s in &steps {
        loss += s.loss;
        for (acc, g) in total.iter_mut().zip(&s.grads) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b / n;
            }
        }
    }
    Ok((loss / n, total))
}

pub struct Trainer<'m> {
    model: &'m Mesin,
    store: ParameterStore,
    adam: Adam,
    seed: u64,
    epoch: usize,
    trace: Vec<EpochRecord>,
    best: Option<(f64, Checkpoint)>,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Mesin, store: ParameterStore, seed: u64) -> Result<Self> {
        model.check_store(&store)?;
        let adam = Adam::new(&model.config().hyper, &store);
        Ok(Trainer {
            model,
            store,
            adam,
            seed,
            epoch: 0,
            trace: Vec::new(),
            best: None,
        })
    }

    /// Continue from a checkpoint; the shuffle and dropout streams pick up at its epoch.
    /// Only the epoch budget may differ from the checkpoint's configuration. The
    /// checkpoint carries one set of weights, so the best state is chosen among
    /// the resumed state and the epochs that follow.
    pub fn resume(model: &'m Mesin, checkpoint: &Checkpoint) -> Result<Self> {
        let mut expected = checkpoint.config.clone();
        expected.hyper.epochs = model.config().hyper.epochs;
        if expected != *model.config() {
            return Err(MesinError::Config("checkpoint was written for a different model configuration".into()));
        }
        let store = checkpoint.store()?;
        let mut trainer = Trainer::new(model, store, checkpoint.seed)?;
        if let Some(state) = &checkpoint.adam {
            trainer.adam = Adam::with_state(&model.config().hyper, &trainer.store, state.clone())?;
        }
        trainer.epoch = checkpoint.epoch;
        trainer.trace = checkpoint.trace.clone();
        if let Some(v) = checkpoint.trace.last().and_then(|r| r.validation.as_ref()) {
            trainer.best = Some((v.jaccard, checkpoint.clone()));
        }
        Ok(trainer)
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trace(&self) -> &[EpochRecord] {
        &self.trace
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.model, &self.store, self.seed, self.epoch);
        c.adam = Some(self.adam.state().clone());
        c.trace = self.trace.clone();
        c
    }

    /// Checkpoint of the epoch with the highest validation Jaccard so far.
    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref().map(|(_, c)| c)
    }

    pub fn run_epoch(&mut self, train: &[PatientRecord], validation: &[PatientRecord]) -> Result<&EpochRecord> {
        if train.is_empty() {
            return Err(MesinError::contract("training cohort is empty"));
        }
        let last_good = self.checkpoint();
        let epoch = self.epoch + 1;
        match self.epoch_inner(epoch, train, validation) {
            Ok(record) => {
                self.epoch = epoch;
                if let Some(v) = &record.validation {
                    let better = self.best.as_ref().is_none_or(|(j, _)| v.jaccard > *j);
                    let jaccard = v.jaccard;
                    self.trace.push(record);
                    if better {
                        self.best = Some((jaccard, self.checkpoint()));
                    }
                } else {
                    self.trace.push(record);
                }
                Ok(self.trace.last().expect("just pushed"))
            }
            Err(MesinError::NumericFailure { .. }) => {
                self.store = last_good.store()?;
                Err(MesinError::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                })
            }
            Err(e) => Err(e),
        }
    }

    fn epoch_inner(&mut self, epoch: usize, train: &[PatientRecord], validation: &[PatientRecord]) -> Result<EpochRecord> {
        let hyper = &self.model.config().hyper;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(self.seed ^ SHUFFLE_SALT);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);

        let mut per_patient = vec![(0.0, 0.0, 0.0, 0usize); train.len()];
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let store = &self.store;
            let model = self.model;
            let seed = self.seed;
            let steps: Vec<Result<PatientStep>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let rng = (hyper.dropout > 0.0).then(|| {
                        let mut r = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_SALT);
                        r.set_stream(((epoch as u64) << 32) | (b * hyper.batch_size + k) as u64);
                        r
                    });
                    patient_step(model, store, &train[i], rng)
                })
                .collect();
            let n = batch.len() as f64;
            let mut grads: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            for (step, &i) in steps.into_iter().zip(batch) {
                let s = step?;
                if !s.loss.is_finite() {
                    return Err(MesinError::NumericFailure { op: "loss".into() });
                }
                per_patient[i] = (s.loss, s.bce, s.margin, s.slots);
                for (acc, g) in grads.iter_mut().zip(&s.grads) {
                    for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += x / n;
                    }
                }
            }
            self.adam.step(&mut self.store, &grads);
            if self.store.iter().any(|(_, t)| !t.is_finite()) {
                return Err(MesinError::NumericFailure { op: "adam update".into() });
            }
        }

        let (mut loss, mut bce, mut margin, mut slots) = (0.0, 0.0, 0.0, 0usize);
        for &(l, b, m, s) in &per_patient {
            loss += l;
            bce += b;
            margin += m;
            slots += s;
        }
        let n = train.len() as f64;
        let validation = if validation.is_empty() {
            None
        } else {
            let r = evaluate(self.model, &self.store, validation)?;
            Some(ValidationSummary {
                jaccard: r.jaccard,
                pr_auc: r.pr_auc,
                recall: r.recall,
                f1: r.f1,
                loss: r.loss,
            })
        };
        Ok(EpochRecord {
            epoch,
            loss: loss / n,
            bce_per_label: bce / slots as f64,
            margin: margin / n,
            validation,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State after the final epoch, including the optimiser.
    pub last: Checkpoint,
    /// Highest validation Jaccard; the final state when there is no validation split.
    pub best: Checkpoint,
    pub trace: Vec<EpochRecord>,
}

/// Run `hyper.epochs` epochs from the given weights.
pub fn train(
    model: &Mesin,
    store: ParameterStore,
    train_set: &[PatientRecord],
    validation: &[PatientRecord],
    seed: u64,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, store, seed)?;
    for _ in 0..model.config().hyper.epochs {
        trainer.run_epoch(train_set, validation)?;
    }
    finish(trainer)
}

/// Continue a checkpoint until `hyper.epochs` epochs are complete.
pub fn resume(model: &Mesin, checkpoint: &Checkpoint, train_set: &[PatientRecord], validation: &[PatientRecord]) -> Result<TrainOutcome> {
    let mut trainer = Trainer::resume(model, checkpoint)?;
    while trainer.epoch() < model.config().hyper.epochs {
        trainer.run_epoch(train_set, validation)?;
    }
    finish(trainer)
}

fn finish(trainer: Trainer<'_>) -> Result<TrainOutcome> {
    let last = trainer.checkpoint();
    let best = trainer.best().cloned().unwrap_or_else(|| last.clone());
    Ok(TrainOutcome {
        trace: last.trace.clone(),
        last,
        best,
    })
}
