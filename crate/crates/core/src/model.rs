//! The three-level recommendation network: lab, diagnosis and medication
//! streams, their selective modules, global fusion and the output layer.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{
    gru_sequence, inlstm_step, lstm_step, GruParams, InLstmParams, InputEnhancement, LstmParams,
    RecurrentState,
};
use crate::config::{AttentionKind, CellKind, Fusion, ModelConfig, Selection};
use crate::ehr::{PatientRecord, Visit};
use crate::entmax::SimplexVector;
use crate::error::{MesinError, Result};
use crate::loss::{loss_bce, loss_joint_on_tape, loss_margin, multi_hot};
use crate::params::{Bound, ParamId, ParameterStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One of the visit-level embeddings entering the global fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionSource {
    #[serde(rename = "h_m")]
    MedHistory,
    #[serde(rename = "h_d")]
    Diag,
    #[serde(rename = "h_l")]
    Lab,
    #[serde(rename = "e_dc")]
    DiagEnhanced,
    #[serde(rename = "e_lc")]
    LabEnhanced,
}

impl FusionSource {
    pub const ALL: [FusionSource; 5] = [
        FusionSource::MedHistory,
        FusionSource::Diag,
        FusionSource::Lab,
        FusionSource::DiagEnhanced,
        FusionSource::LabEnhanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionSource::MedHistory => "h_m",
            FusionSource::Diag => "h_d",
            FusionSource::Lab => "h_l",
            FusionSource::DiagEnhanced => "e_dc",
            FusionSource::LabEnhanced => "e_lc",
        }
    }
}

/// Scoring vector and bias of a selective module. Also used for the
/// per-source scores of the global fusion and for the output layer.
#[derive(Clone, Copy, Debug)]
pub struct AffineParams<T> {
    pub w: T,
    pub b: T,
}

impl<T: Copy> AffineParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> AffineParams<U> {
        AffineParams {
            w: f(self.w),
            b: f(self.b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Attention {
    Entmax(f64),
    Softmax,
}

#[derive(Clone, Debug)]
pub enum SequenceCell<T> {
    Standard(LstmParams<T>),
    Interactive(InLstmParams<T>),
}

#[derive(Clone, Debug)]
struct LabLayout {
    grus: Vec<GruParams<ParamId>>,
    asm: Option<AffineParams<ParamId>>,
    lstm: LstmParams<ParamId>,
}

#[derive(Clone, Debug)]
struct CodeLayout {
    embedding: ParamId,
    asm: Option<AffineParams<ParamId>>,
    cell: SequenceCell<ParamId>,
}

#[derive(Clone, Debug)]
struct Layout {
    lab: Option<LabLayout>,
    diag: Option<CodeLayout>,
    med: Option<CodeLayout>,
    fuse_diag: Option<ParamId>,
    fuse_lab: Option<ParamId>,
    sources: Vec<FusionSource>,
    gsfm: Vec<AffineParams<ParamId>>,
    head: AffineParams<ParamId>,
}

/// Interpretability record of one selective module at one visit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// Indicator index (labs) or code id (diagnoses, medications), ascending.
    pub keys: Vec<usize>,
    /// Simplex weights aligned with `keys`; empty when `keys` is.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VisitEncodingBundle {
    pub h_med: Option<Var>,
    pub h_diag: Option<Var>,
    pub h_lab: Option<Var>,
    pub e_diag: Option<Var>,
    pub e_lab: Option<Var>,
    pub lab_attention: Option<AttentionRecord>,
    pub diag_attention: Option<AttentionRecord>,
    /// Attention over the previous visit's medications.
    pub med_attention: Option<AttentionRecord>,
    /// `None` under concatenation fusion.
    pub fusion_weights: Option<SimplexVector>,
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct VisitOutput {
    pub logits: Var,
    pub probabilities: Var,
    pub bundle: VisitEncodingBundle,
}

/// Plain-value result of an evaluation-mode pass over one visit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitPrediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub lab_attention: Option<AttentionRecord>,
    pub diag_attention: Option<AttentionRecord>,
    pub med_attention: Option<AttentionRecord>,
    pub fusion_sources: Vec<FusionSource>,
    pub fusion_weights: Option<Vec<f64>>,
}

/// Per-patient training objective and its components.
#[derive(Clone, Copy, Debug)]
pub struct PatientLoss {
    pub total: Var,
    /// Sum over visits of the cross-entropy.
    pub bce: f64,
    pub margin: f64,
    /// Number of (visit, label) pairs behind `bce`.
    pub label_slots: usize,
}

/// Weighted sum of a set of embeddings under sparse or dense attention.
pub fn asm_select(
    tape: &mut Tape,
    embeddings: &[Var],
    params: &AffineParams<Var>,
    attention: Attention,
) -> Result<(Var, SimplexVector)> {
    if embeddings.is_empty() {
        return Err(MesinError::contract("asm_select needs at least one embedding"));
    }
    let dim = tape.value(params.w).len();
    for &e in embeddings {
        let t = tape.value(e);
        if !t.is_vector() || t.len() != dim {
            return Err(MesinError::contract(format!(
                "asm_select: embedding of shape {:?} against scoring vector of length {dim}",
                t.shape()
            )));
        }
    }
    let n = embeddings.len();
    let stacked = tape.stack(embeddings)?;
    let raw = tape.matmul(stacked, params.w)?;
    let bias = tape.broadcast_scalar(params.b, n)?;
    let pre = tape.add(raw, bias)?;
    let scores = tape.tanh(pre)?;
    let weights = match attention {
        Attention::Entmax(gamma) => tape.entmax(scores, gamma)?,
        Attention::Softmax => tape.softmax(scores)?,
    };
    let cols = tape.transpose(stacked)?;
    let enhanced = tape.matmul(cols, weights)?;
    let simplex = SimplexVector::new(tape.value(weights).data().to_vec())?;
    Ok((enhanced, simplex))
}

/// Softmax-weighted fusion with one affine score per source.
pub fn gsfm_fuse(
    tape: &mut Tape,
    sources: &[Var],
    params: &[AffineParams<Var>],
) -> Result<(Var, SimplexVector)> {
    if sources.is_empty() || sources.len() != params.len() {
        return Err(MesinError::contract(format!(
            "gsfm: {} sources against {} score maps",
            sources.len(),
            params.len()
        )));
    }
    let dim = tape.value(sources[0]).len();
    let mut scores = Vec::with_capacity(sources.len());
    for (&x, p) in sources.iter().zip(params) {
        let (xt, wt) = (tape.value(x), tape.value(p.w));
        if !xt.is_vector() || xt.len() != dim || wt.len() != dim {
            return Err(MesinError::contract(format!(
                "gsfm: source of shape {:?} and score map of length {} against dimension {dim}",
                xt.shape(),
                wt.len()
            )));
        }
        let prod = tape.mul(p.w, x)?;
        let dot = tape.sum(prod)?;
        scores.push(tape.add(dot, p.b)?);
    }
    let scores = tape.concat(&scores)?;
    let weights = tape.softmax(scores)?;
    let stacked = tape.stack(sources)?;
    let cols = tape.transpose(stacked)?;
    let fused = tape.matmul(cols, weights)?;
    let simplex = SimplexVector::new(tape.value(weights).data().to_vec())?;
    Ok((fused, simplex))
}

/// Output-layer scores; probabilities are their elementwise sigmoid.
pub fn recommend(tape: &mut Tape, fused: Var, head: &AffineParams<Var>) -> Result<Var> {
    tape.linear(head.w, fused, head.b)
}

/// Labels whose probability reaches the threshold.
pub fn predicted_set(probabilities: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MesinError::contract(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(j, _)| j)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeTable {
    Diagnosis,
    Medication,
}

#[derive(Clone, Debug)]
pub struct Mesin {
    config: ModelConfig,
    layout: Layout,
    template: ParameterStore,
}

fn reg_lstm(store: &mut ParameterStore, prefix: &str, input: usize, hidden: usize) -> Result<LstmParams<ParamId>> {
    Ok(LstmParams {
        input_dim: input,
        hidden_dim: hidden,
        w: store.register(format!("{prefix}.w"), &[4 * hidden, input + hidden])?,
        b: store.register(format!("{prefix}.b"), &[4 * hidden])?,
    })
}

fn reg_cell(
    store: &mut ParameterStore,
    prefix: &str,
    kind: CellKind,
    input: usize,
    aux: usize,
    hidden: usize,
) -> Result<SequenceCell<ParamId>> {
    let gates = reg_lstm(store, prefix, input, hidden)?;
    if kind == CellKind::Standard {
        return Ok(SequenceCell::Standard(gates));
    }
    let w_enh = store.register(format!("{prefix}.w_enh"), &[hidden, hidden])?;
    let b_enh = store.register(format!("{prefix}.b_enh"), &[hidden])?;
    let w_dr = store.register(format!("{prefix}.w_dr"), &[hidden, aux])?;
    let u_dr = store.register(format!("{prefix}.u_dr"), &[hidden, hidden])?;
    let input_enhancement = if kind == CellKind::Interactive {
        Some(InputEnhancement {
            w: store.register(format!("{prefix}.w_ie"), &[hidden, aux])?,
            b: store.register(format!("{prefix}.b_ie"), &[hidden])?,
        })
    } else {
        None
    };
    Ok(SequenceCell::Interactive(InLstmParams {
        aux_dim: aux,
        gates,
        w_enh,
        b_enh,
        w_dr,
        u_dr,
        input_enhancement,
    }))
}

fn reg_asm(store: &mut ParameterStore, prefix: &str, selection: Selection, dim: usize) -> Result<Option<AffineParams<ParamId>>> {
    Ok(match selection {
        Selection::Sum | Selection::Mean => None,
        Selection::Attention => Some(AffineParams {
            w: store.register(format!("{prefix}.asm.w"), &[dim])?,
            b: store.register(format!("{prefix}.asm.b"), &[1])?,
        }),
    })
}

impl Mesin {
    /// Build the network and a zero-filled parameter store with its layout.
    pub fn new(config: ModelConfig) -> Result<(Mesin, ParameterStore)> {
        config.validate()?;
        let hp = &config.hyper;
        let v = &config.variant;
        let (d, h) = (hp.embed_dim, hp.hidden_dim);
        let mut store = ParameterStore::new();

        let lab = if v.sources.lab {
            let mut grus = Vec::with_capacity(config.vocab.indicators);
            for q in 0..config.vocab.indicators {
                grus.push(GruParams {
                    input_dim: 1,
                    hidden_dim: d,
                    w: store.register(format!("lab.gru{q}.w"), &[3 * d, 1])?,
                    u: store.register(format!("lab.gru{q}.u"), &[3 * d, d])?,
                    b: store.register(format!("lab.gru{q}.b"), &[3 * d])?,
                });
            }
            let asm = reg_asm(&mut store, "lab", v.lab_selection, d)?;
            let lstm = reg_lstm(&mut store, "lab.lstm", d, h)?;
            Some(LabLayout { grus, asm, lstm })
        } else {
            None
        };

        let diag = if v.sources.diag {
            let embedding = store.register("diag.embedding", &[d, config.vocab.diagnoses])?;
            let asm = reg_asm(&mut store, "diag", v.diag_selection, d)?;
            let cell = reg_cell(&mut store, "diag.cell", v.effective_diag_cell(), d, h, h)?;
            Some(CodeLayout { embedding, asm, cell })
        } else {
            None
        };

        let (mut fuse_diag, mut fuse_lab) = (None, None);
        let med = if v.sources.med {
            let embedding = store.register("med.embedding", &[d, config.vocab.medications])?;
            let asm = reg_asm(&mut store, "med", v.med_selection, d)?;
            let kind = v.effective_med_cell();
            let cell = reg_cell(&mut store, "med.cell", kind, d, h, h)?;
            if kind != CellKind::Standard {
                if v.sources.diag {
                    fuse_diag = Some(store.register("med.fuse.w_diag", &[h, h])?);
                }
                if v.sources.lab {
                    fuse_lab = Some(store.register("med.fuse.w_lab", &[h, h])?);
                }
            }
            Some(CodeLayout { embedding, asm, cell })
        } else {
            None
        };

        let sources: Vec<FusionSource> = FusionSource::ALL
            .into_iter()
            .filter(|s| match s {
                FusionSource::MedHistory => v.sources.med,
                FusionSource::Diag | FusionSource::DiagEnhanced => v.sources.diag,
                FusionSource::Lab | FusionSource::LabEnhanced => v.sources.lab,
            })
            .collect();
        let source_dim = |s: &FusionSource| match s {
            FusionSource::DiagEnhanced | FusionSource::LabEnhanced => d,
            _ => h,
        };

        let (gsfm, fused_dim) = match v.fusion {
            Fusion::Selective => {
                let mut g = Vec::with_capacity(sources.len());
                for s in &sources {
                    g.push(AffineParams {
                        w: store.register(format!("gsfm.{}.w", s.name()), &[source_dim(s)])?,
                        b: store.register(format!("gsfm.{}.b", s.name()), &[1])?,
                    });
                }
                (g, h)
            }
            Fusion::Concat => (Vec::new(), sources.iter().map(source_dim).sum()),
        };
        let m = config.vocab.medications;
        let head = AffineParams {
            w: store.register("head.w", &[m, fused_dim])?,
            b: store.register("head.b", &[m])?,
        };

        let layout = Layout {
            lab,
            diag,
            med,
            fuse_diag,
            fuse_lab,
            sources,
            gsfm,
            head,
        };
        Ok((
            Mesin {
                config,
                layout,
                template: store.clone(),
            },
            store,
        ))
    }

    /// Build the network with weights drawn from the configured scheme.
    pub fn initialised(config: ModelConfig, seed: u64) -> Result<(Mesin, ParameterStore)> {
        let (model, mut store) = Mesin::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        store.initialise(model.config.hyper.init, &mut rng);
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion_sources(&self) -> &[FusionSource] {
        &self.layout.sources
    }

    /// Names and shapes must match the layout this model registers.
    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        self.template.check_layout(store)
    }

    pub fn embed_code_set(&self, tape: &mut Tape, bound: &Bound, codes: &[usize], which: CodeTable) -> Result<Vec<Var>> {
        let (layout, size, label) = match which {
            CodeTable::Diagnosis => (&self.layout.diag, self.config.vocab.diagnoses, "diagnosis"),
            CodeTable::Medication => (&self.layout.med, self.config.vocab.medications, "medication"),
        };
        let layout = layout
            .as_ref()
            .ok_or_else(|| MesinError::contract(format!("{label} stream is disabled in this variant")))?;
        let mut sorted = codes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&bad) = sorted.iter().find(|&&c| c >= size) {
            return Err(MesinError::Data(format!(
                "{label} code {bad} is outside the vocabulary of {size}"
            )));
        }
        let table = bound.var(layout.embedding);
        let d = self.config.hyper.embed_dim;
        sorted
            .iter()
            .map(|&c| tape.gather(table, (0..d).map(|r| r * size + c).collect()))
            .collect()
    }

    fn attention(&self, gamma: f64) -> Attention {
        match self.config.variant.attention {
            AttentionKind::Entmax => Attention::Entmax(gamma),
            AttentionKind::Softmax => Attention::Softmax,
        }
    }

    /// Sum, mean or attention pooling; an empty set pools to the zero vector.
    fn pool(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        embeddings: &[Var],
        keys: Vec<usize>,
        asm: Option<AffineParams<ParamId>>,
        selection: Selection,
        gamma: f64,
    ) -> Result<(Var, Option<AttentionRecord>)> {
        let d = self.config.hyper.embed_dim;
        if embeddings.is_empty() {
            let zero = tape.constant(Tensor::zeros(&[d]));
            let record = asm.map(|_| AttentionRecord {
                keys: Vec::new(),
                weights: Vec::new(),
            });
            return Ok((zero, record));
        }
        match asm {
            None => {
                let mut acc = embeddings[0];
                for &e in &embeddings[1..] {
                    acc = tape.add(acc, e)?;
                }
                if selection == Selection::Mean {
                    acc = tape.scale(acc, 1.0 / embeddings.len() as f64)?;
                }
                Ok((acc, None))
            }
            Some(p) => {
                let p = p.map(|id| bound.var(id));
                let (enhanced, weights) = asm_select(tape, embeddings, &p, self.attention(gamma))?;
                Ok((
                    enhanced,
                    Some(AttentionRecord {
                        keys,
                        weights: weights.into_inner(),
                    }),
                ))
            }
        }
    }

    /// Run each observed indicator series through its GRU and pool the results.
    pub fn encode_lab_visit(&self, tape: &mut Tape, bound: &Bound, visit: &Visit) -> Result<(Var, Option<AttentionRecord>)> {
        let lab = self
            .layout
            .lab
            .as_ref()
            .ok_or_else(|| MesinError::contract("lab stream is disabled in this variant"))?;
        if visit.labs.len() != lab.grus.len() {
            return Err(MesinError::Data(format!(
                "visit has {} lab channels, vocabulary has {}",
                visit.labs.len(),
                lab.grus.len()
            )));
        }
        let mut finals = Vec::new();
        let mut keys = Vec::new();
        for (q, (channel, gru)) in visit.labs.iter().zip(&lab.grus).enumerate() {
            if channel.num_observed() == 0 {
                continue;
            }
            let p = gru.map(|id| bound.var(id));
            let series: Vec<f64> = channel.observations().collect();
            let xs = tape.constant(Tensor::from_parts(vec![series.len(), 1], series));
            finals.push(gru_sequence(tape, xs, &p)?);
            keys.push(q);
        }
        if finals.is_empty() {
            return Err(MesinError::Data("visit has no observed lab indicator".into()));
        }
        let v = &self.config.variant;
        self.pool(tape, bound, &finals, keys, lab.asm, v.lab_selection, self.config.hyper.gamma_lab)
    }

    fn step_cell(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        cell: &SequenceCell<ParamId>,
        state: &RecurrentState,
        x: Var,
        aux: Option<Var>,
    ) -> Result<RecurrentState> {
        match cell {
            SequenceCell::Standard(p) => lstm_step(tape, state, x, &p.map(|id| bound.var(id))),
            SequenceCell::Interactive(p) => {
                let aux = aux.ok_or_else(|| MesinError::contract("interactive cell needs an auxiliary input"))?;
                inlstm_step(tape, state, x, aux, &p.map(|id| bound.var(id)))
            }
        }
    }

    /// Encode every visit and score the medication vocabulary at each one.
    ///
    /// Visit `t` sees labs and diagnoses up to `t` and medications up to
    /// `t - 1`. Passing a random source turns dropout on.
    pub fn forward_patient(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        record: &PatientRecord,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Vec<VisitOutput>> {
        if record.visits.is_empty() {
            return Err(MesinError::contract(format!("patient {} has no visits", record.patient_id)));
        }
        let hp = &self.config.hyper;
        let h = hp.hidden_dim;
        let variant = &self.config.variant;
        let layout = &self.layout;

        let mut lab_state = layout.lab.as_ref().map(|_| RecurrentState::zeros_lstm(tape, h));
        let mut diag_state = layout.diag.as_ref().map(|_| RecurrentState::zeros_lstm(tape, h));
        let mut med_state = layout.med.as_ref().map(|_| RecurrentState::zeros_lstm(tape, h));
        let mut prev_lab: Option<Var> = None;
        let mut prev_diag: Option<Var> = None;
        let mut outputs = Vec::with_capacity(record.visits.len());

        for (t, visit) in record.visits.iter().enumerate() {
            let (mut e_lab, mut h_lab, mut lab_attention) = (None, None, None);
            if let (Some(lab), Some(state)) = (&layout.lab, lab_state.as_mut()) {
                let (e, att) = self.encode_lab_visit(tape, bound, visit)?;
                *state = lstm_step(tape, state, e, &lab.lstm.map(|id| bound.var(id)))?;
                e_lab = Some(e);
                h_lab = Some(state.hidden);
                lab_attention = att;
            }

            let (mut e_diag, mut h_diag, mut diag_attention) = (None, None, None);
            if let (Some(diag), Some(state)) = (&layout.diag, diag_state.as_mut()) {
                let embs = self.embed_code_set(tape, bound, &visit.diagnoses, CodeTable::Diagnosis)?;
                let (e, att) = self.pool(tape, bound, &embs, visit.diagnoses.clone(), diag.asm, variant.diag_selection, hp.gamma_diag)?;
                *state = self.step_cell(tape, bound, &diag.cell, state, e, h_lab)?;
                e_diag = Some(e);
                h_diag = Some(state.hidden);
                diag_attention = att;
            }

            let (mut h_med, mut med_attention) = (None, None);
            if let (Some(med), Some(state)) = (&layout.med, med_state.as_mut()) {
                if t > 0 {
                    let given = &record.visits[t - 1].medications;
                    let embs = self.embed_code_set(tape, bound, given, CodeTable::Medication)?;
                    let (e, att) = self.pool(tape, bound, &embs, given.clone(), med.asm, variant.med_selection, hp.gamma_med)?;
                    let aux = match med.cell {
                        SequenceCell::Standard(_) => None,
                        SequenceCell::Interactive(_) => Some(self.history_context(tape, bound, prev_diag, prev_lab)?),
                    };
                    *state = self.step_cell(tape, bound, &med.cell, state, e, aux)?;
                    med_attention = att;
                }
                h_med = Some(state.hidden);
            }

            let sources: Vec<Var> = layout
                .sources
                .iter()
                .map(|s| match s {
                    FusionSource::MedHistory => h_med,
                    FusionSource::Diag => h_diag,
                    FusionSource::Lab => h_lab,
                    FusionSource::DiagEnhanced => e_diag,
                    FusionSource::LabEnhanced => e_lab,
                })
                .collect::<Option<Vec<Var>>>()
                .ok_or_else(|| MesinError::contract("fusion source missing"))?;
            let (mut fused, fusion_weights) = match self.config.variant.fusion {
                Fusion::Selective => {
                    let params: Vec<AffineParams<Var>> =
                        layout.gsfm.iter().map(|p| p.map(|id| bound.var(id))).collect();
                    let (o, w) = gsfm_fuse(tape, &sources, &params)?;
                    (o, Some(w))
                }
                Fusion::Concat => (tape.concat(&sources)?, None),
            };
            if let Some(rng) = dropout.as_deref_mut() {
                if hp.dropout > 0.0 {
                    let keep = 1.0 - hp.dropout;
                    let n = tape.value(fused).len();
                    let mask = (0..n)
                        .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                        .collect();
                    fused = tape.dropout(fused, mask)?;
                }
            }
            let logits = recommend(tape, fused, &layout.head.map(|id| bound.var(id)))?;
            let probabilities = tape.sigmoid(logits)?;
            outputs.push(VisitOutput {
                logits,
                probabilities,
                bundle: VisitEncodingBundle {
                    h_med,
                    h_diag,
                    h_lab,
                    e_diag,
                    e_lab,
                    lab_attention,
                    diag_attention,
                    med_attention,
                    fusion_weights,
                    fused,
                },
            });
            prev_lab = h_lab;
            prev_diag = h_diag;
        }
        Ok(outputs)
    }

    /// `tanh(W_d h_d + W_l h_l)` from the previous visit's hidden states.
    fn history_context(&self, tape: &mut Tape, bound: &Bound, h_diag: Option<Var>, h_lab: Option<Var>) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (w, x) in [(self.layout.fuse_diag, h_diag), (self.layout.fuse_lab, h_lab)] {
            if let (Some(w), Some(x)) = (w, x) {
                let term = tape.matmul(bound.var(w), x)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
        }
        let pre = acc.ok_or_else(|| MesinError::contract("history context needs a diagnosis or lab stream"))?;
        tape.tanh(pre)
    }

    /// Joint objective summed over visits.
    pub fn patient_loss(&self, tape: &mut Tape, outputs: &[VisitOutput], record: &PatientRecord) -> Result<PatientLoss> {
        let hp = &self.config.hyper;
        let m = self.config.vocab.medications;
        let mut total: Option<Var> = None;
        let (mut bce_sum, mut margin_sum) = (0.0, 0.0);
        for (out, visit) in outputs.iter().zip(&record.visits) {
            let target = multi_hot(&visit.medications, m);
            let bce = loss_bce(tape, out.probabilities, &target)?;
            let margin = loss_margin(tape, out.logits, &visit.medications, hp.margin_pairs)?;
            bce_sum += tape.value(bce).data()[0];
            margin_sum += tape.value(margin).data()[0];
            let joint = loss_joint_on_tape(tape, bce, margin, hp)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, joint)?,
                None => joint,
            });
        }
        Ok(PatientLoss {
            total: total.ok_or_else(|| MesinError::contract("no visits to score"))?,
            bce: bce_sum,
            margin: margin_sum,
            label_slots: outputs.len() * m,
        })
    }

    /// Evaluation-mode pass with plain-value outputs.
    pub fn predict(&self, store: &ParameterStore, record: &PatientRecord) -> Result<Vec<VisitPrediction>> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let outputs = self.forward_patient(&mut tape, &bound, record, None)?;
        Ok(outputs
            .into_iter()
            .map(|o| VisitPrediction {
                logits: tape.value(o.logits).data().to_vec(),
                probabilities: tape.value(o.probabilities).data().to_vec(),
                lab_attention: o.bundle.lab_attention,
                diag_attention: o.bundle.diag_attention,
                med_attention: o.bundle.med_attention,
                fusion_sources: self.layout.sources.clone(),
                fusion_weights: o.bundle.fusion_weights.map(SimplexVector::into_inner),
            })
            .collect())
    }
}
