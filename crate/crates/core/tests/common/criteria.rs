//! One checker per acceptance criterion. Each returns a short detail line on
//! success and the reason on failure; `tests/acceptance.rs` prints them and
//! the focused integration tests assert on them.

use std::fs;
use std::path::Path;

use mesin::cells::{
    gru_sequence, gru_step, inlstm_step, lstm_step, GruParams, InLstmParams, InputEnhancement, LstmParams,
    RecurrentState,
};
use mesin::config::{HyperParams, ModelConfig, Variant, VARIANT_NAMES};
use mesin::ehr::{LabChannel, PatientRecord, Visit};
use mesin::entmax::{alpha_entmax, entmax_bisect, softmax};
use mesin::gradcheck::grad_check_many;
use mesin::harness::{
    ablate_in, evaluate_in, generate_in, report_in, train_in, AblationSettings, RunConfig, LAST_CHECKPOINT,
};
use mesin::metrics::{pr_auc, set_metrics, PredictionInstance};
use mesin::model::Mesin;
use mesin::params::InitScheme;
use mesin::synth::{generate_cohort, GeneratorSpec};
use mesin::tape::{Tape, Var};
use mesin::tensor::Tensor;
use mesin::train::train;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;
use super::{loss_gradient_errors, tiny_config, two_visit_patient};

pub type Outcome = Result<String, String>;

pub fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

type Scalar = Box<dyn Fn(&mut Tape, &[Var]) -> mesin::error::Result<Var>>;

/// `sum(r * out)` for a fixed random `r`, so every output coordinate matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> mesin::error::Result<Var> {
    let n = tape.value(out).len();
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(Tensor::new(shape, random_vec(&mut rng, n, 1.0)).unwrap());
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

/// Every primitive, composed with a random projection, at random points.
pub fn primitive_cases() -> Vec<(&'static str, Scalar, Vec<Tensor>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let v = |rng: &mut ChaCha8Rng, n| random(rng, &[n]);
    let positive = Tensor::vector(vec![0.3, 1.7, 0.9, 2.4]).unwrap();
    let away_from_zero = Tensor::vector(vec![0.8, -0.6, 1.3, -0.9, 0.4]).unwrap();
    let inside_and_outside = Tensor::vector(vec![-1.4, -0.3, 0.2, 0.7, 1.6]).unwrap();
    let mut cases: Vec<(&'static str, Scalar, Vec<Tensor>)> = vec![
        ("matmul_mv", Box::new(|t, x| { let y = t.matmul(x[0], x[1])?; project(t, y, 1) }), vec![random(&mut rng, &[3, 4]), v(&mut rng, 4)]),
        ("matmul_mm", Box::new(|t, x| { let y = t.matmul(x[0], x[1])?; project(t, y, 2) }), vec![random(&mut rng, &[2, 3]), random(&mut rng, &[3, 4])]),
        ("add", Box::new(|t, x| { let y = t.add(x[0], x[1])?; project(t, y, 3) }), vec![v(&mut rng, 4), v(&mut rng, 4)]),
        ("sub", Box::new(|t, x| { let y = t.sub(x[0], x[1])?; project(t, y, 4) }), vec![v(&mut rng, 4), v(&mut rng, 4)]),
        ("hadamard", Box::new(|t, x| { let y = t.mul(x[0], x[1])?; project(t, y, 5) }), vec![v(&mut rng, 4), v(&mut rng, 4)]),
        ("concat", Box::new(|t, x| { let y = t.concat(&[x[0], x[1]])?; project(t, y, 6) }), vec![v(&mut rng, 2), v(&mut rng, 3)]),
        ("gather", Box::new(|t, x| { let y = t.gather(x[0], vec![3, 0, 3, 1])?; project(t, y, 7) }), vec![v(&mut rng, 5)]),
        ("slice", Box::new(|t, x| { let y = t.slice(x[0], 1, 3)?; project(t, y, 8) }), vec![v(&mut rng, 5)]),
        ("broadcast", Box::new(|t, x| { let y = t.broadcast_scalar(x[0], 4)?; project(t, y, 9) }), vec![v(&mut rng, 1)]),
        ("sum", Box::new(|t, x| { let y = t.sum(x[0])?; let y = t.mul(y, y)?; t.sum(y) }), vec![v(&mut rng, 5)]),
        ("tanh", Box::new(|t, x| { let y = t.tanh(x[0])?; project(t, y, 10) }), vec![random(&mut rng, &[2, 3])]),
        ("sigmoid", Box::new(|t, x| { let y = t.sigmoid(x[0])?; project(t, y, 11) }), vec![v(&mut rng, 5)]),
        ("relu", Box::new(|t, x| { let y = t.relu(x[0])?; project(t, y, 12) }), vec![away_from_zero]),
        ("log", Box::new(|t, x| { let y = t.log(x[0])?; project(t, y, 13) }), vec![positive]),
        ("affine", Box::new(|t, x| { let y = t.affine(x[0], -1.5, 0.3)?; project(t, y, 14) }), vec![v(&mut rng, 4)]),
        ("clamp", Box::new(|t, x| { let y = t.clamp(x[0], -1.0, 1.0)?; project(t, y, 15) }), vec![inside_and_outside]),
        ("add_row", Box::new(|t, x| { let y = t.add_row(x[0], x[1])?; project(t, y, 16) }), vec![random(&mut rng, &[3, 2]), v(&mut rng, 2)]),
        ("transpose", Box::new(|t, x| { let y = t.transpose(x[0])?; project(t, y, 17) }), vec![random(&mut rng, &[2, 3])]),
        ("stack", Box::new(|t, x| { let y = t.stack(&[x[0], x[1], x[2]])?; project(t, y, 18) }), vec![v(&mut rng, 3), v(&mut rng, 3), v(&mut rng, 3)]),
        ("dropout", Box::new(|t, x| { let y = t.dropout(x[0], vec![2.0, 0.0, 2.0, 2.0])?; project(t, y, 19) }), vec![v(&mut rng, 4)]),
        ("softmax", Box::new(|t, x| { let y = t.softmax(x[0])?; project(t, y, 20) }), vec![v(&mut rng, 5)]),
        ("linear", Box::new(|t, x| { let y = t.linear(x[0], x[1], x[2])?; project(t, y, 21) }), vec![random(&mut rng, &[3, 4]), v(&mut rng, 4), v(&mut rng, 3)]),
    ];
    for (name, gamma) in [("entmax_1.3", 1.3), ("entmax_1.5", 1.5), ("entmax_2.0", 2.0)] {
        let scores = Tensor::vector(vec![0.9, 0.1, -0.4, 0.5, -2.0]).unwrap();
        cases.push((name, Box::new(move |t, x| { let y = t.entmax(x[0], gamma)?; project(t, y, 22) }), vec![scores]));
    }
    cases.push((
        "gru_sequence",
        Box::new(|t, x| {
            let p = GruParams { input_dim: 2, hidden_dim: 3, w: x[0], u: x[1], b: x[2] };
            let y = gru_sequence(t, x[3], &p)?;
            project(t, y, 23)
        }),
        vec![random(&mut rng, &[9, 2]), random(&mut rng, &[9, 3]), v(&mut rng, 9), random(&mut rng, &[4, 2])],
    ));
    cases
}

fn max_error(f: Scalar, points: &[Tensor]) -> Result<f64, String> {
    grad_check_many(f, points, STEP, TOL)
        .map(|r| r.max_error)
        .map_err(|e| e.to_string())
}

/// GRU, LSTM and InLSTM (full and decomposed) unrolled `steps` steps.
pub fn cell_cases(steps: usize) -> Vec<(&'static str, Scalar, Vec<Tensor>)> {
    let (i, h, a) = (2, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(202 + steps as u64);
    let xs = random(&mut rng, &[steps, i]);
    let aux = random(&mut rng, &[steps, a]);
    let row = |m: &Tensor, t: usize| Tensor::vector(m.data()[t * m.shape()[1]..(t + 1) * m.shape()[1]].to_vec()).unwrap();
    let xs_rows: Vec<Tensor> = (0..steps).map(|t| row(&xs, t)).collect();
    let aux_rows: Vec<Tensor> = (0..steps).map(|t| row(&aux, t)).collect();

    let gru_x = xs_rows.clone();
    let gru: Scalar = Box::new(move |t, p| {
        let params = GruParams { input_dim: i, hidden_dim: h, w: p[0], u: p[1], b: p[2] };
        let mut s = RecurrentState::zeros_gru(t, h);
        for x in &gru_x {
            let x = t.constant(x.clone());
            s = gru_step(t, &s, x, &params)?;
        }
        project(t, s.hidden, 31)
    });
    let lstm_x = xs_rows.clone();
    let lstm: Scalar = Box::new(move |t, p| {
        let params = LstmParams { input_dim: i, hidden_dim: h, w: p[0], b: p[1] };
        let mut s = RecurrentState::zeros_lstm(t, h);
        for x in &lstm_x {
            let x = t.constant(x.clone());
            s = lstm_step(t, &s, x, &params)?;
        }
        let c = s.cell.unwrap();
        let both = t.concat(&[s.hidden, c])?;
        project(t, both, 32)
    });
    let inlstm = |enhanced: bool, seed: u64| -> Scalar {
        let (xr, ar) = (xs_rows.clone(), aux_rows.clone());
        Box::new(move |t, p| {
            let params = InLstmParams {
                aux_dim: a,
                gates: LstmParams { input_dim: i, hidden_dim: h, w: p[0], b: p[1] },
                w_enh: p[2],
                b_enh: p[3],
                w_dr: p[4],
                u_dr: p[5],
                input_enhancement: enhanced.then(|| InputEnhancement { w: p[6], b: p[7] }),
            };
            let mut s = RecurrentState::zeros_lstm(t, h);
            // the last input is also differentiated as the auxiliary stream
            for (k, (x, av)) in xr.iter().zip(&ar).enumerate() {
                let x = t.constant(x.clone());
                let av = if k + 1 == ar.len() { p[8] } else { t.constant(av.clone()) };
                s = inlstm_step(t, &s, x, av, &params)?;
            }
            let c = s.cell.unwrap();
            let both = t.concat(&[s.hidden, c])?;
            project(t, both, seed)
        })
    };
    let mut r = |shape: &[usize]| random(&mut rng, shape);
    let gru_p = vec![r(&[3 * h, i]), r(&[3 * h, h]), r(&[3 * h])];
    let lstm_p = vec![r(&[4 * h, i + h]), r(&[4 * h])];
    let last_aux = aux_rows[steps - 1].clone();
    let mut in_p = vec![r(&[4 * h, i + h]), r(&[4 * h]), r(&[h, h]), r(&[h]), r(&[h, a]), r(&[h, h]), r(&[h, a]), r(&[h])];
    in_p.push(last_aux);
    vec![
        ("gru", gru, gru_p),
        ("lstm", lstm, lstm_p),
        ("inlstm", inlstm(true, 33), in_p.clone()),
        ("inlstm_decomposed", inlstm(false, 34), in_p),
    ]
}

pub fn c1_gradients() -> Outcome {
    let mut worst = ("", 0.0f64);
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut cases = primitive_cases();
    for steps in [1, 3, 6] {
        cases.extend(cell_cases(steps));
    }
    for (name, f, points) in cases {
        let e = max_error(f, &points)?;
        checked += 1;
        if e >= TOL {
            failures.push(format!("{name}: {e:.2e}"));
        }
        if e > worst.1 {
            worst = (name, e);
        }
    }
    let model_record = two_visit_patient();
    for name in VARIANT_NAMES {
        let variant = Variant::named(name).unwrap();
        let (model, store) = Mesin::initialised(tiny_config(variant), 3).map_err(|e| e.to_string())?;
        for (param, e) in loss_gradient_errors(&model, &store, &model_record) {
            checked += 1;
            if e >= TOL {
                failures.push(format!("{name}/{param}: {e:.2e}"));
            }
            if e > worst.1 {
                worst = ("end-to-end", e);
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("{checked} checks, worst {:.2e} ({})", worst.1, worst.0))
    } else {
        Err(failures.join("; "))
    }
}

fn random_scores(rng: &mut impl Rng) -> Vec<f64> {
    let n = rng.random_range(1..=8);
    let scale = [0.1, 1.0, 3.0][rng.random_range(0..3)];
    random_vec(rng, n, scale)
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn c2_entmax() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut sparse_err, mut soft_err, mut e15_err, mut shift_err, mut perm_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let z = random_scores(&mut rng);
        let sparse = entmax_bisect(&z, 2.0).map_err(|e| e.to_string())?;
        sparse_err = sparse_err.max(linf(sparse.weights(), &oracle::sparsemax_sort(&z)));
        let near = alpha_entmax(&z, 1.0001).map_err(|e| e.to_string())?;
        soft_err = soft_err.max(linf(near.weights(), softmax(&z).unwrap().weights()));
        let e15 = alpha_entmax(&z, 1.5).unwrap();
        e15_err = e15_err.max(linf(e15.weights(), &oracle::entmax15_sort(&z)));

        let mut supports = Vec::new();
        for gamma in [1.05, 1.25, 1.5, 1.75, 2.0] {
            let p = alpha_entmax(&z, gamma).unwrap();
            let w = p.weights();
            let total: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(format!("not on the simplex at gamma {gamma}: {w:?}"));
            }
            let c = rng.random_range(-5.0..5.0);
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            shift_err = shift_err.max(linf(w, alpha_entmax(&shifted, gamma).unwrap().weights()));
            let mut perm: Vec<usize> = (0..z.len()).collect();
            perm.shuffle(&mut rng);
            let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
            let pp = alpha_entmax(&zp, gamma).unwrap();
            let back: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            perm_err = perm_err.max(linf(&back, pp.weights()));
            supports.push(p.support_size());
        }
        if supports.windows(2).any(|s| s[1] > s[0]) {
            return Err(format!("support grows with gamma for {z:?}: {supports:?}"));
        }
    }
    let checks = [
        ("bisection vs sort sparsemax", sparse_err, 1e-6),
        ("gamma 1.0001 vs softmax", soft_err, 1e-3),
        ("1.5-entmax vs exact sort", e15_err, 1e-6),
        ("shift invariance", shift_err, 1e-6),
        ("permutation equivariance", perm_err, 1e-12),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, e, tol)| e >= tol)
        .map(|(n, e, tol)| format!("{n}: {e:.2e} >= {tol:.0e}"))
        .collect();
    if bad.is_empty() {
        Ok(checks.iter().map(|(n, e, _)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", "))
    } else {
        Err(bad.join("; "))
    }
}

pub fn c3_aux_invariance() -> Outcome {
    let (i, h, a) = (3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let gates = (random(&mut rng, &[4 * h, i + h]), random(&mut rng, &[4 * h]));
        let (w_dr, u_dr) = (random(&mut rng, &[h, a]), random(&mut rng, &[h, h]));
        let steps = rng.random_range(1..=4);
        let xs: Vec<Tensor> = (0..steps).map(|_| random(&mut rng, &[i])).collect();
        let run = |aux: &[Tensor]| -> (Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let p = InLstmParams {
                aux_dim: a,
                gates: LstmParams { input_dim: i, hidden_dim: h, w: t.constant(gates.0.clone()), b: t.constant(gates.1.clone()) },
                w_enh: t.constant(Tensor::zeros(&[h, h])),
                b_enh: t.constant(Tensor::zeros(&[h])),
                w_dr: t.constant(w_dr.clone()),
                u_dr: t.constant(u_dr.clone()),
                input_enhancement: Some(InputEnhancement { w: t.constant(Tensor::zeros(&[h, a])), b: t.constant(Tensor::zeros(&[h])) }),
            };
            let mut s = RecurrentState::zeros_lstm(&mut t, h);
            for (x, av) in xs.iter().zip(aux) {
                let x = t.constant(x.clone());
                let av = t.constant(av.clone());
                s = inlstm_step(&mut t, &s, x, av, &p).unwrap();
            }
            (t.value(s.hidden).data().to_vec(), t.value(s.cell.unwrap()).data().to_vec())
        };
        let aux1: Vec<Tensor> = (0..steps).map(|_| Tensor::vector(random_vec(&mut rng, a, 10.0)).unwrap()).collect();
        let aux2: Vec<Tensor> = (0..steps).map(|_| Tensor::vector(random_vec(&mut rng, a, 10.0)).unwrap()).collect();
        let (r1, r2) = (run(&aux1), run(&aux2));
        if r1 != r2 {
            return Err(format!("trial {trial}: outputs differ"));
        }
    }
    Ok("100 trials, hidden and cell states bit-identical".into())
}

pub fn random_instances(rng: &mut impl Rng, n: usize, labels: usize) -> Vec<PredictionInstance> {
    (0..n)
        .map(|_| {
            // coarse probabilities create ties inside and across instances
            let probs: Vec<f64> = (0..labels).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
            let mut truth: Vec<usize> = (0..labels).filter(|_| rng.random_bool(0.3)).collect();
            if truth.is_empty() {
                truth.push(rng.random_range(0..labels));
            }
            PredictionInstance::from_probabilities(probs, truth, 0.5).unwrap()
        })
        .collect()
}

pub fn c4_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels = 12;
    let instances = random_instances(&mut rng, 200, labels);
    let got = set_metrics(&instances).map_err(|e| e.to_string())?;
    let (mut j, mut p, mut r, mut f) = (0.0, 0.0, 0.0, 0.0);
    for inst in &instances {
        let s = oracle::set_scores_loop(&inst.predicted, &inst.truth, labels);
        j += s.jaccard;
        p += s.precision;
        r += s.recall;
        f += s.f1;
    }
    let n = instances.len() as f64;
    let set_err = [got.jaccard - j / n, got.precision - p / n, got.recall - r / n, got.f1 - f / n]
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut scores, mut truth) = (Vec::new(), Vec::new());
    for inst in &instances {
        scores.extend_from_slice(&inst.probabilities);
        truth.extend((0..labels).map(|l| inst.truth.contains(&l)));
    }
    let ap_err = (pr_auc(&instances).unwrap() - oracle::average_precision_exhaustive(&scores, &truth)).abs();
    let pair = set_metrics(&[PredictionInstance {
        probabilities: vec![0.9, 0.9, 0.1],
        predicted: vec![0, 1],
        truth: vec![1, 2],
    }])
    .unwrap();
    if set_err >= 1e-12 || ap_err >= 1e-12 {
        return Err(format!("set metrics error {set_err:.2e}, PR-AUC error {ap_err:.2e}"));
    }
    if pair.jaccard != 1.0 / 3.0 {
        return Err(format!("{{A,B}} vs {{B,C}} Jaccard {}", pair.jaccard));
    }
    Ok(format!("200 instances: set metrics {set_err:.1e}, PR-AUC {ap_err:.1e}; {{A,B}} vs {{B,C}} = 1/3"))
}

/// Three visits exercising partial labs, an empty diagnosis set and repeated medications.
pub fn oracle_patient() -> PatientRecord {
    let mut p = two_visit_patient();
    p.visits.push(Visit::new(
        vec![LabChannel::new(vec![0.0, 2.1, -0.8], vec![false, true, true]).unwrap(), LabChannel::dense(vec![0.3, 0.3])],
        vec![],
        vec![1, 2],
    ));
    p.visits.push(Visit::new(vec![LabChannel::empty(), LabChannel::dense(vec![-1.1])], vec![1, 3], vec![3]));
    p
}

pub fn c5_forward_oracle() -> Outcome {
    let record = oracle_patient();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for name in VARIANT_NAMES {
        for seed in 0..3 {
            let (model, store) = Mesin::initialised(tiny_config(Variant::named(name).unwrap()), seed).map_err(|e| e.to_string())?;
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let outs = model.forward_patient(&mut tape, &bound, &record, None).map_err(|e| e.to_string())?;
            let expected = oracle::forward(model.config(), &store, &record);
            for (t, (o, e)) in outs.iter().zip(&expected).enumerate() {
                let got = tape.value(o.logits).data();
                let mut err = linf(got, &e.logits);
                if let (Some(a), Some(b)) = (&o.bundle.fusion_weights, &e.fusion) {
                    err = err.max(linf(a.weights(), b));
                }
                for (a, b) in [(&o.bundle.lab_attention, &e.lab_attention), (&o.bundle.diag_attention, &e.diag_attention)] {
                    match (a, b) {
                        (Some(a), Some(b)) if !a.weights.is_empty() => err = err.max(linf(&a.weights, b)),
                        (Some(a), None) if a.weights.is_empty() => {}
                        (None, None) => {}
                        _ => return Err(format!("{name} visit {t}: attention presence differs")),
                    }
                }
                if err >= 1e-10 {
                    return Err(format!("{name} seed {seed} visit {t}: max deviation {err:.2e}"));
                }
                worst = worst.max(err);
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} visit outputs over {} variants, max deviation {worst:.1e}", VARIANT_NAMES.len()))
}

fn desk_hyper() -> HyperParams {
    HyperParams {
        embed_dim: 16,
        hidden_dim: 16,
        learning_rate: 0.01,
        epochs: 120,
        dropout: 0.0,
        init: InitScheme::Scaled,
        ..HyperParams::default()
    }
}

pub fn c6_capacity() -> Outcome {
    let spec = GeneratorSpec {
        patients: 10,
        ..GeneratorSpec::default()
    };
    let cohort = generate_cohort(&spec, 6).map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    for seed in 0..3 {
        let config = ModelConfig {
            hyper: HyperParams {
                epochs: 200,
                // five updates per epoch instead of one full-cohort step
                batch_size: 2,
                ..desk_hyper()
            },
            vocab: cohort.manifest.vocabulary,
            variant: Variant::full(),
        };
        let (model, store) = Mesin::initialised(config, seed).map_err(|e| e.to_string())?;
        let out = train(&model, store, &cohort.patients, &[], seed).map_err(|e| e.to_string())?;
        finals.push(out.trace.last().unwrap().bce_per_label);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let detail = format!("mean BCE per label after 200 epochs {mean:.4} (seeds {finals:.4?})");
    if mean < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub struct OrderingResult {
    pub mesin: f64,
    pub vanilla: f64,
    pub nodiag: f64,
    pub vanilla_sum: f64,
    pub table: String,
}

pub const ORDERING_COHORT_SEED: u64 = 7;

pub fn ordering_runs(root: &Path) -> Result<OrderingResult, String> {
    let mut cfg = RunConfig {
        seed: ORDERING_COHORT_SEED,
        hyper: desk_hyper(),
        ..RunConfig::default()
    };
    cfg.generator.patients = 300;
    let cohort = root.join("cohort");
    generate_in(&cfg, &cohort).map_err(|e| e.to_string())?;
    cfg.cohort = Some(cohort);
    cfg.ablation = AblationSettings {
        variants: vec!["mesin".into(), "vanilla".into(), "nodiag".into(), "vanilla_sum".into()],
        seeds: vec![0, 1, 2],
    };
    let report = ablate_in(&cfg, root).map_err(|e| e.to_string())?;
    let j = |n: &str| report.variant(n).unwrap().jaccard.mean;
    Ok(OrderingResult {
        mesin: j("mesin"),
        vanilla: j("vanilla"),
        nodiag: j("nodiag"),
        vanilla_sum: j("vanilla_sum"),
        table: report.table(),
    })
}

pub fn c7_ordering(r: &OrderingResult) -> Outcome {
    let detail = format!(
        "test Jaccard over 3 seeds: MeSIN {:.4}, Vanilla (mean pooling) {:.4}, NoDiag {:.4}",
        r.mesin, r.vanilla, r.nodiag
    );
    if r.mesin >= r.vanilla && r.mesin - r.nodiag >= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_run_config(root: &Path, variant: &str) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 5,
        variant: variant.into(),
        hyper: HyperParams {
            epochs: 25,
            dropout: 0.4,
            ..desk_hyper()
        },
        ..RunConfig::default()
    };
    cfg.generator.patients = 60;
    cfg.cohort = Some(root.join("cohort"));
    cfg.checkpoint = Some(root.join("train").join(LAST_CHECKPOINT));
    cfg.input = Some(root.join("eval"));
    cfg
}

/// generate → train → evaluate → report under `root`.
pub fn pipeline(root: &Path, variant: &str) -> mesin::error::Result<mesin::harness::ReportSummary> {
    let cfg = small_run_config(root, variant);
    for d in ["train", "eval", "report"] {
        fs::create_dir_all(root.join(d)).unwrap();
    }
    generate_in(&cfg, &root.join("cohort"))?;
    train_in(&cfg, &root.join("train"))?;
    evaluate_in(&cfg, &root.join("eval"))?;
    report_in(&cfg, &root.join("report"))
}

pub fn c8_artifacts(root: &Path) -> Outcome {
    let entmax = pipeline(&root.join("entmax"), "mesin").map_err(|e| e.to_string())?;
    let soft = pipeline(&root.join("softmax"), "mesin_soft").map_err(|e| e.to_string())?;
    let zeros = |s: &mesin::harness::ReportSummary, stream: &str| {
        s.streams.iter().find(|x| x.stream == stream).map(|x| (x.exact_zeros, x.weights)).unwrap()
    };
    let (lab_z, lab_n) = zeros(&entmax, "lab");
    let (diag_z, diag_n) = zeros(&entmax, "diagnosis");
    let soft_z: usize = soft.streams.iter().map(|s| s.exact_zeros).sum();
    let dev = entmax.fusion_max_deviation.max(soft.fusion_max_deviation);

    // rows from the written CSV, not the in-memory summary
    let text = fs::read_to_string(root.join("entmax/report/fusion.csv")).unwrap();
    let mut csv_dev = 0.0f64;
    for line in text.lines().skip(1) {
        let s: f64 = line.split(',').skip(2).map(|x| x.parse::<f64>().unwrap()).sum();
        csv_dev = csv_dev.max((s - 1.0).abs());
    }
    let detail = format!(
        "gamma 1.5 dumps: lab {lab_z}/{lab_n} and diagnosis {diag_z}/{diag_n} exact zeros; softmax dumps {soft_z} zeros; fusion rows |sum-1| <= {:.1e}",
        dev.max(csv_dev)
    );
    if lab_z > 0 && diag_z > 0 && soft_z == 0 && dev.max(csv_dev) <= 1e-9 && entmax.fusion_rows > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Every file under `dir`, relative path → bytes.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn c9_reproducibility(root: &Path) -> Outcome {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        pipeline(dir, "mesin").map_err(|e| e.to_string())?;
        Ok(snapshot(dir))
    };
    let a = run(&root.join("a"))?;
    let b = run(&root.join("b"))?;
    let names: Vec<&String> = a.iter().map(|(n, _)| n).collect();
    if names != b.iter().map(|(n, _)| n).collect::<Vec<_>>() {
        return Err("runs produced different file sets".into());
    }
    let differing: Vec<&String> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| &x.0).collect();
    if differing.is_empty() {
        Ok(format!("{} files bit-identical across two runs (dropout 0.4)", a.len()))
    } else {
        Err(format!("differing files: {differing:?}"))
    }
}
