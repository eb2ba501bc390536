//! Independent plain-`f64` reference implementations used as test oracles.

use mesin::config::{AttentionKind, Fusion, ModelConfig, Selection};
use mesin::ehr::PatientRecord;
use mesin::params::ParameterStore;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major `rows x cols` matrix times vector.
pub fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len(), rows * cols);
    (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn map(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&x| f(x)).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Sparsemax by sorting (Michelot / Martins and Astudillo).
pub fn sparsemax_sort(z: &[f64]) -> Vec<f64> {
    let mut s = z.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut k_star = 0;
    let mut cum = 0.0;
    let mut cum_star = 0.0;
    for (k, v) in s.iter().enumerate() {
        cum += v;
        let k1 = (k + 1) as f64;
        if 1.0 + k1 * v > cum {
            k_star = k + 1;
            cum_star = cum;
        }
    }
    let tau = (cum_star - 1.0) / k_star as f64;
    z.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// Exact 1.5-entmax by sorting, with the closed-form threshold.
pub fn entmax15_sort(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = z.iter().map(|v| (v - m) / 2.0).collect();
    let mut s = x.clone();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (mut cum, mut cum_sq) = (0.0, 0.0);
    let mut taus = Vec::with_capacity(s.len());
    let mut support = 0;
    for (k, v) in s.iter().enumerate() {
        let rho = (k + 1) as f64;
        cum += v;
        cum_sq += v * v;
        let mean = cum / rho;
        let mean_sq = cum_sq / rho;
        let delta = ((1.0 - rho * (mean_sq - mean * mean)) / rho).max(0.0);
        let tau = mean - delta.sqrt();
        taus.push(tau);
        if tau <= *v {
            support += 1;
        }
    }
    let tau = taus[support - 1];
    x.iter().map(|v| (v - tau).max(0.0).powi(2)).collect()
}

/// α-entmax by a long bisection on the threshold, with a wide bracket.
pub fn entmax_reference(z: &[f64], gamma: f64) -> Vec<f64> {
    let a = gamma - 1.0;
    let zz: Vec<f64> = z.iter().map(|v| v * a).collect();
    let m = zz.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p = |tau: f64| -> Vec<f64> { zz.iter().map(|v| (v - tau).max(0.0).powf(1.0 / a)).collect() };
    let (mut lo, mut hi) = (m - 2.0, m);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid).iter().sum::<f64>() >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = p(lo);
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

pub fn attention_reference(z: &[f64], gamma: f64) -> Vec<f64> {
    if gamma == 2.0 {
        sparsemax_sort(z)
    } else if gamma == 1.5 {
        entmax15_sort(z)
    } else {
        entmax_reference(z, gamma)
    }
}

pub struct SetScores {
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set metrics via boolean membership loops over the label space.
pub fn set_scores_loop(pred: &[usize], truth: &[usize], labels: usize) -> SetScores {
    let (mut inter, mut union, mut np, mut nt) = (0.0, 0.0, 0.0, 0.0);
    for l in 0..labels {
        let p = pred.contains(&l);
        let t = truth.contains(&l);
        if p && t {
            inter += 1.0;
        }
        if p || t {
            union += 1.0;
        }
        if p {
            np += 1.0;
        }
        if t {
            nt += 1.0;
        }
    }
    let jaccard = if union == 0.0 { 0.0 } else { inter / union };
    let precision = if np == 0.0 { 0.0 } else { inter / np };
    let recall = if nt == 0.0 { 0.0 } else { inter / nt };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SetScores {
        jaccard,
        precision,
        recall,
        f1,
    }
}

/// Average precision as the mean, over positives, of precision at that
/// positive's score threshold (every item scoring at least as high counts).
pub fn average_precision_exhaustive(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
    if pos.is_empty() {
        return 0.0;
    }
    if pos.len() == scores.len() {
        return 1.0;
    }
    let mut total = 0.0;
    for &i in &pos {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let tp = above.iter().filter(|&&j| labels[j]).count();
        total += tp as f64 / above.len() as f64;
    }
    total / pos.len() as f64
}

struct Lstm {
    w: Vec<f64>,
    b: Vec<f64>,
    h: usize,
}

fn param(store: &ParameterStore, name: &str) -> Vec<f64> {
    store
        .by_name(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"))
        .data()
        .to_vec()
}

fn has(store: &ParameterStore, name: &str) -> bool {
    store.by_name(name).is_some()
}

fn lstm_gates(p: &Lstm, x: &[f64], h_prev: &[f64]) -> [Vec<f64>; 4] {
    let mut xh = x.to_vec();
    xh.extend_from_slice(h_prev);
    let g = add(&matvec(&p.w, 4 * p.h, &xh), &p.b);
    let h = p.h;
    [
        map(&g[0..h], f64::tanh),
        map(&g[h..2 * h], sigmoid),
        map(&g[2 * h..3 * h], sigmoid),
        map(&g[3 * h..4 * h], sigmoid),
    ]
}

/// One step of the stream cell registered under `prefix`; interactive if
/// the calibration weights exist.
fn cell_step(store: &ParameterStore, prefix: &str, h: usize, x: &[f64], aux: Option<&[f64]>, state: &mut (Vec<f64>, Vec<f64>)) {
    let p = Lstm {
        w: param(store, &format!("{prefix}.w")),
        b: param(store, &format!("{prefix}.b")),
        h,
    };
    let (h_prev, c_prev) = state.clone();
    let [cand, out, mut input, forget] = lstm_gates(&p, x, &h_prev);
    let mut memory = c_prev.clone();
    if has(store, &format!("{prefix}.w_enh")) {
        let aux = aux.expect("interactive cell needs an auxiliary input");
        let d = map(
            &add(&matvec(&param(store, &format!("{prefix}.w_enh")), h, &c_prev), &param(store, &format!("{prefix}.b_enh"))),
            f64::tanh,
        );
        let r = map(&matvec(&param(store, &format!("{prefix}.w_dr")), h, aux), |v| v.max(0.0));
        let de = map(&matvec(&param(store, &format!("{prefix}.u_dr")), h, &r), sigmoid);
        memory = add(&c_prev, &mul(&d, &de));
        if has(store, &format!("{prefix}.w_ie")) {
            let ihat = map(
                &add(&matvec(&param(store, &format!("{prefix}.w_ie")), h, aux), &param(store, &format!("{prefix}.b_ie"))),
                f64::tanh,
            );
            input = map(&add(&mul(&input, &ihat), &input), sigmoid);
        }
    }
    let c = add(&mul(&forget, &memory), &mul(&input, &cand));
    let hn = mul(&out, &map(&c, f64::tanh));
    *state = (hn, c);
}

fn gru_final(store: &ParameterStore, q: usize, d: usize, xs: &[f64]) -> Vec<f64> {
    let w = param(store, &format!("lab.gru{q}.w"));
    let u = param(store, &format!("lab.gru{q}.u"));
    let b = param(store, &format!("lab.gru{q}.b"));
    let mut h = vec![0.0; d];
    for &x in xs {
        let gx: Vec<f64> = (0..3 * d).map(|r| w[r] * x + b[r]).collect();
        let gh = matvec(&u, 3 * d, &h);
        let mut next = vec![0.0; d];
        for k in 0..d {
            let z = sigmoid(gx[k] + gh[k]);
            let r = sigmoid(gx[d + k] + gh[d + k]);
            let n = (gx[2 * d + k] + r * gh[2 * d + k]).tanh();
            next[k] = (1.0 - z) * n + z * h[k];
        }
        h = next;
    }
    h
}

/// `(embedding, weights)` of a pooled set; empty sets give zeros.
fn pool(
    store: &ParameterStore,
    prefix: &str,
    embs: &[Vec<f64>],
    d: usize,
    selection: Selection,
    attention: AttentionKind,
    gamma: f64,
) -> (Vec<f64>, Option<Vec<f64>>) {
    if embs.is_empty() {
        return (vec![0.0; d], None);
    }
    let weights = match selection {
        Selection::Sum => vec![1.0; embs.len()],
        Selection::Mean => vec![1.0 / embs.len() as f64; embs.len()],
        Selection::Attention => {
            let w = param(store, &format!("{prefix}.asm.w"));
            let b = param(store, &format!("{prefix}.asm.b"))[0];
            let scores: Vec<f64> = embs
                .iter()
                .map(|e| (e.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() + b).tanh())
                .collect();
            match attention {
                AttentionKind::Entmax => attention_reference(&scores, gamma),
                AttentionKind::Softmax => softmax(&scores),
            }
        }
    };
    let mut out = vec![0.0; d];
    for (e, a) in embs.iter().zip(&weights) {
        for k in 0..d {
            out[k] += a * e[k];
        }
    }
    let record = (selection == Selection::Attention).then_some(weights);
    (out, record)
}

fn columns(store: &ParameterStore, name: &str, codes: &[usize]) -> Vec<Vec<f64>> {
    let t = store.by_name(name).unwrap();
    let (d, n) = (t.shape()[0], t.shape()[1]);
    codes.iter().map(|&c| (0..d).map(|k| t.data()[k * n + c]).collect()).collect()
}

pub struct OracleVisit {
    pub logits: Vec<f64>,
    pub fusion: Option<Vec<f64>>,
    pub lab_attention: Option<Vec<f64>>,
    pub diag_attention: Option<Vec<f64>>,
}

/// The whole recommendation network for one patient, written out visit by
/// visit with no shared code from the library.
pub fn forward(config: &ModelConfig, store: &ParameterStore, record: &PatientRecord) -> Vec<OracleVisit> {
    let (d, h) = (config.hyper.embed_dim, config.hyper.hidden_dim);
    let v = &config.variant;
    let m = config.vocab.medications;
    let zero = || (vec![0.0; h], vec![0.0; h]);
    let (mut lab_s, mut diag_s, mut med_s) = (zero(), zero(), zero());
    let (mut prev_hl, mut prev_hd): (Option<Vec<f64>>, Option<Vec<f64>>) = (None, None);
    let mut out = Vec::new();
    for (t, visit) in record.visits.iter().enumerate() {
        let mut sources: Vec<(&str, Vec<f64>)> = Vec::new();
        let (mut hl, mut el, mut lab_att) = (None, None, None);
        if v.sources.lab {
            let finals: Vec<Vec<f64>> = visit
                .labs
                .iter()
                .enumerate()
                .filter(|(_, c)| c.num_observed() > 0)
                .map(|(q, c)| gru_final(store, q, d, &c.observations().collect::<Vec<_>>()))
                .collect();
            let (e, att) = pool(store, "lab", &finals, d, v.lab_selection, v.attention, config.hyper.gamma_lab);
            cell_step(store, "lab.lstm", h, &e, None, &mut lab_s);
            hl = Some(lab_s.0.clone());
            el = Some(e);
            lab_att = att;
        }
        let (mut hd, mut ed, mut diag_att) = (None, None, None);
        if v.sources.diag {
            let embs = columns(store, "diag.embedding", &visit.diagnoses);
            let (e, att) = pool(store, "diag", &embs, d, v.diag_selection, v.attention, config.hyper.gamma_diag);
            cell_step(store, "diag.cell", h, &e, hl.as_deref(), &mut diag_s);
            hd = Some(diag_s.0.clone());
            ed = Some(e);
            diag_att = att;
        }
        if v.sources.med {
            if t > 0 {
                let given = &record.visits[t - 1].medications;
                let embs = columns(store, "med.embedding", given);
                let (e, _) = pool(store, "med", &embs, d, v.med_selection, v.attention, config.hyper.gamma_med);
                let aux = if has(store, "med.cell.w_enh") {
                    let mut acc = vec![0.0; h];
                    if let Some(x) = &prev_hd {
                        acc = add(&acc, &matvec(&param(store, "med.fuse.w_diag"), h, x));
                    }
                    if let Some(x) = &prev_hl {
                        acc = add(&acc, &matvec(&param(store, "med.fuse.w_lab"), h, x));
                    }
                    Some(map(&acc, f64::tanh))
                } else {
                    None
                };
                cell_step(store, "med.cell", h, &e, aux.as_deref(), &mut med_s);
            }
            sources.push(("h_m", med_s.0.clone()));
        }
        if let Some(x) = &hd {
            sources.push(("h_d", x.clone()));
        }
        if let Some(x) = &hl {
            sources.push(("h_l", x.clone()));
        }
        if let Some(x) = &ed {
            sources.push(("e_dc", x.clone()));
        }
        if let Some(x) = &el {
            sources.push(("e_lc", x.clone()));
        }
        let (fused, fusion) = match v.fusion {
            Fusion::Selective => {
                let scores: Vec<f64> = sources
                    .iter()
                    .map(|(name, x)| {
                        let w = param(store, &format!("gsfm.{name}.w"));
                        w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + param(store, &format!("gsfm.{name}.b"))[0]
                    })
                    .collect();
                let a = softmax(&scores);
                let mut o = vec![0.0; h];
                for ((_, x), w) in sources.iter().zip(&a) {
                    for k in 0..h {
                        o[k] += w * x[k];
                    }
                }
                (o, Some(a))
            }
            Fusion::Concat => (sources.iter().flat_map(|(_, x)| x.clone()).collect(), None),
        };
        let logits = add(&matvec(&param(store, "head.w"), m, &fused), &param(store, "head.b"));
        out.push(OracleVisit {
            logits,
            fusion,
            lab_attention: lab_att,
            diag_attention: diag_att,
        });
        prev_hl = hl;
        prev_hd = hd;
    }
    out
}
