//! Single-step recurrent transitions on a [`Tape`]: GRU, LSTM and the
//! interactive LSTM that takes a primary and an auxiliary input.
//!
//! Parameter structs are generic over the handle type so the same layout is
//! used for registered parameters ([`crate::params::ParamId`]) and for their
//! bound tape nodes ([`Var`]).

use crate::error::{MesinError, Result};
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct RecurrentState {
    pub hidden: Var,
    /// Present for the LSTM family only.
    pub cell: Option<Var>,
}

impl RecurrentState {
    pub fn zeros_gru(tape: &mut Tape, hidden: usize) -> Self {
        RecurrentState {
            hidden: tape.constant(Tensor::zeros(&[hidden])),
            cell: None,
        }
    }

    pub fn zeros_lstm(tape: &mut Tape, hidden: usize) -> Self {
        RecurrentState {
            hidden: tape.constant(Tensor::zeros(&[hidden])),
            cell: Some(tape.constant(Tensor::zeros(&[hidden]))),
        }
    }
}

/// GRU with gate rows ordered `[update; reset; candidate]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `3h x in`
    pub w: T,
    /// `3h x h`
    pub u: T,
    /// `3h`
    pub b: T,
}

/// LSTM with gate rows ordered `[candidate; output; input; forget]`, acting on `[x; h]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4h x (in + h)`
    pub w: T,
    /// `4h`
    pub b: T,
}

/// Input-gate enhancement driven by the auxiliary input.
#[derive(Clone, Copy, Debug)]
pub struct InputEnhancement<T> {
    /// `h x aux`
    pub w: T,
    /// `h`
    pub b: T,
}

#[derive(Clone, Copy, Debug)]
pub struct InLstmParams<T> {
    pub aux_dim: usize,
    pub gates: LstmParams<T>,
    /// `h x h`, applied to the previous cell state.
    pub w_enh: T,
    pub b_enh: T,
    /// `h x aux`, inner projection of the auxiliary input (no bias).
    pub w_dr: T,
    /// `h x h`
    pub u_dr: T,
    /// `None` keeps the plain input gate (memory calibration only).
    pub input_enhancement: Option<InputEnhancement<T>>,
}

impl<T: Copy> GruParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> GruParams<U> {
        GruParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w: f(self.w),
            u: f(self.u),
            b: f(self.b),
        }
    }
}

impl<T: Copy> LstmParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> LstmParams<U> {
        LstmParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w: f(self.w),
            b: f(self.b),
        }
    }
}

impl<T: Copy> InLstmParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> InLstmParams<U> {
        InLstmParams {
            aux_dim: self.aux_dim,
            gates: self.gates.map(&mut f),
            w_enh: f(self.w_enh),
            b_enh: f(self.b_enh),
            w_dr: f(self.w_dr),
            u_dr: f(self.u_dr),
            input_enhancement: self.input_enhancement.map(|ie| InputEnhancement {
                w: f(ie.w),
                b: f(ie.b),
            }),
        }
    }
}

fn check_len(tape: &Tape, var: Var, expected: usize, what: &str) -> Result<()> {
    let got = tape.value(var);
    if got.is_vector() && got.len() == expected {
        Ok(())
    } else {
        Err(MesinError::contract(format!(
            "{what}: expected a vector of length {expected}, got shape {:?}",
            got.shape()
        )))
    }
}

pub fn gru_step(
    tape: &mut Tape,
    state: &RecurrentState,
    x: Var,
    p: &GruParams<Var>,
) -> Result<RecurrentState> {
    let h = p.hidden_dim;
    check_len(tape, x, p.input_dim, "gru input")?;
    check_len(tape, state.hidden, h, "gru hidden state")?;
    let gx = tape.linear(p.w, x, p.b)?;
    let gh = tape.matmul(p.u, state.hidden)?;

    let zx = tape.slice(gx, 0, h)?;
    let zh = tape.slice(gh, 0, h)?;
    let z_pre = tape.add(zx, zh)?;
    let z = tape.sigmoid(z_pre)?;

    let rx = tape.slice(gx, h, h)?;
    let rh = tape.slice(gh, h, h)?;
    let r_pre = tape.add(rx, rh)?;
    let r = tape.sigmoid(r_pre)?;

    let nx = tape.slice(gx, 2 * h, h)?;
    let nh = tape.slice(gh, 2 * h, h)?;
    let gated = tape.mul(r, nh)?;
    let n_pre = tape.add(nx, gated)?;
    let n = tape.tanh(n_pre)?;

    // h' = (1 - z) n + z h = n + z (h - n)
    let diff = tape.sub(state.hidden, n)?;
    let keep = tape.mul(z, diff)?;
    let hidden = tape.add(n, keep)?;
    Ok(RecurrentState { hidden, cell: None })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Whole-sequence GRU from a zero state as one tape node; inputs are
/// `[w, u, b, xs]` with `xs` of shape `T x in`. Same arithmetic as
/// repeated [`gru_step`], with backpropagation through time in `backward`.
struct GruSequence {
    hidden: usize,
}

struct GruTrace {
    /// `h_0 .. h_T`
    states: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    /// Recurrent candidate pre-activation `U_n h_{t-1}`.
    un_h: Vec<Vec<f64>>,
}

impl GruSequence {
    fn run(&self, w: &Tensor, u: &Tensor, b: &Tensor, xs: &Tensor) -> GruTrace {
        let h = self.hidden;
        let (steps, input) = (xs.shape()[0], xs.shape()[1]);
        let (wd, ud, bd, xd) = (w.data(), u.data(), b.data(), xs.data());
        let mut trace = GruTrace {
            states: vec![vec![0.0; h]],
            z: Vec::with_capacity(steps),
            r: Vec::with_capacity(steps),
            n: Vec::with_capacity(steps),
            un_h: Vec::with_capacity(steps),
        };
        let mut gx = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        for t in 0..steps {
            let x = &xd[t * input..(t + 1) * input];
            let prev = trace.states.last().expect("initial state");
            for row in 0..3 * h {
                let wr = &wd[row * input..(row + 1) * input];
                gx[row] = bd[row] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                let ur = &ud[row * h..(row + 1) * h];
                gh[row] = ur.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let z: Vec<f64> = (0..h).map(|i| sigmoid(gx[i] + gh[i])).collect();
            let r: Vec<f64> = (0..h).map(|i| sigmoid(gx[h + i] + gh[h + i])).collect();
            let un_h: Vec<f64> = gh[2 * h..].to_vec();
            let n: Vec<f64> = (0..h).map(|i| (gx[2 * h + i] + r[i] * un_h[i]).tanh()).collect();
            let next: Vec<f64> = (0..h).map(|i| n[i] + z[i] * (prev[i] - n[i])).collect();
            trace.z.push(z);
            trace.r.push(r);
            trace.n.push(n);
            trace.un_h.push(un_h);
            trace.states.push(next);
        }
        trace
    }
}

impl CustomOp for GruSequence {
    fn name(&self) -> &str {
        "gru_sequence"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let trace = self.run(inputs[0], inputs[1], inputs[2], inputs[3]);
        let last = trace.states.last().expect("initial state").clone();
        Ok(Tensor::from_parts(vec![self.hidden], last))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, upstream: &Tensor) -> Vec<Tensor> {
        let (w, u, xs) = (inputs[0], inputs[1], inputs[3]);
        let h = self.hidden;
        let (steps, input) = (xs.shape()[0], xs.shape()[1]);
        let trace = self.run(w, u, inputs[2], xs);
        let (wd, ud, xd) = (w.data(), u.data(), xs.data());
        let mut dw = vec![0.0; 3 * h * input];
        let mut du = vec![0.0; 3 * h * h];
        let mut db = vec![0.0; 3 * h];
        let mut dxs = vec![0.0; steps * input];
        let mut g = upstream.data().to_vec();
        let mut dgx = vec![0.0; 3 * h];
        let mut dgh = vec![0.0; 3 * h];
        for t in (0..steps).rev() {
            let prev = &trace.states[t];
            let (z, r, n, un_h) = (&trace.z[t], &trace.r[t], &trace.n[t], &trace.un_h[t]);
            let mut dprev = vec![0.0; h];
            for i in 0..h {
                let dn = g[i] * (1.0 - z[i]);
                let dz = g[i] * (prev[i] - n[i]);
                dprev[i] = g[i] * z[i];
                let dn_pre = dn * (1.0 - n[i] * n[i]);
                let dr = dn_pre * un_h[i];
                let dz_pre = dz * z[i] * (1.0 - z[i]);
                let dr_pre = dr * r[i] * (1.0 - r[i]);
                dgx[i] = dz_pre;
                dgx[h + i] = dr_pre;
                dgx[2 * h + i] = dn_pre;
                dgh[i] = dz_pre;
                dgh[h + i] = dr_pre;
                dgh[2 * h + i] = dn_pre * r[i];
            }
            let x = &xd[t * input..(t + 1) * input];
            for row in 0..3 * h {
                db[row] += dgx[row];
                for k in 0..input {
                    dw[row * input + k] += dgx[row] * x[k];
                    dxs[t * input + k] += wd[row * input + k] * dgx[row];
                }
                for k in 0..h {
                    du[row * h + k] += dgh[row] * prev[k];
                    dprev[k] += ud[row * h + k] * dgh[row];
                }
            }
            g = dprev;
        }
        vec![
            Tensor::from_parts(vec![3 * h, input], dw),
            Tensor::from_parts(vec![3 * h, h], du),
            Tensor::from_parts(vec![3 * h], db),
            Tensor::from_parts(vec![steps, input], dxs),
        ]
    }
}

/// Final hidden state of a GRU run from zeros over the rows of `xs` (`T x in`).
pub fn gru_sequence(tape: &mut Tape, xs: Var, p: &GruParams<Var>) -> Result<Var> {
    let shape = tape.value(xs).shape().to_vec();
    if shape.len() != 2 || shape[1] != p.input_dim {
        return Err(MesinError::contract(format!(
            "gru sequence: expected T x {} inputs, got shape {shape:?}",
            p.input_dim
        )));
    }
    let h = p.hidden_dim;
    for (var, want) in [
        (p.w, vec![3 * h, p.input_dim]),
        (p.u, vec![3 * h, h]),
        (p.b, vec![3 * h]),
    ] {
        if tape.value(var).shape() != want.as_slice() {
            return Err(MesinError::shape(
                "gru_sequence",
                format!("parameter shape {:?}, expected {want:?}", tape.value(var).shape()),
            ));
        }
    }
    tape.apply_custom(Box::new(GruSequence { hidden: h }), &[p.w, p.u, p.b, xs])
}

struct Gates {
    candidate: Var,
    output: Var,
    input: Var,
    forget: Var,
}

fn lstm_gates(tape: &mut Tape, state: &RecurrentState, x: Var, p: &LstmParams<Var>) -> Result<Gates> {
    let h = p.hidden_dim;
    check_len(tape, x, p.input_dim, "lstm input")?;
    check_len(tape, state.hidden, h, "lstm hidden state")?;
    let xh = tape.concat(&[x, state.hidden])?;
    let g = tape.linear(p.w, xh, p.b)?;
    let c_pre = tape.slice(g, 0, h)?;
    let o_pre = tape.slice(g, h, h)?;
    let i_pre = tape.slice(g, 2 * h, h)?;
    let f_pre = tape.slice(g, 3 * h, h)?;
    Ok(Gates {
        candidate: tape.tanh(c_pre)?,
        output: tape.sigmoid(o_pre)?,
        input: tape.sigmoid(i_pre)?,
        forget: tape.sigmoid(f_pre)?,
    })
}

fn previous_cell(state: &RecurrentState) -> Result<Var> {
    state
        .cell
        .ok_or_else(|| MesinError::contract("LSTM-family step needs a cell state"))
}

pub fn lstm_step(
    tape: &mut Tape,
    state: &RecurrentState,
    x: Var,
    p: &LstmParams<Var>,
) -> Result<RecurrentState> {
    let c_prev = previous_cell(state)?;
    let g = lstm_gates(tape, state, x, p)?;
    let kept = tape.mul(g.forget, c_prev)?;
    let written = tape.mul(g.input, g.candidate)?;
    let cell = tape.add(kept, written)?;
    let squashed = tape.tanh(cell)?;
    let hidden = tape.mul(g.output, squashed)?;
    Ok(RecurrentState {
        hidden,
        cell: Some(cell),
    })
}

/// Intermediate activations of one interactive step, exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct InLstmTrace {
    pub calibrated_memory: Var,
    pub enhanced_input_gate: Var,
}

pub fn inlstm_step(
    tape: &mut Tape,
    state: &RecurrentState,
    x_primary: Var,
    x_aux: Var,
    p: &InLstmParams<Var>,
) -> Result<RecurrentState> {
    inlstm_step_traced(tape, state, x_primary, x_aux, p).map(|(s, _)| s)
}

pub fn inlstm_step_traced(
    tape: &mut Tape,
    state: &RecurrentState,
    x_primary: Var,
    x_aux: Var,
    p: &InLstmParams<Var>,
) -> Result<(RecurrentState, InLstmTrace)> {
    check_len(tape, x_aux, p.aux_dim, "inlstm auxiliary input")?;
    let c_prev = previous_cell(state)?;
    let g = lstm_gates(tape, state, x_primary, &p.gates)?;

    // calibrated memory-augmented cell: d * sigma(U relu(W x_a))
    let d = tape.linear(p.w_enh, c_prev, p.b_enh)?;
    let d = tape.tanh(d)?;
    let proj = tape.matmul(p.w_dr, x_aux)?;
    let proj = tape.relu(proj)?;
    let de = tape.matmul(p.u_dr, proj)?;
    let de = tape.sigmoid(de)?;
    let calibrated = tape.mul(d, de)?;

    // enhanced input gate: sigma(i * i_hat + i)
    let input_gate = match &p.input_enhancement {
        Some(ie) => {
            let i_hat = tape.linear(ie.w, x_aux, ie.b)?;
            let i_hat = tape.tanh(i_hat)?;
            let influence = tape.mul(g.input, i_hat)?;
            let pre = tape.add(influence, g.input)?;
            tape.sigmoid(pre)?
        }
        None => g.input,
    };

    let memory = tape.add(c_prev, calibrated)?;
    let kept = tape.mul(g.forget, memory)?;
    let written = tape.mul(input_gate, g.candidate)?;
    let cell = tape.add(kept, written)?;
    let squashed = tape.tanh(cell)?;
    let hidden = tape.mul(g.output, squashed)?;
    Ok((
        RecurrentState {
            hidden,
            cell: Some(cell),
        },
        InLstmTrace {
            calibrated_memory: calibrated,
            enhanced_input_gate: input_gate,
        },
    ))
}
