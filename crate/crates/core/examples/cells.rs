//! The interactive LSTM with and without its auxiliary pathways.
//!
//! Zeroing the memory-calibration and input-enhancement weights makes the
//! cell ignore the auxiliary input entirely; with random weights it does not.

use mesin::cells::{inlstm_step, InLstmParams, InputEnhancement, LstmParams, RecurrentState};
use mesin::tape::Tape;
use mesin::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IN: usize = 3;
const AUX: usize = 2;
const H: usize = 4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn run(weights: &[Tensor], aux: &Tensor) -> mesin::error::Result<Vec<f64>> {
    let mut tape = Tape::new();
    let v: Vec<_> = weights.iter().map(|w| tape.parameter(w.clone())).collect();
    let p = InLstmParams {
        aux_dim: AUX,
        gates: LstmParams {
            input_dim: IN,
            hidden_dim: H,
            w: v[0],
            b: v[1],
        },
        w_enh: v[2],
        b_enh: v[3],
        w_dr: v[4],
        u_dr: v[5],
        input_enhancement: Some(InputEnhancement { w: v[6], b: v[7] }),
    };
    let mut state = RecurrentState::zeros_lstm(&mut tape, H);
    let x = tape.constant(Tensor::vector(vec![0.2, -0.4, 0.8])?);
    let a = tape.constant(aux.clone());
    for _ in 0..3 {
        state = inlstm_step(&mut tape, &state, x, a, &p)?;
    }
    Ok(tape.value(state.hidden).data().to_vec())
}

fn main() -> mesin::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shapes: [&[usize]; 8] = [&[4 * H, IN + H], &[4 * H], &[H, H], &[H], &[H, AUX], &[H, H], &[H, AUX], &[H]];
    let mut weights: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let aux_a = random(&mut rng, &[AUX]);
    let aux_b = random(&mut rng, &[AUX]);

    println!("random weights");
    println!("  aux a -> {:.5?}", run(&weights, &aux_a)?);
    println!("  aux b -> {:.5?}", run(&weights, &aux_b)?);

    for k in [2, 3, 6, 7] {
        weights[k] = Tensor::zeros(weights[k].shape());
    }
    let (ha, hb) = (run(&weights, &aux_a)?, run(&weights, &aux_b)?);
    println!("auxiliary pathways zeroed");
    println!("  aux a -> {ha:.5?}");
    println!("  aux b -> {hb:.5?}");
    println!("  identical: {}", ha == hb);
    Ok(())
}
