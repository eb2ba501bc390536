//! Finite-difference check of a small tanh/matmul chain through the tape.

use mesin::gradcheck::grad_check_many;
use mesin::tensor::Tensor;

fn main() -> mesin::error::Result<()> {
    let w = Tensor::matrix(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9])?;
    let x = Tensor::vector(vec![0.5, -1.5])?;
    let report = grad_check_many(
        |tape, v| {
            let h = tape.matmul(v[0], v[1])?;
            let h = tape.tanh(h)?;
            let h = tape.mul(h, h)?;
            tape.sum(h)
        },
        &[w, x],
        1e-5,
        1e-6,
    )?;
    println!("analytic {:?}", report.analytic);
    println!("numeric  {:?}", report.numeric);
    println!("max error {:.2e} passed {}", report.max_error, report.passed);
    Ok(())
}
