//! Sparse versus dense attention on one score vector.

use mesin::entmax::{alpha_entmax, softmax, sparsemax};

fn main() -> mesin::error::Result<()> {
    let scores = [2.0, 1.2, 0.9, -0.5, -1.0];
    println!("scores     {scores:?}");
    println!("softmax    {:.4?}", softmax(&scores)?.weights());
    for gamma in [1.1, 1.3, 1.5, 1.8] {
        let w = alpha_entmax(&scores, gamma)?;
        println!("entmax {gamma:.1} {:.4?}  support {}", w.weights(), w.support_size());
    }
    println!("sparsemax  {:.4?}", sparsemax(&scores)?.weights());
    Ok(())
}
