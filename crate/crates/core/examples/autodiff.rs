//! Reverse-mode gradients of a small expression, checked against central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sne::tensor::gradcheck::{check_inputs, Tolerance};
use sne::tensor::{Graph, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(&[3, 2], vec![1.0, -0.5, 0.25, 0.75, -1.5, 0.2])?;

    // loss = mean(tanh(x @ w))
    let mut g = Graph::detached();
    let (xv, wv) = (g.input(x.clone())?, g.input(w.clone())?);
    let h = g.matmul(xv, wv)?;
    let h = g.tanh(h)?;
    let loss = g.mean(h)?;
    let grads = g.backward(loss)?;
    println!("loss   {:.6}", g.value(loss).item());
    println!("dL/dw  {:?}", grads.wrt(wv).unwrap().data());

    let report = check_inputs(
        &[x, w],
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.tanh(h)?;
            g.mean(h)
        },
        20,
        Tolerance::OP,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    println!("gradcheck: {} coordinates, passed = {}", report.checked, report.passed());
    Ok(())
}
