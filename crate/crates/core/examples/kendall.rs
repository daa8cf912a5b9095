use sne::kendall::{kendall_tau, kendall_tau_brute};

fn main() {
    let truth = [0.91, 0.85, 0.85, 0.62, 0.40, 0.12];
    let predicted = [0.88, 0.80, 0.83, 0.70, 0.35, 0.35];
    let fast = kendall_tau(&predicted, &truth).unwrap();
    let brute = kendall_tau_brute(&predicted, &truth).unwrap();
    println!("tau-b = {fast:.4} (brute force {brute:.4})");

    // any strictly increasing map of the predictions leaves tau unchanged
    let squashed: Vec<f64> = predicted.iter().map(|p| (5.0 * p).exp()).collect();
    println!("after exp(5x): {:.4}", kendall_tau(&squashed, &truth).unwrap());

    println!("constant input: {:?}", kendall_tau(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]));
}
