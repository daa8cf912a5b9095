//! SAB is permutation-equivariant and PMA pools a set into one vector
//! regardless of row order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sne::set_blocks::{pma, BlockConfig, PmaParams, SabStack};
use sne::tensor::{Graph, ParamStore, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let cfg = BlockConfig {
        width: 8,
        heads: 2,
        use_layer_norm: false,
    };
    let sabs = SabStack::new(&mut store, "sab", cfg, 2, &mut rng)?;
    let pool = PmaParams::new(&mut store, "pma", cfg, &mut rng)?;

    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut reversed = rows.clone();
    reversed.reverse();

    for (label, set) in [("original", rows), ("reversed", reversed)] {
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_rows(&set)?)?;
        let y = sabs.forward(&mut g, x)?;
        let z = pma(&mut g, y, &pool)?;
        println!("{label:>9}: SAB row0 {:+.4}  pooled {:?}", g.value(y).row(0)[0], &g.value(z).data()[..3]);
    }
    Ok(())
}
