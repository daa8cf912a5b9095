//! The two fixed-architecture baselines: per-layer statistics and flattened
//! weights. Both refuse a network whose layout differs from the one they were fitted on.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sne::baselines::{statnn_features, BaselineKind, FeatureBaseline};
use sne::checkpoint::CheckpointModel;
use sne::tensor::ParamStore;
use sne::zoo::arch::{build_arch, ArchId, Init, InitScheme};

fn sample(arch: ArchId, input: [usize; 3], seed: u64) -> Result<CheckpointModel, Box<dyn std::error::Error>> {
    let mut store = ParamStore::new();
    let init = Init {
        scheme: InitScheme::Normal,
        std: 0.1,
    };
    let net = build_arch(arch, input, init, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(net.to_checkpoint(&store, BTreeMap::new())?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train: Vec<CheckpointModel> = (0..8).map(|s| sample(ArchId::Arch1, [1, 10, 10], s)).collect::<Result<_, _>>()?;
    let refs: Vec<&CheckpointModel> = train.iter().collect();
    println!("raw STATNN features of one model: {}", statnn_features(&train[0]).len());

    let other = sample(ArchId::Arch2, [3, 28, 28], 99)?;
    for kind in [BaselineKind::Statnn, BaselineKind::Mlp] {
        let fitted = FeatureBaseline::fit(kind, &refs)?;
        let f = fitted.features(&train[0])?;
        println!("{kind:?}: {} standardized features, first {:+.3}", fitted.input_dim(), f[0]);
        match fitted.features(&other) {
            Ok(_) => println!("  unexpectedly accepted arch2"),
            Err(e) => println!("  arch2 -> exit code {}: {e}", e.exit_code()),
        }
    }
    Ok(())
}
