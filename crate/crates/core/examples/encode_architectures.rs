//! One SNE parameter set encodes networks of two unrelated architectures.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sne::config::RunConfig;
use sne::tensor::ParamStore;
use sne::train::Predictor;
use sne::zoo::arch::{build_arch, ArchId, Init, InitScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.apply(["sab_hidden=16", "encoding_size=16", "pma_seed_size=16", "chunk_size=16", "head_hidden=16"])?;
    let predictor = Predictor::build(&config, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let init = Init {
        scheme: InitScheme::Uniform,
        std: 0.2,
    };
    for (arch, input) in [(ArchId::Arch1, [1, 28, 28]), (ArchId::Arch2, [3, 28, 28])] {
        let mut store = ParamStore::new();
        let net = build_arch(arch, input, init, &mut store, &mut rng)?;
        let model = net.to_checkpoint(&store, BTreeMap::new())?;
        let z = predictor.encode(&model)?;
        println!(
            "{arch}: {} layers, {} params -> encoding of width {}: {:?}",
            model.layers.len(),
            model.num_params(),
            z.len(),
            &z[..4]
        );
    }
    Ok(())
}
