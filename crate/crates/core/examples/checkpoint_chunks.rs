//! Snapshot a freshly initialized Arch1 network, round-trip it through the
//! binary checkpoint format and split every layer into chunks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sne::checkpoint::{chunk_layer, CheckpointModel, Stream};
use sne::tensor::ParamStore;
use sne::zoo::arch::{build_arch, ArchId, Init, InitScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut store = ParamStore::new();
    let init = Init {
        scheme: InitScheme::Normal,
        std: 0.1,
    };
    let net = build_arch(ArchId::Arch1, [1, 28, 28], init, &mut store, &mut ChaCha8Rng::seed_from_u64(1))?;
    let model = net.to_checkpoint(&store, BTreeMap::new())?;

    let path = std::env::temp_dir().join("sne-example-arch1.snec");
    model.save(&path)?;
    let loaded = CheckpointModel::load(&path)?;
    assert_eq!(loaded, model);
    println!("{} parameters, {} bytes on disk", model.num_params(), std::fs::metadata(&path)?.len());

    let c = 32;
    for layer in &loaded.layers {
        let w = chunk_layer(layer, Stream::Weights, c)?;
        let b = chunk_layer(layer, Stream::Bias, c)?;
        println!(
            "layer {} {:?} {:?}: {} weight chunks, {} bias chunks",
            layer.layer_index,
            layer.kind,
            layer.shape,
            w.set.len(),
            b.set.len()
        );
    }
    Ok(())
}
