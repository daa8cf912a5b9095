//! Fit an SNE accuracy predictor on a small zoo, save it and reload it.

use sne::config::RunConfig;
use sne::train::{load_artifact, save_artifact, Trainer};
use sne::zoo::arch::ArchId;
use sne::zoo::dataset::Generator;
use sne::zoo::{train_zoo, SplitTag, Zoo, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ZooSpec::new("blobs-demo", ArchId::Arch1, Generator::Blobs, 1);
    spec.dataset.size = 10;
    spec.dataset.train = 300;
    spec.dataset.test = 300;
    spec.population = 40;
    let dir = std::env::temp_dir().join("sne-example-train");
    train_zoo(&spec, &dir)?;
    let zoo = Zoo::load(&dir)?;

    let mut config = RunConfig::default();
    config.apply([
        "sab_hidden=8",
        "encoding_size=8",
        "pma_seed_size=8",
        "heads=2",
        "sab_blocks=1",
        "chunk_size=9",
        "head_hidden=32",
        "lr=0.003",
        "batch_size=8",
        "epochs=10",
    ])?;

    let (train, val) = (zoo.members(SplitTag::Train), zoo.members(SplitTag::Val));
    let mut trainer = Trainer::new(&config, zoo.name(), &train, &val)?;
    trainer.run_with(&train, &val, config.epochs, |h| {
        println!("epoch {:>2}  train {:.4}  val {:.4}  tau {:?}", h.epoch, h.train_loss, h.val_loss, h.val_tau);
    })?;
    println!("best: {:?}", trainer.best);

    let path = dir.join("sne.snea");
    save_artifact(&trainer, &path)?;
    let restored = load_artifact(&path)?;
    let model = zoo.members(SplitTag::Test)[0].model;
    println!(
        "prediction before/after reload: {:.5} / {:.5}",
        trainer.best_predictor().predict(model)?,
        restored.best_predictor().predict(model)?
    );
    Ok(())
}
