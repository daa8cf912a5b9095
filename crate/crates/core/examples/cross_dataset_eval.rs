//! Train a predictor on one zoo and score it on the test splits of two zoos.

use sne::config::RunConfig;
use sne::eval::{cross_eval, EvalMode, TrainedPredictor};
use sne::train::train_predictor;
use sne::zoo::arch::ArchId;
use sne::zoo::dataset::Generator;
use sne::zoo::{train_zoo, SplitTag, Zoo, ZooSpec};

fn zoo(generator: Generator) -> Result<Zoo, Box<dyn std::error::Error>> {
    let mut spec = ZooSpec::new(generator.to_string(), ArchId::Arch1, generator, 1);
    spec.dataset.size = 10;
    spec.dataset.train = 200;
    spec.dataset.test = 200;
    spec.population = 40;
    let dir = std::env::temp_dir().join(format!("sne-example-eval-{generator}"));
    train_zoo(&spec, &dir)?;
    Ok(Zoo::load(&dir)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (blobs, strokes) = (zoo(Generator::Blobs)?, zoo(Generator::Strokes)?);
    let mut config = RunConfig::default();
    config.apply(["encoder=statnn", "head_hidden=32", "lr=0.001", "batch_size=8", "epochs=20"])?;

    let mut seeds = Vec::new();
    for seed in 0..2 {
        config.seed = seed;
        let t = train_predictor(&config, blobs.name(), &blobs.members(SplitTag::Train), &blobs.members(SplitTag::Val))?;
        seeds.push(TrainedPredictor::from_trainer(&t));
    }
    let report = cross_eval(&[seeds], &[&blobs, &strokes], EvalMode::CrossDataset)?;
    print!("{}", report.to_csv());
    print!("{}", sne::cli::render_report(&report));
    Ok(())
}
