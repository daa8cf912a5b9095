//! Train a small zoo of Arch1 networks and summarize its splits.

use sne::zoo::arch::ArchId;
use sne::zoo::dataset::Generator;
use sne::zoo::{train_zoo, SplitTag, Zoo, ZooSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ZooSpec::new("rings-demo", ArchId::Arch1, Generator::Rings, 1);
    spec.dataset.size = 10;
    spec.dataset.train = 200;
    spec.dataset.test = 200;
    spec.population = 30;

    let dir = std::env::temp_dir().join("sne-example-zoo");
    let summary = train_zoo(&spec, &dir)?;
    println!("{summary:?}");

    // a second call finds every record and retrains nothing
    let again = train_zoo(&spec, &dir)?;
    println!("rerun: {} trained, {} resumed", again.trained, again.resumed);

    let zoo = Zoo::load(&dir)?;
    for split in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let acc: Vec<f64> = zoo.members(split).iter().map(|m| m.accuracy).collect();
        let mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
        println!("{split:?}: {} models, mean accuracy {mean:.3}", acc.len());
    }
    println!("manifest: {}", zoo.manifest_path().display());
    Ok(())
}
