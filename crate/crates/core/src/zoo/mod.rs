//! Modelzoo generation: populations of small CNNs trained with sampled
//! hyperparameters on synthetic datasets, labelled with their test accuracy.
//!
//! Directory layout:
//!
//! ```text
//! <zoo>/spec.json               the ZooSpec
//! <zoo>/checkpoints/NNNNN.snec  binary checkpoints
//! <zoo>/records/NNNNN.json      per-trainee results (resume points)
//! <zoo>/manifest.jsonl          one ZooRecord per line, in id order
//! ```

pub mod arch;
pub mod dataset;
pub mod trainee;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointModel, META_ACCURACY, META_DATASET};
use crate::error::{validation, Error, Result};
use arch::ArchId;
use dataset::{generate_dataset, DatasetSpec, Generator, SyntheticDataset};
use trainee::{train_trainee, HyperRanges, Hyperparameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooSpec {
    pub name: String,
    pub arch: ArchId,
    pub dataset: DatasetSpec,
    pub population: usize,
    pub ranges: HyperRanges,
    pub master_seed: u64,
    /// Train, validation and test fractions.
    pub split: (f64, f64, f64),
}

impl ZooSpec {
    /// Desk-scale defaults for a generator: 200 trainees, 40/10/50 split.
    pub fn new(name: impl Into<String>, arch: ArchId, generator: Generator, channels: usize) -> Self {
        Self {
            name: name.into(),
            arch,
            dataset: DatasetSpec {
                generator,
                channels,
                size: 28,
                train: 500,
                test: 500,
                noise: 0.8,
                seed: 0,
            },
            population: 200,
            ranges: HyperRanges::default(),
            master_seed: 0,
            split: (0.4, 0.1, 0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(validation("population must be positive"));
        }
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(validation(format!("split fractions {:?} must be in [0, 1] and sum to 1", self.split)));
        }
        self.dataset.validate()?;
        self.ranges.validate()?;
        arch::arch_layers(self.arch, [self.dataset.channels, self.dataset.size, self.dataset.size])?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Non-finite loss during training; excluded from every split.
    Failed,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooRecord {
    pub id: usize,
    pub status: Status,
    /// Path relative to the zoo directory.
    pub checkpoint: Option<String>,
    pub accuracy: Option<f64>,
    pub split: Option<SplitTag>,
    pub hyperparameters: Hyperparameters,
}

/// Split sizes for `n` usable trainees; the test split takes the remainder.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let train = (n as f64 * fractions.0).round() as usize;
    let val = ((n as f64 * fractions.1).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn trainee_rng(master: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id as u64 + 1);
    rng
}

fn assign_splits(records: &mut [ZooRecord], spec: &ZooSpec) {
    let mut ok: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.status == Status::Ok)
        .map(|(i, _)| i)
        .collect();
    let mut rng = trainee_rng(spec.master_seed, usize::MAX - 1);
    ok.shuffle(&mut rng);
    let (tr, va, _) = split_sizes(ok.len(), spec.split);
    for (rank, &i) in ok.iter().enumerate() {
        records[i].split = Some(if rank < tr {
            SplitTag::Train
        } else if rank < tr + va {
            SplitTag::Val
        } else {
            SplitTag::Test
        });
    }
}

fn train_one(spec: &ZooSpec, data: &SyntheticDataset, dir: &Path, id: usize) -> Result<ZooRecord> {
    let mut rng = trainee_rng(spec.master_seed, id);
    let hp = spec.ranges.sample(&mut rng);
    let record = match train_trainee(spec.arch, data, &hp, &mut rng) {
        Ok(t) => {
            let mut meta = BTreeMap::new();
            meta.insert(META_DATASET.to_string(), spec.dataset.generator.to_string());
            meta.insert(META_ACCURACY.to_string(), format!("{}", t.test_accuracy));
            meta.insert("zoo".to_string(), spec.name.clone());
            meta.insert("hyperparameters".to_string(), serde_json::to_string(&hp)?);
            let model = t.net.to_checkpoint(&t.store, meta)?;
            let rel = format!("checkpoints/{id:05}.snec");
            model.save(dir.join(&rel))?;
            ZooRecord {
                id,
                status: Status::Ok,
                checkpoint: Some(rel),
                accuracy: Some(t.test_accuracy),
                split: None,
                hyperparameters: hp,
            }
        }
        Err(Error::Tensor(_)) => ZooRecord {
            id,
            status: Status::Failed,
            checkpoint: None,
            accuracy: None,
            split: None,
            hyperparameters: hp,
        },
        Err(e) => return Err(e),
    };
    let tmp = dir.join(format!("records/{id:05}.json.tmp"));
    fs::write(&tmp, serde_json::to_string(&record)?)?;
    fs::rename(&tmp, dir.join(format!("records/{id:05}.json")))?;
    Ok(record)
}

/// Outcome of [`train_zoo`].
#[derive(Debug, Clone)]
pub struct ZooSummary {
    pub trained: usize,
    pub resumed: usize,
    pub failed: usize,
}

/// Trains the population described by `spec` into `dir`. Trainees already
/// recorded under `records/` are reused, so an interrupted run resumes.
pub fn train_zoo(spec: &ZooSpec, dir: &Path) -> Result<ZooSummary> {
    spec.validate()?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::create_dir_all(dir.join("records"))?;
    let spec_path = dir.join("spec.json");
    if spec_path.exists() {
        let existing: ZooSpec = serde_json::from_str(&fs::read_to_string(&spec_path)?)?;
        if &existing != spec {
            return Err(validation(format!("{} holds a zoo with a different spec", dir.display())));
        }
    } else {
        fs::write(&spec_path, serde_json::to_string_pretty(spec)?)?;
    }
    let data = generate_dataset(&spec.dataset)?;
    let done = |id: usize| -> Option<ZooRecord> {
        let text = fs::read_to_string(dir.join(format!("records/{id:05}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    };
    let results: Vec<(ZooRecord, bool)> = (0..spec.population)
        .into_par_iter()
        .map(|id| match done(id) {
            Some(r) => Ok((r, true)),
            None => train_one(spec, &data, dir, id).map(|r| (r, false)),
        })
        .collect::<Result<_>>()?;
    let resumed = results.iter().filter(|(_, r)| *r).count();
    let mut records: Vec<ZooRecord> = results.into_iter().map(|(r, _)| r).collect();
    assign_splits(&mut records, spec);
    let failed = records.iter().filter(|r| r.status == Status::Failed).count();
    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r)?);
        manifest.push('\n');
    }
    fs::write(dir.join("manifest.jsonl"), manifest)?;
    Ok(ZooSummary {
        trained: spec.population - resumed,
        resumed,
        failed,
    })
}

/// A loaded zoo: spec, manifest and every successful checkpoint.
#[derive(Debug, Clone)]
pub struct Zoo {
    pub dir: PathBuf,
    pub spec: ZooSpec,
    pub records: Vec<ZooRecord>,
    models: BTreeMap<usize, CheckpointModel>,
}

/// A labelled zoo member.
#[derive(Debug, Clone, Copy)]
pub struct Member<'z> {
    pub id: usize,
    pub model: &'z CheckpointModel,
    pub accuracy: f64,
}

impl Zoo {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let spec: ZooSpec = serde_json::from_str(&fs::read_to_string(dir.join("spec.json")).map_err(|e| {
            validation(format!("{} is not a zoo directory: {e}", dir.display()))
        })?)?;
        let records = fs::read_to_string(dir.join("manifest.jsonl"))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ZooRecord>, _>>()?;
        let mut models = BTreeMap::new();
        for r in &records {
            if let (Status::Ok, Some(path)) = (r.status, &r.checkpoint) {
                models.insert(r.id, CheckpointModel::load(dir.join(path))?);
            }
        }
        Ok(Self {
            dir,
            spec,
            records,
            models,
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn members(&self, split: SplitTag) -> Vec<Member<'_>> {
        self.records
            .iter()
            .filter(|r| r.split == Some(split))
            .map(|r| Member {
                id: r.id,
                model: &self.models[&r.id],
                accuracy: r.accuracy.expect("successful record has accuracy"),
            })
            .collect()
    }

    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.status == Status::Failed).count()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str) -> ZooSpec {
        let mut s = ZooSpec::new(name, ArchId::Arch1, Generator::Blobs, 1);
        s.dataset.size = 8;
        s.dataset.train = 40;
        s.dataset.test = 20;
        s.population = 10;
        s.ranges.epochs = (1, 2);
        s
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(200, (0.4, 0.1, 0.5)), (80, 20, 100));
        assert_eq!(split_sizes(10, (0.4, 0.1, 0.5)), (4, 1, 5));
        assert_eq!(split_sizes(3, (0.5, 0.5, 0.0)), (2, 1, 0));
    }

    #[test]
    fn spec_validation() {
        let mut s = tiny("x");
        s.population = 0;
        assert!(s.validate().is_err());
        let mut s = tiny("x");
        s.split = (0.5, 0.5, 0.5);
        assert!(s.validate().is_err());
        let mut s = tiny("x");
        s.arch = ArchId::Arch2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zoo_round_trip_resume_and_determinism() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = tiny("blobs-a");
        let a = tmp.path().join("a");
        let s = train_zoo(&spec, &a).unwrap();
        assert_eq!(s.trained, 10);
        let zoo = Zoo::load(&a).unwrap();
        assert_eq!(zoo.records.len(), 10);
        assert!(zoo.records.iter().all(|r| r.accuracy.map_or(true, |y| (0.0..=1.0).contains(&y))));
        let ids = |t| zoo.members(t).iter().map(|m| m.id).collect::<Vec<_>>();
        let (tr, va, te) = (ids(SplitTag::Train), ids(SplitTag::Val), ids(SplitTag::Test));
        assert_eq!(tr.len() + va.len() + te.len() + zoo.failed(), 10);
        assert!(tr.iter().all(|i| !va.contains(i) && !te.contains(i)));
        assert!(va.iter().all(|i| !te.contains(i)));

        // resume: drop two records, rerun, identical manifest
        let manifest = fs::read(zoo.manifest_path()).unwrap();
        fs::remove_file(a.join("records/00003.json")).unwrap();
        fs::remove_file(a.join("records/00007.json")).unwrap();
        let s = train_zoo(&spec, &a).unwrap();
        assert_eq!((s.trained, s.resumed), (2, 8));
        assert_eq!(fs::read(a.join("manifest.jsonl")).unwrap(), manifest);

        // fresh directory, same spec: byte-identical manifest and checkpoints
        let b = tmp.path().join("b");
        train_zoo(&spec, &b).unwrap();
        assert_eq!(fs::read(b.join("manifest.jsonl")).unwrap(), manifest);
        assert_eq!(
            fs::read(a.join("checkpoints/00004.snec")).unwrap_or_default(),
            fs::read(b.join("checkpoints/00004.snec")).unwrap_or_default()
        );

        let mut other = spec.clone();
        other.master_seed = 9;
        assert!(train_zoo(&other, &a).is_err());
    }
}
