//! Trained-predictor artifact: `SNEA`, u32 version, u64 header length, a JSON
//! header, then little-endian f64 data for the current parameters, the best
//! parameters and both Adam moments, each in parameter-store order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BestEpoch, EpochStats, Predictor, TrainedOn, Trainer};
use crate::baselines::FeatureBaseline;
use crate::config::RunConfig;
use crate::error::{validation, Result};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::train::Encoder;

pub const ARTIFACT_MAGIC: &[u8; 4] = b"SNEA";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    config: RunConfig,
    baseline: Option<FeatureBaseline>,
    input_scale: Option<[f64; 2]>,
    trained_on: TrainedOn,
    epoch: usize,
    best: Option<BestEpoch>,
    history: Vec<EpochStats>,
    divergence: Option<String>,
    adam_config: AdamConfig,
    adam_step: u64,
    tensors: Vec<TensorMeta>,
}

fn push_tensors<'a>(out: &mut Vec<u8>, ts: impl Iterator<Item = &'a Tensor>) {
    for t in ts {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_artifact(t: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let store = &t.predictor.store;
    let header = Header {
        fingerprint: t.predictor.config.fingerprint(),
        config: t.predictor.config.clone(),
        baseline: match &t.predictor.encoder {
            Encoder::Baseline(b) => Some(b.clone()),
            Encoder::Sne(_) => None,
        },
        input_scale: t.predictor.input_scale(),
        trained_on: t.trained_on.clone(),
        epoch: t.epoch,
        best: t.best.clone(),
        history: t.history.clone(),
        divergence: t.divergence.clone(),
        adam_config: t.adam.config,
        adam_step: t.adam.step,
        tensors: store
            .ids()
            .map(|id| TensorMeta {
                name: store.name(id).to_string(),
                shape: store.get(id).shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 32 * store.num_scalars());
    out.extend_from_slice(ARTIFACT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_tensors(&mut out, store.ids().map(|id| store.get(id)));
    push_tensors(&mut out, t.best_store.ids().map(|id| t.best_store.get(id)));
    push_tensors(&mut out, t.adam.first.iter());
    push_tensors(&mut out, t.adam.second.iter());
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| validation("artifact is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn fill(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            self.fill_tensor(store.get_mut(id))?;
        }
        Ok(())
    }

    fn fill_tensor(&mut self, t: &mut Tensor) -> Result<()> {
        let n = t.numel();
        let raw = self.take(8 * n)?;
        for (v, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<Trainer> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != ARTIFACT_MAGIC {
        return Err(validation(format!("{} is not a predictor artifact", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(validation(format!("artifact version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    if header.fingerprint != header.config.fingerprint() {
        return Err(validation("artifact fingerprint does not match its config"));
    }
    let mut predictor = Predictor::build(&header.config, header.baseline)?;
    if let (Encoder::Sne(p), Some(scale)) = (&mut predictor.encoder, header.input_scale) {
        p.input_scale = scale;
    }
    let store = &predictor.store;
    let layout_ok = store.len() == header.tensors.len()
        && store
            .ids()
            .zip(&header.tensors)
            .all(|(id, m)| store.name(id) == m.name && store.get(id).shape() == m.shape.as_slice());
    if !layout_ok {
        return Err(validation("artifact tensor layout does not match its config"));
    }
    r.fill(&mut predictor.store)?;
    let mut best_store = predictor.store.clone();
    r.fill(&mut best_store)?;
    let mut adam = AdamState::new(&predictor.store, header.adam_config);
    adam.step = header.adam_step;
    for t in adam.first.iter_mut() {
        r.fill_tensor(t)?;
    }
    for t in adam.second.iter_mut() {
        r.fill_tensor(t)?;
    }
    if r.pos != bytes.len() {
        return Err(validation("trailing bytes after artifact data"));
    }
    Ok(Trainer {
        predictor,
        adam,
        best_store,
        best: header.best,
        epoch: header.epoch,
        history: header.history,
        trained_on: header.trained_on,
        divergence: header.divergence,
    })
}
