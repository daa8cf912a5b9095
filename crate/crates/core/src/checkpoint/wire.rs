//! Binary container, all integers and floats little-endian:
//!
//! ```text
//! magic    b"SNEC"
//! version  u32
//! layers   u32
//! per layer:
//!   kind   u8          (0 = linear, 1 = conv2d)
//!   rank   u8, dims u32 * rank
//!   weights f32 * prod(dims)
//!   has_bias u8, [bias_len u32, f32 * bias_len]
//! metadata:
//!   block_len u32, entries u32,
//!   per entry: key_len u32, key utf-8, value_len u32, value utf-8
//! ```

use std::collections::BTreeMap;

use super::{CheckpointError, CheckpointModel, LayerKind, LayerRecord, Result};

pub const MAGIC: [u8; 4] = *b"SNEC";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(model: &CheckpointModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * model.num_params());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.push(l.kind.tag());
        out.push(l.shape.len() as u8);
        for &d in &l.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for w in &l.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        match &l.bias {
            None => out.push(0),
            Some(b) => {
                out.push(1);
                out.extend_from_slice(&(b.len() as u32).to_le_bytes());
                for v in b {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let mut meta = Vec::new();
    meta.extend_from_slice(&(model.metadata.len() as u32).to_le_bytes());
    for (k, v) in &model.metadata {
        for s in [k, v] {
            meta.extend_from_slice(&(s.len() as u32).to_le_bytes());
            meta.extend_from_slice(s.as_bytes());
        }
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &dyn Fn() -> String) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &dyn Fn() -> String) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| CheckpointError::Truncated(what()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    fn string(&mut self, what: &dyn Fn() -> String) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Utf8)
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<CheckpointModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = || "header".to_string();
    let magic: [u8; 4] = r.take(4, &header)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32(&header)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32(&header)? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let at = |part: &'static str| move || format!("layer {i} {part}");
        let kind = LayerKind::from_tag(r.u8(&at("kind"))?)?;
        let rank = r.u8(&at("shape"))? as usize;
        let shape = (0..rank)
            .map(|_| r.u32(&at("shape")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::ShapeMismatch {
                layer: i,
                msg: format!("shape {shape:?} overflows"),
            })?;
        let weights = r.f32s(n, &at("weights"))?;
        let bias = match r.u8(&at("bias flag"))? {
            0 => None,
            1 => {
                let len = r.u32(&at("bias"))? as usize;
                Some(r.f32s(len, &at("bias"))?)
            }
            f => {
                return Err(CheckpointError::ShapeMismatch {
                    layer: i,
                    msg: format!("bias flag {f} is not 0 or 1"),
                })
            }
        };
        layers.push(LayerRecord::new(kind, shape, weights, bias, i)?);
    }
    let meta_ctx = || "metadata".to_string();
    let block = r.u32(&meta_ctx)? as usize;
    let start = r.pos;
    let entries = r.u32(&meta_ctx)?;
    let mut metadata = BTreeMap::new();
    for _ in 0..entries {
        let k = r.string(&meta_ctx)?;
        let v = r.string(&meta_ctx)?;
        metadata.insert(k, v);
    }
    if r.pos - start != block {
        return Err(CheckpointError::InvalidModel(format!(
            "metadata block declares {block} bytes, holds {}",
            r.pos - start
        )));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    CheckpointModel::new(layers, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::testing::{arch1_spec, random_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch1() -> CheckpointModel {
        random_model(&mut ChaCha8Rng::seed_from_u64(7), &arch1_spec())
    }

    #[test]
    fn round_trip_is_identity() {
        let m = arch1();
        let bytes = write_checkpoint(&m);
        assert_eq!(read_checkpoint(&bytes).unwrap(), m);
        assert_eq!(write_checkpoint(&read_checkpoint(&bytes).unwrap()), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = write_checkpoint(&arch1());
        assert_eq!(&bytes[..4], b"SNEC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
        assert_eq!(bytes[12], LayerKind::Conv2d.tag());
        assert_eq!(bytes[13], 4);
    }

    #[test]
    fn distinct_errors() {
        let bytes = write_checkpoint(&arch1());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            read_checkpoint(&bad),
            Err(CheckpointError::BadVersion { found: 9, expected: 1 })
        ));
        let mut bad = bytes.clone();
        bad[12] = 5;
        assert!(matches!(read_checkpoint(&bad), Err(CheckpointError::UnknownKind(5))));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(read_checkpoint(&bad), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn truncation_names_the_layer() {
        let bytes = write_checkpoint(&arch1());
        // layer 0: 2 + 16 + 144*4 + 1 + 4 + 16*4 bytes after the 12-byte header
        let layer1_start = 12 + 2 + 16 + 144 * 4 + 1 + 4 + 64;
        let err = read_checkpoint(&bytes[..layer1_start + 40]).unwrap_err();
        match err {
            CheckpointError::Truncated(what) => assert_eq!(what, "layer 1 weights"),
            e => panic!("unexpected {e}"),
        }
        let err = read_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, CheckpointError::Truncated(ref w) if w == "metadata"));
        assert!(matches!(read_checkpoint(&bytes[..6]), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn bias_count_mismatch_is_a_shape_error() {
        let m = CheckpointModel::new(
            vec![LayerRecord::new(LayerKind::Linear, vec![2, 1], vec![1.0, 2.0], Some(vec![0.5, 0.5]), 0).unwrap()],
            BTreeMap::new(),
        )
        .unwrap();
        let mut bytes = write_checkpoint(&m);
        // bias length field sits after kind, rank, dims and weights
        let at = 12 + 2 + 8 + 8 + 1;
        bytes[at..at + 4].copy_from_slice(&1u32.to_le_bytes());
        bytes.truncate(at + 4 + 4);
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint(&bytes),
            Err(CheckpointError::ShapeMismatch { layer: 0, .. })
        ));
    }
}
