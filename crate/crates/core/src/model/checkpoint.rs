//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "APCG" | u32 version | u32 header_len | header JSON
//! | u32 tensor_count | tensor*
//! | u32 crc32 of every preceding byte
//! tensor = u32 name_len | name | u8 dtype (0 = f32, 1 = f64)
//!        | u32 rank | u64 dims[rank] | payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParams, Weights};
use crate::corpus::Vocab;
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"APCG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Self::F32 => 0,
            Self::F64 => 1,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    model_version: String,
    precision: Precision,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::IncompatibleCheckpoint(msg.into())
}

/// Writes `model` to `path` through a temporary file and rename.
pub fn save_checkpoint(model: &Model, path: &Path, precision: Precision) -> Result<(), ModelError> {
    let header = serde_json::to_vec(&Header {
        config: model.params.config.clone(),
        vocab: model.vocab.clone(),
        model_version: model.version.clone(),
        precision,
    })
    .map_err(|e| bad(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    let named = model.params.named();
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(precision.tag());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            match precision {
                Precision::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads a checkpoint, validating magic, version, checksum and tensor layout.
pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch"));
    }
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate().map_err(|e| bad(e.to_string()))?;

    let mut weights = Weights::zeros(&header.config);
    let mut expected = Vec::new();
    weights.visit("", &mut |n, t| expected.push((n.to_owned(), t.shape().to_vec())));
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(bad(format!("{count} tensors, config needs {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let name_len = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("tensor name not utf-8"))?;
        if got != name {
            return Err(bad(format!("tensor {got:?} where {name:?} expected")));
        }
        let dtype = r.take(1)?[0];
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        if &dims != shape {
            return Err(bad(format!("{name}: shape {dims:?}, config needs {shape:?}")));
        }
        let n: usize = dims.iter().product();
        let data: Vec<f64> = match dtype {
            0 => r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect(),
            1 => r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
            t => return Err(bad(format!("{name}: unknown dtype tag {t}"))),
        };
        loaded.push(Tensor::new(dims, data).map_err(|e| bad(e.to_string()))?);
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    let mut it = loaded.into_iter();
    weights.visit_mut("", &mut |_, t| *t = it.next().expect("count checked"));

    let params = ModelParams::new(header.config, weights)?;
    if params.config.vocab_size != header.vocab.len() {
        return Err(ModelError::VocabMismatch {
            checkpoint: params.config.vocab_size,
            vocab: header.vocab.len(),
        });
    }
    Ok(Model {
        params,
        vocab: header.vocab,
        version: header.model_version,
    })
}

/// Loads a checkpoint and checks it against the vocabulary currently in use.
pub fn load_checkpoint_for(path: &Path, vocab: &Vocab) -> Result<Model, ModelError> {
    let model = load_checkpoint(path)?;
    if model.vocab.len() != vocab.len() {
        return Err(ModelError::VocabMismatch {
            checkpoint: model.vocab.len(),
            vocab: vocab.len(),
        });
    }
    if model.vocab.tokens() != vocab.tokens() {
        return Err(bad("vocabulary tokens differ"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let words: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let vocab = Vocab::build([words], 1, 100).unwrap();
        Model::new(ModelParams::random(ModelConfig::toy(vocab.len()), 3).unwrap(), vocab).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path, Precision::F64).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"APCG");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn f32_round_trip_exact_at_stored_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path, Precision::F32).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for ((_, a), (_, b)) in m.params.named().iter().zip(back.params.named()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        // Resaving the f32 model reproduces the same file.
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&back, &path2, Precision::F32).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_or_corrupt_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path, Precision::F64).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            let err = load_checkpoint(&path).unwrap_err();
            assert_eq!(err.code(), "incompatible_checkpoint", "cut {cut}: {err}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        fs::write(&path, &flipped).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().code(), "incompatible_checkpoint");
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        fs::write(&path, &wrong_version).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().code(), "incompatible_checkpoint");
    }

    #[test]
    fn vocab_size_mismatch_surfaces_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path, Precision::F64).unwrap();
        let words: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let other = Vocab::build([words], 1, 100).unwrap();
        assert!(matches!(
            load_checkpoint_for(&path, &other),
            Err(ModelError::VocabMismatch { .. })
        ));
    }
}
