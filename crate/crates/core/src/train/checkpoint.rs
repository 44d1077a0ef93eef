//! Checkpoint file: `MSCKPT1`, a version byte, a `u32`-length-prefixed
//! key/value config document, then one record per tensor (u16 name length,
//! name, u8 rank, u32 dims, f64 payload, all little-endian), and a CRC32 of
//! everything before it.

use std::path::Path;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvWriter};
use crate::model::{ModelConfig, SegNet};
use crate::rng::RngState;
use crate::tensor::{ParamStore, Tensor};

use super::config::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"MSCKPT1";
const VERSION: u8 = 1;

/// Where training stood when the snapshot was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Cursor {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Shuffle stream position.
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore,
    pub cursor: Cursor,
    /// Validation Dice of this snapshot; NaN if no epoch has been validated.
    pub best_val_dice: f64,
}

impl Checkpoint {
    pub fn net(&self) -> Result<SegNet> {
        SegNet::new(&self.model)
    }

    fn config_doc(&self) -> String {
        let mut m = KvWriter::new();
        self.model.to_kv(&mut m);
        let mut t = KvWriter::new();
        self.train.to_kv(&mut t);
        let mut out = String::new();
        for (prefix, body) in [("model.", m.finish()), ("train.", t.finish())] {
            for line in body.lines() {
                out.push_str(prefix);
                out.push_str(line);
                out.push('\n');
            }
        }
        let mut w = KvWriter::new();
        w.put("cursor.epoch", self.cursor.epoch)
            .put("cursor.step", self.cursor.step)
            .put("cursor.rng_seed", self.cursor.rng.seed)
            .put("cursor.rng_stream", self.cursor.rng.stream)
            .put("cursor.rng_word_pos", self.cursor.rng.word_pos)
            .put("best_val_dice", self.best_val_dice);
        out + &w.finish()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(VERSION);
        let doc = self.config_doc();
        out.extend_from_slice(&(doc.len() as u32).to_le_bytes());
        out.extend_from_slice(doc.as_bytes());
        for (name, p) in self.params.iter() {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Malformed(format!("name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let shape = p.value.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let min = CHECKPOINT_MAGIC.len() + 1 + 4 + 4;
        if bytes.len() < min {
            return Err(Error::Truncated {
                expected: min,
                found: bytes.len(),
            });
        }
        if bytes[7] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[7]));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Reader { buf: body, pos: 8 };
        let doc_len = r.u32()? as usize;
        let doc = std::str::from_utf8(r.take(doc_len)?).map_err(|_| Error::Malformed("config is not UTF-8".into()))?;
        let mut doc = KvDoc::parse(doc)?;
        let mut m = doc.split_prefix("model.");
        let mut t = doc.split_prefix("train.");
        let model = ModelConfig::from_kv(&mut m, &ModelConfig::default())?;
        let train = TrainConfig::from_kv(&mut t, &TrainConfig::default())?;
        m.finish()?;
        t.finish()?;
        let cursor = Cursor {
            epoch: need(&mut doc, "cursor.epoch")?,
            step: need(&mut doc, "cursor.step")?,
            rng: RngState {
                seed: need(&mut doc, "cursor.rng_seed")?,
                stream: need(&mut doc, "cursor.rng_stream")?,
                word_pos: need(&mut doc, "cursor.rng_word_pos")?,
            },
        };
        let best_val_dice = need(&mut doc, "best_val_dice")?;
        doc.finish()?;

        // Records must follow the model's own declaration order exactly.
        let net = SegNet::new(&model)?;
        let mut params = ParamStore::new();
        for d in net.decls() {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Malformed("record name is not UTF-8".into()))?;
            if name != d.name {
                return Err(Error::Malformed(format!("expected record `{}`, found `{name}`", d.name)));
            }
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            if shape != d.shape {
                return Err(Error::Malformed(format!("record `{name}` has shape {shape:?}, expected {:?}", d.shape)));
            }
            let payload = r.take(8 * d.numel())?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?, d.kind)?;
        }
        if r.pos != body.len() {
            return Err(Error::Malformed(format!("{} unexpected bytes after the last record", body.len() - r.pos)));
        }
        Ok(Checkpoint {
            model,
            train,
            params,
            cursor,
            best_val_dice,
        })
    }
}

fn need<T>(doc: &mut KvDoc, key: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    doc.take(key)?.ok_or_else(|| Error::Malformed(format!("missing `{key}`")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.encode()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
