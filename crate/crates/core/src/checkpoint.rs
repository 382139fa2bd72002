//! Binary model checkpoints.
//!
//! Layout, little endian throughout:
//! `DRGN`, u32 version, then four length-prefixed UTF-8 blocks (config text,
//! token TSV, entity names, relation names), a u32 tensor count, and per
//! tensor: name, u8 dtype, u32 rank, u32 dims, raw values.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::{Provenance, RunConfig};
use crate::encoder::VocabSizes;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{DType, Real, Tensor};
use crate::rng::SeedStream;
use crate::text::TokenVocab;

const MAGIC: &[u8; 4] = b"DRGN";
pub const VERSION: u32 = 1;

/// A model together with everything needed to interpret its inputs.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Real> {
    pub config: RunConfig,
    pub tokens: TokenVocab,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub model: Model<F>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| bad("value exceeds u32"))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn text(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| bad("invalid UTF-8 block"))
    }
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn lines(names: &[String]) -> String {
    names.iter().map(|n| format!("{n}\n")).collect()
}

/// Borrowed view of a checkpoint's parts, for saving without moving the model.
pub struct CheckpointRef<'a, F: Real> {
    pub config: &'a RunConfig,
    pub tokens: &'a TokenVocab,
    pub entities: &'a [String],
    pub relations: &'a [String],
    pub model: &'a Model<F>,
}

impl<F: Real> CheckpointRef<'_, F> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION as usize)?;
        w.text(&self.config.to_text())?;
        w.text(&self.tokens.to_tsv())?;
        w.text(&lines(self.entities))?;
        w.text(&lines(self.relations))?;
        w.u32(self.model.store.len())?;
        for (_, p) in self.model.store.iter() {
            w.text(&p.name)?;
            w.0.push(dtype_tag(F::DTYPE));
            w.u32(p.tensor.rank())?;
            for &d in p.tensor.shape() {
                w.u32(d)?;
            }
            for x in p.tensor.data() {
                match F::DTYPE {
                    DType::F32 => w.0.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes()),
                    DType::F64 => w.0.extend_from_slice(&x.to_f64_lossy().to_le_bytes()),
                }
            }
        }
        Ok(w.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

impl<F: Real> Checkpoint<F> {
    pub fn view(&self) -> CheckpointRef<'_, F> {
        CheckpointRef {
            config: &self.config,
            tokens: &self.tokens,
            entities: &self.entities,
            relations: &self.relations,
            model: &self.model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.view().to_bytes()
    }

    /// Rebuilds the architecture from the stored config and vocabularies, then
    /// overwrites every parameter. Names, shapes, and precision must all match.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut config = RunConfig::default();
        config.merge_text(r.text()?, "checkpoint config", Provenance::File)?;
        let tokens = TokenVocab::from_tsv(r.text()?, "checkpoint tokens")?;
        let entities: Vec<String> = r.text()?.lines().map(str::to_string).collect();
        let relations: Vec<String> = r.text()?.lines().map(str::to_string).collect();
        let sizes = VocabSizes {
            tokens: tokens.len(),
            entities: entities.len(),
            relations: relations.len(),
        };
        let mut model = Model::<F>::new(config.model()?, sizes, SeedStream::new(config.seed()?))?;
        let count = r.u32()?;
        if count != model.store.len() {
            return Err(bad(format!("{count} tensors stored, architecture has {}", model.store.len())));
        }
        for _ in 0..count {
            let name = r.text()?;
            let id = model.store.id(name).ok_or_else(|| bad(format!("unknown tensor `{name}`")))?;
            let tag = r.u8()?;
            if tag != dtype_tag(F::DTYPE) {
                return Err(bad(format!("tensor `{name}` has dtype tag {tag}, expected {}", dtype_tag(F::DTYPE))));
            }
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let slot = &mut model.store.get_mut(id).tensor;
            if shape != slot.shape() {
                return Err(bad(format!("tensor `{name}` has shape {shape:?}, expected {:?}", slot.shape())));
            }
            let n: usize = shape.iter().product();
            let data: Vec<F> = match F::DTYPE {
                DType::F32 => r.take(n * 4)?.chunks_exact(4).map(|b| F::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)).collect(),
                DType::F64 => r
                    .take(n * 8)?
                    .chunks_exact(8)
                    .map(|b| F::of(f64::from_le_bytes(b.try_into().expect("chunk of 8"))))
                    .collect(),
            };
            let mut t = Tensor::new(shape, data)?;
            t.set_requires_grad(true);
            *slot = t;
        }
        if r.at != buf.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Self {
            config,
            tokens,
            entities,
            relations,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.view().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Fails unless `names` equals the stored entity list.
    pub fn check_entities(&self, names: &[String]) -> Result<()> {
        if names != self.entities.as_slice() {
            return Err(bad(format!(
                "graph has {} entities that do not match the {} in the checkpoint",
                names.len(),
                self.entities.len()
            )));
        }
        Ok(())
    }
}
