//! Binary checkpoint container.
//!
//! Layout (all integers little-endian): magic `STSN`, `u32` version, `u32`
//! record count, then per record: `u32` name length, UTF-8 name, kind byte,
//! `u32` rank, one `u64` per extent, payload. Kinds: 0 = f64 tensor,
//! 1 = f32 tensor, 2 = mask bits packed into `u64` words, 3 = raw bytes.

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::pipelines::RunConfig;
use crate::pruning::{BitArray, MaskEntry, MaskSet, PruningMask};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"STSN";
pub const VERSION: u32 = 1;

const KIND_F64: u8 = 0;
const KIND_F32: u8 = 1;
const KIND_MASK: u8 = 2;
const KIND_BYTES: u8 = 3;
const MAX_RANK: usize = 8;

const CONFIG: &str = "config";
const SEED: &str = "seed";
const MASK_PREFIX: &str = "mask/";
const NON_PRUNABLE: &str = "masks.non_prunable_scalars";

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    F64(Tensor<f64>),
    F32(Tensor<f32>),
    Mask(BitArray),
    Bytes(Vec<u8>),
}

impl Record {
    pub fn tensor<T: Real>(t: &Tensor<T>) -> Self {
        if T::KIND_TAG == KIND_F64 {
            Record::F64(t.cast())
        } else {
            Record::F32(t.cast())
        }
    }

    fn kind(&self) -> u8 {
        match self {
            Record::F64(_) => KIND_F64,
            Record::F32(_) => KIND_F32,
            Record::Mask(_) => KIND_MASK,
            Record::Bytes(_) => KIND_BYTES,
        }
    }

    /// The tensor in precision `T`; a record of the other precision is an error.
    pub fn as_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        match self {
            Record::F64(t) if T::KIND_TAG == KIND_F64 => Ok(t.cast()),
            Record::F32(t) if T::KIND_TAG == KIND_F32 => Ok(t.cast()),
            Record::F64(_) | Record::F32(_) => Err(Error::Config(format!(
                "checkpoint precision differs from requested {}",
                T::NAME
            ))),
            _ => Err(Error::Layout("record is not a tensor".into())),
        }
    }
}

/// Ordered named records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    records: IndexMap<String, Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, record: Record) -> Result<()> {
        let name = name.into();
        if u32::try_from(name.len()).is_err() {
            return Err(Error::Layout("record name too long".into()));
        }
        if self.records.contains_key(&name) {
            return Err(Error::Layout(format!("duplicate record `{name}`")));
        }
        self.records.insert(name, record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.get(name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Record)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.records.get(name) {
            Some(Record::Bytes(b)) => Ok(b),
            Some(_) => Err(Error::Layout(format!("record `{name}` is not a byte record"))),
            None => Err(Error::Layout(format!("checkpoint has no `{name}` record"))),
        }
    }

    /// Stores every entry of `store` as `<prefix>/<name>`, plus the prunable
    /// flags as `<prefix>.prunable`.
    pub fn put_params<T: Real>(&mut self, prefix: &str, store: &ParameterStore<T>) -> Result<()> {
        let flags = store.iter().map(|(_, e)| u8::from(e.prunable)).collect();
        self.insert(format!("{prefix}.prunable"), Record::Bytes(flags))?;
        for (name, e) in store.iter() {
            self.insert(format!("{prefix}/{name}"), Record::tensor(&e.tensor))?;
        }
        Ok(())
    }

    pub fn has_params(&self, prefix: &str) -> bool {
        self.records.contains_key(&format!("{prefix}.prunable"))
    }

    pub fn params<T: Real>(&self, prefix: &str) -> Result<ParameterStore<T>> {
        let flags = self.bytes(&format!("{prefix}.prunable"))?;
        let head = format!("{prefix}/");
        let mut store = ParameterStore::new();
        for (name, rec) in &self.records {
            if let Some(entry) = name.strip_prefix(&head) {
                let flag = *flags
                    .get(store.len())
                    .ok_or_else(|| Error::Layout(format!("`{prefix}` has more tensors than flags")))?;
                store.insert(entry, rec.as_tensor()?, flag != 0)?;
            }
        }
        if store.len() != flags.len() || store.is_empty() {
            return Err(Error::Layout(format!("`{prefix}` tensors and flags disagree")));
        }
        Ok(store)
    }

    pub fn put_masks(&mut self, masks: &MaskSet) -> Result<()> {
        let mut non_prunable = None;
        for m in masks.iter() {
            if m.owner.is_empty() || m.owner.contains('/') {
                return Err(Error::Layout(format!("mask owner `{}` cannot be stored", m.owner)));
            }
            non_prunable = Some(m.non_prunable_scalars as u64);
            for e in &m.entries {
                self.insert(format!("{MASK_PREFIX}{}/{}", m.owner, e.name), Record::Mask(e.bits.clone()))?;
            }
        }
        let n = non_prunable.ok_or_else(|| Error::Pruning("no masks to store".into()))?;
        self.insert(NON_PRUNABLE, Record::Bytes(n.to_le_bytes().to_vec()))
    }

    pub fn masks(&self) -> Result<MaskSet> {
        let raw = self.bytes(NON_PRUNABLE)?;
        let n: [u8; 8] = raw
            .try_into()
            .map_err(|_| Error::Layout(format!("`{NON_PRUNABLE}` must be 8 bytes")))?;
        let non_prunable_scalars = usize::try_from(u64::from_le_bytes(n))
            .map_err(|_| Error::Layout("non-prunable count overflows".into()))?;
        let mut grouped: IndexMap<&str, Vec<MaskEntry>> = IndexMap::new();
        for (name, rec) in &self.records {
            let Some(rest) = name.strip_prefix(MASK_PREFIX) else { continue };
            let (owner, entry) = rest
                .split_once('/')
                .ok_or_else(|| Error::Layout(format!("malformed mask record `{name}`")))?;
            let Record::Mask(bits) = rec else {
                return Err(Error::Layout(format!("`{name}` is not a mask record")));
            };
            grouped.entry(owner).or_default().push(MaskEntry {
                name: entry.to_string(),
                bits: bits.clone(),
            });
        }
        let mut set = MaskSet::new();
        for (owner, entries) in grouped {
            set.insert(PruningMask {
                owner: owner.to_string(),
                entries,
                non_prunable_scalars,
            })?;
        }
        if set.is_empty() {
            return Err(Error::Layout("checkpoint holds no masks".into()));
        }
        Ok(set)
    }

    pub fn put_config(&mut self, config: &RunConfig) -> Result<()> {
        self.insert(CONFIG, Record::Bytes(config.to_text().into_bytes()))
    }

    pub fn config(&self) -> Result<RunConfig> {
        let text = std::str::from_utf8(self.bytes(CONFIG)?).map_err(|_| Error::Layout("config is not UTF-8".into()))?;
        RunConfig::parse(text)
    }

    /// Every random stream of a run derives from this seed.
    pub fn put_seed(&mut self, seed: u64) -> Result<()> {
        self.insert(SEED, Record::Bytes(seed.to_le_bytes().to_vec()))
    }

    pub fn seed(&self) -> Result<u64> {
        let raw: [u8; 8] = self
            .bytes(SEED)?
            .try_into()
            .map_err(|_| Error::Layout("seed must be 8 bytes".into()))?;
        Ok(u64::from_le_bytes(raw))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, rec) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rec.kind());
            let extents: Vec<usize> = match rec {
                Record::F64(t) => t.shape().to_vec(),
                Record::F32(t) => t.shape().to_vec(),
                Record::Mask(b) => vec![b.len()],
                Record::Bytes(b) => vec![b.len()],
            };
            out.extend_from_slice(&(extents.len() as u32).to_le_bytes());
            for e in extents {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            match rec {
                Record::F64(t) => t.values().iter().for_each(|v| v.write_le(&mut out)),
                Record::F32(t) => t.values().iter().for_each(|v| v.write_le(&mut out)),
                Record::Mask(b) => b.words().iter().for_each(|w| out.extend_from_slice(&w.to_le_bytes())),
                Record::Bytes(b) => out.extend_from_slice(b),
            }
        }
        out
    }

    /// Parses a whole checkpoint; any defect fails the load and names its byte offset.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail_at(0, "bad magic"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail_at(4, &format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32("record count")?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let start = r.pos;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| r.fail_at(start + 4, "record name is not UTF-8"))?
                .to_string();
            let kind_at = r.pos;
            let kind = r.take(1, "kind")?[0];
            let rank = r.u32("rank")? as usize;
            if rank > MAX_RANK {
                return Err(r.fail_at(kind_at + 1, &format!("rank {rank} exceeds {MAX_RANK}")));
            }
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                let at = r.pos;
                let e = usize::try_from(r.u64("extent")?).map_err(|_| r.fail_at(at, "extent overflows"))?;
                extents.push(e);
            }
            let payload_at = r.pos;
            let count = extents
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| r.fail_at(payload_at, "element count overflows"))?;
            let record = match kind {
                KIND_F64 => Record::F64(r.tensor(extents, count)?),
                KIND_F32 => Record::F32(r.tensor(extents, count)?),
                KIND_MASK | KIND_BYTES => {
                    if rank != 1 {
                        return Err(r.fail_at(kind_at + 1, "mask and byte records have rank 1"));
                    }
                    if kind == KIND_BYTES {
                        Record::Bytes(r.take(count, "byte payload")?.to_vec())
                    } else {
                        let raw = r.take(count.div_ceil(64) * 8, "mask payload")?;
                        let words = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                        Record::Mask(
                            BitArray::from_words(words, count)
                                .ok_or_else(|| r.fail_at(payload_at, "mask padding bits are set"))?,
                        )
                    }
                }
                other => return Err(r.fail_at(kind_at, &format!("unknown record kind {other}"))),
            };
            ck.insert(name, record).map_err(|e| r.fail_at(start, &e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(r.fail_at(r.pos, "trailing bytes after last record"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail_at(&self, offset: usize, message: &str) -> Error {
        Error::Format {
            offset,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.fail_at(self.pos, &format!("truncated {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Real>(&mut self, extents: Vec<usize>, count: usize) -> Result<Tensor<T>> {
        let at = self.pos;
        let len = count
            .checked_mul(T::BYTES)
            .ok_or_else(|| self.fail_at(at, "payload size overflows"))?;
        let raw = self.take(len, "tensor payload")?;
        let values = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::new(extents, values).map_err(|e| self.fail_at(at, &e.to_string()))
    }
}
