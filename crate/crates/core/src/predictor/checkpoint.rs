use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::predictor::{Predictor, PredictorConfig};

const MAGIC: &[u8; 4] = b"VFPW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `VFPW`, version u32, config JSON (u64 length + bytes), tensor count u32,
/// then per tensor: name (u32 length + UTF-8), rank u32, dims u64, f32 data.
/// All integers and floats little-endian.
pub fn write_checkpoint(predictor: &Predictor, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    let json = serde_json::to_vec(&predictor.config)?;
    let mut buf = Vec::with_capacity(predictor.store.numel() * 4 + json.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(predictor.store.len() as u32).to_le_bytes());
    for (name, t) in predictor.store.names().iter().zip(predictor.store.tensors()) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Predictor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a predictor checkpoint".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = c.u64()? as usize;
    let config: PredictorConfig = serde_json::from_slice(c.take(json_len)?)?;
    let count = c.u32()? as usize;
    let mut loaded = ParamStore::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = c
            .take(numel.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)?;
        if !t.is_finite() {
            return Err(Error::Format(format!("parameter '{name}' has non-finite values")));
        }
        loaded.add(name, t);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let mut predictor = Predictor::new(config)?;
    if loaded.len() != predictor.store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, config expects {}",
            loaded.len(),
            predictor.store.len()
        )));
    }
    predictor.store.load_from(&loaded)?;
    Ok(predictor)
}

pub fn save_checkpoint(predictor: &Predictor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(predictor, BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Predictor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
