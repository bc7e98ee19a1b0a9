//! `PKPT` checkpoint reader and writer.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! "PKPT"            4 bytes
//! version   u32     = 1
//! count     u64
//! per record:
//!   name_len u32, name bytes (UTF-8)
//!   kind     u8     0=Weight 1=Bias 2=LayerNormGain 3=LayerNormBias 4=Embedding 5=Other
//!   zone     u8     0=None 1=Encoder 2=Decoder 3=Head
//!   layer    i32    -1 = absent
//!   ndim     u32, ndim x u64 dims
//!   data     product(dims) x f32
//! ```

use super::{ParamStore, Result, StoreError, TensorKind, TensorRecord, ZoneComponent, ZoneTag};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"PKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint_bytes(store: &ParamStore) -> Vec<u8> {
    let payload: usize = store.iter().map(|r| 4 + r.name.len() + 10 + 4 + 8 * r.shape.len() + 4 * r.numel()).sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for rec in store {
        out.extend_from_slice(&(rec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(rec.name.as_bytes());
        out.push(rec.kind.code());
        out.push(rec.zone.component.code());
        let layer: i32 = rec.zone.layer.map_or(-1, |l| l as i32);
        out.extend_from_slice(&layer.to_le_bytes());
        out.extend_from_slice(&(rec.shape.len() as u32).to_le_bytes());
        for &d in &rec.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &rec.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint_bytes(store))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let bytes = std::fs::read(path)?;
    read_checkpoint_bytes(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(StoreError::TruncatedFile(self.buf.len())),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    // A file shorter than the magic cannot be told apart from a foreign one.
    if bytes.len() < 4 {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        return Err(StoreError::BadMagic(m));
    }
    let magic = cur.array::<4>()?;
    if magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let count = cur.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?).map_err(|e| StoreError::Malformed(format!("name is not UTF-8: {e}")))?.to_owned();
        let kind_code = cur.u8()?;
        let kind = TensorKind::from_code(kind_code).ok_or_else(|| StoreError::Malformed(format!("`{name}`: unknown kind code {kind_code}")))?;
        let zone_code = cur.u8()?;
        let component =
            ZoneComponent::from_code(zone_code).ok_or_else(|| StoreError::Malformed(format!("`{name}`: unknown zone code {zone_code}")))?;
        let layer = match cur.i32()? {
            -1 => None,
            l if l >= 0 => Some(l as u32),
            l => return Err(StoreError::Malformed(format!("`{name}`: layer index {l}"))),
        };
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            let d = cur.u64()?;
            shape.push(usize::try_from(d).map_err(|_| StoreError::Malformed(format!("`{name}`: dim {d}")))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| StoreError::Malformed(format!("`{name}`: element count overflows")))?;
        let raw = cur.take(numel.checked_mul(4).ok_or(StoreError::TruncatedFile(bytes.len()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        store.put(TensorRecord { name, shape, data, kind, zone: ZoneTag { component, layer } })?;
    }
    if cur.pos != bytes.len() {
        return Err(StoreError::Malformed(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(store)
}
