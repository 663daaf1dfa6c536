//! Named-array container: the on-disk format shared by checkpoints and the
//! serialized correspondence set.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic   8 bytes  "OMNIARRS"
//! version u32
//! meta    u32 length + UTF-8 JSON blob
//! count   u32
//! entry*  name (u32 length + bytes), dtype u8, ndim u32, dims (u64 each), raw LE data
//! ```
//! Writing is deterministic: entries are stored in insertion order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OMNIARRS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    U16,
    U32,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
            DType::U16 => 3,
            DType::U32 => 4,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::U8,
            3 => DType::U16,
            4 => DType::U32,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArrayEntry {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl ArrayEntry {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Result<Vec<f32>> {
        match self.dtype {
            DType::F32 => Ok(self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            DType::F64 => Ok(self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                .collect()),
            _ => Err(Error::InvalidInput("entry is not floating point".into())),
        }
    }

    pub fn as_f64(&self) -> Result<Vec<f64>> {
        match self.dtype {
            DType::F32 => Ok(self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()),
            DType::F64 => Ok(self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            _ => Err(Error::InvalidInput("entry is not floating point".into())),
        }
    }

    pub fn as_u8(&self) -> Result<Vec<u8>> {
        match self.dtype {
            DType::U8 => Ok(self.data.clone()),
            _ => Err(Error::InvalidInput("entry is not u8".into())),
        }
    }

    pub fn as_u16(&self) -> Result<Vec<u16>> {
        match self.dtype {
            DType::U16 => Ok(self
                .data
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            _ => Err(Error::InvalidInput("entry is not u16".into())),
        }
    }
}

/// An in-memory container of named arrays plus a JSON metadata blob.
#[derive(Debug, Default)]
pub struct Container {
    pub meta: serde_json::Value,
    names: Vec<String>,
    entries: HashMap<String, ArrayEntry>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Container {
            meta,
            names: Vec::new(),
            entries: HashMap::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&ArrayEntry> {
        self.entries.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ArrayEntry) {
        let name = name.into();
        if !self.entries.contains_key(&name) {
            self.names.push(name.clone());
        }
        self.entries.insert(name, entry);
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, dims: &[usize], values: &[f32]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        self.insert(
            name,
            ArrayEntry {
                dtype: DType::F32,
                dims: dims.to_vec(),
                data,
            },
        );
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, dims: &[usize], values: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        let mut data = Vec::with_capacity(values.len() * 8);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        self.insert(
            name,
            ArrayEntry {
                dtype: DType::F64,
                dims: dims.to_vec(),
                data,
            },
        );
    }

    pub fn insert_u8(&mut self, name: impl Into<String>, dims: &[usize], values: &[u8]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        self.insert(
            name,
            ArrayEntry {
                dtype: DType::U8,
                dims: dims.to_vec(),
                data: values.to_vec(),
            },
        );
    }

    pub fn insert_u16(&mut self, name: impl Into<String>, dims: &[usize], values: &[u16]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        let mut data = Vec::with_capacity(values.len() * 2);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        self.insert(
            name,
            ArrayEntry {
                dtype: DType::U16,
                dims: dims.to_vec(),
                data,
            },
        );
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.names.len() as u32).to_le_bytes())?;
        for name in &self.names {
            let entry = &self.entries[name];
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[entry.dtype.tag()])?;
            w.write_all(&(entry.dims.len() as u32).to_le_bytes())?;
            for d in &entry.dims {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            w.write_all(&entry.data)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, path: &Path) -> Result<Self> {
        let err = |reason: &str| Error::format(path, reason);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(err("bad magic"));
        }
        let version = read_u32(r, path)?;
        if version != VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let meta_len = read_u32(r, path)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf).map_err(|e| Error::io(path, e))?;
        let meta = serde_json::from_slice(&meta_buf)
            .map_err(|e| err(&format!("bad metadata json: {e}")))?;
        let count = read_u32(r, path)? as usize;
        let mut out = Container::new(meta);
        for _ in 0..count {
            let name_len = read_u32(r, path)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf).map_err(|e| Error::io(path, e))?;
            let name = String::from_utf8(name_buf).map_err(|_| err("non-utf8 array name"))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(|e| Error::io(path, e))?;
            let dtype = DType::from_tag(tag[0]).ok_or_else(|| err("unknown dtype tag"))?;
            let ndim = read_u32(r, path)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            let n_bytes = dims.iter().product::<usize>() * dtype.size();
            let mut data = vec![0u8; n_bytes];
            r.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
            out.insert(name, ArrayEntry { dtype, dims, data });
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufReader::new(file);
        Self::read_from(&mut buf, path)
    }
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Container::new(serde_json::json!({"step": 42}));
        c.insert_f32("a", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        c.insert_u8("mask", &[4], &[0, 1, 1, 0]);
        c.insert_f64("b", &[2], &[std::f64::consts::PI, -1.5]);

        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let back = Container::read_from(&mut bytes.as_slice(), Path::new("mem")).unwrap();

        assert_eq!(back.meta["step"], 42);
        assert_eq!(back.names(), c.names());
        assert_eq!(back.get("a").unwrap().as_f32().unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(back.get("mask").unwrap().as_u8().unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(back.get("b").unwrap().as_f64().unwrap()[0], std::f64::consts::PI);
    }

    #[test]
    fn deterministic_bytes() {
        let mut c = Container::new(serde_json::json!({}));
        c.insert_f32("x", &[2], &[1.0, 2.0]);
        let mut a = Vec::new();
        let mut b = Vec::new();
        c.write_to(&mut a).unwrap();
        c.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
