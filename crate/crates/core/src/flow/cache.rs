//! Flow cache file format.
//!
//! One record per ordered pair: magic "OMNIFLOW1", little-endian u32 header
//! (i, j, H, W), float32 H x W x 2 vectors, uint8 H x W mask.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use super::FlowField;
use crate::error::{Error, Result};

const MAGIC: &[u8; 9] = b"OMNIFLOW1";

pub fn pair_file_name(i: usize, j: usize) -> String {
    format!("flow_{i:05}_{j:05}.omf")
}

pub fn pair_path(dir: &Path, i: usize, j: usize) -> PathBuf {
    dir.join(pair_file_name(i, j))
}

pub fn write(flow: &FlowField, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let (h, wd, _) = flow.vectors.dim();
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    for v in [
        flow.source_index as u32,
        flow.target_index as u32,
        h as u32,
        wd as u32,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    let mut buf = Vec::with_capacity(h * wd * 8);
    for y in 0..h {
        for x in 0..wd {
            buf.extend_from_slice(&flow.vectors[(y, x, 0)].to_le_bytes());
            buf.extend_from_slice(&flow.vectors[(y, x, 1)].to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    let mask: Vec<u8> = flow.valid_mask.iter().map(|&m| m as u8).collect();
    w.write_all(&mask).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<FlowField> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad flow cache magic"));
    }
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (i, j, h, w) = (word(0), word(1), word(2), word(3));
    let mut vec_buf = vec![0u8; h * w * 2 * 4];
    r.read_exact(&mut vec_buf).map_err(|e| Error::io(path, e))?;
    let mut vectors = Array3::<f32>::zeros((h, w, 2));
    let mut off = 0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..2 {
                vectors[(y, x, c)] =
                    f32::from_le_bytes(vec_buf[off..off + 4].try_into().unwrap());
                off += 4;
            }
        }
    }
    let mut mask_buf = vec![0u8; h * w];
    r.read_exact(&mut mask_buf).map_err(|e| Error::io(path, e))?;
    let valid_mask = Array2::from_shape_fn((h, w), |(y, x)| mask_buf[y * w + x] != 0);
    FlowField::new(i, j, vectors, valid_mask)
}
