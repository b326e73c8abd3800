//! Per-sample map files: `CAMS`, a `u16` version, then `C`, `h`, `w` as
//! `u32` and `C·h·w` `f32` values, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use pnoc_core::Tensor3;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"CAMS";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 3 * 4;

pub fn encode(maps: &Tensor3<f32>) -> Vec<u8> {
    let [c, h, w] = maps.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * maps.data().len());
    out.extend_from_slice(MAGIC);
    out.write_u16::<LE>(VERSION).unwrap();
    for d in [c, h, w] {
        out.write_u32::<LE>(d as u32).unwrap();
    }
    for &v in maps.data() {
        out.write_f32::<LE>(v).unwrap();
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor3<f32>> {
    let bad = |msg: &str| Error::data(path, msg);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a CAMS file"));
    }
    let mut r = &bytes[4..];
    let version = r.read_u16::<LE>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported CAMS version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<LE>().map_err(|_| bad("truncated header"))? as usize;
    }
    let n = dims[0] * dims[1] * dims[2];
    if r.len() != 4 * n {
        return Err(bad(&format!("expected {} data bytes for {:?}, found {}", 4 * n, dims, r.len())));
    }
    let mut data = vec![0f32; n];
    r.read_f32_into::<LE>(&mut data).map_err(|_| bad("truncated data"))?;
    Ok(Tensor3::from_vec(dims[0], dims[1], dims[2], data)?)
}

pub fn write(path: &Path, maps: &Tensor3<f32>) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(&encode(maps)).at(path)
}

pub fn read(path: &Path) -> Result<Tensor3<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path).at(path)?.read_to_end(&mut bytes).at(path)?;
    decode(&bytes, path)
}
