//! Binary files for classifier weights, disentangler heads and trainer
//! checkpoints. All integers and floats are little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use pnoc_core::c2amh::{FeatureScaler, MlpHead};
use pnoc_core::nn::{CnnConfig, ToyCnn, TrainableClassifier};
use pnoc_core::rng::{self, RngState};
use pnoc_core::trainer::TrainerState;

use crate::error::{Error, IoContext, Result};

const WEIGHTS_MAGIC: &[u8; 4] = b"PNWT";
const HEAD_MAGIC: &[u8; 4] = b"PNHD";
const STATE_MAGIC: &[u8; 4] = b"PNCK";
const VERSION: u16 = 1;

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.write_u64::<LE>(v as u64).unwrap();
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    put_u64(out, v.len());
    for &x in v {
        out.write_f32::<LE>(x).unwrap();
    }
}

fn put_tensors(out: &mut Vec<u8>, ts: &[Vec<f32>]) {
    put_u64(out, ts.len());
    for t in ts {
        put_f32s(out, t);
    }
}

fn get_u64(r: &mut &[u8]) -> io::Result<usize> {
    let v = r.read_u64::<LE>()?;
    usize::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "length overflow"))
}

fn get_len(r: &mut &[u8], unit: usize) -> io::Result<usize> {
    let n = get_u64(r)?;
    if n.saturating_mul(unit) > r.len() {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "length exceeds file"));
    }
    Ok(n)
}

fn get_f32s(r: &mut &[u8]) -> io::Result<Vec<f32>> {
    let n = get_len(r, 4)?;
    let mut v = vec![0f32; n];
    r.read_f32_into::<LE>(&mut v)?;
    Ok(v)
}

fn get_tensors(r: &mut &[u8]) -> io::Result<Vec<Vec<f32>>> {
    let n = get_len(r, 8)?;
    (0..n).map(|_| get_f32s(r)).collect()
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.write_u16::<LE>(VERSION).unwrap();
    out
}

fn open<'a>(bytes: &'a [u8], magic: &[u8; 4], path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < 6 || &bytes[..4] != magic {
        return Err(Error::data(path, format!("not a {} file", String::from_utf8_lossy(magic))));
    }
    let v = u16::from_le_bytes([bytes[4], bytes[5]]);
    if v != VERSION {
        return Err(Error::data(path, format!("unsupported version {v}")));
    }
    Ok(&bytes[6..])
}

fn corrupt(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::data(path, format!("corrupt file: {e}"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    fs::File::open(path).at(path)?.read_to_end(&mut b).at(path)?;
    Ok(b)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path).at(path)?.write_all(bytes).at(path)
}

fn params_of<M: TrainableClassifier<f32>>(m: &M) -> Vec<Vec<f32>> {
    m.params().iter().map(|p| p.to_vec()).collect()
}

fn load_params(dst: Vec<&mut [f32]>, src: &[Vec<f32>], path: &Path) -> Result<()> {
    if dst.len() != src.len() || dst.iter().zip(src).any(|(d, s)| d.len() != s.len()) {
        return Err(Error::data(path, "parameter layout does not match the architecture"));
    }
    for (d, s) in dst.into_iter().zip(src) {
        d.copy_from_slice(s);
    }
    Ok(())
}

pub fn cnn_config(m: &ToyCnn<f32>) -> CnnConfig {
    CnnConfig {
        in_channels: m.blocks[0].cin,
        widths: m.blocks.iter().map(|b| b.cout).collect(),
        strides: m.blocks.iter().map(|b| b.stride).collect(),
        num_classes: m.head.cout,
    }
}

/// Architecture followed by every parameter tensor.
pub fn encode_cnn(m: &ToyCnn<f32>) -> Vec<u8> {
    let cfg = cnn_config(m);
    let mut out = header(WEIGHTS_MAGIC);
    put_u64(&mut out, cfg.in_channels);
    put_u64(&mut out, cfg.num_classes);
    put_u64(&mut out, cfg.widths.len());
    for (w, s) in cfg.widths.iter().zip(&cfg.strides) {
        put_u64(&mut out, *w);
        put_u64(&mut out, *s);
    }
    put_tensors(&mut out, &params_of(m));
    out
}

pub fn decode_cnn(bytes: &[u8], path: &Path) -> Result<ToyCnn<f32>> {
    let mut r = open(bytes, WEIGHTS_MAGIC, path)?;
    let c = corrupt(path);
    let in_channels = get_u64(&mut r).map_err(&c)?;
    let num_classes = get_u64(&mut r).map_err(&c)?;
    let n = get_len(&mut r, 16).map_err(&c)?;
    let mut widths = Vec::with_capacity(n);
    let mut strides = Vec::with_capacity(n);
    for _ in 0..n {
        widths.push(get_u64(&mut r).map_err(&c)?);
        strides.push(get_u64(&mut r).map_err(&c)?);
    }
    let cfg = CnnConfig { in_channels, widths, strides, num_classes };
    let mut m = ToyCnn::new(&cfg, &mut rng::seeded(0)).map_err(|e| Error::data(path, e.to_string()))?;
    let params = get_tensors(&mut r).map_err(&c)?;
    if !r.is_empty() {
        return Err(Error::data(path, "trailing bytes"));
    }
    load_params(m.params_mut(), &params, path)?;
    Ok(m)
}

pub fn write_cnn(path: &Path, m: &ToyCnn<f32>) -> Result<()> {
    write_bytes(path, &encode_cnn(m))
}

pub fn read_cnn(path: &Path) -> Result<ToyCnn<f32>> {
    decode_cnn(&read_bytes(path)?, path)
}

pub fn write_head(path: &Path, h: &MlpHead<f32>) -> Result<()> {
    let mut out = header(HEAD_MAGIC);
    put_u64(&mut out, h.l1.cin);
    put_u64(&mut out, h.l1.cout);
    put_f32s(&mut out, &h.scaler.mean);
    put_f32s(&mut out, &h.scaler.inv_std);
    let params: Vec<Vec<f32>> = h.params().iter().map(|p| p.to_vec()).collect();
    put_tensors(&mut out, &params);
    write_bytes(path, &out)
}

pub fn read_head(path: &Path) -> Result<MlpHead<f32>> {
    let bytes = read_bytes(path)?;
    let mut r = open(&bytes, HEAD_MAGIC, path)?;
    let c = corrupt(path);
    let k = get_u64(&mut r).map_err(&c)?;
    let hidden = get_u64(&mut r).map_err(&c)?;
    if k == 0 || hidden == 0 || k > 1 << 20 || hidden > 1 << 20 {
        return Err(Error::data(path, "implausible head dimensions"));
    }
    let mean = get_f32s(&mut r).map_err(&c)?;
    let inv_std = get_f32s(&mut r).map_err(&c)?;
    if mean.len() != k || inv_std.len() != k {
        return Err(Error::data(path, "scaler does not match the feature width"));
    }
    let params = get_tensors(&mut r).map_err(&c)?;
    let mut head = MlpHead::new(k, hidden, &mut rng::seeded(0));
    head.scaler = FeatureScaler { mean, inv_std };
    load_params(head.params_mut(), &params, path)?;
    Ok(head)
}

pub fn encode_state(st: &TrainerState<f32>) -> Vec<u8> {
    let mut out = header(STATE_MAGIC);
    for v in [st.step, st.epoch, st.cursor] {
        put_u64(&mut out, v);
    }
    put_u64(&mut out, st.order.len());
    for &i in &st.order {
        put_u64(&mut out, i);
    }
    out.extend_from_slice(&st.rng.seed);
    out.write_u64::<LE>(st.rng.stream).unwrap();
    out.write_u128::<LE>(st.rng.word_pos).unwrap();
    put_tensors(&mut out, &st.f_params);
    put_tensors(&mut out, &st.f_momentum);
    match (&st.noc_params, &st.noc_momentum) {
        (Some(p), Some(m)) => {
            out.push(1);
            put_tensors(&mut out, p);
            put_tensors(&mut out, m);
        }
        _ => out.push(0),
    }
    out
}

pub fn decode_state(bytes: &[u8], path: &Path) -> Result<TrainerState<f32>> {
    let mut r = open(bytes, STATE_MAGIC, path)?;
    let c = corrupt(path);
    let step = get_u64(&mut r).map_err(&c)?;
    let epoch = get_u64(&mut r).map_err(&c)?;
    let cursor = get_u64(&mut r).map_err(&c)?;
    let n = get_len(&mut r, 8).map_err(&c)?;
    let order = (0..n).map(|_| get_u64(&mut r)).collect::<io::Result<Vec<_>>>().map_err(&c)?;
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed).map_err(&c)?;
    let stream = r.read_u64::<LE>().map_err(&c)?;
    let word_pos = r.read_u128::<LE>().map_err(&c)?;
    let f_params = get_tensors(&mut r).map_err(&c)?;
    let f_momentum = get_tensors(&mut r).map_err(&c)?;
    let (noc_params, noc_momentum) = match r.read_u8().map_err(&c)? {
        0 => (None, None),
        1 => (Some(get_tensors(&mut r).map_err(&c)?), Some(get_tensors(&mut r).map_err(&c)?)),
        v => return Err(Error::data(path, format!("bad noc flag {v}"))),
    };
    if !r.is_empty() {
        return Err(Error::data(path, "trailing bytes"));
    }
    Ok(TrainerState {
        step,
        epoch,
        cursor,
        order,
        rng: RngState { seed, stream, word_pos },
        f_params,
        f_momentum,
        noc_params,
        noc_momentum,
    })
}

pub fn write_state(path: &Path, st: &TrainerState<f32>) -> Result<()> {
    write_bytes(path, &encode_state(st))
}

pub fn read_state(path: &Path) -> Result<TrainerState<f32>> {
    decode_state(&read_bytes(path)?, path)
}
