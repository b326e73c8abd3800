//! PNG input and output: RGB images, palette-indexed label masks, 8-bit
//! grayscale maps and a small line-plot renderer.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use pnoc_core::Tensor3;

use crate::error::{Error, IoContext, Result};

/// Mask value for pixels that are ignored or unknown.
pub const IGNORE: u8 = 255;

/// Decoded 8-bit image with interleaved channels.
struct Raw {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

fn decode(path: &Path, expand: bool) -> Result<(Raw, ColorType)> {
    let file = File::open(path).at(path)?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(if expand { Transformations::EXPAND | Transformations::STRIP_16 } else { Transformations::IDENTITY });
    let bad = |e: png::DecodingError| Error::data(path, e.to_string());
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::data(path, "image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(bad)?;
    data.truncate(info.buffer_size());
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::data(path, format!("expected 8-bit samples, found {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        ColorType::Grayscale | ColorType::Indexed => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
    };
    let raw = Raw { width: info.width as usize, height: info.height as usize, channels, data };
    Ok((raw, info.color_type))
}

/// RGB image scaled to `[0, 1]`; gray images are replicated, alpha dropped.
pub fn read_rgb(path: &Path) -> Result<Tensor3<f32>> {
    let (raw, _) = decode(path, true)?;
    let n = raw.width * raw.height;
    let mut out = Tensor3::zeros(3, raw.height, raw.width);
    for c in 0..3 {
        let src = if raw.channels >= 3 { c } else { 0 };
        let plane = out.plane_mut(c);
        for (p, v) in plane.iter_mut().enumerate().take(n) {
            *v = raw.data[p * raw.channels + src] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Label mask as stored: palette indices or gray levels, one byte per pixel.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (raw, color) = decode(path, false)?;
    if !matches!(color, ColorType::Indexed | ColorType::Grayscale) {
        return Err(Error::data(path, format!("mask must be indexed or grayscale, found {color:?}")));
    }
    Ok((raw.height, raw.width, raw.data))
}

pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_mask(path)
}

fn encoder<'a>(path: &Path, w: usize, h: usize, color: ColorType) -> Result<png::Encoder<'a, BufWriter<File>>> {
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    Ok(enc)
}

fn finish(path: &Path, enc: png::Encoder<'_, BufWriter<File>>, data: &[u8]) -> Result<()> {
    let enc_err = |e: png::EncodingError| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) };
    let mut w = enc.write_header().map_err(enc_err)?;
    w.write_image_data(data).map_err(enc_err)?;
    w.finish().map_err(enc_err)
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, image: &Tensor3<f32>) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let mut data = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            data.push(to_byte(image.plane(c.min(image.channels() - 1))[p]));
        }
    }
    finish(path, encoder(path, w, h, ColorType::Rgb)?, &data)
}

/// The usual segmentation colormap: bit-interleaved RGB for indices, a
/// light border color for 255.
pub fn palette() -> Vec<u8> {
    let mut pal = Vec::with_capacity(256 * 3);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= (((c >> 0) & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        pal.extend_from_slice(&[r, g, b]);
    }
    pal[255 * 3..].copy_from_slice(&[224, 224, 192]);
    pal
}

pub fn write_mask(path: &Path, h: usize, w: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != h * w {
        return Err(Error::data(path, format!("{} labels for a {h}x{w} mask", labels.len())));
    }
    let mut enc = encoder(path, w, h, ColorType::Indexed)?;
    enc.set_palette(palette());
    finish(path, enc, labels)
}

pub fn write_gray(path: &Path, h: usize, w: usize, values: &[u8]) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::data(path, format!("{} values for a {h}x{w} image", values.len())));
    }
    finish(path, encoder(path, w, h, ColorType::Grayscale)?, values)
}

/// `round(255 · clamp(v, 0, 1))` per value.
pub fn quantize(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| to_byte(v)).collect()
}

/// Draws `(x, y)` points as a polyline on a white canvas with axes; `x` and
/// `y` ranges map to the plot area.
pub fn plot_curve(path: &Path, points: &[(f64, f64)], x_range: (f64, f64), y_range: (f64, f64)) -> Result<()> {
    const W: usize = 400;
    const H: usize = 300;
    const M: usize = 30;
    let mut px = vec![255u8; W * H * 3];
    let put = |x: i64, y: i64, rgb: [u8; 3], px: &mut Vec<u8>| {
        if x >= 0 && y >= 0 && (x as usize) < W && (y as usize) < H {
            let i = (y as usize * W + x as usize) * 3;
            px[i..i + 3].copy_from_slice(&rgb);
        }
    };
    let black = [0, 0, 0];
    for x in M..W - M {
        put(x as i64, (H - M) as i64, black, &mut px);
    }
    for y in M..H - M {
        put(M as i64, y as i64, black, &mut px);
    }
    let to_px = |(x, y): (f64, f64)| -> (i64, i64) {
        let u = (x - x_range.0) / (x_range.1 - x_range.0);
        let v = (y - y_range.0) / (y_range.1 - y_range.0);
        let sx = M as f64 + u.clamp(0.0, 1.0) * (W - 2 * M) as f64;
        let sy = (H - M) as f64 - v.clamp(0.0, 1.0) * (H - 2 * M) as f64;
        (sx.round() as i64, sy.round() as i64)
    };
    let blue = [31, 90, 200];
    for pair in points.windows(2) {
        let (mut x0, mut y0) = to_px(pair[0]);
        let (x1, y1) = to_px(pair[1]);
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            put(x0, y0, blue, &mut px);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
    for &p in points {
        let (x, y) = to_px(p);
        for d in -2..=2 {
            put(x + d, y, [200, 40, 40], &mut px);
            put(x, y + d, [200, 40, 40], &mut px);
        }
    }
    finish(path, encoder(path, W, H, ColorType::Rgb)?, &px)
}
