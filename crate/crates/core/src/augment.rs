//! Training-time augmentation: random rescale, random crop and optional
//! color jitter. Ground-truth masks follow the geometric part exactly.

use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;
use rand::RngCore;

use crate::cam::resize_bilinear;

use crate::{arg_err, shape_err, Result, Scalar, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue rotation as a fraction of the color wheel.
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self { brightness: 0.3, contrast: 0.3, saturation: 0.3, hue: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Jitter {
    None,
    Color(ColorJitter),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Side of the square training crop.
    pub crop: usize,
    pub jitter: Jitter,
}

impl AugmentPolicy {
    pub fn new(crop: usize) -> Self {
        Self { scale_min: 0.5, scale_max: 2.0, crop, jitter: Jitter::Color(ColorJitter::default()) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(arg_err!("invalid scale range [{}, {}]", self.scale_min, self.scale_max));
        }
        if self.crop == 0 || self.crop % 2 != 0 {
            return Err(arg_err!("crop size must be positive and even, got {}", self.crop));
        }
        Ok(())
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m >= n {
        period - m
    } else {
        m
    }
}

/// Nearest-neighbour resize of a label mask with half-pixel centers.
pub fn resize_nearest(mask: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = (((y as f64 + 0.5) * h as f64 / oh as f64) as usize).min(h - 1);
        for x in 0..ow {
            let sx = (((x as f64 + 0.5) * w as f64 / ow as f64) as usize).min(w - 1);
            out.push(mask[sy * w + sx]);
        }
    }
    out
}

/// Augments one sample. `scale` overrides the random factor (the draw is
/// still consumed so streams stay aligned).
pub fn augment<T: Scalar>(
    image: &Tensor3<T>,
    mask: Option<&[u8]>,
    policy: &AugmentPolicy,
    rng: &mut impl RngCore,
    scale: Option<f64>,
) -> Result<(Tensor3<T>, Option<Vec<u8>>)> {
    policy.validate()?;
    let (h, w) = (image.height(), image.width());
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(shape_err!("mask has {} pixels, image {}x{}", m.len(), h, w));
        }
    }
    let drawn = crate::rng::uniform(rng, policy.scale_min, policy.scale_max);
    let s = scale.unwrap_or(drawn);
    let rh = ((h as f64 * s).round() as usize).max(1);
    let rw = ((w as f64 * s).round() as usize).max(1);
    let img = resize_bilinear(image, rh, rw);
    let msk = mask.map(|m| resize_nearest(m, h, w, rh, rw));

    let crop = policy.crop;
    // Reflect-pad when the rescaled image is smaller than the crop.
    let ph = rh.max(crop);
    let pw = rw.max(crop);
    let oy = crate::rng::index(rng, ph - crop + 1);
    let ox = crate::rng::index(rng, pw - crop + 1);
    let mut out = Tensor3::from_fn(image.channels(), crop, crop, |c, y, x| {
        img.at(c, reflect(oy + y, rh), reflect(ox + x, rw))
    });
    let out_mask = msk.map(|m| {
        let mut v = Vec::with_capacity(crop * crop);
        for y in 0..crop {
            for x in 0..crop {
                v.push(m[reflect(oy + y, rh) * rw + reflect(ox + x, rw)]);
            }
        }
        v
    });

    if let Jitter::Color(j) = policy.jitter {
        color_jitter(&mut out, &j, rng);
    }
    Ok((out, out_mask))
}

fn gray<T: Scalar>(r: T, g: T, b: T) -> T {
    T::of(0.299) * r + T::of(0.587) * g + T::of(0.114) * b
}

/// Brightness, contrast, saturation then hue, each factor drawn once.
pub fn color_jitter<T: Scalar>(img: &mut Tensor3<T>, j: &ColorJitter, rng: &mut impl RngCore) {
    let bf = T::of(crate::rng::uniform(rng, 1.0 - j.brightness, 1.0 + j.brightness));
    let cf = T::of(crate::rng::uniform(rng, 1.0 - j.contrast, 1.0 + j.contrast));
    let sf = T::of(crate::rng::uniform(rng, 1.0 - j.saturation, 1.0 + j.saturation));
    let hf = crate::rng::uniform(rng, -j.hue, j.hue);
    if img.channels() != 3 {
        return;
    }
    let n = img.plane_len();
    let data = img.data_mut();
    for v in data.iter_mut() {
        *v *= bf;
    }
    let mean = (0..n).map(|i| gray(data[i], data[n + i], data[2 * n + i])).sum::<T>() / T::of(n as f64);
    for v in data.iter_mut() {
        *v = (*v - mean) * cf + mean;
    }
    for i in 0..n {
        let g = gray(data[i], data[n + i], data[2 * n + i]);
        for c in 0..3 {
            data[c * n + i] = g + (data[c * n + i] - g) * sf;
        }
    }
    for i in 0..n {
        let (r, g, b) = (data[i].as_f64(), data[n + i].as_f64(), data[2 * n + i].as_f64());
        let (r, g, b) = rotate_hue(r, g, b, hf);
        data[i] = T::of(r);
        data[n + i] = T::of(g);
        data[2 * n + i] = T::of(b);
    }
    for v in data.iter_mut() {
        *v = v.max(T::zero()).min(T::one());
    }
}

fn rotate_hue(r: f64, g: f64, b: f64, shift: f64) -> (f64, f64, f64) {
    if shift == 0.0 {
        return (r, g, b);
    }
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return (r, g, b);
    }
    let mut h = if max == r {
        wrap((g - b) / d, 6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    } / 6.0;
    h = wrap(h + shift, 1.0);
    let s = d / max;
    hsv_to_rgb(h, s, max)
}

fn wrap(x: f64, m: f64) -> f64 {
    x - (x / m).floor() * m
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = wrap(h, 1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
