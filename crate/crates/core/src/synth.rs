//! Seeded generator of small multi-label scenes with exact masks.
//!
//! Classes: a large disk that never shares a scene, a square and a triangle
//! that tend to appear together, a thin bar and a ring. Every object has a
//! muted body and a small saturated core; the core alone is enough to name
//! the class, which is what makes plain CAMs incomplete.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;
use rand::RngCore;

use crate::augment::hsv_to_rgb;
use crate::cam::ImageSample;
use crate::eval::GroupSpec;
use crate::rng::{self, ChaCha8Rng};
use crate::{arg_err, Result, Scalar, Tensor3};

pub const CLASS_NAMES: [&str; 5] = ["disk", "square", "triangle", "bar", "ring"];

const DISK: usize = 0;
const SQUARE: usize = 1;
const TRIANGLE: usize = 2;

/// Body hue of each class; bodies are desaturated so hue is a weak cue.
const BODY_HUE: [f64; 5] = [0.58, 0.08, 0.33, 0.75, 0.95];
/// Core colors are fully saturated and well separated.
const CORE_RGB: [(f64, f64, f64); 5] =
    [(1.0, 1.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 0.3, 0.0), (0.0, 0.3, 1.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_images: usize,
    /// Number of classes, at most 5; the first `num_classes` shapes are used.
    pub num_classes: usize,
    /// Square image side, a multiple of 8.
    pub size: usize,
    /// Probability that a scene gets a second object class.
    pub co_occurrence: f64,
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
    /// Side of the saturated core patch in pixels.
    pub core_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_images: 200, num_classes: 5, size: 32, co_occurrence: 0.5, noise: 0.03, core_size: 3, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(arg_err!("n_images must be positive"));
        }
        if self.num_classes == 0 || self.num_classes > CLASS_NAMES.len() {
            return Err(arg_err!("num_classes must be in 1..=5, got {}", self.num_classes));
        }
        if self.size < 16 || self.size % 8 != 0 {
            return Err(arg_err!("size must be a multiple of 8 and at least 16, got {}", self.size));
        }
        if !(0.0..=1.0).contains(&self.co_occurrence) {
            return Err(arg_err!("co_occurrence must be in [0, 1], got {}", self.co_occurrence));
        }
        if !(self.noise >= 0.0 && self.noise < 0.5) {
            return Err(arg_err!("noise must be in [0, 0.5), got {}", self.noise));
        }
        if self.core_size == 0 {
            return Err(arg_err!("core_size must be positive"));
        }
        Ok(())
    }
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    CLASS_NAMES[..num_classes].iter().map(|s| String::from(*s)).collect()
}

/// Size and co-occurrence groups of the synthetic classes.
pub fn default_groups(num_classes: usize) -> GroupSpec {
    let keep = |v: &[usize]| v.iter().copied().filter(|&c| c < num_classes).collect::<Vec<_>>();
    let groups = [
        ("large", keep(&[DISK])),
        ("mid", keep(&[SQUARE, TRIANGLE, 4])),
        ("thin", keep(&[3])),
        ("singleton", keep(&[DISK])),
        ("pair", keep(&[SQUARE, TRIANGLE])),
    ];
    GroupSpec { groups: groups.into_iter().filter(|(_, m)| !m.is_empty()).map(|(n, m)| (String::from(n), m)).collect() }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Square { cy: f64, cx: f64, half: f64 },
    Triangle { cy: f64, cx: f64, half: f64, up: bool },
    Bar { cy: f64, cx: f64, half_len: f64, half_w: f64, angle: f64 },
    Ring { cy: f64, cx: f64, r_in: f64, r_out: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Square { cy, cx, half } => (y - cy).abs() <= half && (x - cx).abs() <= half,
            Shape::Triangle { cy, cx, half, up } => {
                let t = if up { (y - (cy - half)) / (2.0 * half) } else { ((cy + half) - y) / (2.0 * half) };
                (0.0..=1.0).contains(&t) && (x - cx).abs() <= t * half
            }
            Shape::Bar { cy, cx, half_len, half_w, angle } => {
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                u.abs() <= half_len && v.abs() <= half_w
            }
            Shape::Ring { cy, cx, r_in, r_out } => {
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                d2 >= r_in * r_in && d2 <= r_out * r_out
            }
        }
    }
}

fn random_shape(class: usize, size: f64, rng: &mut ChaCha8Rng) -> Shape {
    let s = size / 32.0;
    let mut u = |lo: f64, hi: f64| rng::uniform(rng, lo, hi);
    match class {
        DISK => {
            let r = u(8.0, 11.0) * s;
            Shape::Disk { cy: u(r, size - r), cx: u(r, size - r), r }
        }
        SQUARE => {
            let half = u(4.0, 6.0) * s;
            Shape::Square { cy: u(half, size - half), cx: u(half, size - half), half }
        }
        TRIANGLE => {
            let half = u(5.0, 7.0) * s;
            let up = u(0.0, 1.0) < 0.5;
            Shape::Triangle { cy: u(half, size - half), cx: u(half, size - half), half, up }
        }
        3 => {
            let half_len = u(8.0, 12.0) * s;
            let half_w = u(1.0, 1.5) * s;
            let angle = u(0.0, 4.0).floor() * core::f64::consts::FRAC_PI_4;
            let m = half_len * 0.75;
            Shape::Bar { cy: u(m, size - m), cx: u(m, size - m), half_len, half_w, angle }
        }
        _ => {
            let r_out = u(6.0, 9.0) * s;
            let r_in = r_out - u(2.0, 3.0) * s;
            Shape::Ring { cy: u(r_out, size - r_out), cx: u(r_out, size - r_out), r_in, r_out }
        }
    }
}

fn scene_classes(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let c = spec.num_classes;
    let first = rng::index(rng, c);
    let co = rng::unit(rng) < spec.co_occurrence;
    if !co || first == DISK || c < 2 {
        return vec![first];
    }
    let others: Vec<usize> = (0..c).filter(|&k| k != DISK && k != first).collect();
    if others.is_empty() {
        return vec![first];
    }
    // The square/triangle pair is strongly tied.
    let pair = match first {
        SQUARE if c > TRIANGLE => Some(TRIANGLE),
        TRIANGLE => Some(SQUARE),
        _ => None,
    };
    let second = match pair {
        Some(p) if rng::unit(rng) < 0.8 => p,
        _ => others[rng::index(rng, others.len())],
    };
    vec![first, second]
}

/// Generates one dataset split.
pub fn generate<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<ImageSample<T>>> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let mut out = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        out.push(generate_one(spec, i, &mut rng));
    }
    Ok(out)
}

fn generate_one<T: Scalar>(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> ImageSample<T> {
    let n = spec.size;
    let sz = n as f64;
    loop {
        // Background: a tinted gradient with soft blotches.
        let base = rng::uniform(rng, 0.3, 0.6);
        let tint = [rng::uniform(rng, -0.06, 0.06), rng::uniform(rng, -0.06, 0.06), rng::uniform(rng, -0.06, 0.06)];
        let (gy, gx) = (rng::uniform(rng, -0.15, 0.15), rng::uniform(rng, -0.15, 0.15));
        let (fy, fx, ph) = (rng::uniform(rng, 0.2, 0.6), rng::uniform(rng, 0.2, 0.6), rng::uniform(rng, 0.0, 6.28));
        let mut img = vec![[0.0f64; 3]; n * n];
        for y in 0..n {
            for x in 0..n {
                let g = base + gy * (y as f64 / sz - 0.5) + gx * (x as f64 / sz - 0.5)
                    + 0.05 * libm::sin(fy * y as f64 + ph) * libm::cos(fx * x as f64);
                for c in 0..3 {
                    img[y * n + x][c] = g + tint[c];
                }
            }
        }
        let mut mask = vec![0u8; n * n];
        let classes = scene_classes(spec, rng);
        for &cls in &classes {
            let shape = random_shape(cls, sz, rng);
            let hue = BODY_HUE[cls] + rng::uniform(rng, -0.04, 0.04);
            let sat = rng::uniform(rng, 0.3, 0.5);
            let val = rng::uniform(rng, 0.55, 0.85);
            let body = hsv_to_rgb(hue, sat, val);
            let pixels: Vec<usize> = (0..n * n)
                .filter(|&p| shape.contains((p / n) as f64 + 0.5, (p % n) as f64 + 0.5))
                .collect();
            for &p in &pixels {
                img[p] = [body.0, body.1, body.2];
                mask[p] = (cls + 1) as u8;
            }
            if pixels.is_empty() {
                continue;
            }
            // Core patch: the object pixels nearest to a random object pixel.
            let centre = pixels[rng::index(rng, pixels.len())];
            let (cy, cx) = ((centre / n) as f64, (centre % n) as f64);
            let half = spec.core_size as f64 / 2.0;
            let core = CORE_RGB[cls];
            for &p in &pixels {
                let (py, px) = ((p / n) as f64, (p % n) as f64);
                if (py - cy).abs() < half && (px - cx).abs() < half {
                    img[p] = [core.0, core.1, core.2];
                }
            }
        }
        let mut labels = vec![T::zero(); spec.num_classes];
        let mut counts = vec![0usize; spec.num_classes + 1];
        for &m in &mask {
            counts[m as usize] += 1;
        }
        for c in 0..spec.num_classes {
            if counts[c + 1] > 0 {
                labels[c] = T::one();
            }
        }
        // Occlusion may hide an object completely; redraw such scenes so
        // every drawn class is visible.
        if classes.iter().any(|&c| counts[c + 1] < 6) {
            continue;
        }
        let image = Tensor3::from_fn(3, n, n, |c, y, x| {
            let noise = if spec.noise > 0.0 { gaussian(rng) * spec.noise } else { 0.0 };
            T::of((img[y * n + x][c] + noise).clamp(0.0, 1.0))
        });
        return ImageSample { id: format!("syn_{index:05}"), image, labels, gt_mask: Some(mask) };
    }
}

/// Standard normal deviate from two uniform draws (Box-Muller).
fn gaussian(rng: &mut impl RngCore) -> f64 {
    let u1 = rng::unit(rng).max(1e-300);
    let u2 = rng::unit(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
