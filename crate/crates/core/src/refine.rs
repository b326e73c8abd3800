//! Seed labels from priors (optionally guided by saliency), pixel affinities
//! and random-walk propagation of prior mass. CRF post-processing is exposed
//! through a plugin registry.

use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::cam::max_over_classes;
use crate::{arg_err, shape_err, Error, Result, Scalar, Tensor3};

/// Seed value of pixels that are neither confident background nor
/// confident foreground.
pub const UNKNOWN: u8 = 255;

/// Per-pixel labels: 0 background, `1..=C` class `c - 1`, 255 unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl SeedMap {
    pub fn unknown_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&v| v == UNKNOWN).count() as f64 / self.labels.len() as f64
    }
}

fn argmax_label<T: Scalar>(prior: &Tensor3<T>, p: usize) -> u8 {
    let mut best = 0;
    let mut bv = prior.data()[p];
    for c in 1..prior.channels() {
        let v = prior.data()[c * prior.plane_len() + p];
        if v > bv {
            bv = v;
            best = c;
        }
    }
    (best + 1) as u8
}

fn check_classes<T: Scalar>(prior: &Tensor3<T>) -> Result<()> {
    if prior.channels() == 0 || prior.channels() >= UNKNOWN as usize {
        return Err(shape_err!("prior must have between 1 and 254 classes, got {}", prior.channels()));
    }
    Ok(())
}

/// Peak below `delta_bg` is background, above `delta_fg` the arg-max class,
/// anything else unknown.
pub fn seeds_from_priors<T: Scalar>(prior: &Tensor3<T>, delta_bg: f64, delta_fg: f64) -> Result<SeedMap> {
    check_classes(prior)?;
    if !(delta_bg < delta_fg) {
        return Err(arg_err!("delta_bg {delta_bg} must be below delta_fg {delta_fg}"));
    }
    let m = max_over_classes(prior);
    let labels = m
        .iter()
        .enumerate()
        .map(|(p, v)| {
            let v = v.as_f64();
            if v < delta_bg {
                0
            } else if v > delta_fg {
                argmax_label(prior, p)
            } else {
                UNKNOWN
            }
        })
        .collect();
    Ok(SeedMap { height: prior.height(), width: prior.width(), labels })
}

/// Non-salient pixels (`saliency < delta_sal`) are background; the others
/// follow the foreground rule of [`seeds_from_priors`].
pub fn seeds_with_saliency<T: Scalar>(
    prior: &Tensor3<T>,
    saliency: &[T],
    delta_fg: f64,
    delta_sal: f64,
) -> Result<SeedMap> {
    check_classes(prior)?;
    if saliency.len() != prior.plane_len() {
        return Err(shape_err!("saliency has {} pixels, prior {}x{}", saliency.len(), prior.height(), prior.width()));
    }
    let m = max_over_classes(prior);
    let labels = m
        .iter()
        .zip(saliency)
        .enumerate()
        .map(|(p, (v, s))| {
            if s.as_f64() < delta_sal {
                0
            } else if v.as_f64() > delta_fg {
                argmax_label(prior, p)
            } else {
                UNKNOWN
            }
        })
        .collect();
    Ok(SeedMap { height: prior.height(), width: prior.width(), labels })
}

/// Sparse symmetric pixel affinities within a disk, stored row-wise. Every
/// row contains the pixel itself with weight 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityGraph<T> {
    pub height: usize,
    pub width: usize,
    pub radius: usize,
    /// Row start offsets into `cols`/`weights`, length `h·w + 1`.
    pub row_start: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Scalar> AffinityGraph<T> {
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_start[i], self.row_start[i + 1]);
        (&self.cols[a..b], &self.weights[a..b])
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        let (c, w) = self.row(i);
        c.iter().position(|&k| k == j).map_or(T::zero(), |p| w[p])
    }

    pub fn degrees(&self) -> Vec<T> {
        (0..self.num_pixels()).map(|i| self.row(i).1.iter().copied().sum()).collect()
    }

    /// Zeroes the affinity between pixels whose seeds are known and differ.
    pub fn constrain(&mut self, seeds: &SeedMap) -> Result<()> {
        if seeds.labels.len() != self.num_pixels() {
            return Err(shape_err!("seed map does not match the graph"));
        }
        for i in 0..self.num_pixels() {
            let li = seeds.labels[i];
            if li == UNKNOWN {
                continue;
            }
            for k in self.row_start[i]..self.row_start[i + 1] {
                let lj = seeds.labels[self.cols[k]];
                if lj != UNKNOWN && lj != li {
                    self.weights[k] = T::zero();
                }
            }
        }
        Ok(())
    }
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn for_each_pair<T: Scalar>(feat: &Tensor3<T>, radius: usize, mut f: impl FnMut(usize, usize, T)) {
    let (h, w) = (feat.height(), feat.width());
    let offs = disk_offsets(radius);
    let n = feat.plane_len();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for &(dy, dx) in &offs {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let j = yy as usize * w + xx as usize;
                let mut d = T::zero();
                for c in 0..feat.channels() {
                    let diff = feat.data()[c * n + i] - feat.data()[c * n + j];
                    d += diff * diff;
                }
                f(i, j, d);
            }
        }
    }
}

/// Median feature distance over distinct pixel pairs within `radius`.
pub fn median_distance<T: Scalar>(feat: &Tensor3<T>, radius: usize) -> f64 {
    let mut d = Vec::new();
    for_each_pair(feat, radius, |i, j, d2| {
        if i < j {
            d.push(d2.as_f64().sqrt());
        }
    });
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    d[d.len() / 2]
}

/// Gaussian affinities `exp(-‖f_i - f_j‖² / 2σ²)` for pixels within `radius`.
/// With `sigma = None` the median within-radius distance is used (1 if that
/// is zero).
pub fn build_affinity<T: Scalar>(feat: &Tensor3<T>, radius: usize, sigma: Option<f64>) -> Result<AffinityGraph<T>> {
    if radius == 0 {
        return Err(arg_err!("radius must be at least 1"));
    }
    if let Some(s) = sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(arg_err!("sigma must be positive, got {s}"));
        }
    }
    let sigma = sigma.unwrap_or_else(|| {
        let m = median_distance(feat, radius);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    let n = feat.plane_len();
    let inv = T::of(1.0 / (2.0 * sigma * sigma));
    let mut row_start = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    let mut last = usize::MAX;
    for_each_pair(feat, radius, |i, j, d2| {
        if i != last {
            row_start.push(cols.len());
            last = i;
        }
        cols.push(j);
        weights.push(if i == j { T::one() } else { (-d2 * inv).exp() });
    });
    row_start.push(cols.len());
    Ok(AffinityGraph { height: feat.height(), width: feat.width(), radius, row_start, cols, weights })
}

/// Source of pixel affinities. The Gaussian color model is the default; a
/// learned affinity head can be plugged in by implementing this trait.
pub trait AffinityModel<T: Scalar> {
    fn affinity(&self, image: &Tensor3<T>, seeds: Option<&SeedMap>) -> Result<AffinityGraph<T>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianAffinity {
    pub radius: usize,
    pub sigma: Option<f64>,
}

impl Default for GaussianAffinity {
    fn default() -> Self {
        Self { radius: 5, sigma: None }
    }
}

impl<T: Scalar> AffinityModel<T> for GaussianAffinity {
    fn affinity(&self, image: &Tensor3<T>, seeds: Option<&SeedMap>) -> Result<AffinityGraph<T>> {
        let mut g = build_affinity(image, self.radius, self.sigma)?;
        if let Some(s) = seeds {
            g.constrain(s)?;
        }
        Ok(g)
    }
}

/// Prepends a background channel `clamp(1 - max_c prior, 0, 1)`.
pub fn with_background<T: Scalar>(prior: &Tensor3<T>) -> Tensor3<T> {
    let m = max_over_classes(prior);
    let bg: Vec<T> = m.iter().map(|v| (T::one() - *v).max(T::zero()).min(T::one())).collect();
    let mut planes: Vec<&[T]> = vec![&bg];
    planes.extend((0..prior.channels()).map(|c| prior.plane(c)));
    Tensor3::from_planes(prior.height(), prior.width(), &planes).expect("planes share the prior's size")
}

/// `t` steps of `v ← D⁻¹ W^β v` on every channel, then per-pixel
/// renormalization so the channels sum to 1.
pub fn random_walk<T: Scalar>(prior: &Tensor3<T>, graph: &AffinityGraph<T>, beta: f64, t: usize) -> Result<Tensor3<T>> {
    if prior.height() != graph.height || prior.width() != graph.width {
        return Err(shape_err!(
            "prior {}x{} vs graph {}x{}",
            prior.height(),
            prior.width(),
            graph.height,
            graph.width
        ));
    }
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(arg_err!("beta must be at least 1, got {beta}"));
    }
    let n = graph.num_pixels();
    let b = T::of(beta);
    let mut trans: Vec<T> = graph.weights.iter().map(|w| w.powf(b)).collect();
    let mut self_loop = vec![false; n];
    for i in 0..n {
        let (s, e) = (graph.row_start[i], graph.row_start[i + 1]);
        let d: T = trans[s..e].iter().copied().sum();
        if d > T::zero() {
            for v in &mut trans[s..e] {
                *v /= d;
            }
        } else {
            self_loop[i] = true;
        }
    }
    let mut out = prior.clone();
    let mut next = vec![T::zero(); n];
    for c in 0..prior.channels() {
        for _ in 0..t {
            let cur = out.plane(c);
            for i in 0..n {
                if self_loop[i] {
                    next[i] = cur[i];
                    continue;
                }
                let (s, e) = (graph.row_start[i], graph.row_start[i + 1]);
                let mut acc = T::zero();
                for k in s..e {
                    acc += trans[k] * cur[graph.cols[k]];
                }
                next[i] = acc;
            }
            out.plane_mut(c).copy_from_slice(&next);
        }
    }
    let cn = prior.channels();
    let data = out.data_mut();
    for i in 0..n {
        let s: T = (0..cn).map(|c| data[c * n + i]).sum();
        if s > T::zero() {
            for c in 0..cn {
                data[c * n + i] /= s;
            }
        }
    }
    Ok(out)
}

/// Per-pixel arg-max of a `[C+1, h, w]` map whose channel 0 is background.
pub fn argmax_mask<T: Scalar>(probs: &Tensor3<T>) -> Vec<u8> {
    let n = probs.plane_len();
    (0..n)
        .map(|p| {
            let mut best = 0;
            for c in 1..probs.channels() {
                if probs.data()[c * n + p] > probs.data()[best * n + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// A dense-CRF style post-processor.
pub trait CrfPlugin<T: Scalar> {
    fn name(&self) -> &str;
    fn refine(&self, image: &Tensor3<T>, probs: &Tensor3<T>) -> Result<Tensor3<T>>;
}

pub struct CrfRegistry<T: Scalar> {
    plugins: Vec<Box<dyn CrfPlugin<T>>>,
}

impl<T: Scalar> Default for CrfRegistry<T> {
    fn default() -> Self {
        Self { plugins: Vec::new() }
    }
}

impl<T: Scalar> CrfRegistry<T> {
    pub fn register(&mut self, plugin: Box<dyn CrfPlugin<T>>) {
        self.plugins.push(plugin);
    }

    pub fn names(&self) -> Vec<&str> {
        self.plugins.iter().map(|p| p.name()).collect()
    }

    /// Runs the named plugin. Without a name the input is returned as is;
    /// a failing plugin also falls back to the input.
    pub fn crf_refine(&self, image: &Tensor3<T>, probs: &Tensor3<T>, plugin: Option<&str>) -> Result<Tensor3<T>> {
        let Some(name) = plugin else {
            log::info!("no CRF plugin selected; CRF skipped");
            return Ok(probs.clone());
        };
        let p = self.plugins.iter().find(|p| p.name() == name).ok_or_else(|| Error::UnknownPlugin {
            requested: name.to_string(),
            registered: self.names().join(", "),
        })?;
        match p.refine(image, probs) {
            Ok(out) if out.shape() == probs.shape() => Ok(out),
            Ok(_) => {
                log::warn!("CRF plugin {name} changed the map shape; using the unrefined map");
                Ok(probs.clone())
            }
            Err(e) => {
                log::warn!("CRF plugin {name} failed ({e}); using the unrefined map");
                Ok(probs.clone())
            }
        }
    }
}
