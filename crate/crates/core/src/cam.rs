//! Class activation maps: normalization, posteriors, Puzzle tiling and
//! test-time augmentation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::scalar::sigmoid;
use crate::{arg_err, shape_err, Error, Result, Scalar, Tensor3};

/// Added to the per-class maximum before dividing.
pub const NORMALIZE_EPS: f64 = 1e-5;

/// One image with its image-level labels and, for evaluation only, its
/// ground-truth mask (`255` = ignore).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample<T> {
    pub id: String,
    pub image: Tensor3<T>,
    pub labels: Vec<T>,
    pub gt_mask: Option<Vec<u8>>,
}

impl<T: Scalar> ImageSample<T> {
    /// Checks shape, label and mask invariants. Training samples must carry
    /// at least one positive label.
    pub fn validate(&self, num_classes: usize, training: bool) -> Result<()> {
        let [c, h, w] = self.image.shape();
        if c != 3 {
            return Err(shape_err!("sample {}: expected 3 channels, got {c}", self.id));
        }
        if h < 8 || w < 8 || h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("sample {}: size {h}x{w} must be even and at least 8", self.id));
        }
        if self.labels.len() != num_classes {
            return Err(shape_err!("sample {}: {} labels for {num_classes} classes", self.id, self.labels.len()));
        }
        if training && !self.labels.iter().any(|v| *v > T::zero()) {
            return Err(Error::NoPositiveLabel);
        }
        if let Some(m) = &self.gt_mask {
            if m.len() != h * w {
                return Err(shape_err!("sample {}: mask has {} pixels for {h}x{w}", self.id, m.len()));
            }
            if let Some(&v) = m.iter().find(|&&v| v != 255 && v as usize > num_classes) {
                return Err(Error::LabelOutOfRange { label: v, classes: num_classes });
            }
        }
        Ok(())
    }
}

/// Which forward pass produced a set of maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamSource {
    Main,
    Reconstructed,
    Oc,
    Noc,
}

/// Raw per-class activations together with their normalized form.
#[derive(Clone, Debug, PartialEq)]
pub struct CamStack<T> {
    pub raw: Tensor3<T>,
    pub normalized: Tensor3<T>,
    pub source: CamSource,
}

impl<T: Scalar> CamStack<T> {
    pub fn from_raw(raw: Tensor3<T>, source: CamSource) -> Result<Self> {
        let normalized = normalize_cam(&raw)?;
        Ok(Self { raw, normalized, source })
    }

    pub fn posterior(&self) -> Result<Posterior<T>> {
        gap_posterior(&self.raw)
    }
}

/// `sigmoid(GAP(A))` per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<T> {
    pub probs: Vec<T>,
}

/// Anything that maps an image `[3,H,W]` to raw class maps `[C,h,w]`.
///
/// Implementations must be deterministic functions of their parameters and
/// input, and the output resolution must be a fixed fraction of the input.
pub trait ClassifierModel<T: Scalar> {
    fn num_classes(&self) -> usize;
    fn forward(&self, image: &Tensor3<T>) -> Result<Tensor3<T>>;

    fn forward_batch(&self, images: &[Tensor3<T>]) -> Result<Vec<CamStack<T>>> {
        images
            .iter()
            .map(|x| CamStack::from_raw(self.forward(x)?, CamSource::Main))
            .collect()
    }
}

/// ReLU followed by division by `max + eps`, independently per class.
///
/// Classes whose map has no positive value come out as all zeros.
pub fn normalize_cam<T: Scalar>(raw: &Tensor3<T>) -> Result<Tensor3<T>> {
    let eps = T::of(NORMALIZE_EPS);
    let mut out = raw.clone();
    for c in 0..raw.channels() {
        let plane = out.plane_mut(c);
        let mut max = T::zero();
        for v in plane.iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite { class: c });
            }
            if *v < T::zero() {
                *v = T::zero();
            }
            max = max.max(*v);
        }
        if max > T::zero() {
            let inv = T::one() / (max + eps);
            for v in plane.iter_mut() {
                *v *= inv;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`normalize_cam`] with respect to its raw input, treating the
/// arg-max location as fixed.
pub fn normalize_cam_backward<T: Scalar>(raw: &Tensor3<T>, grad_out: &Tensor3<T>) -> Result<Tensor3<T>> {
    raw.check_same(grad_out)?;
    let eps = T::of(NORMALIZE_EPS);
    let mut grad = Tensor3::zeros(raw.channels(), raw.height(), raw.width());
    for c in 0..raw.channels() {
        let r = raw.plane(c);
        let g = grad_out.plane(c);
        let mut max = T::zero();
        let mut arg = 0;
        for (i, &v) in r.iter().enumerate() {
            if v > max {
                max = v;
                arg = i;
            }
        }
        if max <= T::zero() {
            continue;
        }
        let denom = max + eps;
        let gp = grad.plane_mut(c);
        let mut through_max = T::zero();
        for i in 0..r.len() {
            if r[i] > T::zero() {
                gp[i] = g[i] / denom;
                through_max -= g[i] * r[i] / (denom * denom);
            }
        }
        gp[arg] += through_max;
    }
    Ok(grad)
}

/// Spatial mean per class (the logits fed to the multi-label loss).
pub fn gap_logits<T: Scalar>(raw: &Tensor3<T>) -> Result<Vec<T>> {
    let n = raw.plane_len();
    if n == 0 {
        return Err(shape_err!("empty spatial dimensions {:?}", raw.shape()));
    }
    let inv = T::one() / T::of(n as f64);
    Ok((0..raw.channels())
        .map(|c| raw.plane(c).iter().copied().sum::<T>() * inv)
        .collect())
}

/// Broadcasts logit gradients back over the spatial grid of the maps.
pub fn gap_backward<T: Scalar>(grad_logits: &[T], h: usize, w: usize) -> Tensor3<T> {
    let inv = T::one() / T::of((h * w) as f64);
    let mut g = Tensor3::zeros(grad_logits.len(), h, w);
    for (c, &gl) in grad_logits.iter().enumerate() {
        g.plane_mut(c).fill(gl * inv);
    }
    g
}

pub fn gap_posterior<T: Scalar>(raw: &Tensor3<T>) -> Result<Posterior<T>> {
    Ok(Posterior { probs: gap_logits(raw)?.into_iter().map(sigmoid).collect() })
}

/// Splits `[C,H,W]` into quadrants: top-left, top-right, bottom-left,
/// bottom-right.
pub fn tile<T: Scalar>(x: &Tensor3<T>) -> Result<[Tensor3<T>; 4]> {
    let [c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(shape_err!("tiling needs even, non-zero spatial dims, got {h}x{w}"));
    }
    let (hh, hw) = (h / 2, w / 2);
    let piece = |oy: usize, ox: usize| Tensor3::from_fn(c, hh, hw, |ci, y, xx| x.at(ci, oy + y, ox + xx));
    Ok([piece(0, 0), piece(0, hw), piece(hh, 0), piece(hh, hw)])
}

/// Inverse of [`tile`].
pub fn merge<T: Scalar>(pieces: &[Tensor3<T>; 4]) -> Result<Tensor3<T>> {
    let [c, h, w] = pieces[0].shape();
    for (i, p) in pieces.iter().enumerate().skip(1) {
        if p.shape() != [c, h, w] {
            return Err(shape_err!("piece {i} is {:?}, piece 0 is {:?}", p.shape(), [c, h, w]));
        }
    }
    let mut out = Tensor3::zeros(c, 2 * h, 2 * w);
    for (q, p) in pieces.iter().enumerate() {
        let (oy, ox) = ((q / 2) * h, (q % 2) * w);
        for ci in 0..c {
            for y in 0..h {
                let src = &p.plane(ci)[y * w..(y + 1) * w];
                let start = out.idx(ci, oy + y, ox);
                out.data_mut()[start..start + w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Splits merged-resolution gradients back into per-quadrant gradients.
pub fn merge_backward<T: Scalar>(grad: &Tensor3<T>) -> Result<[Tensor3<T>; 4]> {
    tile(grad)
}

#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

fn taps<T: Scalar>(src: usize, dst: usize) -> Vec<Tap<T>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s as usize).min(src - 1);
            let i1 = if i0 < src - 1 { i0 + 1 } else { i0 };
            let l1 = s - i0 as f64;
            let l1 = if i1 == i0 { 0.0 } else { l1 };
            Tap { i0, i1, w0: T::of(1.0 - l1), w1: T::of(l1) }
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers (corner alignment disabled).
pub fn resize_bilinear<T: Scalar>(x: &Tensor3<T>, oh: usize, ow: usize) -> Tensor3<T> {
    let [c, h, w] = x.shape();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ci in 0..c {
        let src = x.plane(ci);
        let dst = out.plane_mut(ci);
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..a.i0 * w + w];
            let r1 = &src[a.i1 * w..a.i1 * w + w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.i0] * b.w0 + r0[b.i1] * b.w1;
                let bot = r1[b.i0] * b.w0 + r1[b.i1] * b.w1;
                dst[oy * ow + ox] = top * a.w0 + bot * a.w1;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: maps output gradients of shape
/// `[C,oh,ow]` back onto an input grid of `ih x iw`.
pub fn resize_bilinear_adjoint<T: Scalar>(g: &Tensor3<T>, ih: usize, iw: usize) -> Tensor3<T> {
    let [c, oh, ow] = g.shape();
    if (ih, iw) == (oh, ow) {
        return g.clone();
    }
    let ty = taps::<T>(ih, oh);
    let tx = taps::<T>(iw, ow);
    let mut out = Tensor3::zeros(c, ih, iw);
    for ci in 0..c {
        let src = g.plane(ci);
        let dst = out.plane_mut(ci);
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                dst[a.i0 * iw + b.i0] += v * a.w0 * b.w0;
                dst[a.i0 * iw + b.i1] += v * a.w0 * b.w1;
                dst[a.i1 * iw + b.i0] += v * a.w1 * b.w0;
                dst[a.i1 * iw + b.i1] += v * a.w1 * b.w1;
            }
        }
    }
    out
}

pub fn flip_horizontal<T: Scalar>(x: &Tensor3<T>) -> Tensor3<T> {
    let w = x.width();
    Tensor3::from_fn(x.channels(), x.height(), w, |c, y, xx| x.at(c, y, w - 1 - xx))
}

/// Multi-scale (and optionally flipped) CAM averaging at input resolution,
/// followed by normalization.
///
/// Variants are accumulated in a fixed order: scales as given, unflipped
/// before flipped.
pub fn tta_prior<T: Scalar, M: ClassifierModel<T> + ?Sized>(
    model: &M,
    image: &Tensor3<T>,
    scales: &[f64],
    use_flip: bool,
) -> Result<Tensor3<T>> {
    if scales.is_empty() {
        return Err(arg_err!("TTA needs at least one scale"));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(arg_err!("TTA scale must be positive, got {s}"));
    }
    let (h, w) = (image.height(), image.width());
    let mut acc = Tensor3::zeros(model.num_classes(), h, w);
    let mut variants = 0usize;
    for &s in scales {
        let sh = ((h as f64 * s).round() as usize).max(1);
        let sw = ((w as f64 * s).round() as usize).max(1);
        let scaled = resize_bilinear(image, sh, sw);
        let mut inputs = vec![(scaled, false)];
        if use_flip {
            let f = flip_horizontal(&inputs[0].0);
            inputs.push((f, true));
        }
        for (x, flipped) in inputs {
            let mut cam = model.forward(&x)?;
            if flipped {
                cam = flip_horizontal(&cam);
            }
            acc.add_assign(&resize_bilinear(&cam, h, w))?;
            variants += 1;
        }
    }
    acc.scale(T::one() / T::of(variants as f64));
    normalize_cam(&acc)
}

/// Zeroes the maps of classes absent from `labels`.
pub fn mask_absent_classes<T: Scalar>(maps: &mut Tensor3<T>, labels: &[T]) -> Result<()> {
    if labels.len() != maps.channels() {
        return Err(shape_err!("{} labels for {} maps", labels.len(), maps.channels()));
    }
    for (c, &y) in labels.iter().enumerate() {
        if y <= T::zero() {
            maps.plane_mut(c).fill(T::zero());
        }
    }
    Ok(())
}

/// Per-pixel maximum over classes.
pub fn max_over_classes<T: Scalar>(maps: &Tensor3<T>) -> Vec<T> {
    let n = maps.plane_len();
    let mut out = vec![T::zero(); n];
    for c in 0..maps.channels() {
        for (o, &v) in out.iter_mut().zip(maps.plane(c)) {
            if c == 0 || v > *o {
                *o = v;
            }
        }
    }
    out
}
