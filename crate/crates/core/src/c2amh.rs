//! Contrastive foreground/background disentangling with optional foreground
//! hints taken from CAM priors, and pseudo-saliency emission.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;
use rand::RngCore;

use crate::cam::resize_bilinear;
use crate::nn::{Conv2d, ToyCnn};
use crate::objectives::LossReport;
use crate::optim::Sgd;
use crate::rng;
use crate::scalar::{sigmoid, softplus};
use crate::{arg_err, shape_err, Result, Scalar, Tensor3};

/// Clamp applied to rectified cosine similarities so their logs stay finite.
pub const COS_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct C2amConfig {
    /// Decay of the rank weights.
    pub alpha: f64,
    /// Weight of the hint term; 0 gives the unhinted objective.
    pub lambda_h: f64,
    pub delta_fg: f64,
    pub delta_bg: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for C2amConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            lambda_h: 1.0,
            delta_fg: 0.4,
            delta_bg: 0.1,
            batch_size: 32,
            epochs: 10,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            hidden: 16,
            seed: 0,
        }
    }
}

impl C2amConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(arg_err!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda_h >= 0.0 && self.lambda_h.is_finite()) {
            return Err(arg_err!("lambda_h must be non-negative, got {}", self.lambda_h));
        }
        if !(0.0 <= self.delta_bg && self.delta_bg < self.delta_fg && self.delta_fg <= 1.0) {
            return Err(arg_err!("need 0 <= delta_bg < delta_fg <= 1, got {} and {}", self.delta_bg, self.delta_fg));
        }
        if self.batch_size < 2 {
            return Err(arg_err!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.epochs == 0 || self.hidden == 0 {
            return Err(arg_err!("epochs and hidden must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(arg_err!("invalid optimizer settings"));
        }
        Ok(())
    }
}

/// Foreground and background hints of one image at map resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct HintMask {
    pub height: usize,
    pub width: usize,
    pub fg: Vec<bool>,
    /// Diagnostic only; background hints do not enter the loss.
    pub bg: Vec<bool>,
    pub source_prior_id: String,
}

impl HintMask {
    pub fn fg_count(&self) -> usize {
        self.fg.iter().filter(|v| **v).count()
    }
}

/// Thresholds the per-pixel maximum of a normalized prior: above `delta_fg`
/// is foreground, below `delta_bg` background, anything between is neither.
pub fn extract_hints<T: Scalar>(prior: &Tensor3<T>, delta_fg: f64, delta_bg: f64, id: &str) -> Result<HintMask> {
    if !(delta_bg < delta_fg) {
        return Err(arg_err!("delta_bg {delta_bg} must be below delta_fg {delta_fg}"));
    }
    let m = crate::cam::max_over_classes(prior);
    let (fg, bg) = m.iter().map(|v| (v.as_f64() > delta_fg, v.as_f64() < delta_bg)).unzip();
    Ok(HintMask { height: prior.height(), width: prior.width(), fg, bg, source_prior_id: String::from(id) })
}

/// Area-weighted pooling of `A` under `P` and under `1 - P`, divided by `h·w`.
pub fn fg_bg_features<T: Scalar>(a: &Tensor3<T>, p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let n = a.plane_len();
    if p.len() != n || n == 0 {
        return Err(shape_err!("P has {} pixels, features {}x{}", p.len(), a.height(), a.width()));
    }
    let inv = T::one() / T::of(n as f64);
    let mut vf = Vec::with_capacity(a.channels());
    let mut vb = Vec::with_capacity(a.channels());
    for k in 0..a.channels() {
        let (mut f, mut b) = (T::zero(), T::zero());
        for (&av, &pv) in a.plane(k).iter().zip(p) {
            f += av * pv;
            b += av * (T::one() - pv);
        }
        vf.push(f * inv);
        vb.push(b * inv);
    }
    Ok((vf, vb))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn raw_cosine<T: Scalar>(a: &[T], b: &[T]) -> (T, T, T) {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let den = (na * nb).max(T::of(1e-12));
    (dot(a, b) / den, na, nb)
}

fn rectify<T: Scalar>(c: T) -> (T, bool) {
    let lo = T::of(COS_EPS);
    let hi = T::one() - lo;
    let r = c.max(T::zero());
    if r <= lo {
        (lo, false)
    } else if r >= hi {
        (hi, false)
    } else {
        (r, true)
    }
}

/// Rectified, clamped cosine similarity between every `us[i]` and `vs[j]`,
/// row-major `[n_u, n_v]`.
pub fn cross_cosine<T: Scalar>(us: &[Vec<T>], vs: &[Vec<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(us.len() * vs.len());
    for u in us {
        for v in vs {
            out.push(rectify(raw_cosine(u, v).0).0);
        }
    }
    out
}

pub fn cosine_matrix<T: Scalar>(vs: &[Vec<T>]) -> Vec<T> {
    cross_cosine(vs, vs)
}

/// `s_f`, `s_b` and `s_neg` of one batch, each row-major `[n, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTriple<T> {
    pub n: usize,
    pub s_f: Vec<T>,
    pub s_b: Vec<T>,
    pub s_neg: Vec<T>,
}

impl<T: Scalar> SimilarityTriple<T> {
    pub fn from_features(vf: &[Vec<T>], vb: &[Vec<T>]) -> Result<Self> {
        if vf.len() != vb.len() || vf.is_empty() {
            return Err(shape_err!("{} foreground and {} background vectors", vf.len(), vb.len()));
        }
        Ok(Self { n: vf.len(), s_f: cosine_matrix(vf), s_b: cosine_matrix(vb), s_neg: cross_cosine(vf, vb) })
    }
}

/// `exp(-α · rank)` per row, where rank 0 is the most similar other element.
/// Ties keep index order; diagonal weights are 0.
pub fn rank_weights<T: Scalar>(s: &[T], n: usize, alpha: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(arg_err!("rank weights need at least two elements, got {n}"));
    }
    if s.len() != n * n {
        return Err(shape_err!("similarity matrix has {} entries for n = {n}", s.len()));
    }
    let mut w = vec![0.0; n * n];
    let mut idx: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        idx.clear();
        idx.extend((0..n).filter(|&j| j != i));
        let row = &s[i * n..(i + 1) * n];
        // Stable sort keeps index order among equal similarities.
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(core::cmp::Ordering::Equal));
        for (rank, &j) in idx.iter().enumerate() {
            w[i * n + j] = libm::exp(-alpha * rank as f64);
        }
    }
    Ok(w)
}

fn check_open_unit<T: Scalar>(name: &str, s: &[T]) -> Result<()> {
    match s.iter().find(|v| !(**v > T::zero() && **v < T::one())) {
        Some(v) => Err(arg_err!("{name} similarity {} outside (0, 1)", v.as_f64())),
        None => Ok(()),
    }
}

/// Positive-pair terms as negative log-likelihoods plus the negative-pair
/// term over all `n²` pairs.
pub fn c2am_loss<T: Scalar>(trip: &SimilarityTriple<T>, w_f: &[f64], w_b: &[f64]) -> Result<T> {
    let n = trip.n;
    if n < 2 {
        return Err(arg_err!("need at least two images, got {n}"));
    }
    for (name, m) in [("s_f", &trip.s_f), ("s_b", &trip.s_b), ("s_neg", &trip.s_neg)] {
        if m.len() != n * n {
            return Err(shape_err!("{name} has {} entries for n = {n}", m.len()));
        }
        check_open_unit(name, m)?;
    }
    if w_f.len() != n * n || w_b.len() != n * n {
        return Err(shape_err!("weight matrices must be {n}x{n}"));
    }
    let pairs = T::of((n * (n - 1)) as f64);
    let mut lf = T::zero();
    let mut lb = T::zero();
    let mut ln = T::zero();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if i != j {
                lf -= T::of(w_f[k]) * trip.s_f[k].ln();
                lb -= T::of(w_b[k]) * trip.s_b[k].ln();
            }
            ln -= (T::one() - trip.s_neg[k]).ln();
        }
    }
    Ok(lf / pairs + lb / pairs + ln / T::of((n * n) as f64))
}

/// Mean over foreground-hint pixels of `-ln P`, averaged over the batch;
/// images without foreground hints contribute 0.
pub fn hint_loss<T: Scalar>(p: &[Vec<T>], hints: &[HintMask]) -> Result<T> {
    if p.len() != hints.len() || p.is_empty() {
        return Err(shape_err!("{} saliency maps with {} hint masks", p.len(), hints.len()));
    }
    let mut total = T::zero();
    for (pi, h) in p.iter().zip(hints) {
        if pi.len() != h.fg.len() {
            return Err(shape_err!("hint mask {} is not aligned with P", h.source_prior_id));
        }
        let m = h.fg_count();
        if m == 0 {
            continue;
        }
        let s: T = pi.iter().zip(&h.fg).filter(|(_, f)| **f).map(|(v, _)| -v.ln()).sum();
        total += s / T::of(m as f64);
    }
    Ok(total / T::of(p.len() as f64))
}

/// The hinted objective on precomputed similarities and saliency values.
pub fn c2amh_loss<T: Scalar>(
    trip: &SimilarityTriple<T>,
    w_f: &[f64],
    w_b: &[f64],
    p: &[Vec<T>],
    hints: &[HintMask],
    lambda_h: f64,
) -> Result<T> {
    let base = c2am_loss(trip, w_f, w_b)?;
    if lambda_h == 0.0 {
        return Ok(base);
    }
    Ok(base + T::of(lambda_h) * hint_loss(p, hints)?)
}

/// Accumulates `g · ∂cos(a, b)/∂a` into `out`.
fn cosine_grad_into<T: Scalar>(a: &[T], b: &[T], cos: T, na: T, nb: T, g: T, out: &mut [T]) {
    let den = (na * nb).max(T::of(1e-12));
    let na2 = (na * na).max(T::of(1e-24));
    for ((o, &av), &bv) in out.iter_mut().zip(a).zip(b) {
        *o += g * (bv / den - cos * av / na2);
    }
}

/// Contrastive loss and its gradient with respect to the pooled features.
/// Rank weights are computed from the current similarities and treated as
/// constants.
#[allow(clippy::type_complexity)]
pub fn c2am_loss_grad<T: Scalar>(
    vf: &[Vec<T>],
    vb: &[Vec<T>],
    alpha: f64,
) -> Result<(T, Vec<Vec<T>>, Vec<Vec<T>>)> {
    let trip = SimilarityTriple::from_features(vf, vb)?;
    let n = trip.n;
    let w_f = rank_weights(&trip.s_f, n, alpha)?;
    let w_b = rank_weights(&trip.s_b, n, alpha)?;
    c2am_loss_grad_weighted(vf, vb, &w_f, &w_b)
}

#[allow(clippy::type_complexity)]
pub fn c2am_loss_grad_weighted<T: Scalar>(
    vf: &[Vec<T>],
    vb: &[Vec<T>],
    w_f: &[f64],
    w_b: &[f64],
) -> Result<(T, Vec<Vec<T>>, Vec<Vec<T>>)> {
    let trip = SimilarityTriple::from_features(vf, vb)?;
    let loss = c2am_loss(&trip, w_f, w_b)?;
    let n = trip.n;
    let k = vf[0].len();
    let pairs = T::of((n * (n - 1)) as f64);
    let all = T::of((n * n) as f64);
    let mut gf = vec![vec![T::zero(); k]; n];
    let mut gb = vec![vec![T::zero(); k]; n];
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            if i != j {
                for (vs, gs, w) in [(vf, &mut gf, w_f), (vb, &mut gb, w_b)] {
                    let (c, na, nb) = raw_cosine(&vs[i], &vs[j]);
                    let (s, live) = rectify(c);
                    if live {
                        let g = -T::of(w[idx]) / (pairs * s);
                        cosine_grad_into(&vs[i], &vs[j], c, na, nb, g, &mut gs[i]);
                        cosine_grad_into(&vs[j], &vs[i], c, nb, na, g, &mut gs[j]);
                    }
                }
            }
            let (c, na, nb) = raw_cosine(&vf[i], &vb[j]);
            let (s, live) = rectify(c);
            if live {
                let g = T::one() / (all * (T::one() - s));
                cosine_grad_into(&vf[i], &vb[j], c, na, nb, g, &mut gf[i]);
                cosine_grad_into(&vb[j], &vf[i], c, nb, na, g, &mut gb[j]);
            }
        }
    }
    Ok((loss, gf, gb))
}

/// Pixel-wise head producing the foreground logit of every feature location.
pub trait Disentangler<T: Scalar> {
    fn feature_channels(&self) -> usize;
    /// Logits `[h·w]` for features `[K, h, w]`.
    fn logits(&self, a: &Tensor3<T>) -> Result<Vec<T>>;

    fn saliency(&self, a: &Tensor3<T>) -> Result<Vec<T>> {
        Ok(self.logits(a)?.into_iter().map(sigmoid).collect())
    }
}

/// Per-channel affine map `(a - mean) · inv_std` fitted on a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> FeatureScaler<T> {
    pub fn identity(k: usize) -> Self {
        Self { mean: vec![T::zero(); k], inv_std: vec![T::one(); k] }
    }

    /// Mean and standard deviation of every channel over all pixels of all
    /// maps. Constant channels keep unit scale.
    pub fn fit(feats: &[Tensor3<T>]) -> Result<Self> {
        let k = feats.first().ok_or_else(|| arg_err!("no feature maps to fit"))?.channels();
        let mut mean = Vec::with_capacity(k);
        let mut inv_std = Vec::with_capacity(k);
        for c in 0..k {
            let (mut n, mut s, mut s2) = (0usize, 0.0f64, 0.0f64);
            for f in feats {
                if f.channels() != k {
                    return Err(shape_err!("feature maps disagree on channels: {} vs {k}", f.channels()));
                }
                for v in f.plane(c) {
                    let v = v.as_f64();
                    n += 1;
                    s += v;
                    s2 += v * v;
                }
            }
            let m = s / n.max(1) as f64;
            let var = (s2 / n.max(1) as f64 - m * m).max(0.0);
            let sd = libm::sqrt(var);
            mean.push(T::of(m));
            inv_std.push(T::of(if sd > 1e-8 { 1.0 / sd } else { 1.0 }));
        }
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, a: &Tensor3<T>) -> Result<Tensor3<T>> {
        if a.channels() != self.mean.len() {
            return Err(shape_err!("features have {} channels, scaler {}", a.channels(), self.mean.len()));
        }
        let mut out = a.clone();
        for c in 0..a.channels() {
            let (m, s) = (self.mean[c], self.inv_std[c]);
            for v in out.plane_mut(c) {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }
}

/// Two 1×1 layers with a ReLU between them, applied to standardized
/// features. The output layer starts at zero so an untrained head predicts
/// 0.5 everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead<T> {
    pub scaler: FeatureScaler<T>,
    pub l1: Conv2d<T>,
    pub l2: Conv2d<T>,
}

impl<T: Scalar> MlpHead<T> {
    pub fn new(k: usize, hidden: usize, rng: &mut impl RngCore) -> Self {
        let l1 = Conv2d::new(k, hidden, 1, 1, true, rng);
        let mut l2 = Conv2d::new(hidden, 1, 1, 1, true, rng);
        l2.weight.iter_mut().for_each(|v| *v = T::zero());
        Self { scaler: FeatureScaler::identity(k), l1, l2 }
    }

    /// `a` must already be standardized.
    fn forward_hidden(&self, a: &Tensor3<T>) -> Result<(Tensor3<T>, Vec<T>)> {
        let (mut h, _) = self.l1.forward(a)?;
        for v in h.data_mut() {
            *v = v.max(T::zero());
        }
        let z = self.l2.forward(&h)?.0.into_vec();
        Ok((h, z))
    }

    fn backward(&self, a: &Tensor3<T>, hidden: &Tensor3<T>, dz: &[T], grads: &mut [Vec<T>]) -> Result<()> {
        let dz = Tensor3::from_vec(1, a.height(), a.width(), dz.to_vec())?;
        let (g0, rest) = grads.split_at_mut(1);
        let (g1, rest) = rest.split_at_mut(1);
        let (g2, g3) = rest.split_at_mut(1);
        let mut dh = self
            .l2
            .backward(hidden, None, &dz, Some((&mut g2[0], &mut g3[0])), true)?
            .ok_or_else(|| shape_err!("missing hidden gradient"))?;
        for (g, &h) in dh.data_mut().iter_mut().zip(hidden.data()) {
            if h <= T::zero() {
                *g = T::zero();
            }
        }
        self.l1.backward(a, None, &dh, Some((&mut g0[0], &mut g1[0])), false)?;
        Ok(())
    }

    pub fn params(&self) -> Vec<&[T]> {
        vec![&self.l1.weight, &self.l1.bias, &self.l2.weight, &self.l2.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.l1.weight, &mut self.l1.bias, &mut self.l2.weight, &mut self.l2.bias]
    }
}

impl<T: Scalar> Disentangler<T> for MlpHead<T> {
    fn feature_channels(&self) -> usize {
        self.l1.cin
    }

    fn logits(&self, a: &Tensor3<T>) -> Result<Vec<T>> {
        Ok(self.forward_hidden(&self.scaler.apply(a)?)?.1)
    }
}

/// Frozen backbone features of an image at its own resolution: the
/// classifier's last block upsampled bilinearly, followed by the colors.
pub fn backbone_features<T: Scalar>(model: &ToyCnn<T>, image: &Tensor3<T>) -> Result<Tensor3<T>> {
    let f = resize_bilinear(&model.features(image)?, image.height(), image.width());
    let mut planes: Vec<&[T]> = (0..f.channels()).map(|c| f.plane(c)).collect();
    planes.extend((0..image.channels()).map(|c| image.plane(c)));
    Tensor3::from_planes(image.height(), image.width(), &planes)
}

/// Loss report and logit gradients of one batch.
pub fn c2amh_objective<T: Scalar>(
    feats: &[&Tensor3<T>],
    logits: &[Vec<T>],
    hints: Option<&[&HintMask]>,
    alpha: f64,
    lambda_h: f64,
) -> Result<(LossReport, Vec<Vec<T>>)> {
    let n = feats.len();
    if logits.len() != n {
        return Err(shape_err!("{n} feature maps with {} logit maps", logits.len()));
    }
    let p: Vec<Vec<T>> = logits.iter().map(|z| z.iter().map(|&v| sigmoid(v)).collect()).collect();
    let mut vf = Vec::with_capacity(n);
    let mut vb = Vec::with_capacity(n);
    for (a, pi) in feats.iter().zip(&p) {
        let (f, b) = fg_bg_features(a, pi)?;
        vf.push(f);
        vb.push(b);
    }
    let (l, gf, gb) = c2am_loss_grad(&vf, &vb, alpha)?;
    let mut report = LossReport::default();
    report.push("c2am", l.as_f64(), 1.0);
    let mut dz = Vec::with_capacity(n);
    for i in 0..n {
        let a = feats[i];
        let hw = a.plane_len();
        let inv = T::one() / T::of(hw as f64);
        let mut d = vec![T::zero(); hw];
        for k in 0..a.channels() {
            let gk = (gf[i][k] - gb[i][k]) * inv;
            for (dv, &av) in d.iter_mut().zip(a.plane(k)) {
                *dv += av * gk;
            }
        }
        for (dv, &pv) in d.iter_mut().zip(&p[i]) {
            *dv *= pv * (T::one() - pv);
        }
        dz.push(d);
    }
    if let Some(h) = hints.filter(|_| lambda_h > 0.0) {
        if h.len() != n {
            return Err(shape_err!("{n} images with {} hint masks", h.len()));
        }
        let mut total = T::zero();
        let lam = T::of(lambda_h) / T::of(n as f64);
        for i in 0..n {
            if h[i].fg.len() != logits[i].len() {
                return Err(shape_err!("hint mask {} is not aligned with P", h[i].source_prior_id));
            }
            let m = h[i].fg_count();
            if m == 0 {
                continue;
            }
            let inv = T::one() / T::of(m as f64);
            let mut s = T::zero();
            for ((&z, &f), d) in logits[i].iter().zip(&h[i].fg).zip(dz[i].iter_mut()) {
                if f {
                    s += softplus(-z);
                    *d -= lam * inv * (T::one() - sigmoid(z));
                }
            }
            total += s * inv;
        }
        report.push("hint", (total / T::of(n as f64)).as_f64(), lambda_h);
    }
    Ok((report, dz))
}

/// Trains a fresh head on frozen features, which are standardized per
/// channel first; the contrastive term pools the standardized maps. `hints`
/// must be aligned with the feature grid; pass `None` for the unhinted objective. `on_epoch` receives
/// the epoch index and the mean total loss.
pub fn train_c2amh<T: Scalar>(
    feats: &[Tensor3<T>],
    hints: Option<&[HintMask]>,
    cfg: &C2amConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<MlpHead<T>> {
    cfg.validate()?;
    if feats.len() < 2 {
        return Err(arg_err!("need at least two images, got {}", feats.len()));
    }
    let k = feats[0].channels();
    if let Some(f) = feats.iter().find(|f| f.channels() != k) {
        return Err(shape_err!("feature maps disagree on channels: {} vs {k}", f.channels()));
    }
    if let Some(h) = hints {
        if h.len() != feats.len() {
            return Err(shape_err!("{} images with {} hint masks", feats.len(), h.len()));
        }
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut head = MlpHead::new(k, cfg.hidden, &mut rng);
    head.scaler = FeatureScaler::fit(feats)?;
    let feats: Vec<Tensor3<T>> = feats.iter().map(|f| head.scaler.apply(f)).collect::<Result<_>>()?;
    let shapes: Vec<usize> = head.params().iter().map(|p| p.len()).collect();
    let mut opt = Sgd::new(&shapes, cfg.momentum, cfg.weight_decay);
    let n = feats.len();
    let bs = cfg.batch_size.min(n);
    // A trailing batch of one image has no pairs and is merged into the previous one.
    let mut batches = n / bs;
    if n % bs >= 2 {
        batches += 1;
    }
    let total = cfg.epochs * batches;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut rng, &mut order);
        let mut sum = 0.0;
        for b in 0..batches {
            let end = if b + 1 == batches { n } else { (b + 1) * bs };
            let idx = &order[b * bs..end];
            let fs: Vec<&Tensor3<T>> = idx.iter().map(|&i| &feats[i]).collect();
            let mut hidden = Vec::with_capacity(idx.len());
            let mut logits = Vec::with_capacity(idx.len());
            for f in &fs {
                let (h, z) = head.forward_hidden(f)?;
                hidden.push(h);
                logits.push(z);
            }
            let hs: Option<Vec<&HintMask>> = hints.map(|h| idx.iter().map(|&i| &h[i]).collect());
            let (report, dz) = c2amh_objective(&fs, &logits, hs.as_deref(), cfg.alpha, cfg.lambda_h)?;
            sum += report.total;
            let mut grads: Vec<Vec<T>> = shapes.iter().map(|&s| vec![T::zero(); s]).collect();
            for ((f, h), d) in fs.iter().zip(&hidden).zip(&dz) {
                head.backward(f, h, d, &mut grads)?;
            }
            let lr = cfg.lr * (1.0 - step as f64 / total as f64);
            let lrs = vec![lr; shapes.len()];
            opt.step(&mut head.params_mut(), &grads, &lrs)?;
            step += 1;
        }
        on_epoch(epoch, sum / batches as f64);
    }
    Ok(head)
}

/// `P` upsampled to `[H, W]`.
pub fn emit_saliency<T: Scalar, D: Disentangler<T> + ?Sized>(
    head: &D,
    feats: &Tensor3<T>,
    height: usize,
    width: usize,
) -> Result<Tensor3<T>> {
    let p = head.saliency(feats)?;
    let p = Tensor3::from_vec(1, feats.height(), feats.width(), p)?;
    let up = resize_bilinear(&p, height, width);
    Ok(up.map(|v| v.max(T::zero()).min(T::one())))
}

/// `saliency >= delta_sal` per pixel.
pub fn binarize_saliency<T: Scalar>(sal: &[T], delta_sal: f64) -> Vec<bool> {
    sal.iter().map(|v| v.as_f64() >= delta_sal).collect()
}
