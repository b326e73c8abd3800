//! Classification-side objectives: multi-label soft margin with label
//! smoothing, Puzzle reconstruction, class-specific soft erasing, hard erasing
//! for `noc`, the combined generator loss, and the λ schedules.

use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::cam::{gap_backward, gap_logits, resize_bilinear, resize_bilinear_adjoint};
use crate::scalar::{sigmoid, softplus};
use crate::{arg_err, shape_err, Error, Result, Scalar, Tensor3};

/// Two-sided smoothing for independent sigmoid targets: `t(1-eps) + eps/2`.
pub fn smooth_targets<T: Scalar>(targets: &[T], eps: f64) -> Vec<T> {
    let keep = T::of(1.0 - eps);
    let half = T::of(eps / 2.0);
    targets.iter().map(|&t| t * keep + half).collect()
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(arg_err!("label smoothing must be in [0, 0.5), got {eps}"));
    }
    Ok(())
}

/// Multi-label soft margin loss averaged over every (sample, class) entry.
///
/// `logits` and `targets` are flattened `[B, C]` arrays.
pub fn soft_margin_loss<T: Scalar>(logits: &[T], targets: &[T], eps: f64) -> Result<T> {
    Ok(soft_margin_loss_grad(logits, targets, eps)?.0)
}

/// Loss and its gradient with respect to `logits`.
pub fn soft_margin_loss_grad<T: Scalar>(logits: &[T], targets: &[T], eps: f64) -> Result<(T, Vec<T>)> {
    check_eps(eps)?;
    if logits.len() != targets.len() {
        return Err(shape_err!("{} logits vs {} targets", logits.len(), targets.len()));
    }
    if logits.is_empty() {
        return Err(shape_err!("empty logits"));
    }
    if let Some(i) = logits.iter().position(|z| z.is_nan()) {
        return Err(arg_err!("NaN logit at flat index {i}"));
    }
    let n = T::of(logits.len() as f64);
    let t = smooth_targets(targets, eps);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &tv) in logits.iter().zip(&t) {
        // -[t log σ(z) + (1-t) log σ(-z)] = t softplus(-z) + (1-t) softplus(z)
        loss += tv * softplus(-z) + (T::one() - tv) * softplus(z);
        grad.push((sigmoid(z) - tv) / n);
    }
    Ok((loss / n, grad))
}

/// Copy of `y` with the sampled class `r` removed.
pub fn erase_target<T: Scalar>(y: &[T], r: usize) -> Result<Vec<T>> {
    match y.get(r) {
        Some(&v) if v > T::zero() => {
            let mut out = y.to_vec();
            out[r] = T::zero();
            Ok(out)
        }
        Some(_) => Err(Error::ClassNotPresent { class: r }),
        None => Err(shape_err!("class {r} out of range for {} labels", y.len())),
    }
}

fn check_mask_inputs<T: Scalar>(x: &Tensor3<T>, psi: &Tensor3<T>) -> Result<()> {
    if psi.channels() != 1 {
        return Err(shape_err!("erasing map must have one channel, got {}", psi.channels()));
    }
    if x.plane_len() == 0 || psi.plane_len() == 0 {
        return Err(shape_err!("empty image or map"));
    }
    Ok(())
}

/// `x ∘ (1 - ψ)` with ψ bilinearly upsampled to the image size.
pub fn cse_soft_mask<T: Scalar>(x: &Tensor3<T>, psi_r: &Tensor3<T>) -> Result<Tensor3<T>> {
    check_mask_inputs(x, psi_r)?;
    let up = resize_bilinear(psi_r, x.height(), x.width());
    let keep: Vec<T> = up.data().iter().map(|&p| T::one() - p).collect();
    let mut out = x.clone();
    for c in 0..x.channels() {
        for (v, &k) in out.plane_mut(c).iter_mut().zip(&keep) {
            *v *= k;
        }
    }
    Ok(out)
}

/// Gradient of [`cse_soft_mask`] with respect to ψ, given the gradient of
/// its output.
pub fn cse_soft_mask_backward<T: Scalar>(
    x: &Tensor3<T>,
    psi_r: &Tensor3<T>,
    grad_out: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    check_mask_inputs(x, psi_r)?;
    x.check_same(grad_out)?;
    let mut g_up = Tensor3::zeros(1, x.height(), x.width());
    for c in 0..x.channels() {
        for ((g, &xv), &gv) in g_up.data_mut().iter_mut().zip(x.plane(c)).zip(grad_out.plane(c)) {
            *g -= xv * gv;
        }
    }
    Ok(resize_bilinear_adjoint(&g_up, psi_r.height(), psi_r.width()))
}

/// `x ∘ (1 - [ψ > δ])`: pixels whose upsampled ψ exceeds `delta` are zeroed,
/// all others are kept as they are.
pub fn noc_hard_mask<T: Scalar>(x: &Tensor3<T>, psi_r: &Tensor3<T>, delta: f64) -> Result<Tensor3<T>> {
    check_mask_inputs(x, psi_r)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(arg_err!("delta_noc must be in (0, 1), got {delta}"));
    }
    let up = resize_bilinear(psi_r, x.height(), x.width());
    let d = T::of(delta);
    let mut out = x.clone();
    for c in 0..x.channels() {
        for (v, &p) in out.plane_mut(c).iter_mut().zip(up.data()) {
            if p > d {
                *v = T::zero();
            }
        }
    }
    Ok(out)
}

/// One named loss component and the weight it enters the total with.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub name: &'static str,
    pub value: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

impl LossReport {
    pub fn push(&mut self, name: &'static str, value: f64, weight: f64) {
        self.terms.push(LossTerm { name, value, weight });
        self.total += weight * value;
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn weighted_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }
}

/// Scheduled quantities, addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    LambdaRe,
    LambdaCse,
    LambdaNoc,
    /// Multiplier applied to the base learning rate.
    Lr,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_re" => Ok(Self::LambdaRe),
            "lambda_cse" => Ok(Self::LambdaCse),
            "lambda_noc" => Ok(Self::LambdaNoc),
            "lr" => Ok(Self::Lr),
            other => Err(Error::UnknownSchedule(String::from(other))),
        }
    }
}

pub const LAMBDA_RE_MAX: f64 = 4.0;
pub const LAMBDA_CSE_START: f64 = 0.3;
pub const LAMBDA_CSE_END: f64 = 1.0;
pub const LAMBDA_NOC_MAX: f64 = 1.0;

/// Loss weights and erasing parameters over a run of `total_steps` updates.
///
/// * `lambda_re` rises linearly from 0 to 4 over the first half, then stays.
/// * `lambda_cse` rises linearly from 0.3 to 1 over the whole run.
/// * `lambda_noc` rises linearly from 0 to 1 while the learning rate decays
///   linearly to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSet {
    pub total_steps: usize,
    pub k_noc: usize,
    pub delta_noc: f64,
    pub smoothing_eps: f64,
    /// Replaces the `lambda_cse` ramp with a constant when set.
    pub lambda_cse_override: Option<f64>,
}

impl Default for ScheduleSet {
    fn default() -> Self {
        Self { total_steps: 1, k_noc: 1, delta_noc: 0.2, smoothing_eps: 0.1, lambda_cse_override: None }
    }
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    // Exact at both endpoints.
    a * (1.0 - u) + b * u
}

impl ScheduleSet {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(arg_err!("total_steps must be positive"));
        }
        if self.k_noc == 0 {
            return Err(arg_err!("k_noc must be at least 1"));
        }
        if !(self.delta_noc > 0.0 && self.delta_noc < 1.0) {
            return Err(arg_err!("delta_noc must be in (0, 1), got {}", self.delta_noc));
        }
        check_eps(self.smoothing_eps)
    }

    pub fn value(&self, which: Schedule, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(arg_err!("step {step} beyond total_steps {}", self.total_steps));
        }
        let t = self.total_steps as f64;
        let u = step as f64 / t;
        Ok(match which {
            Schedule::LambdaRe => {
                if 2 * step >= self.total_steps {
                    LAMBDA_RE_MAX
                } else {
                    LAMBDA_RE_MAX * (2.0 * step as f64 / t)
                }
            }
            Schedule::LambdaCse => match self.lambda_cse_override {
                Some(v) => v,
                None => lerp(LAMBDA_CSE_START, LAMBDA_CSE_END, u),
            },
            Schedule::LambdaNoc => lerp(0.0, LAMBDA_NOC_MAX, u),
            Schedule::Lr => lerp(1.0, 0.0, u),
        })
    }
}

/// Looks up a schedule by name (`lambda_re`, `lambda_cse`, `lambda_noc`, `lr`).
pub fn schedule_value(sched: &ScheduleSet, name: &str, step: usize) -> Result<f64> {
    sched.value(name.parse()?, step)
}

/// Weights of the reconstruction and class-specific erasing terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PocWeights {
    pub lambda_re: f64,
    pub lambda_cse: f64,
}

impl PocWeights {
    pub fn at(sched: &ScheduleSet, step: usize) -> Result<Self> {
        Ok(Self {
            lambda_re: sched.value(Schedule::LambdaRe, step)?,
            lambda_cse: sched.value(Schedule::LambdaCse, step)?,
        })
    }
}

/// Maps of one batch entering the generator objective. Terms whose maps are
/// absent are left out of the loss.
pub struct PocBatch<'a, T> {
    pub a: &'a [Tensor3<T>],
    pub a_re: Option<&'a [Tensor3<T>]>,
    pub a_oc: Option<&'a [Tensor3<T>]>,
    pub labels: &'a [Vec<T>],
    pub erased: &'a [usize],
}

/// Gradients with respect to each map of a [`PocBatch`].
#[derive(Clone, Debug)]
pub struct PocGrads<T> {
    pub a: Vec<Tensor3<T>>,
    pub a_re: Option<Vec<Tensor3<T>>>,
    pub a_oc: Option<Vec<Tensor3<T>>>,
}

fn batch_logits<T: Scalar>(maps: &[Tensor3<T>]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for m in maps {
        out.extend(gap_logits(m)?);
    }
    Ok(out)
}

fn batch_gap_backward<T: Scalar>(grad: &[T], like: &[Tensor3<T>]) -> Vec<Tensor3<T>> {
    let c = like[0].channels();
    like.iter()
        .zip(grad.chunks_exact(c))
        .map(|(m, g)| gap_backward(g, m.height(), m.width()))
        .collect()
}

/// Options of the generator objective that are not scheduled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PocOptions {
    pub smoothing_eps: f64,
    /// Restrict the L1 reconstruction term to classes present in the labels.
    pub re_present_only: bool,
}

/// `cls(p, y) + cls(p_re, y) + λ_re |A - A_re|_1 + λ_cse cls(p_oc, y \ {r})`.
pub fn poc_loss<T: Scalar>(
    batch: &PocBatch<'_, T>,
    weights: PocWeights,
    opts: PocOptions,
) -> Result<(LossReport, PocGrads<T>)> {
    let b = batch.a.len();
    if b == 0 {
        return Err(shape_err!("empty batch"));
    }
    if batch.labels.len() != b || batch.erased.len() != b {
        return Err(shape_err!("batch of {b} maps with {} label vectors and {} erased classes", batch.labels.len(), batch.erased.len()));
    }
    let shape = batch.a[0].shape();
    let classes = shape[0];
    for (i, m) in batch.a.iter().enumerate() {
        if m.shape() != shape {
            return Err(shape_err!("map {i} is {:?}, map 0 is {:?}", m.shape(), shape));
        }
        if batch.labels[i].len() != classes {
            return Err(shape_err!("label vector {i} has {} entries for {classes} classes", batch.labels[i].len()));
        }
    }
    let y: Vec<T> = batch.labels.iter().flatten().copied().collect();
    let eps = opts.smoothing_eps;
    let mut report = LossReport::default();

    let (cls, g_cls) = soft_margin_loss_grad(&batch_logits(batch.a)?, &y, eps)?;
    report.push("cls", cls.as_f64(), 1.0);
    let mut grads = PocGrads { a: batch_gap_backward(&g_cls, batch.a), a_re: None, a_oc: None };

    if let Some(a_re) = batch.a_re {
        if a_re.len() != b || a_re.iter().any(|m| m.shape() != shape) {
            return Err(shape_err!(
                "reconstructed maps do not match the main maps; input sides must be multiples of twice the output stride"
            ));
        }
        let (re_cls, g_re_cls) = soft_margin_loss_grad(&batch_logits(a_re)?, &y, eps)?;
        report.push("re_cls", re_cls.as_f64(), 1.0);
        let mut g_re = batch_gap_backward(&g_re_cls, a_re);

        let denom = T::of((b * classes * shape[1] * shape[2]) as f64);
        let lam = T::of(weights.lambda_re);
        let mut l1 = T::zero();
        for i in 0..b {
            for c in 0..classes {
                if opts.re_present_only && batch.labels[i][c] <= T::zero() {
                    continue;
                }
                let pa = batch.a[i].plane(c);
                let pr = a_re[i].plane(c);
                let ga = grads.a[i].plane_mut(c);
                let gr = g_re[i].plane_mut(c);
                for k in 0..pa.len() {
                    let d = pa[k] - pr[k];
                    l1 += d.abs();
                    let s = if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    ga[k] += lam * s / denom;
                    gr[k] -= lam * s / denom;
                }
            }
        }
        report.push("re", (l1 / denom).as_f64(), weights.lambda_re);
        grads.a_re = Some(g_re);
    }

    if let Some(a_oc) = batch.a_oc {
        if a_oc.len() != b || a_oc.iter().any(|m| m.channels() != classes) {
            return Err(shape_err!("erased-input maps do not match the batch"));
        }
        let mut y_erased = Vec::with_capacity(b * classes);
        for (yi, &r) in batch.labels.iter().zip(batch.erased) {
            y_erased.extend(erase_target(yi, r)?);
        }
        let (cse, g_cse) = soft_margin_loss_grad(&batch_logits(a_oc)?, &y_erased, eps)?;
        report.push("cse", cse.as_f64(), weights.lambda_cse);
        let lam = T::of(weights.lambda_cse);
        let scaled: Vec<T> = g_cse.iter().map(|&g| g * lam).collect();
        grads.a_oc = Some(batch_gap_backward(&scaled, a_oc));
    }
    Ok((report, grads))
}

/// `λ_noc · cls(p_noc, y)` and its gradient with respect to the `noc` maps.
pub fn noc_loss<T: Scalar>(
    a_noc: &[Tensor3<T>],
    labels: &[Vec<T>],
    lambda_noc: f64,
    smoothing_eps: f64,
) -> Result<(LossReport, Vec<Tensor3<T>>)> {
    if a_noc.is_empty() || a_noc.len() != labels.len() {
        return Err(shape_err!("{} maps with {} label vectors", a_noc.len(), labels.len()));
    }
    let y: Vec<T> = labels.iter().flatten().copied().collect();
    let (l, g) = soft_margin_loss_grad(&batch_logits(a_noc)?, &y, smoothing_eps)?;
    let mut report = LossReport::default();
    report.push("noc", l.as_f64(), lambda_noc);
    let lam = T::of(lambda_noc);
    let scaled: Vec<T> = g.iter().map(|&v| v * lam).collect();
    Ok((report, batch_gap_backward(&scaled, a_noc)))
}

/// Plain `cls(p, y)` with gradients; the vanilla objective.
pub fn classification_loss<T: Scalar>(
    maps: &[Tensor3<T>],
    labels: &[Vec<T>],
    smoothing_eps: f64,
) -> Result<(T, Vec<Tensor3<T>>)> {
    let y: Vec<T> = labels.iter().flatten().copied().collect();
    let (l, g) = soft_margin_loss_grad(&batch_logits(maps)?, &y, smoothing_eps)?;
    Ok((l, batch_gap_backward(&g, maps)))
}

/// Indices of positive entries, for labels stored as floats.
pub fn positives<T: Scalar>(y: &[T]) -> Vec<usize> {
    y.iter().enumerate().filter(|(_, v)| **v > T::zero()).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::LN_2;

    #[test]
    fn zero_logits_give_ln2_with_or_without_smoothing() {
        let l = soft_margin_loss(&[0.0f64, 0.0], &[1.0, 0.0], 0.0).unwrap();
        assert_abs_diff_eq!(l, LN_2, epsilon = 1e-15);
        let l = soft_margin_loss(&[0.0f64, 0.0], &[1.0, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(l, LN_2, epsilon = 1e-15);
    }

    #[test]
    fn soft_margin_matches_closed_form() {
        // softplus(-y_signed z) per class: z=[2,-1], y=[1,0] -> softplus(-2), softplus(-1).
        let oracle = ((1.0 + (-2.0f64).exp()).ln() + (1.0 + (-1.0f64).exp()).ln()) / 2.0;
        let l = soft_margin_loss(&[2.0f64, -1.0], &[1.0, 0.0], 0.0).unwrap();
        assert_abs_diff_eq!(l, oracle, epsilon = 1e-14);
    }

    #[test]
    fn soft_margin_rejects_nan_and_bad_eps() {
        assert!(soft_margin_loss(&[f64::NAN], &[1.0], 0.0).is_err());
        assert!(soft_margin_loss(&[0.0f64], &[1.0], 0.5).is_err());
        assert!(soft_margin_loss(&[0.0f64, 1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn erase_target_examples() {
        assert_eq!(erase_target(&[1.0f64, 1.0, 0.0], 0).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(erase_target(&[1.0f64, 0.0], 0).unwrap(), [0.0, 0.0]);
        assert_eq!(erase_target(&[1.0f64, 0.0], 1), Err(Error::ClassNotPresent { class: 1 }));
        // An all-zero target after erasing still yields a finite loss.
        let l = soft_margin_loss(&[0.3f64, -0.2], &[0.0, 0.0], 0.1).unwrap();
        let t = 0.05;
        let oracle = (t * softplus(-0.3f64) + (1.0 - t) * softplus(0.3) + t * softplus(0.2) + (1.0 - t) * softplus(-0.2)) / 2.0;
        assert_abs_diff_eq!(l, oracle, epsilon = 1e-14);
    }

    #[test]
    fn soft_mask_examples() {
        let x = Tensor3::<f64>::from_fn(3, 4, 4, |c, y, xx| 0.1 + (c * 16 + y * 4 + xx) as f64 / 64.0);
        let zero = Tensor3::<f64>::zeros(1, 2, 2);
        assert_eq!(cse_soft_mask(&x, &zero).unwrap(), x);
        let one = Tensor3::<f64>::filled(1, 2, 2, 1.0);
        assert!(cse_soft_mask(&x, &one).unwrap().data().iter().all(|&v| v == 0.0));
        // ψ = 0.5 on the left half at image resolution.
        let half = Tensor3::<f64>::from_fn(1, 4, 4, |_, _, xx| if xx < 2 { 0.5 } else { 0.0 });
        let out = cse_soft_mask(&x, &half).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for xx in 0..4 {
                    let want = if xx < 2 { x.at(c, y, xx) * 0.5 } else { x.at(c, y, xx) };
                    assert_abs_diff_eq!(out.at(c, y, xx), want, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn hard_mask_examples() {
        let x = Tensor3::<f64>::filled(3, 1, 2, 0.8);
        let psi = Tensor3::from_vec(1, 1, 2, alloc::vec![0.1, 0.3]).unwrap();
        let out = noc_hard_mask(&x, &psi, 0.2).unwrap();
        for c in 0..3 {
            assert_eq!(out.plane(c), &[0.8, 0.0]);
        }
        assert_eq!(noc_hard_mask(&x, &Tensor3::zeros(1, 1, 2), 0.2).unwrap(), x);
        let uniform = Tensor3::filled(1, 1, 2, 0.5);
        assert!(noc_hard_mask(&x, &uniform, 0.2).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(noc_hard_mask(&x, &uniform, 1.0).is_err());
    }

    fn sched(t: usize) -> ScheduleSet {
        ScheduleSet { total_steps: t, ..Default::default() }
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        let s = sched(100);
        assert_eq!(schedule_value(&s, "lambda_re", 0).unwrap(), 0.0);
        assert_eq!(schedule_value(&s, "lambda_re", 50).unwrap(), 4.0);
        assert_eq!(schedule_value(&s, "lambda_re", 100).unwrap(), 4.0);
        assert_eq!(schedule_value(&s, "lambda_re", 25).unwrap(), 2.0);
        assert_eq!(schedule_value(&s, "lambda_cse", 0).unwrap(), 0.3);
        assert_eq!(schedule_value(&s, "lambda_cse", 100).unwrap(), 1.0);
        assert_eq!(schedule_value(&s, "lambda_noc", 0).unwrap(), 0.0);
        assert_eq!(schedule_value(&s, "lambda_noc", 100).unwrap(), 1.0);
        assert_eq!(schedule_value(&s, "lr", 100).unwrap(), 0.0);
        assert!(matches!(schedule_value(&s, "lambda_x", 0), Err(Error::UnknownSchedule(_))));
        assert!(schedule_value(&s, "lr", 101).is_err());
    }

    #[test]
    fn schedules_are_monotone_for_odd_lengths() {
        let s = sched(37);
        for which in [Schedule::LambdaRe, Schedule::LambdaCse, Schedule::LambdaNoc] {
            for t in 0..37 {
                assert!(s.value(which, t).unwrap() <= s.value(which, t + 1).unwrap());
            }
        }
        assert_eq!(s.value(Schedule::LambdaRe, 19).unwrap(), 4.0);
        assert!(s.value(Schedule::LambdaRe, 18).unwrap() < 4.0);
    }

    #[test]
    fn degenerate_weights_leave_cls_terms() {
        let a = [Tensor3::<f64>::from_fn(2, 2, 2, |c, y, x| (c + y + x) as f64 * 0.1)];
        let a_re = [a[0].map(|v| v + 0.3)];
        let a_oc = [a[0].map(|v| v - 0.2)];
        let labels = [alloc::vec![1.0, 1.0]];
        let batch = PocBatch { a: &a, a_re: Some(&a_re), a_oc: Some(&a_oc), labels: &labels, erased: &[1] };
        let opts = PocOptions { smoothing_eps: 0.0, re_present_only: true };
        let (rep, _) = poc_loss(&batch, PocWeights { lambda_re: 0.0, lambda_cse: 0.0 }, opts).unwrap();
        assert_abs_diff_eq!(rep.total, rep.get("cls").unwrap() + rep.get("re_cls").unwrap(), epsilon = 1e-15);
        let same = PocBatch { a_re: Some(&a), ..batch };
        let (rep, _) = poc_loss(&same, PocWeights { lambda_re: 2.0, lambda_cse: 0.5 }, opts).unwrap();
        assert_eq!(rep.get("re"), Some(0.0));
    }
}
