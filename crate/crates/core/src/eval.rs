//! Confusion matrices, IoU, threshold sweeps, per-epoch estimates and
//! class-group summaries.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::augment::resize_nearest;
use crate::cam::{mask_absent_classes, max_over_classes, normalize_cam, resize_bilinear, tta_prior, ClassifierModel, ImageSample};
use crate::{arg_err, shape_err, Error, Result, Scalar, Tensor3};

/// Mask value that is excluded from evaluation.
pub const IGNORE: u8 = 255;

/// Counts over `C + 1` labels (0 is background), indexed `[gt][pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    /// Matrix for `num_classes` foreground classes plus background.
    pub fn new(num_classes: usize) -> Self {
        let size = num_classes + 1;
        Self { size, counts: vec![0; size * size], ignored: 0 }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.size + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// Number of evaluated (non-ignored) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(shape_err!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()));
        }
        let classes = self.size - 1;
        if let Some(i) = pred.iter().position(|&p| p == IGNORE) {
            return Err(Error::IgnoreInPrediction(i));
        }
        if let Some(&p) = pred.iter().find(|&&p| p as usize >= self.size) {
            return Err(Error::LabelOutOfRange { label: p, classes });
        }
        if let Some(&g) = gt.iter().find(|&&g| g != IGNORE && g as usize >= self.size) {
            return Err(Error::LabelOutOfRange { label: g, classes });
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE {
                self.ignored += 1;
            } else {
                self.counts[g as usize * self.size + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.size != self.size {
            return Err(shape_err!("merging {0}x{0} into {1}x{1}", other.size, self.size));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    /// IoU of label `c` in percent; `None` when the label appears in neither
    /// prediction nor ground truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let gt: u64 = (0..self.size).map(|p| self.get(c, p)).sum();
        let pred: u64 = (0..self.size).map(|g| self.get(g, c)).sum();
        let union = gt + pred - tp;
        (union > 0).then(|| 100.0 * tp as f64 / union as f64)
    }

    pub fn miou(&self) -> Result<MiouReport> {
        let per_class: Vec<Option<f64>> = (0..self.size).map(|c| self.iou(c)).collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::Undefined(String::from("mIoU of an empty confusion matrix")));
        }
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(MiouReport { per_class, mean })
    }
}

/// Per-label IoU (index 0 is background) and their mean, in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Background where the strongest class is below `delta`, otherwise the
/// arg-max class plus one.
pub fn prior_to_mask<T: Scalar>(prior: &Tensor3<T>, delta: f64) -> Vec<u8> {
    let n = prior.plane_len();
    let m = max_over_classes(prior);
    (0..n)
        .map(|p| {
            if m[p].as_f64() < delta {
                return 0;
            }
            let mut best = 0;
            for c in 1..prior.channels() {
                if prior.data()[c * n + p] > prior.data()[best * n + p] {
                    best = c;
                }
            }
            (best + 1) as u8
        })
        .collect()
}

fn check_delta(d: f64) -> Result<()> {
    if !(d > 0.0 && d < 1.0) {
        return Err(arg_err!("threshold must be in (0, 1), got {d}"));
    }
    Ok(())
}

/// `(delta, mIoU)` for each threshold over a set of priors and masks.
pub fn threshold_sweep<'a, T: Scalar + 'a>(
    pairs: impl IntoIterator<Item = (&'a Tensor3<T>, &'a [u8])>,
    num_classes: usize,
    deltas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    for &d in deltas {
        check_delta(d)?;
    }
    let mut confs = vec![ConfusionMatrix::new(num_classes); deltas.len()];
    for (prior, gt) in pairs {
        if prior.channels() != num_classes {
            return Err(shape_err!("prior has {} classes, expected {num_classes}", prior.channels()));
        }
        for (conf, &d) in confs.iter_mut().zip(deltas) {
            conf.accumulate(&prior_to_mask(prior, d), gt)?;
        }
    }
    deltas.iter().zip(&confs).map(|(&d, c)| Ok((d, c.miou()?.mean))).collect()
}

/// Evenly spaced thresholds `lo, lo + step, …` up to `hi` inclusive.
pub fn delta_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(lo <= hi) {
        return Err(arg_err!("invalid threshold range {lo}:{hi}:{step}"));
    }
    let n = ((hi - lo) / step + 1e-9) as usize;
    let out: Vec<f64> = (0..=n).map(|i| lo + step * i as f64).map(|v| libm::round(v * 1e9) / 1e9).collect();
    for &d in &out {
        check_delta(d)?;
    }
    Ok(out)
}

/// TTA prior of one sample with classes absent from its labels zeroed.
pub fn make_prior<T: Scalar, M: ClassifierModel<T> + ?Sized>(
    model: &M,
    sample: &ImageSample<T>,
    scales: &[f64],
    use_flip: bool,
) -> Result<Tensor3<T>> {
    let mut p = tta_prior(model, &sample.image, scales, use_flip)?;
    mask_absent_classes(&mut p, &sample.labels)?;
    Ok(p)
}

/// Single-scale, no-TTA mIoU at a fixed square frame and threshold. This is
/// an estimate of the full evaluation and is never used for training
/// decisions.
pub fn estimate_epoch_miou<T: Scalar, M: ClassifierModel<T> + ?Sized>(
    model: &M,
    samples: &[ImageSample<T>],
    common_size: usize,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    if samples.is_empty() {
        return Err(arg_err!("no samples to estimate on"));
    }
    if common_size == 0 {
        return Err(arg_err!("common frame size must be positive"));
    }
    let mut conf = ConfusionMatrix::new(model.num_classes());
    for s in samples {
        let gt = s.gt_mask.as_ref().ok_or_else(|| arg_err!("sample {} has no ground-truth mask", s.id))?;
        let x = resize_bilinear(&s.image, common_size, common_size);
        let raw = model.forward(&x)?;
        let up = resize_bilinear(&raw, common_size, common_size);
        let mut prior = normalize_cam(&up)?;
        mask_absent_classes(&mut prior, &s.labels)?;
        let g = resize_nearest(gt, s.image.height(), s.image.width(), common_size, common_size);
        conf.accumulate(&prior_to_mask(&prior, delta), &g)?;
    }
    Ok(conf.miou()?.mean)
}

/// Named sets of class indices (foreground classes, 0-based). Groups may
/// overlap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub groups: Vec<(String, Vec<usize>)>,
}

impl GroupSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (name, members) in &self.groups {
            if let Some(c) = members.iter().find(|&&c| c >= num_classes) {
                return Err(arg_err!("group {name}: class {c} out of range for {num_classes} classes"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRow {
    pub name: String,
    pub members: Vec<usize>,
    /// `None` when no member has a defined IoU.
    pub mean: Option<f64>,
}

/// Mean IoU per group over foreground-class IoUs (`per_class[c]` is class
/// `c`, background excluded).
pub fn group_report(per_class: &[Option<f64>], spec: &GroupSpec) -> Result<Vec<GroupRow>> {
    spec.validate(per_class.len())?;
    Ok(spec
        .groups
        .iter()
        .map(|(name, members)| {
            let vals: Vec<f64> = members.iter().filter_map(|&c| per_class[c]).collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            GroupRow { name: name.clone(), members: members.clone(), mean }
        })
        .collect())
}

/// Plain-text table with one row per group, two decimals, `n/a` for empty
/// groups.
pub fn format_group_table(rows: &[GroupRow], class_names: &[String]) -> String {
    let mut out = String::from("group\tmIoU\tclasses\n");
    for r in rows {
        let mean = r.mean.map_or(String::from("n/a"), |m| format!("{m:.2}"));
        let names: Vec<&str> =
            r.members.iter().map(|&c| class_names.get(c).map_or("?", |s| s.as_str())).collect();
        out.push_str(&format!("{}\t{}\t{}\n", r.name, mean, names.join(",")));
    }
    out
}
