//! Directory-level evaluation: masks against ground truth, threshold sweeps
//! over prior files, and their CSV and plot outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pnoc_core::eval::{prior_to_mask, threshold_sweep, ConfusionMatrix, MiouReport};
use pnoc_core::Tensor3;

use crate::cams;
use crate::error::{Error, IoContext, Result};
use crate::imageio;

pub type Mask = (usize, usize, Vec<u8>);

/// Files of `dir` with extension `ext`, keyed by stem, in sorted order.
pub fn list(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::data(dir, "not a directory"));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        if p.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p);
            }
        }
    }
    Ok(out)
}

pub fn read_masks(dir: &Path) -> Result<BTreeMap<String, Mask>> {
    list(dir, "png")?.into_iter().map(|(id, p)| Ok((id, imageio::read_mask(&p)?))).collect()
}

pub fn read_priors(dir: &Path) -> Result<BTreeMap<String, Tensor3<f32>>> {
    list(dir, "cams")?.into_iter().map(|(id, p)| Ok((id, cams::read(&p)?))).collect()
}

/// Pairs every prediction with its ground truth by id. Predictions without
/// ground truth are an error, as are size mismatches.
fn pair<'a, P>(pred: &'a BTreeMap<String, P>, gt: &'a BTreeMap<String, Mask>, gt_dir: &Path) -> Result<Vec<(&'a String, &'a P, &'a Mask)>> {
    if pred.is_empty() {
        return Err(Error::data(gt_dir, "no predictions to evaluate"));
    }
    pred.iter()
        .map(|(id, p)| {
            let g = gt.get(id).ok_or_else(|| Error::data(gt_dir, format!("no ground truth for `{id}`")))?;
            Ok((id, p, g))
        })
        .collect()
}

/// Largest label in any mask, ignoring 255; the class count when no better
/// source is available.
pub fn infer_classes<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> usize {
    masks
        .into_iter()
        .flat_map(|(_, _, m)| m.iter().copied().filter(|&v| v != imageio::IGNORE))
        .max()
        .unwrap_or(0)
        .max(1) as usize
}

pub fn confusion(pred: &BTreeMap<String, Mask>, gt: &BTreeMap<String, Mask>, num_classes: usize, gt_dir: &Path) -> Result<ConfusionMatrix> {
    let mut conf = ConfusionMatrix::new(num_classes);
    for (id, p, g) in pair(pred, gt, gt_dir)? {
        if (p.0, p.1) != (g.0, g.1) {
            return Err(Error::data(gt_dir, format!("`{id}`: prediction {}x{} vs ground truth {}x{}", p.0, p.1, g.0, g.1)));
        }
        conf.accumulate(&p.2, &g.2).map_err(|e| Error::data(gt_dir, format!("`{id}`: {e}")))?;
    }
    Ok(conf)
}

/// `(delta, mIoU)` of the priors at each threshold.
pub fn sweep(priors: &BTreeMap<String, Tensor3<f32>>, gt: &BTreeMap<String, Mask>, deltas: &[f64], gt_dir: &Path) -> Result<Vec<(f64, f64)>> {
    let pairs = pair(priors, gt, gt_dir)?;
    let num_classes = pairs[0].1.channels();
    for (id, p, g) in &pairs {
        if (p.height(), p.width()) != (g.0, g.1) || p.channels() != num_classes {
            return Err(Error::data(gt_dir, format!("`{id}`: prior {:?} does not fit ground truth {}x{}", p.shape(), g.0, g.1)));
        }
    }
    Ok(threshold_sweep(pairs.iter().map(|(_, p, g)| (*p, &g.2[..])), num_classes, deltas)?)
}

/// Confusion matrix of the priors thresholded at one `delta`.
pub fn prior_confusion(priors: &BTreeMap<String, Tensor3<f32>>, gt: &BTreeMap<String, Mask>, delta: f64, gt_dir: &Path) -> Result<ConfusionMatrix> {
    let pairs = pair(priors, gt, gt_dir)?;
    let mut conf = ConfusionMatrix::new(pairs[0].1.channels());
    for (_, p, g) in pairs {
        conf.accumulate(&prior_to_mask(p, delta), &g.2)?;
    }
    Ok(conf)
}

/// First point with the highest score.
pub fn best(curve: &[(f64, f64)]) -> (f64, f64) {
    curve.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
}

pub fn write_sweep_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["delta", "miou"]).map_err(|e| csv_err(path, e))?;
    for (d, m) in curve {
        w.write_record([d.to_string(), m.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: "expected two numbers".into(),
            })
        };
        out.push((num(0)?, num(1)?));
    }
    Ok(out)
}

/// `class,iou` rows; undefined IoUs are written as empty fields.
pub fn write_per_class_csv(path: &Path, names: &[String], report: &MiouReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["class", "iou"]).map_err(|e| csv_err(path, e))?;
    for (c, iou) in report.per_class.iter().enumerate() {
        let name = names.get(c).cloned().unwrap_or_else(|| c.to_string());
        w.write_record([name, iou.map_or(String::new(), |v| format!("{v:.2}"))]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_per_class_csv(path: &Path) -> Result<Vec<(String, Option<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::Parse { path: path.to_path_buf(), line: i + 2, msg: "expected `class,iou`".into() };
        let name = rec.get(0).ok_or_else(bad)?.to_string();
        let iou = match rec.get(1).ok_or_else(bad)? {
            "" => None,
            s => Some(s.parse().map_err(|_| bad())?),
        };
        out.push((name, iou));
    }
    Ok(out)
}

pub fn plot_sweep(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    imageio::plot_curve(path, curve, (0.0, 1.0), (0.0, 100.0))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::data(path, e.to_string())
}

/// Names `background, c1, ..., cC` for report rows.
pub fn row_names(class_names: &[String]) -> Vec<String> {
    std::iter::once("background".to_string()).chain(class_names.iter().cloned()).collect()
}
