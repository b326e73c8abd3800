//! VOC-style dataset directories.
//!
//! ```text
//! root/
//!   images/<id>.png   RGB
//!   masks/<id>.png    indexed 8-bit: 0 background, 1..=C classes, 255 ignore
//!   labels.txt        one `id class,class,...` line per image
//!   classes.txt       optional, one class name per line in index order
//! ```
//!
//! Without `classes.txt` the classes are the sorted universe of names found
//! in `labels.txt` (numerically when every name is an integer).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pnoc_core::augment::resize_nearest;
use pnoc_core::cam::{resize_bilinear, ImageSample};
use pnoc_core::synth::{class_names, generate, SyntheticSpec};

use crate::error::{Error, IoContext, Result};
use crate::imageio;

pub const LABELS_FILE: &str = "labels.txt";
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub id: String,
    /// Zero-based class indices.
    pub classes: Vec<usize>,
}

/// Label lists are read eagerly; images and masks on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
}

fn parse_labels(path: &Path, text: &str) -> Result<Vec<(String, Vec<String>, usize)>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: line_no, msg };
        let line = line.trim();
        let (id, rest) = match line.split_once(char::is_whitespace) {
            Some((id, rest)) => (id, rest.trim()),
            None => (line, ""),
        };
        if id.is_empty() {
            return Err(err("empty line".into()));
        }
        if rest.is_empty() {
            return Err(err(format!("image `{id}` has no labels")));
        }
        let names: Vec<String> = rest.split(',').map(|s| s.trim().to_string()).collect();
        if names.iter().any(|n| n.is_empty() || n.contains(char::is_whitespace)) {
            return Err(err(format!("malformed label list `{rest}`")));
        }
        if !ids.insert(id.to_string()) {
            return Err(err(format!("duplicate image id `{id}`")));
        }
        out.push((id.to_string(), names, line_no));
    }
    Ok(out)
}

fn universe(lines: &[(String, Vec<String>, usize)]) -> Vec<String> {
    let set: BTreeSet<&String> = lines.iter().flat_map(|(_, n, _)| n).collect();
    let mut names: Vec<String> = set.into_iter().cloned().collect();
    if names.iter().all(|n| n.parse::<u64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<u64>().unwrap());
    }
    names
}

/// Reads the label list and class names of a dataset root.
pub fn load_voc(root: &Path) -> Result<Dataset> {
    let labels_path = root.join(LABELS_FILE);
    if !labels_path.is_file() {
        return Err(Error::data(root, format!("missing {LABELS_FILE}")));
    }
    let text = fs::read_to_string(&labels_path).at(&labels_path)?;
    let lines = parse_labels(&labels_path, &text)?;
    if lines.is_empty() {
        return Err(Error::data(&labels_path, "no images listed"));
    }
    let classes_path = root.join(CLASSES_FILE);
    let class_names: Vec<String> = if classes_path.is_file() {
        let t = fs::read_to_string(&classes_path).at(&classes_path)?;
        t.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
    } else {
        universe(&lines)
    };
    if class_names.is_empty() || class_names.len() > 254 {
        return Err(Error::data(root, format!("{} classes; between 1 and 254 are supported", class_names.len())));
    }
    let mut entries = Vec::with_capacity(lines.len());
    for (id, names, line) in lines {
        let mut classes = Vec::with_capacity(names.len());
        for n in names {
            let c = class_names.iter().position(|k| *k == n).ok_or_else(|| Error::Parse {
                path: labels_path.clone(),
                line,
                msg: format!("unknown class `{n}`"),
            })?;
            if !classes.contains(&c) {
                classes.push(c);
            }
        }
        classes.sort_unstable();
        entries.push(Entry { id, classes });
    }
    Ok(Dataset { root: root.to_path_buf(), class_names, entries })
}

/// Nearest even side at or below `n`, but at least 2.
fn even(n: usize) -> usize {
    (n - n % 2).max(2)
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.png"))
    }

    /// Decodes sample `i`. Odd sides are resized to the even size below.
    /// With `require_mask` a missing mask is an error; otherwise it is
    /// loaded when present.
    pub fn load(&self, i: usize, require_mask: bool) -> Result<ImageSample<f32>> {
        let e = &self.entries[i];
        let img_path = self.image_path(&e.id);
        let mut image = imageio::read_rgb(&img_path)?;
        let (h, w) = (image.height(), image.width());
        let (eh, ew) = (even(h), even(w));
        if (eh, ew) != (h, w) {
            image = resize_bilinear(&image, eh, ew);
        }
        let mask_path = self.mask_path(&e.id);
        let gt_mask = if mask_path.is_file() {
            let (mh, mw, m) = imageio::read_mask(&mask_path)?;
            if (mh, mw) != (h, w) {
                return Err(Error::data(&mask_path, format!("mask is {mh}x{mw}, image is {h}x{w}")));
            }
            Some(if (eh, ew) != (h, w) { resize_nearest(&m, h, w, eh, ew) } else { m })
        } else if require_mask {
            return Err(Error::data(&mask_path, format!("missing ground-truth mask for `{}`", e.id)));
        } else {
            None
        };
        let mut labels = vec![0f32; self.num_classes()];
        for &c in &e.classes {
            labels[c] = 1.0;
        }
        let sample = ImageSample { id: e.id.clone(), image, labels, gt_mask };
        sample.validate(self.num_classes(), true).map_err(|err| Error::data(&img_path, err.to_string()))?;
        Ok(sample)
    }

    pub fn load_all(&self, require_mask: bool) -> Result<Vec<ImageSample<f32>>> {
        (0..self.len()).map(|i| self.load(i, require_mask)).collect()
    }
}

/// Writes samples in the layout [`load_voc`] reads.
pub fn write_dataset(root: &Path, samples: &[ImageSample<f32>], class_names: &[String]) -> Result<()> {
    for d in ["images", "masks"] {
        fs::create_dir_all(root.join(d)).at(&root.join(d))?;
    }
    let mut labels = String::new();
    for s in samples {
        imageio::write_rgb(&root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        if let Some(m) = &s.gt_mask {
            imageio::write_mask(&root.join("masks").join(format!("{}.png", s.id)), s.image.height(), s.image.width(), m)?;
        }
        let names: Vec<&str> =
            s.labels.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(c, _)| class_names[c].as_str()).collect();
        labels.push_str(&format!("{} {}\n", s.id, names.join(",")));
    }
    let lp = root.join(LABELS_FILE);
    fs::write(&lp, labels).at(&lp)?;
    let cp = root.join(CLASSES_FILE);
    fs::write(&cp, class_names.join("\n") + "\n").at(&cp)
}

/// Generates one synthetic split and writes it under `root`.
pub fn generate_synthetic(root: &Path, spec: &SyntheticSpec) -> Result<()> {
    let samples: Vec<ImageSample<f32>> = generate(spec).map_err(|e| Error::Config(e.to_string()))?;
    write_dataset(root, &samples, &class_names(spec.num_classes))
}
