//! The stage runner and the work each stage does.
//!
//! Every stage reads its inputs from files in the run directory and writes
//! its outputs there, then drops a stamp in `stamps/`. A stamped stage is
//! skipped unless forced.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use pnoc_core::c2amh::{backbone_features, emit_saliency, extract_hints, train_c2amh, HintMask, MlpHead};
use pnoc_core::cam::ImageSample;
use pnoc_core::eval::{estimate_epoch_miou, group_report, format_group_table, make_prior, GroupSpec};
use pnoc_core::nn::{ToyCnn, TrainableClassifier};
use pnoc_core::refine::{argmax_mask, random_walk, seeds_from_priors, seeds_with_saliency, with_background, AffinityModel, SeedMap};
use pnoc_core::rng;
use pnoc_core::synth::default_groups;
use pnoc_core::trainer::{StepReport, TrainMode, Trainer};
use pnoc_core::Tensor3;

use crate::cams;
use crate::config::{DataSource, PipelineConfig};
use crate::dataset::{generate_synthetic, load_voc, Dataset};
use crate::error::{Error, IoContext, Result};
use crate::evaluate;
use crate::imageio;
use crate::persist;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    TrainVanilla,
    TrainPNoc,
    MakePriors,
    TrainC2amh,
    MakeSaliency,
    MakeSeeds,
    RefineRw,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::TrainVanilla,
        Stage::TrainPNoc,
        Stage::MakePriors,
        Stage::TrainC2amh,
        Stage::MakeSaliency,
        Stage::MakeSeeds,
        Stage::RefineRw,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainVanilla => "train-vanilla",
            Stage::TrainPNoc => "train-p_noc",
            Stage::MakePriors => "make-priors",
            Stage::TrainC2amh => "train-c2amh",
            Stage::MakeSaliency => "make-saliency",
            Stage::MakeSeeds => "make-seeds",
            Stage::RefineRw => "refine-rw",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.iter().copied().find(|st| st.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
            Error::Config(format!("unknown stage `{s}`; known stages: {}", known.join(", ")))
        })
    }
}

/// Where each artifact lives inside a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn snapshot(&self) -> PathBuf {
        self.out.join("config.snapshot")
    }

    pub fn synthetic_train(&self) -> PathBuf {
        self.out.join("data").join("train")
    }

    pub fn synthetic_eval(&self) -> PathBuf {
        self.out.join("data").join("eval")
    }

    pub fn train_dir(&self, mode: TrainMode) -> PathBuf {
        self.out.join("train").join(mode.as_str())
    }

    pub fn weights(&self, mode: TrainMode) -> PathBuf {
        self.train_dir(mode).join(WEIGHTS_FILE)
    }

    pub fn priors(&self) -> PathBuf {
        self.out.join("priors")
    }

    pub fn head(&self) -> PathBuf {
        self.out.join("c2amh").join(HEAD_FILE)
    }

    pub fn saliency(&self) -> PathBuf {
        self.out.join("saliency")
    }

    pub fn seeds(&self) -> PathBuf {
        self.out.join("seeds")
    }

    pub fn masks(&self) -> PathBuf {
        self.out.join("masks")
    }

    pub fn eval(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn report(&self) -> PathBuf {
        self.out.join("report.txt")
    }

    pub fn stamp(&self, stage: Stage) -> PathBuf {
        self.out.join("stamps").join(format!("{}.done", stage.name()))
    }
}

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const NOC_FILE: &str = "noc.bin";
pub const HEAD_FILE: &str = "head.bin";
pub const METRICS_FILE: &str = "metrics.log";
pub const ESTIMATES_FILE: &str = "estimates.log";
pub const SUMMARY_FILE: &str = "summary.txt";

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).at(p)
}

/// Removes and recreates an output directory so reruns leave no stale files.
fn fresh_dir(p: &Path) -> Result<()> {
    if p.exists() {
        fs::remove_dir_all(p).at(p)?;
    }
    mkdir(p)
}

/// Initial weights of `f` for a given run seed; every mode starts from the same ones.
pub fn initial_model(cfg: &PipelineConfig, num_classes: usize) -> Result<ToyCnn<f32>> {
    let arch = cfg.model.cnn(num_classes);
    ToyCnn::new(&arch, &mut rng::seeded(cfg.pipeline.seed.wrapping_mul(10).wrapping_add(1))).map_err(|e| Error::Config(e.to_string()))
}

fn format_report(r: &StepReport) -> String {
    let mut s = format!("step={} epoch={} lr_factor={}", r.step, r.epoch, r.lr_factor);
    for t in &r.f.terms {
        s.push_str(&format!(" f.{}={}", t.name, t.value));
    }
    s.push_str(&format!(" f.total={} f_update={} noc_phase={}", r.f.total, r.f_update.as_str(), r.noc_phase.as_str()));
    if let Some(n) = &r.noc {
        for t in &n.terms {
            s.push_str(&format!(" noc.{}={}", t.name, t.value));
        }
        s.push_str(&format!(" noc.total={}", n.total));
    }
    if let Some(u) = r.noc_update {
        s.push_str(&format!(" noc_update={}", u.as_str()));
    }
    s
}

/// Integer value of `key=` in a metrics line.
fn field(line: &str, key: &str) -> Option<usize> {
    line.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

/// Keeps the lines of `path` whose `key` is below `limit`.
fn truncate_log(path: &Path, key: &str, limit: usize) -> Result<()> {
    if !path.is_file() {
        return Ok(());
    }
    let text = fs::read_to_string(path).at(path)?;
    let kept: String = text.lines().filter(|l| field(l, key).is_some_and(|v| v < limit)).map(|l| format!("{l}\n")).collect();
    fs::write(path, kept).at(path)
}

fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for e in fs::read_dir(dir).at(dir)? {
        let p = e.at(dir)?.path();
        let step = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-")?.strip_suffix(".bin")?.parse::<usize>().ok());
        if let Some(s) = step {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, p));
            }
        }
    }
    Ok(best)
}

fn append(file: &mut fs::File, path: &Path, line: &str) -> Result<()> {
    writeln!(file, "{line}").at(path)
}

/// Trains one model into `out`, resuming from the newest checkpoint there.
///
/// Writes `config.snapshot`, `metrics.log` (one line per step),
/// `estimates.log` (one line per epoch, when enabled and masks exist),
/// `checkpoints/step-N.bin` and the final `weights.bin` (plus `noc.bin` for
/// `p_noc`). Returns the trained `f`.
pub fn train_model(
    cfg: &PipelineConfig,
    mode: TrainMode,
    data: &Dataset,
    oc: Option<ToyCnn<f32>>,
    out: &Path,
) -> Result<ToyCnn<f32>> {
    mkdir(out)?;
    let snap = out.join("config.snapshot");
    fs::write(&snap, cfg.to_toml()).at(&snap)?;
    let samples = data.load_all(false)?;
    let f = initial_model(cfg, data.num_classes())?;
    let mut t = Trainer::new(cfg.train_config(mode), f, oc, samples.len()).map_err(|e| Error::Config(e.to_string()))?;
    if let (Some(lr), true) = (cfg.train.noc_lr, mode.trains_noc()) {
        let n = t.oc().map_or(0, |m| m.params().len());
        t.set_noc_learning_rates(vec![lr; n])?;
    }
    let ck_dir = out.join("checkpoints");
    let metrics = out.join(METRICS_FILE);
    let estimates = out.join(ESTIMATES_FILE);
    match latest_checkpoint(&ck_dir)? {
        Some((step, p)) => {
            t.restore(&persist::read_state(&p)?).map_err(|e| Error::data(&p, e.to_string()))?;
            info!("{}: resuming {} at step {step}", out.display(), mode);
            truncate_log(&metrics, "step", step)?;
            truncate_log(&estimates, "epoch", t.epoch())?;
        }
        None => {
            fs::write(&metrics, "").at(&metrics)?;
            fs::write(&estimates, "").at(&estimates)?;
        }
    }
    mkdir(&ck_dir)?;
    let mut mlog = fs::OpenOptions::new().append(true).open(&metrics).at(&metrics)?;
    let mut elog = fs::OpenOptions::new().append(true).open(&estimates).at(&estimates)?;
    let with_gt: Vec<ImageSample<f32>> = samples.iter().filter(|s| s.gt_mask.is_some()).cloned().collect();
    let every = cfg.train.checkpoint_every;
    while let Some(r) = t.train_step(&samples)? {
        append(&mut mlog, &metrics, &format_report(&r))?;
        let due = if every == 0 { r.epoch_end } else { (r.step + 1) % every == 0 };
        if due && t.at_boundary() {
            let p = ck_dir.join(format!("step-{}.bin", t.step()));
            persist::write_state(&p, &t.snapshot()?)?;
        }
        if r.epoch_end && cfg.eval.estimate_epochs && !with_gt.is_empty() {
            let m = estimate_epoch_miou(t.f(), &with_gt, cfg.eval.estimate_size, cfg.eval.estimate_delta)?;
            append(&mut elog, &estimates, &format!("epoch={} miou_estimate={m:.2}", r.epoch))?;
        }
    }
    let (f, noc) = t.into_models();
    persist::write_cnn(&out.join(WEIGHTS_FILE), &f)?;
    if mode.trains_noc() {
        if let Some(n) = noc {
            persist::write_cnn(&out.join(NOC_FILE), &n)?;
        }
    }
    Ok(f)
}

/// One `.cams` prior per sample.
pub fn make_priors(cfg: &PipelineConfig, model: &ToyCnn<f32>, data: &Dataset, out: &Path) -> Result<()> {
    fresh_dir(out)?;
    for i in 0..data.len() {
        let s = data.load(i, false)?;
        let p = make_prior(model, &s, &cfg.priors.scales, cfg.priors.flip)?;
        cams::write(&out.join(format!("{}.cams", s.id)), &p)?;
    }
    Ok(())
}

fn prior_for(dir: &Path, id: &str, s: &ImageSample<f32>) -> Result<Tensor3<f32>> {
    let p = cams::read(&dir.join(format!("{id}.cams")))?;
    if (p.height(), p.width()) != (s.image.height(), s.image.width()) {
        return Err(Error::data(dir, format!("prior of `{id}` is {}x{}, image {}x{}", p.height(), p.width(), s.image.height(), s.image.width())));
    }
    Ok(p)
}

/// Trains the disentangler on backbone features of `data`, with hints taken
/// from the priors in `hints_from` unless `lambda_h` is 0.
pub fn train_disentangler(cfg: &PipelineConfig, model: &ToyCnn<f32>, data: &Dataset, hints_from: &Path, out: &Path) -> Result<MlpHead<f32>> {
    mkdir(out)?;
    let samples = data.load_all(false)?;
    let mut feats = Vec::with_capacity(samples.len());
    let mut hints: Vec<HintMask> = Vec::with_capacity(samples.len());
    for s in &samples {
        feats.push(backbone_features(model, &s.image)?);
        let prior = prior_for(hints_from, &s.id, s)?;
        hints.push(extract_hints(&prior, cfg.c2amh.delta_fg, cfg.c2amh.delta_bg, &s.id)?);
    }
    let hinted = cfg.c2amh.lambda_h > 0.0;
    let mut lines = String::new();
    let head = train_c2amh(&feats, hinted.then_some(&hints[..]), &cfg.c2amh.core(cfg.pipeline.seed), |e, l| {
        lines.push_str(&format!("epoch={e} loss={l}\n"));
    })?;
    let log = out.join(METRICS_FILE);
    fs::write(&log, lines).at(&log)?;
    persist::write_head(&out.join(HEAD_FILE), &head)?;
    Ok(head)
}

/// Saliency as an 8-bit PNG plus a `[1, H, W]` `.cams` sidecar per sample.
pub fn make_saliency(model: &ToyCnn<f32>, head: &MlpHead<f32>, data: &Dataset, out: &Path) -> Result<()> {
    fresh_dir(out)?;
    for i in 0..data.len() {
        let s = data.load(i, false)?;
        let (h, w) = (s.image.height(), s.image.width());
        let sal = emit_saliency(head, &backbone_features(model, &s.image)?, h, w)?;
        imageio::write_gray(&out.join(format!("{}.png", s.id)), h, w, &imageio::quantize(sal.data()))?;
        cams::write(&out.join(format!("{}.cams", s.id)), &sal)?;
    }
    Ok(())
}

/// Seed masks from priors, with background from saliency when given.
pub fn make_seeds(cfg: &PipelineConfig, priors: &Path, saliency: Option<&Path>, out: &Path) -> Result<Vec<(String, f64)>> {
    let ps = evaluate::read_priors(priors)?;
    if ps.is_empty() {
        return Err(Error::data(priors, "no priors found"));
    }
    fresh_dir(out)?;
    let r = &cfg.refine;
    let mut unknown = Vec::with_capacity(ps.len());
    for (id, p) in &ps {
        let seeds: SeedMap = match saliency {
            Some(dir) => {
                let sal = cams::read(&dir.join(format!("{id}.cams")))?;
                seeds_with_saliency(p, sal.data(), r.delta_fg, cfg.c2amh.delta_sal)?
            }
            None => seeds_from_priors(p, r.delta_bg, r.delta_fg)?,
        };
        imageio::write_mask(&out.join(format!("{id}.png")), seeds.height, seeds.width, &seeds.labels)?;
        unknown.push((id.clone(), seeds.unknown_fraction()));
    }
    let mut w = csv::Writer::from_path(out.join("unknown.csv")).map_err(|e| Error::data(out, e.to_string()))?;
    w.write_record(["id", "unknown_fraction"]).map_err(|e| Error::data(out, e.to_string()))?;
    for (id, u) in &unknown {
        w.write_record([id.clone(), u.to_string()]).map_err(|e| Error::data(out, e.to_string()))?;
    }
    w.flush().at(out)?;
    Ok(unknown)
}

/// Random-walk refinement of every prior with image affinities, written as
/// label masks.
pub fn refine_rw(cfg: &PipelineConfig, data: &Dataset, priors: &Path, seeds: Option<&Path>, out: &Path) -> Result<()> {
    fresh_dir(out)?;
    let model = cfg.affinity();
    for i in 0..data.len() {
        let s = data.load(i, false)?;
        let prior = prior_for(priors, &s.id, &s)?;
        let seed_map = match seeds {
            Some(dir) => {
                let (h, w, labels) = imageio::read_mask(&dir.join(format!("{}.png", s.id)))?;
                Some(SeedMap { height: h, width: w, labels })
            }
            None => None,
        };
        let graph = model.affinity(&s.image, seed_map.as_ref())?;
        let probs = random_walk(&with_background(&prior), &graph, cfg.refine.beta, cfg.refine.steps)?;
        imageio::write_mask(&out.join(format!("{}.png", s.id)), prior.height(), prior.width(), &argmax_mask(&probs))?;
    }
    Ok(())
}

/// Writes the ground-truth masks of `data` keyed by id.
fn ground_truth(data: &Dataset) -> Result<std::collections::BTreeMap<String, evaluate::Mask>> {
    (0..data.len())
        .map(|i| {
            let s = data.load(i, true)?;
            let m = s.gt_mask.expect("masks are required");
            Ok((s.id, (s.image.height(), s.image.width(), m)))
        })
        .collect()
}

/// Sweep of the priors, per-class scores of priors and masks, and a
/// `summary.txt` of `name=value` lines.
pub fn evaluate_run(cfg: &PipelineConfig, data: &Dataset, priors: &Path, masks: Option<&Path>, out: &Path) -> Result<Vec<(String, String)>> {
    mkdir(out)?;
    let gt = ground_truth(data)?;
    let ps = evaluate::read_priors(priors)?;
    let curve = evaluate::sweep(&ps, &gt, &cfg.deltas()?, &data.root)?;
    evaluate::write_sweep_csv(&out.join("sweep.csv"), &curve)?;
    evaluate::plot_sweep(&out.join("sweep.png"), &curve)?;
    let (best_delta, best_miou) = evaluate::best(&curve);
    let names = evaluate::row_names(&data.class_names);
    let prior_report = evaluate::prior_confusion(&ps, &gt, best_delta, &data.root)?.miou()?;
    evaluate::write_per_class_csv(&out.join("per_class_priors.csv"), &names, &prior_report)?;
    let mut summary = vec![
        ("priors_best_delta".to_string(), best_delta.to_string()),
        ("priors_best_miou".to_string(), format!("{best_miou:.2}")),
    ];
    if let Some(dir) = masks {
        let pred = evaluate::read_masks(dir)?;
        let r = evaluate::confusion(&pred, &gt, data.num_classes(), &data.root)?.miou()?;
        evaluate::write_per_class_csv(&out.join("per_class_masks.csv"), &names, &r)?;
        summary.push(("masks_miou".to_string(), format!("{:.2}", r.mean)));
    }
    let text: String = summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let p = out.join(SUMMARY_FILE);
    fs::write(&p, text).at(&p)?;
    Ok(summary)
}

/// Plain-text report: the evaluation summary, then the group table of the
/// final masks (or the priors when no masks were evaluated).
pub fn write_report(eval_dir: &Path, groups: &GroupSpec, class_names: &[String], out: &Path) -> Result<String> {
    let summary_path = eval_dir.join(SUMMARY_FILE);
    let mut text = fs::read_to_string(&summary_path).at(&summary_path)?;
    let masks = eval_dir.join("per_class_masks.csv");
    let source = if masks.is_file() { masks } else { eval_dir.join("per_class_priors.csv") };
    let rows = evaluate::read_per_class_csv(&source)?;
    let fg: Vec<Option<f64>> = rows.iter().skip(1).map(|(_, v)| *v).collect();
    text.push_str(&format!("\nper-class IoU ({})\n", source.file_name().and_then(|n| n.to_str()).unwrap_or("")));
    for (name, v) in &rows {
        text.push_str(&format!("{name}\t{}\n", v.map_or("n/a".to_string(), |x| format!("{x:.2}"))));
    }
    if !groups.groups.is_empty() && fg.len() == class_names.len() {
        text.push('\n');
        text.push_str(&format_group_table(&group_report(&fg, groups)?, class_names));
    }
    fs::write(out, &text).at(out)?;
    Ok(text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Runs configured stages against one run directory.
pub struct Runner {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    pub force: bool,
}

impl Runner {
    pub fn new(cfg: PipelineConfig, force: bool) -> Self {
        let layout = Layout::new(cfg.pipeline.out.clone());
        Self { cfg, layout, force }
    }

    pub fn stages(&self) -> Result<Vec<Stage>> {
        self.cfg.pipeline.stages.iter().map(|s| s.parse()).collect()
    }

    /// Files a stage reads, each with the stage that produces it.
    fn inputs(&self, stage: Stage) -> Vec<(PathBuf, Stage)> {
        let l = &self.layout;
        let p_noc = (l.weights(TrainMode::PNoc), Stage::TrainPNoc);
        match stage {
            Stage::TrainVanilla => vec![],
            Stage::TrainPNoc => vec![(l.weights(TrainMode::Vanilla), Stage::TrainVanilla)],
            Stage::MakePriors => vec![p_noc],
            Stage::TrainC2amh => vec![p_noc, (l.priors(), Stage::MakePriors)],
            Stage::MakeSaliency => vec![p_noc, (l.head(), Stage::TrainC2amh)],
            Stage::MakeSeeds => {
                let mut v = vec![(l.priors(), Stage::MakePriors)];
                if self.cfg.refine.use_saliency {
                    v.push((l.saliency(), Stage::MakeSaliency));
                }
                v
            }
            Stage::RefineRw => vec![(l.priors(), Stage::MakePriors), (l.seeds(), Stage::MakeSeeds)],
            Stage::Evaluate => vec![(l.priors(), Stage::MakePriors)],
            Stage::Report => vec![(l.eval().join(SUMMARY_FILE), Stage::Evaluate)],
        }
    }

    fn check_inputs(&self, stage: Stage) -> Result<()> {
        for (path, producer) in self.inputs(stage) {
            if !path.exists() {
                return Err(Error::MissingArtifact { stage: stage.name().into(), path, producer: producer.name().into() });
            }
        }
        Ok(())
    }

    /// Training and evaluation datasets, generating synthetic ones on first use.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match self.cfg.data.source {
            DataSource::Synthetic => {
                let s = &self.cfg.synthetic;
                for (root, n, seed) in [
                    (self.layout.synthetic_train(), s.n_train, s.train_seed),
                    (self.layout.synthetic_eval(), s.n_eval, s.eval_seed),
                ] {
                    let stamp = root.join(".complete");
                    if !stamp.is_file() {
                        fresh_dir(&root)?;
                        generate_synthetic(&root, &s.spec(n, seed))?;
                        fs::write(&stamp, "").at(&stamp)?;
                    }
                }
                Ok((load_voc(&self.layout.synthetic_train())?, load_voc(&self.layout.synthetic_eval())?))
            }
            DataSource::Voc => {
                let train = self.cfg.data.train.as_ref().ok_or_else(|| Error::Config("data.train is required".into()))?;
                let eval = self.cfg.data.eval.as_ref().unwrap_or(train);
                let (t, e) = (load_voc(train)?, load_voc(eval)?);
                if t.class_names != e.class_names {
                    return Err(Error::data(eval, "training and evaluation sets disagree on the class list"));
                }
                Ok((t, e))
            }
        }
    }

    fn groups(&self, num_classes: usize) -> GroupSpec {
        match self.cfg.data.source {
            DataSource::Synthetic => default_groups(num_classes),
            DataSource::Voc => GroupSpec { groups: vec![] },
        }
    }

    fn execute(&self, stage: Stage) -> Result<()> {
        let l = &self.layout;
        let cfg = &self.cfg;
        let p_noc_weights = || persist::read_cnn(&l.weights(TrainMode::PNoc));
        match stage {
            Stage::TrainVanilla => {
                let (train, _) = self.datasets()?;
                train_model(cfg, TrainMode::Vanilla, &train, None, &l.train_dir(TrainMode::Vanilla))?;
            }
            Stage::TrainPNoc => {
                let (train, _) = self.datasets()?;
                let oc = persist::read_cnn(&l.weights(TrainMode::Vanilla))?;
                train_model(cfg, TrainMode::PNoc, &train, Some(oc), &l.train_dir(TrainMode::PNoc))?;
            }
            Stage::MakePriors => {
                let (_, eval) = self.datasets()?;
                make_priors(cfg, &p_noc_weights()?, &eval, &l.priors())?;
            }
            Stage::TrainC2amh => {
                let (_, eval) = self.datasets()?;
                let dir = l.head().parent().expect("head lives in a directory").to_path_buf();
                train_disentangler(cfg, &p_noc_weights()?, &eval, &l.priors(), &dir)?;
            }
            Stage::MakeSaliency => {
                let (_, eval) = self.datasets()?;
                make_saliency(&p_noc_weights()?, &persist::read_head(&l.head())?, &eval, &l.saliency())?;
            }
            Stage::MakeSeeds => {
                let sal = cfg.refine.use_saliency.then(|| l.saliency());
                make_seeds(cfg, &l.priors(), sal.as_deref(), &l.seeds())?;
            }
            Stage::RefineRw => {
                let (_, eval) = self.datasets()?;
                let seeds = cfg.refine.constrain_with_seeds.then(|| l.seeds());
                refine_rw(cfg, &eval, &l.priors(), seeds.as_deref(), &l.masks())?;
            }
            Stage::Evaluate => {
                let (_, eval) = self.datasets()?;
                let masks = l.masks();
                evaluate_run(cfg, &eval, &l.priors(), masks.is_dir().then_some(masks.as_path()), &l.eval())?;
            }
            Stage::Report => {
                let (_, eval) = self.datasets()?;
                write_report(&l.eval(), &self.groups(eval.num_classes()), &eval.class_names, &l.report())?;
            }
        }
        Ok(())
    }

    /// Runs `stages` in order, skipping stamped ones unless forced.
    pub fn run(&self, stages: &[Stage]) -> Result<Vec<(Stage, Outcome)>> {
        mkdir(&self.layout.out)?;
        let snap = self.layout.snapshot();
        fs::write(&snap, self.cfg.to_toml()).at(&snap)?;
        let mut done = Vec::with_capacity(stages.len());
        for &stage in stages {
            let stamp = self.layout.stamp(stage);
            if stamp.is_file() && !self.force {
                info!("{stage}: up to date");
                done.push((stage, Outcome::Skipped));
                continue;
            }
            self.check_inputs(stage)?;
            info!("{stage}: running");
            if stamp.is_file() {
                fs::remove_file(&stamp).at(&stamp)?;
            }
            if self.force && matches!(stage, Stage::TrainVanilla | Stage::TrainPNoc) {
                let mode = if stage == Stage::TrainVanilla { TrainMode::Vanilla } else { TrainMode::PNoc };
                let ck = self.layout.train_dir(mode).join("checkpoints");
                if ck.is_dir() {
                    fs::remove_dir_all(&ck).at(&ck)?;
                }
            }
            self.execute(stage).map_err(|e| e.in_stage(stage.name()))?;
            mkdir(stamp.parent().expect("stamps live in a directory"))?;
            fs::write(&stamp, "").at(&stamp)?;
            done.push((stage, Outcome::Ran));
        }
        Ok(done)
    }

    pub fn run_configured(&self) -> Result<Vec<(Stage, Outcome)>> {
        self.run(&self.stages()?)
    }
}
