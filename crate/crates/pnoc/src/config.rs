//! Run configuration, read from and written back to TOML.
//!
//! Every section rejects unknown keys and every key has a default, so an
//! empty file is a valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use pnoc_core::augment::{AugmentPolicy, ColorJitter, Jitter};
use pnoc_core::c2amh::C2amConfig;
use pnoc_core::nn::CnnConfig;
use pnoc_core::objectives::ScheduleSet;
use pnoc_core::refine::GaussianAffinity;
use pnoc_core::synth::SyntheticSpec;
use pnoc_core::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub schedule: ScheduleSection,
    pub augment: AugmentSection,
    pub priors: PriorSection,
    pub c2amh: C2amhSection,
    pub refine: RefineSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub seed: u64,
    pub out: PathBuf,
    pub stages: Vec<String>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { seed: 0, out: PathBuf::from("runs/default"), stages: crate::stages::Stage::ALL.iter().map(|s| s.name().to_string()).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Voc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { source: DataSource::Synthetic, train: None, eval: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_eval: usize,
    pub num_classes: usize,
    pub size: usize,
    pub co_occurrence: f64,
    pub noise: f64,
    pub core_size: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            n_train: 200,
            n_eval: 50,
            num_classes: s.num_classes,
            size: s.size,
            co_occurrence: s.co_occurrence,
            noise: s.noise,
            core_size: s.core_size,
            train_seed: 1000,
            eval_seed: 2000,
        }
    }
}

impl SyntheticSection {
    pub fn spec(&self, n_images: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_images,
            num_classes: self.num_classes,
            size: self.size,
            co_occurrence: self.co_occurrence,
            noise: self.noise,
            core_size: self.core_size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = CnnConfig::toy(1);
        Self { widths: t.widths, strides: t.strides }
    }
}

impl ModelSection {
    pub fn cnn(&self, num_classes: usize) -> CnnConfig {
        CnnConfig { in_channels: 3, widths: self.widths.clone(), strides: self.strides.clone(), num_classes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_scratch: f64,
    pub lr_pretrained: f64,
    /// Learning rate of `noc`; `lr_pretrained` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noc_lr: Option<f64>,
    pub weight_decay: f64,
    pub momentum: f64,
    pub accumulation: usize,
    pub re_present_only: bool,
    /// Steps between checkpoints; 0 writes one at every epoch end.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_scratch: t.lr_scratch,
            lr_pretrained: t.lr_pretrained,
            noc_lr: None,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            accumulation: t.accumulation,
            re_present_only: t.re_present_only,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub k_noc: usize,
    pub delta_noc: f64,
    pub smoothing_eps: f64,
    /// Constant replacing the `lambda_cse` ramp.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_cse: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ScheduleSet::default();
        Self { k_noc: s.k_noc, delta_noc: s.delta_noc, smoothing_eps: s.smoothing_eps, lambda_cse: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub scale_min: f64,
    pub scale_max: f64,
    pub crop: usize,
    pub jitter: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugmentPolicy::new(32);
        let j = ColorJitter::default();
        Self {
            scale_min: p.scale_min,
            scale_max: p.scale_max,
            crop: p.crop,
            jitter: true,
            brightness: j.brightness,
            contrast: j.contrast,
            saturation: j.saturation,
            hue: j.hue,
        }
    }
}

impl AugmentSection {
    pub fn policy(&self) -> AugmentPolicy {
        let jitter = if self.jitter {
            Jitter::Color(ColorJitter { brightness: self.brightness, contrast: self.contrast, saturation: self.saturation, hue: self.hue })
        } else {
            Jitter::None
        };
        AugmentPolicy { scale_min: self.scale_min, scale_max: self.scale_max, crop: self.crop, jitter }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub scales: Vec<f64>,
    pub flip: bool,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { scales: vec![0.5, 1.0, 1.5, 2.0], flip: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct C2amhSection {
    pub alpha: f64,
    pub lambda_h: f64,
    pub delta_fg: f64,
    pub delta_bg: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub delta_sal: f64,
}

impl Default for C2amhSection {
    fn default() -> Self {
        let c = C2amConfig::default();
        Self {
            alpha: c.alpha,
            lambda_h: c.lambda_h,
            delta_fg: c.delta_fg,
            delta_bg: c.delta_bg,
            batch_size: c.batch_size,
            epochs: 20,
            lr: c.lr,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
            hidden: c.hidden,
            delta_sal: 0.5,
        }
    }
}

impl C2amhSection {
    pub fn core(&self, seed: u64) -> C2amConfig {
        C2amConfig {
            alpha: self.alpha,
            lambda_h: self.lambda_h,
            delta_fg: self.delta_fg,
            delta_bg: self.delta_bg,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            hidden: self.hidden,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub delta_bg: f64,
    pub delta_fg: f64,
    pub use_saliency: bool,
    pub radius: usize,
    /// Gaussian bandwidth; the median neighbor distance when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub beta: f64,
    pub steps: usize,
    pub constrain_with_seeds: bool,
}

impl Default for RefineSection {
    fn default() -> Self {
        let g = GaussianAffinity::default();
        Self {
            delta_bg: 0.1,
            delta_fg: 0.4,
            use_saliency: true,
            radius: g.radius,
            sigma: g.sigma,
            beta: 8.0,
            steps: 256,
            constrain_with_seeds: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub sweep_from: f64,
    pub sweep_to: f64,
    pub sweep_step: f64,
    /// Per-epoch estimates on the training images (never used for training).
    pub estimate_epochs: bool,
    pub estimate_delta: f64,
    pub estimate_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { sweep_from: 0.05, sweep_to: 0.95, sweep_step: 0.05, estimate_epochs: true, estimate_delta: 0.25, estimate_size: 32 }
    }
}

/// Every key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("pipeline.seed", "global seed for training, initialization and the disentangler"),
    ("pipeline.out", "run directory"),
    ("pipeline.stages", "stages to run, in order"),
    ("data.source", "`synthetic` (generated into the run directory) or `voc`"),
    ("data.train", "VOC-layout root used for training (source = voc)"),
    ("data.eval", "VOC-layout root for priors, refinement and evaluation; defaults to data.train"),
    ("synthetic.n_train", "number of generated training images"),
    ("synthetic.n_eval", "number of generated evaluation images"),
    ("synthetic.num_classes", "shape classes, 1 to 5"),
    ("synthetic.size", "square image side, a multiple of 8"),
    ("synthetic.co_occurrence", "probability that a scene holds a second class"),
    ("synthetic.noise", "standard deviation of pixel noise"),
    ("synthetic.core_size", "side of the saturated core patch"),
    ("synthetic.train_seed", "generator seed of the training split"),
    ("synthetic.eval_seed", "generator seed of the evaluation split"),
    ("model.widths", "output channels of each 3x3 block"),
    ("model.strides", "stride of each block, 1 or 2"),
    ("train.epochs", "training epochs"),
    ("train.batch_size", "images per step"),
    ("train.lr_scratch", "base learning rate of randomly initialized weights"),
    ("train.lr_pretrained", "base learning rate of weights loaded from a trained model"),
    ("train.noc_lr", "base learning rate of noc; train.lr_pretrained when absent"),
    ("train.weight_decay", "L2 weight decay"),
    ("train.momentum", "SGD momentum"),
    ("train.accumulation", "batches summed per update, 1 or 2"),
    ("train.re_present_only", "restrict the reconstruction term to labeled classes"),
    ("train.checkpoint_every", "steps between checkpoints; 0 means every epoch end"),
    ("schedule.k_noc", "noc is updated every k_noc steps"),
    ("schedule.delta_noc", "threshold of the hard mask fed to noc"),
    ("schedule.smoothing_eps", "label smoothing of the multi-label loss"),
    ("schedule.lambda_cse", "constant erasing-loss weight replacing the ramp"),
    ("augment.scale_min", "lower bound of the random rescale"),
    ("augment.scale_max", "upper bound of the random rescale"),
    ("augment.crop", "side of the square training crop"),
    ("augment.jitter", "enable color jitter"),
    ("augment.brightness", "brightness jitter amplitude"),
    ("augment.contrast", "contrast jitter amplitude"),
    ("augment.saturation", "saturation jitter amplitude"),
    ("augment.hue", "hue rotation amplitude, fraction of a turn"),
    ("priors.scales", "test-time scales averaged into each prior"),
    ("priors.flip", "also average horizontally flipped passes"),
    ("c2amh.alpha", "decay of the rank weights"),
    ("c2amh.lambda_h", "weight of the hint term; 0 trains without hints"),
    ("c2amh.delta_fg", "prior peak above which a pixel is a foreground hint"),
    ("c2amh.delta_bg", "prior peak below which a pixel is a background hint"),
    ("c2amh.batch_size", "images per disentangler step"),
    ("c2amh.epochs", "disentangler epochs"),
    ("c2amh.lr", "disentangler learning rate"),
    ("c2amh.momentum", "disentangler SGD momentum"),
    ("c2amh.weight_decay", "disentangler weight decay"),
    ("c2amh.hidden", "hidden width of the disentangler head"),
    ("c2amh.delta_sal", "saliency below this marks a pixel as background seed"),
    ("refine.delta_bg", "prior peak below which a pixel is a background seed"),
    ("refine.delta_fg", "prior peak above which a pixel is a foreground seed"),
    ("refine.use_saliency", "take background seeds from the saliency map"),
    ("refine.radius", "affinity neighborhood radius in pixels"),
    ("refine.sigma", "affinity bandwidth; median neighbor distance when absent"),
    ("refine.beta", "affinity exponent of the random walk"),
    ("refine.steps", "random walk iterations"),
    ("refine.constrain_with_seeds", "cut affinities between conflicting seeds"),
    ("eval.sweep_from", "first threshold of the sweep"),
    ("eval.sweep_to", "last threshold of the sweep"),
    ("eval.sweep_step", "threshold spacing of the sweep"),
    ("eval.estimate_epochs", "log a single-scale mIoU estimate after each epoch"),
    ("eval.estimate_delta", "threshold of the per-epoch estimate"),
    ("eval.estimate_size", "common frame side of the per-epoch estimate"),
];

/// Key reference shown by `--help`.
pub fn key_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (TOML, all optional):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:width$}  {d}\n"));
    }
    s
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Checks every section by building the core configurations from it.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: pnoc_core::Error| Error::Config(e.to_string());
        for s in &self.pipeline.stages {
            s.parse::<crate::stages::Stage>()?;
        }
        if self.data.source == DataSource::Voc && self.data.train.is_none() {
            return Err(Error::Config("data.source = \"voc\" needs data.train".into()));
        }
        if self.data.source == DataSource::Synthetic {
            self.synthetic.spec(self.synthetic.n_train, 0).validate().map_err(cfg_err)?;
            self.synthetic.spec(self.synthetic.n_eval, 0).validate().map_err(cfg_err)?;
        }
        self.model.cnn(1).validate().map_err(cfg_err)?;
        let mut t = self.train_config(TrainMode::PNoc);
        t.sched.total_steps = 1;
        t.validate().map_err(cfg_err)?;
        if let Some(lr) = self.train.noc_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("train.noc_lr must be positive, got {lr}")));
            }
        }
        let stride = self.model.cnn(1).output_stride();
        if self.augment.crop % (2 * stride) != 0 {
            return Err(Error::Config(format!("augment.crop must be a multiple of {}", 2 * stride)));
        }
        if self.priors.scales.is_empty() || self.priors.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("priors.scales must be a non-empty list of positive numbers".into()));
        }
        self.c2amh.core(0).validate().map_err(cfg_err)?;
        if !(self.c2amh.delta_sal > 0.0 && self.c2amh.delta_sal < 1.0) {
            return Err(Error::Config("c2amh.delta_sal must be in (0, 1)".into()));
        }
        let r = &self.refine;
        if !(0.0 <= r.delta_bg && r.delta_bg < r.delta_fg && r.delta_fg <= 1.0) {
            return Err(Error::Config("refine needs 0 <= delta_bg < delta_fg <= 1".into()));
        }
        if r.radius == 0 || !(r.beta >= 1.0) || r.sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("refine needs radius >= 1, beta >= 1 and a positive sigma".into()));
        }
        self.deltas()?;
        if !(self.eval.estimate_delta > 0.0 && self.eval.estimate_delta < 1.0) || self.eval.estimate_size == 0 {
            return Err(Error::Config("eval.estimate_delta must be in (0, 1) and estimate_size positive".into()));
        }
        Ok(())
    }

    pub fn deltas(&self) -> Result<Vec<f64>> {
        pnoc_core::eval::delta_range(self.eval.sweep_from, self.eval.sweep_to, self.eval.sweep_step)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        let t = &self.train;
        let s = &self.schedule;
        TrainConfig {
            epochs: t.epochs,
            lr_scratch: t.lr_scratch,
            lr_pretrained: t.lr_pretrained,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            batch_size: t.batch_size,
            accumulation: t.accumulation,
            sched: ScheduleSet {
                total_steps: 1,
                k_noc: s.k_noc,
                delta_noc: s.delta_noc,
                smoothing_eps: s.smoothing_eps,
                lambda_cse_override: s.lambda_cse,
            },
            seed: self.pipeline.seed,
            mode,
            re_present_only: t.re_present_only,
            augment: Some(self.augment.policy()),
        }
    }

    pub fn affinity(&self) -> GaussianAffinity {
        GaussianAffinity { radius: self.refine.radius, sigma: self.refine.sigma }
    }
}
