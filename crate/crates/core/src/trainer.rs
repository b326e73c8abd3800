//! Alternating optimization of the generator `f` against an ordinary
//! classifier that is either frozen (`p_oc`) or refined on hard-masked
//! inputs (`p_noc`).

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::RngCore;

use crate::augment::{augment, AugmentPolicy};
use crate::cam::{merge, merge_backward, normalize_cam, normalize_cam_backward, tile, ImageSample};
use crate::nn::{Grads, TrainableClassifier};
use crate::objectives::{
    classification_loss, cse_soft_mask, cse_soft_mask_backward, noc_hard_mask, noc_loss, poc_loss, positives,
    LossReport, PocBatch, PocOptions, PocWeights, Schedule, ScheduleSet,
};
use crate::optim::{Sgd, StepOutcome};
use crate::rng::{self, ChaCha8Rng, RngState};
use crate::{arg_err, shape_err, Error, Result, Scalar, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    Vanilla,
    Puzzle,
    POc,
    PNoc,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [TrainMode::Vanilla, TrainMode::Puzzle, TrainMode::POc, TrainMode::PNoc];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Vanilla => "vanilla",
            TrainMode::Puzzle => "puzzle",
            TrainMode::POc => "p_oc",
            TrainMode::PNoc => "p_noc",
        }
    }

    pub fn uses_puzzle(self) -> bool {
        !matches!(self, TrainMode::Vanilla)
    }

    pub fn uses_oc(self) -> bool {
        matches!(self, TrainMode::POc | TrainMode::PNoc)
    }

    pub fn trains_noc(self) -> bool {
        matches!(self, TrainMode::PNoc)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| arg_err!("unknown training mode '{s}' (expected vanilla, puzzle, p_oc or p_noc)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate of randomly initialized parameters.
    pub lr_scratch: f64,
    /// Learning rate of parameters loaded from a trained model.
    pub lr_pretrained: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Number of batches whose gradients are summed before an update.
    pub accumulation: usize,
    /// `total_steps` is filled in by the trainer from the dataset size.
    pub sched: ScheduleSet,
    pub seed: u64,
    pub mode: TrainMode,
    pub re_present_only: bool,
    pub augment: Option<AugmentPolicy>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr_scratch: 0.1,
            lr_pretrained: 0.01,
            weight_decay: 1e-4,
            momentum: 0.9,
            batch_size: 16,
            accumulation: 1,
            sched: ScheduleSet::default(),
            seed: 0,
            mode: TrainMode::PNoc,
            re_present_only: true,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(arg_err!("epochs must be positive"));
        }
        for (name, v) in [("lr_scratch", self.lr_scratch), ("lr_pretrained", self.lr_pretrained)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(arg_err!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(arg_err!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(arg_err!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return Err(arg_err!("batch_size must be positive"));
        }
        if !(1..=2).contains(&self.accumulation) {
            return Err(arg_err!("accumulation must be 1 or 2, got {}", self.accumulation));
        }
        if let Some(p) = &self.augment {
            p.validate()?;
        }
        self.sched.validate()
    }

    pub fn steps_per_epoch(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, num_samples: usize) -> usize {
        self.epochs * self.steps_per_epoch(num_samples)
    }
}

/// Draws the erased class uniformly among the positives of `y` using exactly
/// one RNG draw.
pub fn sample_class<T: Scalar>(y: &[T], rng: &mut impl RngCore) -> Result<usize> {
    let pos = positives(y);
    if pos.is_empty() {
        return Err(Error::NoPositiveLabel);
    }
    Ok(pos[rng::index(rng, pos.len())])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Applied,
    /// Gradients were stored for the next accumulation boundary.
    Accumulated,
    SkippedNonFinite,
}

impl UpdateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateKind::Applied => "applied",
            UpdateKind::Accumulated => "accumulated",
            UpdateKind::SkippedNonFinite => "skipped_nonfinite",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NocPhase {
    Ran,
    /// `step mod k_noc != 0`.
    Skipped,
    /// The mode has no trainable `noc`.
    NotApplicable,
}

impl NocPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            NocPhase::Ran => "ran",
            NocPhase::Skipped => "skipped",
            NocPhase::NotApplicable => "n/a",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub epoch: usize,
    /// Learning-rate factor in `[0, 1]` applied to the base rates.
    pub lr_factor: f64,
    pub f: LossReport,
    pub f_update: UpdateKind,
    pub noc_phase: NocPhase,
    pub noc: Option<LossReport>,
    pub noc_update: Option<UpdateKind>,
    pub epoch_end: bool,
}

/// Output of the generator phase that the `noc` phase consumes.
pub struct FPhase<T> {
    pub report: LossReport,
    pub update: UpdateKind,
    /// Main-branch maps of each sample, computed before the update.
    pub maps: Vec<Tensor3<T>>,
    pub erased: Vec<usize>,
}

/// Everything needed to resume a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState<T> {
    pub step: usize,
    pub epoch: usize,
    pub cursor: usize,
    pub order: Vec<usize>,
    pub rng: RngState,
    pub f_params: Vec<Vec<T>>,
    pub f_momentum: Vec<Vec<T>>,
    pub noc_params: Option<Vec<Vec<T>>>,
    pub noc_momentum: Option<Vec<Vec<T>>>,
}

pub struct Trainer<T: Scalar, M: TrainableClassifier<T>> {
    cfg: TrainConfig,
    sched: ScheduleSet,
    num_samples: usize,
    f: M,
    f_opt: Sgd<T>,
    f_lrs: Vec<f64>,
    oc: Option<M>,
    noc_opt: Option<Sgd<T>>,
    noc_lrs: Vec<f64>,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
    cursor: usize,
    order: Vec<usize>,
    pending: Option<Grads<T>>,
    pending_count: usize,
}

fn copy_params<T: Scalar, M: TrainableClassifier<T>>(m: &M) -> Vec<Vec<T>> {
    m.params().iter().map(|p| p.to_vec()).collect()
}

fn load_params<T: Scalar, M: TrainableClassifier<T>>(m: &mut M, src: &[Vec<T>]) -> Result<()> {
    let mut dst = m.params_mut();
    if dst.len() != src.len() || dst.iter().zip(src).any(|(d, s)| d.len() != s.len()) {
        return Err(Error::Corrupt(String::from("parameter layout does not match the model")));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        d.copy_from_slice(s);
    }
    Ok(())
}

fn add_grads<T: Scalar>(acc: &mut Grads<T>, g: &Grads<T>) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += *y;
        }
    }
}

impl<T: Scalar, M: TrainableClassifier<T>> Trainer<T, M> {
    /// `f` starts from random weights. `oc` is the trained vanilla classifier;
    /// it is required by `p_oc` (kept frozen) and `p_noc` (refined as `noc`).
    pub fn new(cfg: TrainConfig, f: M, oc: Option<M>, num_samples: usize) -> Result<Self> {
        cfg.validate()?;
        if num_samples == 0 {
            return Err(arg_err!("empty training set"));
        }
        let oc = if cfg.mode.uses_oc() {
            let oc = oc.ok_or_else(|| {
                arg_err!("mode {} needs a trained vanilla classifier to initialize the ordinary classifier", cfg.mode)
            })?;
            if oc.num_classes() != f.num_classes() {
                return Err(shape_err!("oc has {} classes, f has {}", oc.num_classes(), f.num_classes()));
            }
            Some(oc)
        } else {
            None
        };
        let mut sched = cfg.sched.clone();
        sched.total_steps = cfg.total_steps(num_samples);
        sched.validate()?;
        let shapes = |m: &M| m.params().iter().map(|p| p.len()).collect::<Vec<_>>();
        let f_opt = Sgd::new(&shapes(&f), cfg.momentum, cfg.weight_decay);
        let f_lrs = alloc::vec![cfg.lr_scratch; f.params().len()];
        let (noc_opt, noc_lrs) = match (&oc, cfg.mode.trains_noc()) {
            (Some(o), true) => (
                Some(Sgd::new(&shapes(o), cfg.momentum, cfg.weight_decay)),
                alloc::vec![cfg.lr_pretrained; o.params().len()],
            ),
            _ => (None, Vec::new()),
        };
        let rng = rng::seeded(cfg.seed);
        Ok(Self {
            cfg,
            sched,
            num_samples,
            f,
            f_opt,
            f_lrs,
            oc,
            noc_opt,
            noc_lrs,
            rng,
            step: 0,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
            pending: None,
            pending_count: 0,
        })
    }

    /// Overrides the base learning rate of each parameter tensor of `f`, e.g.
    /// `lr_pretrained` for a loaded backbone and `lr_scratch` for a new head.
    pub fn set_f_learning_rates(&mut self, lrs: Vec<f64>) -> Result<()> {
        if lrs.len() != self.f_lrs.len() {
            return Err(shape_err!("{} learning rates for {} tensors", lrs.len(), self.f_lrs.len()));
        }
        self.f_lrs = lrs;
        Ok(())
    }

    /// Same as [`Self::set_f_learning_rates`] for `noc`, which starts at
    /// `lr_pretrained` everywhere. Errors when the mode does not train `noc`.
    pub fn set_noc_learning_rates(&mut self, lrs: Vec<f64>) -> Result<()> {
        if !self.cfg.mode.trains_noc() {
            return Err(arg_err!("mode {} has no noc to train", self.cfg.mode));
        }
        if lrs.len() != self.noc_lrs.len() {
            return Err(shape_err!("{} learning rates for {} tensors", lrs.len(), self.noc_lrs.len()));
        }
        self.noc_lrs = lrs;
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &ScheduleSet {
        &self.sched
    }

    pub fn f(&self) -> &M {
        &self.f
    }

    pub fn oc(&self) -> Option<&M> {
        self.oc.as_ref()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn total_steps(&self) -> usize {
        self.sched.total_steps
    }

    pub fn finished(&self) -> bool {
        self.step >= self.sched.total_steps
    }

    /// True when no gradients are waiting for an accumulation boundary.
    pub fn at_boundary(&self) -> bool {
        self.pending_count == 0
    }

    pub fn into_models(self) -> (M, Option<M>) {
        (self.f, self.oc)
    }

    pub fn snapshot(&self) -> Result<TrainerState<T>> {
        if !self.at_boundary() {
            return Err(arg_err!("cannot snapshot between accumulation steps"));
        }
        Ok(TrainerState {
            step: self.step,
            epoch: self.epoch,
            cursor: self.cursor,
            order: self.order.clone(),
            rng: RngState::capture(&self.rng),
            f_params: copy_params(&self.f),
            f_momentum: self.f_opt.buffers.clone(),
            noc_params: self.noc_opt.as_ref().and(self.oc.as_ref()).map(copy_params),
            noc_momentum: self.noc_opt.as_ref().map(|o| o.buffers.clone()),
        })
    }

    pub fn restore(&mut self, st: &TrainerState<T>) -> Result<()> {
        if st.step > self.sched.total_steps || st.cursor > self.num_samples {
            return Err(Error::Corrupt(String::from("checkpoint position is outside this run")));
        }
        if st.cursor > 0 && st.order.len() != self.num_samples {
            return Err(Error::Corrupt(String::from("checkpoint sample order does not match the dataset")));
        }
        if st.f_momentum.len() != self.f_opt.buffers.len() {
            return Err(Error::Corrupt(String::from("momentum layout does not match the model")));
        }
        load_params(&mut self.f, &st.f_params)?;
        self.f_opt.buffers.clone_from(&st.f_momentum);
        match (&mut self.noc_opt, &mut self.oc, &st.noc_params, &st.noc_momentum) {
            (Some(opt), Some(noc), Some(p), Some(m)) => {
                load_params(noc, p)?;
                if m.len() != opt.buffers.len() {
                    return Err(Error::Corrupt(String::from("noc momentum layout does not match")));
                }
                opt.buffers.clone_from(m);
            }
            (None, _, None, None) => {}
            _ => return Err(Error::Corrupt(String::from("checkpoint and run disagree on the presence of noc"))),
        }
        self.step = st.step;
        self.epoch = st.epoch;
        self.cursor = st.cursor;
        self.order.clone_from(&st.order);
        self.rng = st.rng.restore();
        self.pending = None;
        self.pending_count = 0;
        Ok(())
    }

    /// Assembles the next batch in seeded order, augmenting each image.
    fn next_batch(&mut self, samples: &[ImageSample<T>]) -> Result<(Vec<Tensor3<T>>, Vec<Vec<T>>, bool)> {
        if samples.len() != self.num_samples {
            return Err(shape_err!("trainer built for {} samples, got {}", self.num_samples, samples.len()));
        }
        if self.cursor == 0 {
            self.order = (0..self.num_samples).collect();
            rng::shuffle(&mut self.rng, &mut self.order);
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.num_samples);
        let mut xs = Vec::with_capacity(end - self.cursor);
        let mut ys = Vec::with_capacity(end - self.cursor);
        for &i in &self.order[self.cursor..end] {
            let s = &samples[i];
            if !s.labels.iter().any(|v| *v > T::zero()) {
                return Err(arg_err!("sample {} has no positive label", s.id));
            }
            let x = match &self.cfg.augment {
                Some(p) => augment(&s.image, None, p, &mut self.rng, None)?.0,
                None => s.image.clone(),
            };
            xs.push(x);
            ys.push(s.labels.clone());
        }
        let epoch_end = end == self.num_samples;
        self.cursor = if epoch_end { 0 } else { end };
        Ok((xs, ys, epoch_end))
    }

    /// Runs one step on the next batch; `None` once all steps are done.
    pub fn train_step(&mut self, samples: &[ImageSample<T>]) -> Result<Option<StepReport>> {
        if self.finished() {
            return Ok(None);
        }
        let (xs, ys, epoch_end) = self.next_batch(samples)?;
        let mut report = self.pnoc_step(&xs, &ys)?;
        report.epoch_end = epoch_end;
        if epoch_end {
            self.epoch += 1;
        }
        Ok(Some(report))
    }

    /// One generator phase followed, in `p_noc` mode and when the schedule
    /// allows, by one `noc` phase on the same inputs.
    pub fn pnoc_step(&mut self, xs: &[Tensor3<T>], ys: &[Vec<T>]) -> Result<StepReport> {
        let step = self.step;
        let lr_factor = self.sched.value(Schedule::Lr, step)?;
        let fp = self.f_phase(xs, ys)?;
        let (noc_phase, noc, noc_update) = if !self.cfg.mode.trains_noc() {
            (NocPhase::NotApplicable, None, None)
        } else if step % self.sched.k_noc == 0 {
            let (r, u) = self.noc_phase(xs, ys, &fp.maps, &fp.erased)?;
            (NocPhase::Ran, Some(r), Some(u))
        } else {
            (NocPhase::Skipped, None, None)
        };
        self.step += 1;
        Ok(StepReport {
            step,
            epoch: self.epoch,
            lr_factor,
            f: fp.report,
            f_update: fp.update,
            noc_phase,
            noc,
            noc_update,
            epoch_end: false,
        })
    }

    /// Fixes the ordinary classifier and updates `f` only.
    pub fn f_phase(&mut self, xs: &[Tensor3<T>], ys: &[Vec<T>]) -> Result<FPhase<T>> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(shape_err!("{} images with {} label vectors", xs.len(), ys.len()));
        }
        let mode = self.cfg.mode;
        let step = self.step;
        let b = xs.len();
        // Drawn in every mode so all modes consume the stream identically.
        let mut erased = Vec::with_capacity(b);
        for y in ys {
            erased.push(sample_class(y, &mut self.rng)?);
        }
        let weights = PocWeights::at(&self.sched, step)?;
        let opts = PocOptions { smoothing_eps: self.sched.smoothing_eps, re_present_only: self.cfg.re_present_only };

        let mut maps = Vec::with_capacity(b);
        let mut caches = Vec::with_capacity(b);
        for x in xs {
            let (a, c) = self.f.forward_train(x)?;
            maps.push(a);
            caches.push(c);
        }

        let mut tile_caches = Vec::new();
        let mut a_re = Vec::new();
        if mode.uses_puzzle() {
            for x in xs {
                let tiles = tile(x)?;
                let mut outs = Vec::with_capacity(4);
                let mut cs = Vec::with_capacity(4);
                for t in &tiles {
                    let (a, c) = self.f.forward_train(t)?;
                    outs.push(a);
                    cs.push(c);
                }
                let outs: [Tensor3<T>; 4] = outs.try_into().map_err(|_| shape_err!("tiling"))?;
                a_re.push(merge(&outs)?);
                tile_caches.push(cs);
            }
        }

        let skip_cse = weights.lambda_cse == 0.0;
        let mut psis = Vec::new();
        let mut oc_caches = Vec::new();
        let mut a_oc = Vec::new();
        if mode.uses_oc() {
            let oc = self.oc.as_ref().ok_or_else(|| arg_err!("ordinary classifier missing"))?;
            for (i, x) in xs.iter().enumerate() {
                let r = erased[i];
                let raw = Tensor3::from_planes(maps[i].height(), maps[i].width(), &[maps[i].plane(r)])?;
                let psi = normalize_cam(&raw)?;
                let (a, c) = oc.forward_train(&cse_soft_mask(x, &psi)?)?;
                a_oc.push(a);
                oc_caches.push(c);
                psis.push((raw, psi));
            }
        }

        let (report, grads) = if mode == TrainMode::Vanilla {
            let (l, g) = classification_loss(&maps, ys, opts.smoothing_eps)?;
            let mut report = LossReport::default();
            report.push("cls", l.as_f64(), 1.0);
            (report, crate::objectives::PocGrads { a: g, a_re: None, a_oc: None })
        } else {
            let batch = PocBatch {
                a: &maps,
                a_re: mode.uses_puzzle().then_some(&a_re[..]),
                a_oc: mode.uses_oc().then_some(&a_oc[..]),
                labels: ys,
                erased: &erased,
            };
            poc_loss(&batch, weights, opts)?
        };

        let mut fg = self.f.zero_grads();
        let mut g_main = grads.a;
        if let (Some(g_oc), false) = (&grads.a_oc, skip_cse) {
            let oc = self.oc.as_ref().ok_or_else(|| arg_err!("ordinary classifier missing"))?;
            for i in 0..b {
                let g_x = oc
                    .backward(&oc_caches[i], &g_oc[i], None, true)?
                    .ok_or_else(|| shape_err!("classifier returned no input gradient"))?;
                let (raw, psi) = &psis[i];
                let g_psi = cse_soft_mask_backward(&xs[i], psi, &g_x)?;
                let g_raw = normalize_cam_backward(raw, &g_psi)?;
                for (d, s) in g_main[i].plane_mut(erased[i]).iter_mut().zip(g_raw.data()) {
                    *d += *s;
                }
            }
        }
        for i in 0..b {
            self.f.backward(&caches[i], &g_main[i], Some(&mut fg), false)?;
        }
        if let Some(g_re) = &grads.a_re {
            for i in 0..b {
                let pieces = merge_backward(&g_re[i])?;
                for (c, g) in tile_caches[i].iter().zip(pieces.iter()) {
                    self.f.backward(c, g, Some(&mut fg), false)?;
                }
            }
        }

        let update = self.accumulate_and_update(fg, step)?;
        Ok(FPhase { report, update, maps, erased })
    }

    fn accumulate_and_update(&mut self, g: Grads<T>, step: usize) -> Result<UpdateKind> {
        match &mut self.pending {
            Some(acc) => add_grads(acc, &g),
            None => self.pending = Some(g),
        }
        self.pending_count += 1;
        let last = step + 1 == self.sched.total_steps;
        if self.pending_count < self.cfg.accumulation && !last {
            return Ok(UpdateKind::Accumulated);
        }
        let mut g = self.pending.take().unwrap_or_default();
        let n = T::of(self.pending_count as f64);
        self.pending_count = 0;
        if n != T::one() {
            for v in g.iter_mut().flatten() {
                *v /= n;
            }
        }
        let factor = self.sched.value(Schedule::Lr, step)?;
        let lrs: Vec<f64> = self.f_lrs.iter().map(|l| l * factor).collect();
        let mut params = self.f.params_mut();
        Ok(match self.f_opt.step(&mut params, &g, &lrs)? {
            StepOutcome::Applied => UpdateKind::Applied,
            StepOutcome::SkippedNonFinite => UpdateKind::SkippedNonFinite,
        })
    }

    /// Fixes `f` and updates `noc` on inputs whose erased-class region,
    /// taken from `maps` (detached), is zeroed out.
    pub fn noc_phase(
        &mut self,
        xs: &[Tensor3<T>],
        ys: &[Vec<T>],
        maps: &[Tensor3<T>],
        erased: &[usize],
    ) -> Result<(LossReport, UpdateKind)> {
        if xs.len() != maps.len() || xs.len() != erased.len() || xs.len() != ys.len() {
            return Err(shape_err!("noc phase inputs disagree on batch size"));
        }
        let step = self.step;
        let lambda = self.sched.value(Schedule::LambdaNoc, step)?;
        let factor = self.sched.value(Schedule::Lr, step)?;
        let delta = self.sched.delta_noc;
        let eps = self.sched.smoothing_eps;
        let (noc, opt) = match (&mut self.oc, &mut self.noc_opt) {
            (Some(n), Some(o)) => (n, o),
            _ => return Err(arg_err!("mode {} has no trainable noc", self.cfg.mode)),
        };
        let mut outs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for ((x, a), &r) in xs.iter().zip(maps).zip(erased) {
            let raw = Tensor3::from_planes(a.height(), a.width(), &[a.plane(r)])?;
            let psi = normalize_cam(&raw)?;
            let (o, c) = noc.forward_train(&noc_hard_mask(x, &psi, delta)?)?;
            outs.push(o);
            caches.push(c);
        }
        let (report, g) = noc_loss(&outs, ys, lambda, eps)?;
        let mut grads = noc.zero_grads();
        for (c, gi) in caches.iter().zip(&g) {
            noc.backward(c, gi, Some(&mut grads), false)?;
        }
        let lrs: Vec<f64> = self.noc_lrs.iter().map(|l| l * factor).collect();
        let mut params = noc.params_mut();
        let u = match opt.step(&mut params, &grads, &lrs)? {
            StepOutcome::Applied => UpdateKind::Applied,
            StepOutcome::SkippedNonFinite => UpdateKind::SkippedNonFinite,
        };
        Ok((report, u))
    }
}

/// Runs a trainer to completion, calling `on_step` after every step. The
/// callback may stop the run early by returning `false`.
pub fn train<T: Scalar, M: TrainableClassifier<T>>(
    trainer: &mut Trainer<T, M>,
    samples: &[ImageSample<T>],
    mut on_step: impl FnMut(&Trainer<T, M>, &StepReport) -> Result<bool>,
) -> Result<()> {
    while let Some(r) = trainer.train_step(samples)? {
        if !on_step(trainer, &r)? {
            break;
        }
    }
    Ok(())
}
