//! End-to-end acceptance checks on the synthetic dataset.
//!
//! Prints one `PASS`/`FAIL` line per criterion. Criteria listed in
//! `EXPECTED_FAILURES` are reported but do not fail the run; any other
//! failure exits non-zero.

#[path = "../../core/tests/support/gradsuite.rs"]
mod gradsuite;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use pnoc::config::PipelineConfig;
use pnoc::core::augment::{AugmentPolicy, Jitter};
use pnoc::core::c2amh::{backbone_features, emit_saliency, extract_hints, train_c2amh, C2amConfig, HintMask, MlpHead};
use pnoc::core::cam::{merge, tile, ImageSample};
use pnoc::core::eval::{delta_range, group_report, make_prior, threshold_sweep, ConfusionMatrix, GroupSpec};
use pnoc::core::nn::{param_hash, CnnConfig, ToyCnn, TrainableClassifier};
use pnoc::core::objectives::{soft_margin_loss, Schedule, ScheduleSet};
use pnoc::core::refine::{argmax_mask, random_walk, seeds_from_priors, seeds_with_saliency, with_background, AffinityModel, GaussianAffinity};
use pnoc::core::synth::{generate, SyntheticSpec};
use pnoc::core::trainer::{TrainConfig, TrainMode, Trainer};
use pnoc::core::{rng, Tensor3};
use pnoc::stages::Runner;
use pnoc::{cams, evaluate};
use rand::Rng;

const EXPECTED_FAILURES: &[u32] = &[6];

const SEEDS: u64 = 3;
const EPOCHS: usize = 40;
const DELTA_NOC: f64 = 0.5;
const SCALES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
const DELTA_FG: f64 = 0.4;
const DELTA_BG: f64 = 0.1;
const DELTA_SAL: f64 = 0.5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type F = ToyCnn<f32>;

fn train_set(seed: u64) -> Vec<ImageSample<f32>> {
    generate(&SyntheticSpec { n_images: 200, seed: 1000 + seed, ..SyntheticSpec::default() }).unwrap()
}

fn eval_set(seed: u64) -> Vec<ImageSample<f32>> {
    generate(&SyntheticSpec { n_images: 50, seed: 2000 + seed, ..SyntheticSpec::default() }).unwrap()
}

fn train_config(mode: TrainMode, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: EPOCHS,
        batch_size: 16,
        seed,
        mode,
        augment: Some(AugmentPolicy { scale_min: 0.75, scale_max: 1.5, crop: 32, jitter: Jitter::None }),
        ..TrainConfig::default()
    };
    cfg.sched.delta_noc = DELTA_NOC;
    cfg
}

fn fit(mode: TrainMode, seed: u64, oc: Option<F>, data: &[ImageSample<f32>]) -> F {
    let init = ToyCnn::new(&CnnConfig::toy(5), &mut rng::seeded(seed * 10 + 1)).unwrap();
    let mut t = Trainer::new(train_config(mode, seed), init, oc, data.len()).unwrap();
    if mode.trains_noc() {
        let n = t.oc().unwrap().params().len();
        t.set_noc_learning_rates(vec![t.config().lr_scratch; n]).unwrap();
    }
    while t.train_step(data).unwrap().is_some() {}
    t.into_models().0
}

fn priors_of(f: &F, eval: &[ImageSample<f32>]) -> Vec<Tensor3<f32>> {
    eval.iter().map(|s| make_prior(f, s, &SCALES, true).unwrap()).collect()
}

fn best_prior_miou(priors: &[Tensor3<f32>], eval: &[ImageSample<f32>]) -> f64 {
    let deltas = delta_range(0.05, 0.95, 0.05).unwrap();
    let pairs = priors.iter().zip(eval).map(|(p, s)| (p, s.gt_mask.as_deref().unwrap()));
    let curve = threshold_sweep(pairs, 5, &deltas).unwrap();
    evaluate::best(&curve).1
}

struct SeedRun {
    vanilla: f64,
    p_oc: f64,
    p_noc: f64,
    eval: Vec<ImageSample<f32>>,
    model: F,
    priors: Vec<Tensor3<f32>>,
}

fn seed_run(seed: u64) -> SeedRun {
    let train = train_set(seed);
    let eval = eval_set(seed);
    let vanilla = fit(TrainMode::Vanilla, seed, None, &train);
    let p_oc = fit(TrainMode::POc, seed, Some(vanilla.clone()), &train);
    let p_noc = fit(TrainMode::PNoc, seed, Some(vanilla.clone()), &train);
    let score = |m: &F| best_prior_miou(&priors_of(m, &eval), &eval);
    let priors = priors_of(&p_noc, &eval);
    SeedRun { vanilla: score(&vanilla), p_oc: score(&p_oc), p_noc: best_prior_miou(&priors, &eval), eval, model: p_noc, priors }
}

/// The three seeded runs; later criteria reuse the first one.
fn runs() -> &'static Vec<SeedRun> {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| (0..SEEDS).map(seed_run).collect())
}

struct Saliency {
    hinted: Vec<Tensor3<f32>>,
    unhinted: Vec<Tensor3<f32>>,
}

fn saliency() -> &'static Saliency {
    static SAL: OnceLock<Saliency> = OnceLock::new();
    SAL.get_or_init(|| {
        let r = &runs()[0];
        let feats: Vec<Tensor3<f32>> = r.eval.iter().map(|s| backbone_features(&r.model, &s.image).unwrap()).collect();
        let hints: Vec<HintMask> =
            r.priors.iter().zip(&r.eval).map(|(p, s)| extract_hints(p, DELTA_FG, DELTA_BG, &s.id).unwrap()).collect();
        let cfg = C2amConfig { epochs: 20, ..C2amConfig::default() };
        let emit = |head: &MlpHead<f32>| -> Vec<Tensor3<f32>> {
            feats
                .iter()
                .zip(&r.eval)
                .map(|(f, s)| emit_saliency(head, f, s.image.height(), s.image.width()).unwrap())
                .collect()
        };
        let hinted = train_c2amh(&feats, Some(&hints), &cfg, |_, _| {}).unwrap();
        let plain = train_c2amh(&feats, None, &C2amConfig { lambda_h: 0.0, ..cfg }, |_, _| {}).unwrap();
        Saliency { hinted: emit(&hinted), unhinted: emit(&plain) }
    })
}

fn c1_gradients() -> Verdict {
    let t = Instant::now();
    let checks = gradsuite::all();
    let secs = t.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let ok = checks.iter().all(|c| c.instances >= 20 && c.worst < 1e-4) && secs < 120.0;
    let names: Vec<String> = checks.iter().map(|c| format!("{}={:.1e}", c.name, c.worst)).collect();
    verdict(ok, format!("worst rel err {worst:.2e} over {} losses in {secs:.1}s ({})", checks.len(), names.join(", ")))
}

fn c2_identities() -> Verdict {
    let mut r = rng::seeded(21);
    let mut tiles_exact = true;
    for _ in 0..50 {
        let (c, h, w) = (r.random_range(1..5), 2 * r.random_range(1..9), 2 * r.random_range(1..9));
        let x = Tensor3::from_fn(c, h, w, |_, _, _| r.random::<f64>() * 4.0 - 2.0);
        let back = merge(&tile(&x).unwrap()).unwrap();
        tiles_exact &= back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let ln2 = std::f64::consts::LN_2;
    let mut sm_err: f64 = 0.0;
    for targets in [vec![1.0, 0.0, 1.0], vec![0.0; 5], vec![1.0; 4]] {
        for eps in [0.0, 0.1] {
            let l = soft_margin_loss(&vec![0.0f64; targets.len()], &targets, eps).unwrap();
            sm_err = sm_err.max((l - ln2).abs());
        }
    }
    let s = ScheduleSet { total_steps: 1000, ..ScheduleSet::default() };
    let v = |k: Schedule, step: usize| s.value(k, step).unwrap();
    let sched_exact = v(Schedule::LambdaRe, 0) == 0.0
        && v(Schedule::LambdaRe, 500) == 4.0
        && v(Schedule::LambdaCse, 0) == 0.3
        && v(Schedule::LambdaCse, 1000) == 1.0
        && v(Schedule::LambdaNoc, 0) == 0.0
        && v(Schedule::LambdaNoc, 1000) == 1.0;
    verdict(
        tiles_exact && sm_err <= 1e-9 && sched_exact,
        format!("merge(tile) bit-exact: {tiles_exact}; |soft_margin(0) - ln 2| = {sm_err:.1e}; schedule endpoints exact: {sched_exact}"),
    )
}

fn c3_isolation() -> Verdict {
    let data: Vec<ImageSample<f64>> =
        generate(&SyntheticSpec { n_images: 4, size: 16, core_size: 2, seed: 77, ..SyntheticSpec::default() }).unwrap();
    let arch = CnnConfig { in_channels: 3, widths: vec![6, 8], strides: vec![1, 2], num_classes: 5 };
    let cnn = |seed| ToyCnn::<f64>::new(&arch, &mut rng::seeded(seed)).unwrap();
    let mut cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 3, mode: TrainMode::PNoc, ..TrainConfig::default() };
    cfg.sched.k_noc = 1;
    let mut t = Trainer::new(cfg, cnn(1), Some(cnn(2)), data.len()).unwrap();
    t.train_step(&data).unwrap();
    let xs: Vec<_> = data.iter().map(|s| s.image.clone()).collect();
    let ys: Vec<_> = data.iter().map(|s| s.labels.clone()).collect();
    let hashes = |t: &Trainer<f64, ToyCnn<f64>>| (param_hash(t.f()), param_hash(t.oc().unwrap()));
    let (f0, n0) = hashes(&t);
    let fp = t.f_phase(&xs, &ys).unwrap();
    let (f1, n1) = hashes(&t);
    t.noc_phase(&xs, &ys, &fp.maps, &fp.erased).unwrap();
    let (f2, n2) = hashes(&t);
    let probe = gradsuite::hard_mask_probe();
    let ok = f0 != f1 && n0 == n1 && f1 == f2 && n1 != n2 && probe < 1e-10;
    verdict(
        ok,
        format!(
            "f phase leaves noc: {}, noc phase leaves f: {}, both phases update their own model: {}, hard-mask probe {probe:.1e}",
            n0 == n1,
            f1 == f2,
            f0 != f1 && n1 != n2
        ),
    )
}

fn c4_ordering() -> Verdict {
    let rs = runs();
    let n = rs.len() as f64;
    let mean = |g: fn(&SeedRun) -> f64| rs.iter().map(g).sum::<f64>() / n;
    let (v, oc, noc) = (mean(|r| r.vanilla), mean(|r| r.p_oc), mean(|r| r.p_noc));
    let per: Vec<String> = rs.iter().map(|r| format!("{:.2}/{:.2}/{:.2}", r.vanilla, r.p_oc, r.p_noc)).collect();
    verdict(
        noc >= oc && oc >= v && noc - v >= 2.0,
        format!("mean prior mIoU vanilla {v:.2}, p_oc {oc:.2}, p_noc {noc:.2} (gap {:.2}); per seed {}", noc - v, per.join(", ")),
    )
}

/// `mean(P | fg) - mean(P | bg)` per image, ignoring 255.
fn fg_bg_gaps(sal: &[Tensor3<f32>], eval: &[ImageSample<f32>]) -> Vec<f64> {
    sal.iter()
        .zip(eval)
        .map(|(p, s)| {
            let (mut f, mut nf, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
            for (&v, &g) in p.data().iter().zip(s.gt_mask.as_ref().unwrap()) {
                match g {
                    255 => {}
                    0 => {
                        b += v as f64;
                        nb += 1;
                    }
                    _ => {
                        f += v as f64;
                        nf += 1;
                    }
                }
            }
            f / nf.max(1) as f64 - b / nb.max(1) as f64
        })
        .collect()
}

fn c5_anchoring() -> Verdict {
    let eval = &runs()[0].eval;
    let sal = saliency();
    let frac = |gaps: &[f64], pred: fn(f64) -> bool| gaps.iter().filter(|g| pred(**g)).count() as f64 / gaps.len() as f64;
    let hinted = fg_bg_gaps(&sal.hinted, eval);
    let plain = fg_bg_gaps(&sal.unhinted, eval);
    let h_anchored = frac(&hinted, |g| g > 0.0);
    let p_anchored = frac(&plain, |g| g > 0.0);
    let p_either = frac(&plain, |g| g.abs() > 0.0);
    verdict(
        h_anchored >= 0.9 && p_either >= 0.9 && p_anchored < 0.9,
        format!(
            "hinted fg>bg on {:.0}% of images; unhinted fg>bg on {:.0}%, |fg-bg|>0 on {:.0}%",
            100.0 * h_anchored,
            100.0 * p_anchored,
            100.0 * p_either
        ),
    )
}

fn c6_dead_pixels() -> Verdict {
    let r = &runs()[0];
    let sal = saliency();
    let mut better = 0usize;
    let (mut us, mut up) = (0.0, 0.0);
    for (p, s) in r.priors.iter().zip(&sal.hinted) {
        let guided = seeds_with_saliency(p, s.data(), DELTA_FG, DELTA_SAL).unwrap().unknown_fraction();
        let plain = seeds_from_priors(p, DELTA_BG, DELTA_FG).unwrap().unknown_fraction();
        better += usize::from(guided < plain);
        us += guided;
        up += plain;
    }
    let n = r.priors.len();
    verdict(
        better as f64 >= 0.8 * n as f64,
        format!(
            "saliency-guided seeds have fewer unknown pixels on {better}/{n} images; mean unknown {:.3} vs {:.3} priors-only",
            us / n as f64,
            up / n as f64
        ),
    )
}

fn c7_refinement() -> Verdict {
    let r = &runs()[0];
    let model = GaussianAffinity::default();
    let mut conf = ConfusionMatrix::new(5);
    for (p, s) in r.priors.iter().zip(&r.eval) {
        let seeds = seeds_from_priors(p, DELTA_BG, DELTA_FG).unwrap();
        let g = model.affinity(&s.image, Some(&seeds)).unwrap();
        let probs = random_walk(&with_background(p), &g, 8.0, 256).unwrap();
        conf.accumulate(&argmax_mask(&probs), s.gt_mask.as_ref().unwrap()).unwrap();
    }
    let refined = conf.miou().unwrap().mean;
    verdict(refined >= r.p_noc, format!("refined mIoU {refined:.2} vs prior {:.2} (gain {:+.2})", r.p_noc, refined - r.p_noc))
}

/// Per-class IoU columns of the reference table (RA, P, P^f, P-OC,
/// P-OC+LS, P-NOC+LS), with each class's size and co-occurrence group.
const TABLE: [(&str, &str, &str, [f64; 6]); 20] = [
    ("a.plane", "singleton", "mid", [47.5, 60.9, 61.4, 62.1, 62.3, 59.8]),
    ("bicycle", "traffic", "small", [32.2, 41.2, 38.6, 44.6, 45.0, 39.9]),
    ("bird", "singleton", "mid", [49.5, 69.7, 71.4, 63.6, 62.8, 68.6]),
    ("boat", "p-rel", "small", [40.8, 45.2, 51.3, 50.9, 43.9, 48.5]),
    ("bottle", "bottle", "small", [49.0, 56.9, 56.0, 59.2, 65.9, 65.9]),
    ("bus", "traffic", "large", [72.1, 79.6, 78.4, 78.8, 75.1, 79.9]),
    ("car", "traffic", "mid", [62.6, 74.2, 70.4, 72.5, 74.6, 75.9]),
    ("cat", "singleton", "large", [54.8, 82.6, 83.7, 80.8, 79.8, 83.1]),
    ("chair", "room", "small", [30.7, 28.9, 27.2, 21.6, 23.1, 27.0]),
    ("cow", "p-rel", "mid", [55.1, 71.5, 73.6, 70.1, 70.6, 71.6]),
    ("table", "room", "large", [52.5, 49.6, 39.2, 44.4, 51.0, 50.9]),
    ("dog", "p-rel", "large", [61.3, 78.8, 80.8, 80.9, 76.9, 77.9]),
    ("horse", "p-rel", "large", [55.9, 67.7, 69.0, 69.6, 69.8, 70.1]),
    ("m.bike", "traffic", "large", [67.8, 74.4, 73.2, 78.2, 76.6, 73.7]),
    ("person", "person", "mid", [63.6, 57.0, 50.3, 67.1, 70.2, 54.4]),
    ("p.plant", "room", "small", [46.8, 57.8, 56.3, 45.1, 57.2, 57.2]),
    ("sheep", "p-rel", "large", [55.3, 75.0, 75.9, 78.2, 73.9, 72.2]),
    ("sofa", "room", "large", [50.0, 40.9, 35.5, 40.1, 34.8, 44.4]),
    ("train", "p-rel", "large", [63.9, 68.9, 68.2, 63.4, 50.9, 68.1]),
    ("tv", "room", "mid", [38.6, 36.5, 33.8, 43.6, 49.8, 42.0]),
];

/// Printed group means of the same table, same column order.
const GROUP_MEANS: [(&str, [f64; 6]); 7] = [
    ("small", [39.9, 46.0, 45.9, 44.3, 47.0, 47.7]),
    ("mid", [52.8, 61.6, 60.1, 63.2, 65.1, 62.0]),
    ("large", [59.3, 68.6, 67.1, 68.3, 65.4, 68.9]),
    ("singleton", [50.6, 71.1, 72.2, 68.8, 68.3, 70.5]),
    ("p-rel", [55.4, 67.8, 69.8, 68.8, 64.3, 68.1]),
    ("room", [43.7, 42.7, 38.4, 38.9, 43.2, 44.3]),
    ("traffic", [58.7, 67.3, 65.1, 68.5, 67.8, 67.4]),
];

fn c8_group_report() -> Verdict {
    let spec = GroupSpec {
        groups: GROUP_MEANS
            .iter()
            .map(|(g, _)| {
                let members = TABLE.iter().enumerate().filter(|(_, r)| r.1 == *g || r.2 == *g).map(|(i, _)| i).collect();
                (g.to_string(), members)
            })
            .collect(),
    };
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    for col in 0..6 {
        let per_class: Vec<Option<f64>> = TABLE.iter().map(|r| Some(r.3[col])).collect();
        let rows = group_report(&per_class, &spec).unwrap();
        for (row, (name, printed)) in rows.iter().zip(&GROUP_MEANS) {
            let d = (row.mean.unwrap() - printed[col]).abs();
            if d > worst {
                worst = d;
                where_ = format!("{name} col {col}");
            }
        }
    }
    verdict(worst <= 0.1 + 1e-9, format!("42 group means, worst deviation {worst:.3} ({where_})"))
}

fn c9_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = "[synthetic]\nn_train = 32\nn_eval = 8\n\n[train]\nepochs = 2\n\n[c2amh]\nepochs = 3\n\n[refine]\nsteps = 32\n";
    let outputs: Vec<BTreeMap<String, Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|run| {
            let mut cfg = PipelineConfig::from_toml(cfg_text).unwrap();
            cfg.pipeline.out = dir.path().join(run);
            Runner::new(cfg.clone(), false).run_configured().unwrap();
            let out = &cfg.pipeline.out;
            let mut files = BTreeMap::new();
            for rel in ["train/vanilla/metrics.log", "train/p_noc/metrics.log", "c2amh/metrics.log"] {
                files.insert(rel.to_string(), fs::read(out.join(rel)).unwrap());
            }
            for (id, p) in evaluate::list(&out.join("masks"), "png").unwrap() {
                files.insert(format!("masks/{id}"), fs::read(p).unwrap());
            }
            files
        })
        .collect();
    let same = outputs[0] == outputs[1];
    let masks = outputs[0].keys().filter(|k| k.starts_with("masks/")).count();
    verdict(same && masks == 8, format!("3 metrics logs and {masks} masks byte-identical across runs: {same}"))
}

/// Per-pixel recomputation of one threshold's mIoU, without the library's
/// thresholding or confusion code.
fn oracle_miou(priors: &[Tensor3<f32>], gts: &[Vec<u8>], delta: f64) -> (f64, usize) {
    let k = priors[0].channels() + 1;
    let (mut tp, mut gt_n, mut pr_n) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    let mut bg_pred = 0;
    for (p, g) in priors.iter().zip(gts) {
        for i in 0..p.plane_len() {
            if g[i] == 255 {
                continue;
            }
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..p.channels() {
                let v = p.plane(c)[i] as f64;
                if v > best.1 {
                    best = (c, v);
                }
            }
            let pred = if best.1 < delta { 0 } else { best.0 + 1 };
            bg_pred += usize::from(pred == 0);
            gt_n[g[i] as usize] += 1;
            pr_n[pred] += 1;
            if pred == g[i] as usize {
                tp[pred] += 1;
            }
        }
    }
    let ious: Vec<f64> = (0..k)
        .filter(|&c| gt_n[c] + pr_n[c] > 0)
        .map(|c| 100.0 * tp[c] as f64 / (gt_n[c] + pr_n[c] - tp[c]) as f64)
        .collect();
    (ious.iter().sum::<f64>() / ious.len() as f64, bg_pred)
}

fn c10_sweep() -> Verdict {
    let r = &runs()[0];
    let dir = tempfile::tempdir().unwrap();
    let (pdir, gdir) = (dir.path().join("priors"), dir.path().join("gt"));
    fs::create_dir_all(&pdir).unwrap();
    fs::create_dir_all(&gdir).unwrap();
    let mut gts = Vec::new();
    for (p, s) in r.priors.iter().zip(&r.eval) {
        cams::write(&pdir.join(format!("{}.cams", s.id)), p).unwrap();
        let m = s.gt_mask.clone().unwrap();
        pnoc::imageio::write_mask(&gdir.join(format!("{}.png", s.id)), p.height(), p.width(), &m).unwrap();
        gts.push(m);
    }
    let priors = evaluate::read_priors(&pdir).unwrap();
    let gt = evaluate::read_masks(&gdir).unwrap();
    let max_v = r.priors.iter().flat_map(|p| p.data()).fold(0.0f32, |a, &b| a.max(b)) as f64;
    let min_peak = r
        .priors
        .iter()
        .flat_map(|p| (0..p.plane_len()).map(move |i| (0..p.channels()).map(|c| p.plane(c)[i]).fold(0.0f32, f32::max)))
        .filter(|v| *v > 0.0)
        .fold(f32::INFINITY, f32::min) as f64;
    let lo = min_peak / 2.0;
    let hi = (max_v + 1.0) / 2.0;
    let mut deltas = delta_range(0.05, 0.95, 0.05).unwrap();
    deltas.insert(0, lo);
    deltas.push(hi);
    let curve = evaluate::sweep(&priors, &gt, &deltas, &gdir).unwrap();
    let csv = dir.path().join("sweep.csv");
    evaluate::write_sweep_csv(&csv, &curve).unwrap();
    let emitted = evaluate::read_sweep_csv(&csv).unwrap();
    let ordered_priors: Vec<Tensor3<f32>> = priors.values().cloned().collect();
    let ordered_gt: Vec<Vec<u8>> = gt.values().map(|m| m.2.clone()).collect();

    let mut spot_ok = true;
    let mut spots = Vec::new();
    for &d in &[0.15, 0.45, 0.8] {
        let i = emitted.iter().position(|(x, _)| (x - d).abs() < 1e-9).unwrap();
        let (o, _) = oracle_miou(&ordered_priors, &ordered_gt, emitted[i].0);
        let lib = evaluate::prior_confusion(&priors, &gt, emitted[i].0, &gdir).unwrap().miou().unwrap().mean;
        spot_ok &= emitted[i].1.to_bits() == lib.to_bits() && format!("{:.2}", emitted[i].1) == format!("{o:.2}");
        spots.push(format!("{d}: {:.2}", emitted[i].1));
    }

    // Above every prior value nothing is foreground: only the background
    // IoU can be non-zero, and it equals the background share of the
    // labelled pixels.
    let labelled: Vec<u8> = ordered_gt.iter().flatten().copied().filter(|&g| g != 255).collect();
    let bg_share = 100.0 * labelled.iter().filter(|&&g| g == 0).count() as f64 / labelled.len() as f64;
    let present = (0..=5u8).filter(|c| labelled.contains(c)).count() as f64;
    let all_bg = bg_share / present;
    let hi_ok = (emitted.last().unwrap().1 - all_bg).abs() < 1e-9;
    // Below every positive peak only zero-evidence pixels stay background.
    let zero_evidence: usize = ordered_priors
        .iter()
        .zip(&ordered_gt)
        .map(|(p, g)| (0..p.plane_len()).filter(|&i| g[i] != 255 && (0..p.channels()).all(|c| p.plane(c)[i] <= 0.0)).count())
        .sum();
    let (lo_oracle, lo_bg) = oracle_miou(&ordered_priors, &ordered_gt, lo);
    let lo_ok = lo_bg == zero_evidence && format!("{:.2}", emitted[0].1) == format!("{lo_oracle:.2}");
    verdict(
        spot_ok && hi_ok && lo_ok && emitted.len() == deltas.len(),
        format!(
            "spot checks {} match the independent pass: {spot_ok}; δ={hi:.4} gives the all-background score {all_bg:.2}: {hi_ok}; δ={lo:.2e} leaves {lo_bg} background pixels (zero evidence {zero_evidence}): {lo_ok}",
            spots.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "gradient suite", c1_gradients),
        (2, "algebraic identities", c2_identities),
        (3, "alternating-update isolation", c3_isolation),
        (4, "method ordering", c4_ordering),
        (5, "saliency anchoring", c5_anchoring),
        (6, "dead-pixel reduction", c6_dead_pixels),
        (7, "refinement gain", c7_refinement),
        (8, "group report fidelity", c8_group_report),
        (9, "determinism", c9_determinism),
        (10, "threshold sweep", c10_sweep),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut out = std::io::stdout().lock();
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        let expected = EXPECTED_FAILURES.contains(&id);
        let tag = match (v.pass, expected) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        unexpected += usize::from(!v.pass && !expected);
        writeln!(out, "criterion {id:>2} {name:<30} {tag}: {} [{:.0}s]", v.detail, t.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
    }
    if unexpected > 0 {
        writeln!(out, "{unexpected} criteria failed").unwrap();
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
