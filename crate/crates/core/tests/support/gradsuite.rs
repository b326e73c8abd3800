//! Central finite-difference checks of every loss, shared by the core tests
//! and the acceptance target.

use pnoc_core::c2amh::{c2am_loss, c2am_loss_grad_weighted, c2amh_objective, rank_weights, HintMask, SimilarityTriple};
use pnoc_core::cam::{normalize_cam, ClassifierModel};
use pnoc_core::nn::{CnnConfig, ToyCnn, TrainableClassifier};
use pnoc_core::objectives::{noc_hard_mask, noc_loss, poc_loss, soft_margin_loss_grad, PocBatch, PocOptions, PocWeights};
use pnoc_core::Tensor3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const INSTANCES: usize = 24;

/// Worst relative error over the instances of one loss.
#[derive(Debug, Clone, Copy)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

/// `|n - a| / max(|n|, |a|)` on the whole gradient vector.
pub fn rel_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = numeric.iter().zip(analytic).map(|(n, a)| n - a).collect();
    let scale = norm(numeric).max(norm(analytic));
    if scale < 1e-300 {
        return 0.0;
    }
    norm(&diff) / scale
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    pnoc_core::rng::seeded(seed)
}

fn normals(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| (r.random::<f64>() * 2.0 - 1.0) * scale).collect()
}

fn labels(r: &mut ChaCha8Rng, b: usize, c: usize) -> Vec<Vec<f64>> {
    (0..b)
        .map(|_| {
            let mut y: Vec<f64> = (0..c).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
            if !y.contains(&1.0) {
                y[r.random_range(0..c)] = 1.0;
            }
            y
        })
        .collect()
}

fn maps(flat: &[f64], b: usize, c: usize, h: usize, w: usize) -> Vec<Tensor3<f64>> {
    flat.chunks_exact(c * h * w).take(b).map(|d| Tensor3::from_vec(c, h, w, d.to_vec()).unwrap()).collect()
}

fn flatten(ts: &[Tensor3<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn run(name: &'static str, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> f64) -> CheckOutcome {
    let mut r = rng(seed);
    let worst = (0..INSTANCES).map(|_| one(&mut r)).fold(0.0, f64::max);
    CheckOutcome { name, instances: INSTANCES, worst }
}

pub fn soft_margin() -> CheckOutcome {
    run("soft_margin", 11, |r| {
        let n = r.random_range(2..12);
        let z = normals(r, n, 4.0);
        let y: Vec<f64> = (0..n).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let eps = if r.random::<bool>() { 0.0 } else { 0.1 };
        let (_, g) = soft_margin_loss_grad(&z, &y, eps).unwrap();
        let num = numeric_grad(&z, |zz| soft_margin_loss_grad(zz, &y, eps).unwrap().0);
        rel_error(&num, &g)
    })
}

struct PocCase {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    y: Vec<Vec<f64>>,
    erased: Vec<usize>,
    weights: PocWeights,
    opts: PocOptions,
}

impl PocCase {
    fn random(r: &mut ChaCha8Rng) -> Self {
        let (b, c) = (r.random_range(1..4), r.random_range(2..5));
        let (h, w) = (r.random_range(2..5), r.random_range(2..5));
        let y = labels(r, b, c);
        let erased = y
            .iter()
            .map(|yi| {
                let pos: Vec<usize> = (0..c).filter(|&k| yi[k] > 0.0).collect();
                pos[r.random_range(0..pos.len())]
            })
            .collect();
        let weights = PocWeights { lambda_re: r.random_range(0.5..4.0), lambda_cse: r.random_range(0.3..1.0) };
        let opts = PocOptions { smoothing_eps: 0.1 * r.random_range(0..2) as f64, re_present_only: r.random::<bool>() };
        Self { b, c, h, w, y, erased, weights, opts }
    }

    fn len(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    fn total(&self, a: &[f64], a_re: &[f64], a_oc: Option<&[f64]>) -> f64 {
        let (am, rm) = (maps(a, self.b, self.c, self.h, self.w), maps(a_re, self.b, self.c, self.h, self.w));
        let om = a_oc.map(|o| maps(o, self.b, self.c, self.h, self.w));
        let batch = PocBatch { a: &am, a_re: Some(&rm), a_oc: om.as_deref(), labels: &self.y, erased: &self.erased };
        poc_loss(&batch, self.weights, self.opts).unwrap().0.total
    }
}

/// Only the L1 term between the main and reconstructed maps; both sides.
pub fn reconstruction_l1() -> CheckOutcome {
    run("reconstruction_l1", 12, |r| {
        let case = PocCase::random(r);
        let n = case.len();
        let a = normals(r, n, 2.0);
        let a_re = normals(r, n, 2.0);
        let l1 = |a: &[f64], re: &[f64]| {
            let (am, rm) = (maps(a, case.b, case.c, case.h, case.w), maps(re, case.b, case.c, case.h, case.w));
            let batch = PocBatch { a: &am, a_re: Some(&rm), a_oc: None, labels: &case.y, erased: &case.erased };
            let (rep, g) = poc_loss(&batch, case.weights, case.opts).unwrap();
            (rep.get("re").unwrap() * case.weights.lambda_re, g)
        };
        // Subtract the classification parts so only the reconstruction term remains.
        let cls_only = |a: &[f64], re: &[f64]| {
            let (am, rm) = (maps(a, case.b, case.c, case.h, case.w), maps(re, case.b, case.c, case.h, case.w));
            let batch = PocBatch { a: &am, a_re: Some(&rm), a_oc: None, labels: &case.y, erased: &case.erased };
            let w0 = PocWeights { lambda_re: 0.0, ..case.weights };
            poc_loss(&batch, w0, case.opts).unwrap().1
        };
        let (_, g) = l1(&a, &a_re);
        let g0 = cls_only(&a, &a_re);
        let sub = |x: Vec<f64>, y: Vec<f64>| x.iter().zip(&y).map(|(p, q)| p - q).collect::<Vec<f64>>();
        let ga = sub(flatten(&g.a), flatten(&g0.a));
        let gr = sub(flatten(g.a_re.as_ref().unwrap()), flatten(g0.a_re.as_ref().unwrap()));
        let na = numeric_grad(&a, |x| l1(x, &a_re).0);
        let nr = numeric_grad(&a_re, |x| l1(&a, x).0);
        rel_error(&na, &ga).max(rel_error(&nr, &gr))
    })
}

/// Full generator objective with all three map sets.
pub fn poc() -> CheckOutcome {
    run("poc_loss", 13, |r| {
        let case = PocCase::random(r);
        let n = case.len();
        let a = normals(r, n, 2.0);
        let a_re = normals(r, n, 2.0);
        let a_oc = normals(r, n, 2.0);
        let (am, rm, om) = (
            maps(&a, case.b, case.c, case.h, case.w),
            maps(&a_re, case.b, case.c, case.h, case.w),
            maps(&a_oc, case.b, case.c, case.h, case.w),
        );
        let batch = PocBatch { a: &am, a_re: Some(&rm), a_oc: Some(&om), labels: &case.y, erased: &case.erased };
        let (_, g) = poc_loss(&batch, case.weights, case.opts).unwrap();
        let na = numeric_grad(&a, |x| case.total(x, &a_re, Some(&a_oc)));
        let nr = numeric_grad(&a_re, |x| case.total(&a, x, Some(&a_oc)));
        let no = numeric_grad(&a_oc, |x| case.total(&a, &a_re, Some(x)));
        rel_error(&na, &flatten(&g.a))
            .max(rel_error(&nr, &flatten(g.a_re.as_ref().unwrap())))
            .max(rel_error(&no, &flatten(g.a_oc.as_ref().unwrap())))
    })
}

pub fn noc() -> CheckOutcome {
    run("noc_loss", 14, |r| {
        let (b, c) = (r.random_range(1..4), r.random_range(2..5));
        let (h, w) = (r.random_range(2..5), r.random_range(2..5));
        let y = labels(r, b, c);
        let lam = r.random_range(0.1..1.0);
        let eps = 0.1 * r.random_range(0..2) as f64;
        let x = normals(r, b * c * h * w, 2.0);
        let (_, g) = noc_loss(&maps(&x, b, c, h, w), &y, lam, eps).unwrap();
        let num = numeric_grad(&x, |v| noc_loss(&maps(v, b, c, h, w), &y, lam, eps).unwrap().0.total);
        rel_error(&num, &flatten(&g))
    })
}

/// Contrastive loss on pooled features (n = 4, K = 8), rank weights fixed.
pub fn c2am() -> CheckOutcome {
    run("c2am_loss", 15, |r| {
        let (n, k) = (4, 8);
        let vf: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| r.random::<f64>()).collect()).collect();
        let vb: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| r.random::<f64>()).collect()).collect();
        let alpha = r.random::<f64>();
        let trip = SimilarityTriple::from_features(&vf, &vb).unwrap();
        let w_f = rank_weights(&trip.s_f, n, alpha).unwrap();
        let w_b = rank_weights(&trip.s_b, n, alpha).unwrap();
        let (_, gf, gb) = c2am_loss_grad_weighted(&vf, &vb, &w_f, &w_b).unwrap();
        let split = |flat: &[f64]| -> Vec<Vec<f64>> { flat.chunks(k).map(|c| c.to_vec()).collect() };
        let loss = |f: &[Vec<f64>], b: &[Vec<f64>]| {
            c2am_loss(&SimilarityTriple::from_features(f, b).unwrap(), &w_f, &w_b).unwrap()
        };
        let ff: Vec<f64> = vf.concat();
        let bb: Vec<f64> = vb.concat();
        let nf = numeric_grad(&ff, |x| loss(&split(x), &vb));
        let nb = numeric_grad(&bb, |x| loss(&vf, &split(x)));
        rel_error(&nf, &gf.concat()).max(rel_error(&nb, &gb.concat()))
    })
}

/// Hinted objective with respect to the head's logits.
pub fn c2amh() -> CheckOutcome {
    run("c2amh_loss", 16, |r| {
        let n = r.random_range(2..5);
        let (k, h, w) = (8, 3, 4);
        let feats: Vec<Tensor3<f64>> =
            (0..n).map(|_| Tensor3::from_vec(k, h, w, (0..k * h * w).map(|_| r.random::<f64>()).collect()).unwrap()).collect();
        let hints: Vec<HintMask> = (0..n)
            .map(|i| {
                let fg: Vec<bool> = (0..h * w).map(|_| r.random_range(0..3) == 0).collect();
                let bg = fg.iter().map(|f| !f && r.random::<bool>()).collect();
                HintMask { height: h, width: w, fg, bg, source_prior_id: format!("img{i}") }
            })
            .collect();
        let alpha = r.random::<f64>();
        let lambda_h = r.random_range(0.05..1.0);
        let z = normals(r, n * h * w, 3.0);
        let fr: Vec<&Tensor3<f64>> = feats.iter().collect();
        let hr: Vec<&HintMask> = hints.iter().collect();
        let total = |zz: &[f64]| {
            let logits: Vec<Vec<f64>> = zz.chunks(h * w).map(|c| c.to_vec()).collect();
            c2amh_objective(&fr, &logits, Some(&hr), alpha, lambda_h).unwrap()
        };
        let (_, dz) = total(&z);
        let num = numeric_grad(&z, |zz| total(zz).0.total);
        rel_error(&num, &dz.concat())
    })
}

pub fn all() -> Vec<CheckOutcome> {
    vec![soft_margin(), reconstruction_l1(), poc(), noc(), c2am(), c2amh()]
}

/// Largest finite-difference derivative of the `noc` loss with respect to
/// any parameter of the generator, through the hard mask.
pub fn hard_mask_probe() -> f64 {
    let cfg = CnnConfig { in_channels: 3, widths: vec![4, 4], strides: vec![1, 2], num_classes: 3 };
    let mut r = rng(17);
    let f: ToyCnn<f64> = ToyCnn::new(&cfg, &mut r).unwrap();
    let noc: ToyCnn<f64> = ToyCnn::new(&cfg, &mut r).unwrap();
    let x = Tensor3::from_fn(3, 8, 8, |c, y, xx| ((c * 13 + y * 5 + xx * 3) as f64 * 0.37).sin() * 0.5 + 0.5);
    let y = vec![vec![1.0, 0.0, 1.0]];
    let erased = 0;
    let loss = |f: &ToyCnn<f64>| {
        let a = f.forward(&x).unwrap();
        let raw = Tensor3::from_planes(a.height(), a.width(), &[a.plane(erased)]).unwrap();
        let psi = normalize_cam(&raw).unwrap();
        let masked = noc_hard_mask(&x, &psi, 0.5).unwrap();
        noc_loss(&[noc.forward(&masked).unwrap()], &y, 1.0, 0.0).unwrap().0.total
    };
    let mut probe = f.clone();
    let mut worst = 0.0f64;
    let sizes: Vec<usize> = f.params().iter().map(|p| p.len()).collect();
    for (pi, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let base = f.params()[pi][i];
            probe.params_mut()[pi][i] = base + STEP;
            let up = loss(&probe);
            probe.params_mut()[pi][i] = base - STEP;
            let down = loss(&probe);
            probe.params_mut()[pi][i] = base;
            worst = worst.max(((up - down) / (2.0 * STEP)).abs());
        }
    }
    worst
}
