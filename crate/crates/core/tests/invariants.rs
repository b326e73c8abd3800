use pnoc_core::cam::{gap_posterior, merge, normalize_cam, tile, tta_prior};
use pnoc_core::eval::ConfusionMatrix;
use pnoc_core::nn::{CnnConfig, ToyCnn};
use pnoc_core::objectives::soft_margin_loss;
use pnoc_core::refine::{build_affinity, random_walk, seeds_from_priors, seeds_with_saliency};
use pnoc_core::Tensor3;
use proptest::prelude::*;
use proptest::sample::subsequence;

const NORMALIZE_EPS: f64 = 1e-5;

fn tensor(c: usize, h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor3<f64>> {
    prop::collection::vec(lo..hi, c * h * w).prop_map(move |d| Tensor3::from_vec(c, h, w, d).unwrap())
}

fn even_tensor() -> impl Strategy<Value = Tensor3<f64>> {
    (1usize..4, 1usize..7, 1usize..7).prop_flat_map(|(c, h, w)| tensor(c, 2 * h, 2 * w, -5.0, 5.0))
}

fn permute_pixels(t: &Tensor3<f64>, perm: &[usize]) -> Tensor3<f64> {
    let n = t.plane_len();
    Tensor3::from_fn(t.channels(), t.height(), t.width(), |c, y, x| t.data()[c * n + perm[y * t.width() + x]])
}

fn pixel_perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_inverts_tile(x in even_tensor()) {
        let back = merge(&tile(&x).unwrap()).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    // Idempotent up to the stabilizing epsilon in the denominator.
    #[test]
    fn normalize_is_idempotent(x in (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| tensor(c, h, w, -2.0, 2.0))) {
        let once = normalize_cam(&x).unwrap();
        let twice = normalize_cam(&once).unwrap();
        for c in 0..x.channels() {
            let m = x.plane(c).iter().cloned().fold(0.0, f64::max);
            let bound = if m > 0.0 { 2.0 * NORMALIZE_EPS * (1.0 + 1.0 / m) } else { 0.0 };
            for (a, b) in once.plane(c).iter().zip(twice.plane(c)) {
                prop_assert!((a - b).abs() <= bound, "class {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gap_posterior_ignores_pixel_order(
        (x, perm) in (1usize..4, 1usize..6, 1usize..6)
            .prop_flat_map(|(c, h, w)| (tensor(c, h, w, -3.0, 3.0), pixel_perm(h * w)))
    ) {
        let a = gap_posterior(&x).unwrap().probs;
        let b = gap_posterior(&permute_pixels(&x, &perm)).unwrap().probs;
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_margin_is_midpoint_convex(
        (z1, z2, y) in (1usize..10).prop_flat_map(|n| (
            prop::collection::vec(-8.0..8.0f64, n),
            prop::collection::vec(-8.0..8.0f64, n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n),
        )),
        eps in prop_oneof![Just(0.0), Just(0.1)],
    ) {
        let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| (a + b) / 2.0).collect();
        let lm = soft_margin_loss(&mid, &y, eps).unwrap();
        let l1 = soft_margin_loss(&z1, &y, eps).unwrap();
        let l2 = soft_margin_loss(&z2, &y, eps).unwrap();
        prop_assert!(lm <= (l1 + l2) / 2.0 + 1e-9);
    }

    #[test]
    fn seeds_commute_with_pixel_permutations(
        (prior, sal, perm) in (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| (
            tensor(c, h, w, 0.0, 1.0),
            prop::collection::vec(0.0..1.0f64, h * w),
            pixel_perm(h * w),
        )),
    ) {
        let permuted = permute_pixels(&prior, &perm);
        let a = seeds_from_priors(&prior, 0.1, 0.4).unwrap();
        let b = seeds_from_priors(&permuted, 0.1, 0.4).unwrap();
        let sal_p: Vec<f64> = perm.iter().map(|&i| sal[i]).collect();
        let c = seeds_with_saliency(&prior, &sal, 0.4, 0.5).unwrap();
        let d = seeds_with_saliency(&permuted, &sal_p, 0.4, 0.5).unwrap();
        for (k, &src) in perm.iter().enumerate() {
            prop_assert_eq!(b.labels[k], a.labels[src]);
            prop_assert_eq!(d.labels[k], c.labels[src]);
        }
    }

    #[test]
    fn confusion_counts_do_not_depend_on_partition(
        (images, cuts, order) in (1usize..8).prop_flat_map(|k| (
            prop::collection::vec(
                prop::collection::vec((0u8..4, prop_oneof![0u8..4, Just(255u8)]), 1..30),
                k,
            ),
            subsequence((1..k).collect::<Vec<usize>>(), 0..k),
            Just((0..k).collect::<Vec<usize>>()).prop_shuffle(),
        )),
    ) {
        let mut whole = ConfusionMatrix::new(3);
        for img in &images {
            let (p, g): (Vec<u8>, Vec<u8>) = img.iter().cloned().unzip();
            whole.accumulate(&p, &g).unwrap();
        }
        // Contiguous groups of the shuffled image order, merged in reverse.
        let mut bounds = vec![0];
        bounds.extend(&cuts);
        bounds.push(images.len());
        let mut parts = Vec::new();
        for w in bounds.windows(2) {
            let mut m = ConfusionMatrix::new(3);
            for &i in &order[w[0]..w[1]] {
                let (p, g): (Vec<u8>, Vec<u8>) = images[i].iter().cloned().unzip();
                m.accumulate(&p, &g).unwrap();
            }
            parts.push(m);
        }
        let mut merged = ConfusionMatrix::new(3);
        for m in parts.iter().rev() {
            merged.merge(m).unwrap();
        }
        prop_assert_eq!(merged, whole);
    }

    #[test]
    fn duplicating_the_dataset_keeps_iou(
        images in prop::collection::vec(prop::collection::vec((0u8..4, 0u8..4), 1..30), 1..6),
    ) {
        let mut once = ConfusionMatrix::new(3);
        let mut twice = ConfusionMatrix::new(3);
        for img in &images {
            let (p, g): (Vec<u8>, Vec<u8>) = img.iter().cloned().unzip();
            once.accumulate(&p, &g).unwrap();
            twice.accumulate(&p, &g).unwrap();
            twice.accumulate(&p, &g).unwrap();
        }
        prop_assert_eq!(once.miou().unwrap(), twice.miou().unwrap());
    }

    #[test]
    fn random_walk_keeps_unit_mass(
        (img, prior) in (2usize..7, 2usize..7).prop_flat_map(|(h, w)| (tensor(3, h, w, 0.0, 1.0), tensor(3, h, w, 0.0, 1.0))),
        t in 0usize..20,
        beta in 1.0..10.0f64,
    ) {
        let graph = build_affinity(&img, 2, Some(0.3)).unwrap();
        let out = random_walk(&prior, &graph, beta, t).unwrap();
        let n = out.plane_len();
        for p in 0..n {
            let s: f64 = (0..out.channels()).map(|c| out.data()[c * n + p]).sum();
            let before: f64 = (0..prior.channels()).map(|c| prior.data()[c * n + p]).sum();
            if before > 0.0 {
                prop_assert!((s - 1.0).abs() < 1e-6, "pixel {p}: {s}");
            }
        }
    }
}

fn tta_model() -> ToyCnn<f64> {
    let cfg = CnnConfig { in_channels: 3, widths: vec![4, 4], strides: vec![1, 2], num_classes: 2 };
    ToyCnn::new(&cfg, &mut pnoc_core::rng::seeded(5)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tta_ignores_scale_order(
        scales in Just(vec![0.5, 1.0, 1.5, 2.0]).prop_shuffle(),
        flip in prop::bool::ANY,
    ) {
        let model = tta_model();
        let x = Tensor3::from_fn(3, 16, 16, |c, y, xx| ((c * 17 + y * 3 + xx * 5) as f64 * 0.29).sin() * 0.5 + 0.5);
        let reference = tta_prior(&model, &x, &[0.5, 1.0, 1.5, 2.0], flip).unwrap();
        let shuffled = tta_prior(&model, &x, &scales, flip).unwrap();
        prop_assert!(reference.max_abs_diff(&shuffled) < 1e-6);
    }
}
