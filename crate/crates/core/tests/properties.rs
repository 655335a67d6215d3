//! Property tests for lighting generation, relighting and the optimizers.

use lightd::attack::{
    adapt_classifier_attack, color_filter_lite, gamma_lite, optimize_lighting_image_sga,
    optimize_lighting_params, sign, sign_update, AttackConfig,
};
use lightd::harness::derive_seed;
use lightd::imagecore::{flip_horizontal, flip_vertical, Image};
use lightd::lightgen::{generate_lighting_image, Direction, LightingParams};
use lightd::relight::{RelightBackend, SurrogateRelighter};
use lightd::victim::{SurrogateVictim, SurrogateVictimConfig, VictimBackend};
use proptest::prelude::*;

fn color() -> impl Strategy<Value = [f64; 3]> {
    [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64]
}

fn direction() -> impl Strategy<Value = Direction> {
    prop::sample::select(Direction::ALL.to_vec())
}

fn params() -> impl Strategy<Value = LightingParams> {
    (color(), color(), direction(), 0.0..=2.0f64)
        .prop_map(|(s, e, d, w)| LightingParams::new(s, e, d, w).unwrap())
}

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..=1.0f64, h * w * 3).prop_map(move |d| Image::new(h, w, d).unwrap())
}

fn victim() -> SurrogateVictim {
    SurrogateVictim::new(SurrogateVictimConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lighting_stays_between_endpoint_colors(p in params(), h in 1usize..16, w in 1usize..16) {
        let img = generate_lighting_image(&p, h, w).unwrap();
        for px in img.data().chunks(3) {
            for (c, v) in px.iter().enumerate() {
                let (lo, hi) = (p.start_color[c].min(p.end_color[c]), p.start_color[c].max(p.end_color[c]));
                prop_assert!(*v >= lo && *v <= hi);
            }
        }
    }

    #[test]
    fn lighting_is_monotone_along_the_axis(p in params(), n in 2usize..24) {
        let p = LightingParams { direction: Direction::LeftToRight, ..p };
        let img = generate_lighting_image(&p, 1, n).unwrap();
        for c in 0..3 {
            let up = p.end_color[c] >= p.start_color[c];
            for x in 1..n {
                let (a, b) = (img.pixel(0, x - 1)[c], img.pixel(0, x)[c]);
                let ordered = if up { b >= a } else { b <= a };
                prop_assert!(ordered);
            }
        }
    }

    #[test]
    fn opposite_directions_are_flips(p in params(), h in 1usize..12, w in 1usize..12) {
        let gen = |d| generate_lighting_image(&LightingParams { direction: d, ..p }, h, w).unwrap();
        prop_assert_eq!(gen(Direction::LeftToRight), flip_horizontal(&gen(Direction::RightToLeft)));
        prop_assert_eq!(gen(Direction::TopToBottom), flip_vertical(&gen(Direction::BottomToTop)));
    }

    #[test]
    fn full_weight_and_flat_ramps_are_constant(p in params(), h in 1usize..10, w in 1usize..10) {
        let full = generate_lighting_image(&LightingParams { weight: 2.0, ..p }, h, w).unwrap();
        prop_assert!(full.data().chunks(3).all(|px| px == p.start_color));
        let flat = generate_lighting_image(&LightingParams { end_color: p.start_color, ..p }, h, w).unwrap();
        prop_assert!(flat.data().chunks(3).all(|px| px == p.start_color));
    }

    #[test]
    fn relight_stays_in_range_and_white_light_is_identity(l in image(3, 4), i in image(3, 4)) {
        let r = SurrogateRelighter::default();
        let out = r.relight(&l, &i, 0).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let white = Image::constant(3, 4, [1.0; 3]).unwrap();
        prop_assert_eq!(r.relight(&white, &i, 0).unwrap(), i);
    }

    #[test]
    fn sign_update_equals_normalized_form(
        g in prop::collection::vec(prop_oneof![Just(0.0), -1e6..1e6f64], 1..32),
        alpha in 0.0..1.0f64,
    ) {
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 0.0);
        let mut x = vec![0.5; g.len()];
        sign_update(&mut x, &g, alpha);
        for (xi, gi) in x.iter().zip(&g) {
            prop_assert_eq!(xi.to_bits(), (0.5 + alpha * sign(gi / norm)).to_bits());
        }
    }

    #[test]
    fn derived_seeds_are_distinct(master in any::<u64>()) {
        let seeds: std::collections::BTreeSet<u64> = (0..64).map(|i| derive_seed(master, i)).collect();
        prop_assert_eq!(seeds.len(), 64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn optimizers_keep_best_and_project(
        p in params(),
        clean in image(6, 6),
        step in 0.0..0.3f64,
        iters in 0usize..6,
        m in 1usize..4,
    ) {
        let (r, v) = (SurrogateRelighter::default(), victim());
        let cfg = AttackConfig {
            param_step: step,
            image_step: step,
            param_iters: iters,
            image_iters: iters,
            resize_count: m,
            ..Default::default()
        };
        let out = optimize_lighting_params(&cfg, &r, &v, &p, &clean, "a red car").unwrap();
        prop_assert_eq!(out.trace.len(), iters + 1);
        prop_assert!(out.best_j >= out.trace[0].total);
        prop_assert!(out.best.validate().is_ok());
        prop_assert_eq!(out.best.direction, p.direction);
        let l0 = generate_lighting_image(&out.best, 6, 6).unwrap();
        let img = optimize_lighting_image_sga(&cfg, &r, &v, &l0, &clean, "a red car").unwrap();
        prop_assert!(img.best_j >= img.trace[0].total);
        let max = img.trace.iter().map(|l| l.total).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(img.best_j, max);
        prop_assert!(img.best.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn transfer_best_j_grows_with_budget(clean in image(5, 5), seed in any::<u64>()) {
        let v = victim();
        let mut prev = f64::NEG_INFINITY;
        for budget in [0usize, 1, 3, 8, 20] {
            let a = adapt_classifier_attack(&mut gamma_lite(seed), &v, &clean, "a dog", budget).unwrap();
            let b = adapt_classifier_attack(&mut color_filter_lite(seed), &v, &clean, "a dog", budget).unwrap();
            prop_assert!(a.best_j >= prev);
            prev = a.best_j;
            prop_assert!(a.image.data().iter().chain(b.image.data()).all(|x| (0.0..=1.0).contains(x)));
            prop_assert_eq!(a.evaluated, budget);
            let j = v.loss(&b.image, &clean, "a dog").unwrap().total;
            prop_assert_eq!(j, b.best_j);
        }
    }
}
