mod common;

use blur_core::gradcheck::{check, FdSpec};
use blur_core::objectives::{
    bench_start, make_problem, nonconvex_bench, quadratic_pair, quadratic_pair_solution,
    AnalyticProblemId, Example1Lower, Example1SmoothedLower, Example1Upper, Objective, BENCH_C,
    BENCH_LIPSCHITZ,
};
use blur_core::vecmath::{dot, ParamVector};
use common::seeded_rng;
use rand::Rng;

fn pv1(t: f64) -> ParamVector {
    ParamVector::new(vec![t]).unwrap()
}

#[test]
fn example1_lower_pinned_values() {
    let w = Example1Lower;
    assert_eq!(w.value(&pv1(1.0)), 2.0);
    assert_eq!(w.value(&pv1(0.0)), 2.0);
    assert_eq!(w.gradient(&pv1(0.0))[0], 0.0);
    assert_eq!(w.value(&pv1(3.0)), 6.0);
    assert_eq!(w.gradient(&pv1(3.0))[0], 2.0);
    // min-norm subgradient selection at the kinks
    assert_eq!(w.gradient(&pv1(1.0))[0], 0.0);
    assert_eq!(w.gradient(&pv1(-1.0))[0], 0.0);
}

#[test]
fn example1_upper_pinned_values() {
    let h = Example1Upper;
    assert_eq!(h.value(&pv1(2.0)), 0.0);
    assert_eq!(h.gradient(&pv1(2.0))[0], 0.0);
    assert_eq!(h.value(&pv1(1.0)), 1.0);
    assert_eq!(h.gradient(&pv1(1.0))[0], -2.0);
    assert_eq!(h.value(&pv1(0.0)), 4.0);
    assert_eq!(h.gradient(&pv1(0.0))[0], -4.0);
}

#[test]
fn example1_lower_floor_and_flat_region() {
    let w = Example1Lower;
    let mut rng = seeded_rng(7);
    for _ in 0..500 {
        let t: f64 = rng.gen_range(-5.0..5.0);
        assert!(w.value(&pv1(t)) >= 2.0);
    }
    for _ in 0..100 {
        let t: f64 = rng.gen_range(-1.0..1.0);
        assert_eq!(w.value(&pv1(t)), 2.0);
    }
}

#[test]
fn smoothed_lower_pinned_values() {
    let w = Example1SmoothedLower::new(0.1).unwrap();
    // both kinks at distance 1 > mu, so the value is exact
    assert_eq!(w.value(&pv1(0.0)), 2.0);
    // at a kink the quadratic cap adds mu/2
    assert!((w.value(&pv1(1.0)) - 2.05).abs() < 1e-15);
    assert!(Example1SmoothedLower::new(0.0).is_err());
    assert!(Example1SmoothedLower::new(-0.1).is_err());
}

#[test]
fn smoothed_lower_gradient_matches_fd() {
    let w = Example1SmoothedLower::new(0.05).unwrap();
    let spec = FdSpec::with_tolerances(1e-6, 1e-8);
    let mut rng = seeded_rng(11);
    let mut checked = 0;
    while checked < 50 {
        let t: f64 = rng.gen_range(-3.0..3.0);
        // keep FD stencils away from the Huber boundary
        if ((t - 1.0).abs() - 0.05).abs() < 1e-3 || ((t + 1.0).abs() - 0.05).abs() < 1e-3 {
            continue;
        }
        let report = check(&w, &pv1(t), &spec).unwrap();
        assert!(report.pass, "fd mismatch at t={t}: {report:?}");
        checked += 1;
    }
}

#[test]
fn exact_lower_gradient_matches_fd_away_from_kinks() {
    let w = Example1Lower;
    let spec = FdSpec::with_tolerances(1e-6, 1e-8);
    let mut rng = seeded_rng(13);
    let mut checked = 0;
    while checked < 100 {
        let t: f64 = rng.gen_range(-3.0..3.0);
        if (t.abs() - 1.0).abs() < 1e-3 {
            continue;
        }
        let report = check(&w, &pv1(t), &spec).unwrap();
        assert!(report.pass, "fd mismatch at t={t}");
        checked += 1;
    }
}

#[test]
fn make_problem_populates_known_optimum() {
    let p = make_problem(&AnalyticProblemId::Example1Exact).unwrap();
    assert_eq!(p.known_lower_opt, Some(2.0));
    let p = make_problem(&AnalyticProblemId::Example1Smoothed { mu: 0.05 }).unwrap();
    assert_eq!(p.known_lower_opt, Some(2.0));
    let p = make_problem(&AnalyticProblemId::QuadraticPair { seed: 7 }).unwrap();
    assert_eq!(p.known_lower_opt, Some(0.0));
    let p = make_problem(&AnalyticProblemId::NonconvexBench { seed: 7 }).unwrap();
    assert_eq!(p.known_lower_opt, None);
}

#[test]
fn quadratic_solution_lies_in_forget_optimum() {
    for seed in [1u64, 7, 42] {
        let p = quadratic_pair(seed).unwrap();
        let sol = quadratic_pair_solution(seed);
        assert!(p.forget.value(&sol) < 1e-18, "forget not optimal at b");
        assert!(p.retain.value(&sol) < 1e-18, "retain not optimal at b");
        assert!(p.forget.gradient(&sol).norm() < 1e-9);
        assert!(p.retain.gradient(&sol).norm() < 1e-9);
    }
}

#[test]
fn quadratic_gradients_match_fd() {
    let p = quadratic_pair(7).unwrap();
    let spec = FdSpec::with_tolerances(1e-6, 1e-8);
    let mut rng = seeded_rng(17);
    for _ in 0..100 {
        let theta = common::gauss_pv(&mut rng, p.dim());
        assert!(check(p.forget.as_ref(), &theta, &spec).unwrap().pass);
        assert!(check(p.retain.as_ref(), &theta, &spec).unwrap().pass);
    }
}

#[test]
fn quadratic_objectives_are_convex() {
    let p = quadratic_pair(3).unwrap();
    let mut rng = seeded_rng(19);
    for _ in 0..200 {
        let x = common::gauss_pv(&mut rng, p.dim());
        let y = common::gauss_pv(&mut rng, p.dim());
        let gx = p.forget.gradient(&x);
        let gy = p.forget.gradient(&y);
        let diff_g = ParamVector::new(
            gx.iter().zip(gy.iter()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let diff_x =
            ParamVector::new(x.iter().zip(y.iter()).map(|(a, b)| a - b).collect()).unwrap();
        assert!(dot(&diff_g, &diff_x) >= -1e-9, "monotone gradient violated");
    }
}

#[test]
fn bench_bounds_hold_on_dense_sampling() {
    let p = nonconvex_bench(7).unwrap();
    let mut rng = seeded_rng(23);
    let mut max_gf: f64 = 0.0;
    let mut max_gr: f64 = 0.0;
    let mut max_f: f64 = 0.0;
    let mut max_r: f64 = 0.0;
    for _ in 0..5000 {
        let theta = ParamVector::new(
            (0..p.dim()).map(|_| rng.gen_range(-20.0..20.0)).collect(),
        )
        .unwrap();
        max_gf = max_gf.max(p.forget.gradient(&theta).norm());
        max_gr = max_gr.max(p.retain.gradient(&theta).norm());
        max_f = max_f.max(p.forget.value(&theta).abs());
        max_r = max_r.max(p.retain.value(&theta).abs());
    }
    assert!(max_gf <= BENCH_C, "forget gradient bound violated: {max_gf}");
    assert!(max_gr <= BENCH_C, "retain gradient bound violated: {max_gr}");
    assert!(max_f <= BENCH_C, "forget value bound violated: {max_f}");
    assert!(max_r <= BENCH_C, "retain value bound violated: {max_r}");
}

#[test]
fn bench_gradient_is_lipschitz_within_declared_constant() {
    let p = nonconvex_bench(7).unwrap();
    let mut rng = seeded_rng(29);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..2000 {
        let x = ParamVector::new((0..p.dim()).map(|_| rng.gen_range(-6.0..6.0)).collect()).unwrap();
        let step: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
        let y = ParamVector::new(
            x.iter().zip(&step).map(|(a, s)| a + s).collect(),
        )
        .unwrap();
        let gx = p.forget.gradient(&x);
        let gy = p.forget.gradient(&y);
        let num: f64 = gx
            .iter()
            .zip(gy.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = step.iter().map(|s| s * s).sum::<f64>().sqrt();
        if den > 0.0 {
            max_ratio = max_ratio.max(num / den);
        }
    }
    assert!(
        max_ratio <= BENCH_LIPSCHITZ,
        "sampled Lipschitz ratio {max_ratio} exceeds declared constant"
    );
}

#[test]
fn bench_gradients_match_fd() {
    let p = nonconvex_bench(21).unwrap();
    let spec = FdSpec::with_tolerances(1e-6, 1e-8);
    let mut rng = seeded_rng(31);
    for _ in 0..100 {
        let theta = ParamVector::new(
            (0..p.dim()).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        )
        .unwrap();
        assert!(check(p.forget.as_ref(), &theta, &spec).unwrap().pass);
        assert!(check(p.retain.as_ref(), &theta, &spec).unwrap().pass);
    }
}

#[test]
fn bench_start_is_inside_the_box() {
    let start = bench_start(7);
    assert!(start.iter().all(|t| t.abs() <= 1.0));
}
