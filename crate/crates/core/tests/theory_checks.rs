use std::time::Instant;

use fnse_core::fields::{taylor_green, FieldHistory, Interpolation, PeriodicField, PeriodicGrid, VelocityHistory};
use fnse_core::levy_sim::LevySymbol;
use fnse_core::report::CsvTable;
use fnse_core::theory_checks::{
    bump, central_density_scaling, fit_loglog, kernel_tail_check, krylov_check, mild_gradient_bound_check,
    sde_gradient_check, semigroup_smoothing_check, McCheckSettings,
};

fn stable() -> LevySymbol {
    LevySymbol::isotropic(1.5, 1.0).unwrap()
}

/// `n` log-spaced negative times between `-lo` and `-hi`.
fn times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| -lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn reparse(t: &CsvTable) {
    assert_eq!(&CsvTable::parse(&t.render()).unwrap(), t);
}

#[test]
fn slope_fit_recovers_exponent_with_noise() {
    let x: Vec<f64> = (1..=12).map(|i| i as f64 * 0.1).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.powf(-0.4) * (1.0 + 0.01 * ((i % 3) as f64 - 1.0))).collect();
    let f = fit_loglog(&x, &y).unwrap();
    assert!(f.within(-0.4, 0.01), "{f:?}");
    assert!(f.ci.0 <= -0.4 && -0.4 <= f.ci.1);
    assert!(fit_loglog(&[1.0, 2.0, 3.0], &[1.0, -1.0, 2.0]).is_err());
}

#[test]
fn semigroup_smoothing_exponent_and_collapse() {
    let g = PeriodicGrid::new(1, 64).unwrap();
    let nus = [1.0, 2.0, 4.0, 8.0];
    let r = semigroup_smoothing_check(&stable(), g, &nus, &times(0.002, 0.25, 24), 4.0).unwrap();
    assert!(r.passes, "{:?} spread {:?}", r.fit, r.collapse_spread);
    assert!(r.collapse_spread.unwrap() <= 0.1);
    assert!(r.points.iter().filter(|p| p.usable).count() >= 20);
    reparse(&r.to_csv().unwrap());
}

#[test]
fn semigroup_single_mode_ratio_is_bounded_by_closed_form() {
    let g = PeriodicGrid::new(1, 32).unwrap();
    let r = semigroup_smoothing_check(&stable(), g, &[1.0], &[-1e-6, -1e-3, -0.01], 2.0).unwrap();
    for p in &r.points {
        let m = p.worst_mode as f64;
        let closed = m * (-p.product * m.powf(1.5)).exp();
        assert!((p.value - closed).abs() <= 1e-10 * closed, "{p:?}");
        assert!(p.value <= (g.n / 3) as f64 + 1e-9);
    }
}

#[test]
fn mild_gradient_exponent_with_taylor_green_drift() {
    let g = PeriodicGrid::new(2, 32).unwrap();
    let u = VelocityHistory::frozen(taylor_green(g, 1.0).unwrap(), -0.3).unwrap();
    let t0 = Instant::now();
    let r = mild_gradient_bound_check(&u, &stable(), &[1.0, 4.0], &times(0.01, 0.24, 6), 8, 4.0).unwrap();
    eprintln!("mild check {:?}: {:?}", t0.elapsed(), r.fit);
    assert!(r.fit.unwrap().ci.0 < r.fit.unwrap().ci.1);
    assert!(r.passes, "{:?}", r.points);
}

#[test]
fn mild_gradient_without_drift_matches_semigroup() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let u = VelocityHistory::zero(g, -0.3).unwrap();
    let ts = times(0.02, 0.3, 4);
    let a = mild_gradient_bound_check(&u, &stable(), &[1.0], &ts, 4, 4.0).unwrap();
    let b = semigroup_smoothing_check(&stable(), g, &[1.0], &ts, 4.0).unwrap();
    for (x, y) in a.points.iter().zip(&b.points) {
        assert!((x.value - y.value).abs() <= 1e-9 * y.value, "{x:?} {y:?}");
    }
}

#[test]
fn sde_gradient_without_drift_tracks_multiplier() {
    let g = PeriodicGrid::new(1, 32).unwrap();
    let u = VelocityHistory::zero(g, -0.3).unwrap();
    let mc = McCheckSettings { samples: 20_000, dt: 1e-3, interpolation: Interpolation::Linear, seed: 3 };
    let ts = times(0.03, 0.24, 4);
    let a = sde_gradient_check(&u, &stable(), &[1.0], &ts, &mc).unwrap();
    let b = semigroup_smoothing_check(&stable(), g, &[1.0], &ts, 4.0).unwrap();
    for (x, y) in a.slope.points.iter().zip(&b.points) {
        assert!((x.value - y.value).abs() <= 3.0 * x.stderr + 0.02 * y.value, "{x:?} {y:?}");
    }
}

#[test]
fn sde_gradient_exponent_with_taylor_green_drift() {
    let g = PeriodicGrid::new(2, 32).unwrap();
    let u = VelocityHistory::frozen(taylor_green(g, 1.0).unwrap(), -0.3).unwrap();
    let mc = McCheckSettings { samples: 512, dt: 2e-3, interpolation: Interpolation::Linear, seed: 5 };
    let t0 = Instant::now();
    let r = sde_gradient_check(&u, &stable(), &[1.0, 4.0], &times(0.03, 0.24, 5), &mc).unwrap();
    eprintln!("sde check {:?}: {:?}", t0.elapsed(), r.slope.fit);
    for p in &r.slope.points {
        eprintln!("{p:?}");
    }
    assert!(r.slope.passes);
    assert!(r.lipschitz_ok);
    assert!(r.constant.is_finite() && r.constant > 0.0);
}

#[test]
fn kernel_tail_is_finite_stable_and_symmetric() {
    let t0 = Instant::now();
    let r = kernel_tail_check(&stable(), 1, -0.5, 200_000, 7).unwrap();
    eprintln!("tail {:?}: {r:?}", t0.elapsed());
    assert!(r.passes);
    assert_eq!(r.symmetric, Some(true));
}

#[test]
fn central_density_scales_with_time() {
    let (_, fit, ok) = central_density_scaling(&stable(), 1, &[-0.1, -0.2, -0.4], 200_000, 11).unwrap();
    assert!(ok, "{fit:?}");
}

#[test]
fn kernel_tail_in_two_dimensions() {
    let r = kernel_tail_check(&stable(), 2, -0.3, 100_000, 13).unwrap();
    assert!(r.passes, "{r:?}");
    assert_eq!(r.symmetric, None);
}

#[test]
fn krylov_constant_function_is_exact() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let one = FieldHistory::frozen(PeriodicField::from_fn(g, 1, |_, o| o[0] = 1.0).unwrap(), -0.5).unwrap();
    let u = VelocityHistory::frozen(taylor_green(g, 1.0).unwrap(), -0.5).unwrap();
    let mc = McCheckSettings { samples: 64, dt: 0.01, interpolation: Interpolation::Linear, seed: 1 };
    let (p, q) = (4.0, 4.0);
    let r = krylov_check(&u, &one, &stable(), 1.0, -0.5, &[vec![1.0, 2.0]], p, q, &mc).unwrap();
    assert!((r.lhs.mean - 0.5).abs() < 1e-12);
    let want = 0.5f64.powf(1.0 / q) * (2.0 * std::f64::consts::PI).powf(2.0 / p);
    assert!((r.rhs - want).abs() < 1e-9 * want);
    assert!(r.stable);
}

#[test]
fn krylov_ratio_bounded_for_shrinking_bumps() {
    let g = PeriodicGrid::new(2, 32).unwrap();
    let c = [std::f64::consts::PI; 2];
    let mc = McCheckSettings { samples: 2000, dt: 5e-3, interpolation: Interpolation::Linear, seed: 2 };
    let starts = vec![c.to_vec(), vec![c[0] + 0.1, c[1]]];
    let (p, q) = (4.0, 4.0);
    let mut ratios = Vec::new();
    for drift in [0.0, 1.0] {
        let u = VelocityHistory::frozen(taylor_green(g, drift).unwrap(), -0.5).unwrap();
        for r in [1.0, 0.5, 0.25] {
            let f = FieldHistory::frozen(bump(g, &c, r, p).unwrap(), -0.5).unwrap();
            let k = krylov_check(&u, &f, &stable(), 1.0, -0.5, &starts, p, q, &mc).unwrap();
            assert!(k.stable, "{k:?}");
            ratios.push(k.ratio);
        }
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    assert!(hi / lo < 3.0, "{ratios:?}");
}

#[test]
fn krylov_rejects_bad_exponents() {
    let g = PeriodicGrid::new(2, 8).unwrap();
    let one = FieldHistory::frozen(PeriodicField::from_fn(g, 1, |_, o| o[0] = 1.0).unwrap(), -0.5).unwrap();
    let u = VelocityHistory::zero(g, -0.5).unwrap();
    let mc = McCheckSettings { samples: 16, dt: 0.01, interpolation: Interpolation::Linear, seed: 1 };
    let s = stable();
    assert!(krylov_check(&u, &one, &s, 1.0, -0.5, &[vec![0.0, 0.0]], 1.2, 10.0, &mc).is_err());
    assert!(krylov_check(&u, &one, &s, 1.0, -0.5, &[vec![0.0, 0.0]], 4.0, 1.1, &mc).is_err());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn fit_recovers_any_power_law(slope in -3.0f64..3.0, c in 0.01f64..100.0, n in 3usize..12) {
        let x: Vec<f64> = (0..n).map(|i| 0.01 * 1.7f64.powi(i as i32)).collect();
        let y: Vec<f64> = x.iter().map(|x| c * x.powf(slope)).collect();
        let f = fit_loglog(&x, &y).unwrap();
        proptest::prop_assert!((f.slope - slope).abs() < 1e-9);
        proptest::prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        proptest::prop_assert!(f.within(slope, 1e-6));
    }
}
