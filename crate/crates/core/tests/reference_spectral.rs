use fnse_core::fields::{divergence, single_mode, taylor_green, FieldHistory, PeriodicField, PeriodicGrid};
use fnse_core::levy_sim::LevySymbol;
use fnse_core::reference_spectral::{compare_fields, solve_burgers_spectral, solve_fnse_spectral};
use fnse_core::FnseError;

fn stable() -> LevySymbol {
    LevySymbol::isotropic(1.5, 1.0).unwrap()
}

/// Taylor-Green plus a shear mode, so the nonlinearity does not vanish.
fn mixed(g: PeriodicGrid, amp: f64) -> PeriodicField {
    let tg = taylor_green(g, amp).unwrap();
    let shear = single_mode(g, &[0.0, 1.0], &[1.0, 0.0], amp).unwrap();
    tg.combine(1.0, &shear, 1.0).unwrap()
}

fn max_diff(a: &PeriodicField, b: &PeriodicField) -> f64 {
    a.combine(1.0, b, -1.0).unwrap().max_norm()
}

#[test]
fn zero_stays_zero() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let h = solve_fnse_spectral(&PeriodicField::zeros(g, 2), &stable(), 1.0, -0.3, 0.01, 3).unwrap();
    assert!(h.slices().iter().all(|f| f.max_norm() == 0.0));
    let g1 = PeriodicGrid::new(1, 16).unwrap();
    let b = solve_burgers_spectral(&PeriodicField::zeros(g1, 1), &stable(), 1.0, -0.3, 0.01, 3).unwrap();
    assert!(b.slices().iter().all(|f| f.max_norm() == 0.0));
}

#[test]
fn linear_regime_decays_by_multiplier() {
    let g = PeriodicGrid::new(2, 32).unwrap();
    let k = [1.0, 2.0];
    let e = [2.0, -1.0];
    let u0 = single_mode(g, &k, &e, 1e-3).unwrap();
    let nu = 1.5;
    let h = solve_fnse_spectral(&u0, &stable(), nu, -0.4, 0.005, 4).unwrap();
    let rate = nu * 5f64.powf(0.75);
    for (t, f) in h.times().iter().zip(h.slices()) {
        let want = u0.scale((rate * t).exp()).unwrap();
        let rel = max_diff(f, &want) / want.max_norm();
        assert!(rel < 1e-6, "t={t}: {rel}");
    }
}

#[test]
fn divergence_free_and_energy_decreasing() {
    let g = PeriodicGrid::new(2, 32).unwrap();
    let h = solve_fnse_spectral(&mixed(g, 1.0), &stable(), 1.0, -0.5, 0.005, 10).unwrap();
    let mut prev = f64::INFINITY;
    for f in h.slices() {
        assert!(divergence(f).unwrap().max_norm() <= 1e-12 * f.max_norm().max(1.0));
        let e = f.lp_norm(2.0).unwrap();
        assert!(e <= prev * (1.0 + 1e-12), "{e} > {prev}");
        prev = e;
    }
}

#[test]
fn time_refinement_is_fourth_order() {
    let g = PeriodicGrid::new(2, 32).unwrap();
    let u0 = mixed(g, 3.0);
    let s = stable();
    let run = |dt: f64| solve_fnse_spectral(&u0, &s, 1.0, -0.4, dt, 1).unwrap().slices()[1].clone();
    let fine = run(0.0025 / 8.0);
    let errs: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|dt| max_diff(&run(*dt), &fine)).collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 10.0, "{errs:?}");
    }
}

#[test]
fn spatial_refinement_converges_spectrally() {
    let s = stable();
    let run = |n: usize| {
        let g = PeriodicGrid::new(2, n).unwrap();
        solve_fnse_spectral(&mixed(g, 3.0), &s, 1.0, -0.3, 0.005, 1).unwrap().slices()[1].clone()
    };
    let g16 = PeriodicGrid::new(2, 16).unwrap();
    let reference = run(64).resample(g16).unwrap();
    let e8 = max_diff(&run(8).resample(g16).unwrap(), &reference);
    let e16 = max_diff(&run(16), &reference);
    let e32 = max_diff(&run(32).resample(g16).unwrap(), &reference);
    assert!(e8 / e16 >= 10.0 && (e16 / e32 >= 10.0 || e32 < 1e-12), "{e8} {e16} {e32}");
}

#[test]
fn burgers_conserves_mass() {
    let g = PeriodicGrid::new(1, 64).unwrap();
    let u0 = PeriodicField::from_fn(g, 1, |x, o| o[0] = x[0].sin()).unwrap();
    let h = solve_burgers_spectral(&u0, &stable(), 1.0, -0.5, 0.005, 5).unwrap();
    for f in h.slices() {
        assert!(f.mean()[0].abs() < 1e-10);
    }
    // Dissipation dominates a unit-amplitude wave.
    assert!(h.slices()[5].lp_norm(2.0).unwrap() < u0.lp_norm(2.0).unwrap());
}

#[test]
fn burgers_time_refinement() {
    let g = PeriodicGrid::new(1, 64).unwrap();
    let u0 = PeriodicField::from_fn(g, 1, |x, o| o[0] = 2.0 * x[0].sin()).unwrap();
    let s = stable();
    let run = |dt: f64| solve_burgers_spectral(&u0, &s, 1.0, -0.4, dt, 1).unwrap().slices()[1].clone();
    let fine = run(0.02 / 64.0);
    let e1 = max_diff(&run(0.02), &fine);
    let e2 = max_diff(&run(0.01), &fine);
    assert!(e1 / e2 >= 10.0, "{e1} {e2}");
}

#[test]
fn rejects_bad_inputs() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let s = stable();
    let shifted = PeriodicField::from_fn(g, 2, |_, o| o.copy_from_slice(&[1.0, 0.0])).unwrap();
    assert!(solve_fnse_spectral(&shifted, &s, 1.0, -0.1, 0.01, 1).is_err());
    assert!(solve_fnse_spectral(&PeriodicField::zeros(g, 2), &s, 0.5, -0.1, 0.01, 1).is_err());
    let g1 = PeriodicGrid::new(1, 16).unwrap();
    assert!(solve_fnse_spectral(&PeriodicField::zeros(g1, 1), &s, 1.0, -0.1, 0.01, 1).is_err());
    let err = solve_fnse_spectral(&mixed(g, 50.0), &s, 1.0, -0.2, 0.1, 1).unwrap_err();
    assert!(matches!(err, FnseError::Cfl { .. }), "{err:?}");
}

#[test]
fn compare_fields_trivial_cases() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let a = FieldHistory::new(vec![0.0, -0.1], vec![taylor_green(g, 1.0).unwrap(), taylor_green(g, 0.5).unwrap()]).unwrap();
    let b = FieldHistory::new(
        a.times().to_vec(),
        a.slices().iter().map(|f| f.scale(2.0).unwrap()).collect(),
    )
    .unwrap();
    for p in [1.0, 2.0, 4.0] {
        assert!(compare_fields(&a, &a, p).unwrap().iter().all(|(_, e)| *e == 0.0));
        for (_, e) in compare_fields(&a, &b, p).unwrap() {
            assert!((e - 1.0).abs() < 1e-12);
        }
    }
    // A coarser, time-interpolated history is accepted.
    let g8 = PeriodicGrid::new(2, 8).unwrap();
    let c = FieldHistory::new(
        vec![0.0, -0.2],
        vec![taylor_green(g8, 1.0).unwrap(), taylor_green(g8, 0.0).unwrap()],
    )
    .unwrap();
    let r = compare_fields(&a, &c, 2.0).unwrap();
    assert!(r[0].1 < 1e-12 && (r[1].1 - 0.0).abs() < 1e-12, "{r:?}");
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

    #[test]
    fn energy_never_grows_and_mean_stays_zero(amp in 0.0f64..3.0, alpha in 1.05f64..1.95, nu in 1.0f64..4.0) {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let s = LevySymbol::isotropic(alpha, 1.0).unwrap();
        let h = solve_fnse_spectral(&mixed(g, amp), &s, nu, -0.2, 0.01, 4).unwrap();
        let mut prev = f64::INFINITY;
        for f in h.slices() {
            let e = f.lp_norm(2.0).unwrap();
            proptest::prop_assert!(e <= prev * (1.0 + 1e-12) + 1e-15);
            proptest::prop_assert!(f.mean().iter().all(|m| m.abs() < 1e-12));
            prev = e;
        }
    }
}
