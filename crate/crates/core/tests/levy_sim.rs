use std::f64::consts::PI;

use fnse_core::levy_sim::{
    check_symbol_condition, empirical_cf, stable_constant, ConditionStatus, IncrementSampler, LevySymbol,
    SamplingScheme, DEFAULT_CONDITION_BOUND,
};
use proptest::prelude::*;

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (depth < 25 && (left + right - whole).abs() <= 15.0 * tol.max(1e-15 * whole.abs())) {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 30)
}

/// Direct 2D quadrature of `int_{|y|<=a} (1 - cos(xi . y)) nu(dy)` in polar
/// coordinates, with `r = s^q` removing the singularity at the origin.
fn truncated_oracle_2d(alpha: f64, sigma: f64, a: f64, xi: [f64; 2]) -> f64 {
    let c = sigma * stable_constant(2, alpha);
    let q = 1.0 / (2.0 - alpha);
    let s_max = a.powf(1.0 / q);
    let radial = |s: f64| {
        if s == 0.0 {
            // Limit of the integrand: r^{1-alpha} q s^{q-1} |xi . theta|^2 / 2 averaged.
            let xi2 = xi[0] * xi[0] + xi[1] * xi[1];
            return c * q * PI * xi2 / 2.0;
        }
        let r = s.powf(q);
        let ang = |th: f64| 2.0 * (0.5 * r * (xi[0] * th.cos() + xi[1] * th.sin())).sin().powi(2);
        let inner = simpson(&ang, 0.0, 2.0 * PI, 1e-12);
        c * inner * r.powf(-1.0 - alpha) * q * s.powf(q - 1.0)
    };
    simpson(&radial, 0.0, s_max, 1e-11)
}

fn truncated_oracle_1d(alpha: f64, sigma: f64, a: f64, xi: f64) -> f64 {
    let c = sigma * stable_constant(1, alpha);
    let q = 1.0 / (2.0 - alpha);
    let f = |s: f64| {
        if s == 0.0 {
            return c * q * xi * xi / 2.0 * 2.0;
        }
        let r = s.powf(q);
        2.0 * c * 2.0 * (0.5 * xi * r).sin().powi(2) * r.powf(-1.0 - alpha) * q * s.powf(q - 1.0)
    };
    simpson(&f, 0.0, a.powf(1.0 / q), 1e-13)
}

#[test]
fn isotropic_symbol_examples() {
    let s = LevySymbol::isotropic(1.5, 1.0).unwrap();
    assert_eq!(s.eval(&[0.0, 0.0]).unwrap().re, 0.0);
    let v = s.eval(&[2.0, 0.0]).unwrap();
    assert!((v.re - 8f64.sqrt()).abs() < 1e-12);
    assert_eq!(v.im, 0.0);
    assert!(s.eval(&[f64::NAN, 0.0]).is_err());
    assert!(s.eval(&[f64::INFINITY]).is_err());
}

#[test]
fn truncated_symbol_matches_quadrature_2d() {
    let s = LevySymbol::truncated(1.5, 1.0, 1.0).unwrap();
    for xi in [[3.0, 0.0], [0.7, -1.1], [10.0, 4.0]] {
        let got = s.eval(&xi).unwrap().re;
        let want = truncated_oracle_2d(1.5, 1.0, 1.0, xi);
        assert!((got - want).abs() < 1e-8, "xi={xi:?}: {got} vs {want}");
    }
}

#[test]
fn truncated_symbol_matches_quadrature_1d() {
    for (alpha, a) in [(1.5, 1.0), (1.2, 0.5), (0.8, 2.0)] {
        let s = LevySymbol::truncated(alpha, 0.7, a).unwrap();
        for xi in [0.3, 3.0, 25.0] {
            let got = s.eval(&[xi]).unwrap().re;
            let want = truncated_oracle_1d(alpha, 0.7, a, xi);
            assert!((got - want).abs() < 1e-9 * want.max(1.0), "alpha={alpha} xi={xi}: {got} vs {want}");
        }
    }
}

#[test]
fn exact_scheme_requires_isotropic_symbol() {
    let t = LevySymbol::truncated(1.5, 1.0, 1.0).unwrap();
    assert!(IncrementSampler::new(t, 2, SamplingScheme::ExactStable, 0).is_err());
    assert!(IncrementSampler::new(t, 2, SamplingScheme::CompoundPoissonGaussian, 0).is_ok());
}

#[test]
fn zero_and_negative_time_steps() {
    let s = LevySymbol::isotropic(1.5, 1.0).unwrap();
    let sampler = IncrementSampler::preferred(s, 2, 9).unwrap();
    assert_eq!(sampler.sample_increment(0.0, 0).unwrap(), vec![0.0, 0.0]);
    assert!(sampler.sample_increment(-0.1, 0).is_err());
}

fn draws(sampler: &IncrementSampler, dt: f64, m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| sampler.sample_increment(dt, i as u64).unwrap()).collect()
}

#[test]
fn empirical_cf_of_stable_increments() {
    let s = LevySymbol::isotropic(1.5, 1.0).unwrap();
    for dim in [1, 2] {
        let sampler = IncrementSampler::preferred(s, dim, 11).unwrap();
        let xs = draws(&sampler, 0.1, 100_000);
        for r in [0.5, 1.0, 2.0, 4.0] {
            let mut xi = vec![0.0; dim];
            xi[0] = r * 0.6;
            if dim == 2 {
                xi[1] = r * 0.8;
            } else {
                xi[0] = r;
            }
            let est = empirical_cf(&xs, &xi).unwrap();
            let want = (-0.1 * r.powf(1.5)).exp();
            assert!((est.mean.re - want).abs() <= 3.0 * est.stderr, "d={dim} r={r}: {} vs {want}", est.mean);
            assert!(est.mean.im.abs() <= 3.0 * est.stderr);
        }
    }
}

#[test]
fn empirical_cf_modulus_example() {
    let s = LevySymbol::isotropic(1.5, 1.0).unwrap();
    let sampler = IncrementSampler::preferred(s, 2, 5).unwrap();
    let xs = draws(&sampler, 0.2, 100_000);
    let est = empirical_cf(&xs, &[1.0, 0.0]).unwrap();
    assert!((est.mean.norm() - (-0.2f64).exp()).abs() <= 3.0 * est.stderr);
}

#[test]
fn empirical_cf_degenerate_cases() {
    let zeros = vec![vec![0.0, 0.0]; 3];
    let e = empirical_cf(&zeros, &[1.3, -2.0]).unwrap();
    assert_eq!(e.mean.re, 1.0);
    assert_eq!(e.mean.im, 0.0);
    assert_eq!(e.stderr, 0.0);
    let some = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
    let e = empirical_cf(&some, &[0.0, 0.0]).unwrap();
    assert_eq!((e.mean.re, e.mean.im), (1.0, 0.0));
    let empty: Vec<Vec<f64>> = Vec::new();
    assert!(empirical_cf(&empty, &[1.0]).is_err());
}

#[test]
fn compound_poisson_scheme_matches_symbols() {
    let iso = LevySymbol::isotropic(1.5, 1.0).unwrap();
    let trunc = LevySymbol::truncated(1.5, 1.0, 0.5).unwrap();
    for (sym, dim) in [(iso, 1), (iso, 2), (trunc, 1), (trunc, 2), (trunc, 3)] {
        let sampler = IncrementSampler::new(sym, dim, SamplingScheme::CompoundPoissonGaussian, 21).unwrap();
        let xs = draws(&sampler, 0.2, 40_000);
        for r in [0.7, 2.0, 5.0] {
            let mut xi = vec![0.0; dim];
            xi[0] = r;
            let want = (-0.2 * sym.eval(&xi).unwrap().re).exp();
            let est = empirical_cf(&xs, &xi).unwrap();
            assert!(
                (est.mean.re - want).abs() <= 4.0 * est.stderr + 2e-3,
                "{:?} d={dim} r={r}: {} vs {want}",
                sym.kind,
                est.mean.re
            );
        }
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

fn ks_critical_001(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.628 * ((n + m) / (n * m)).sqrt()
}

#[test]
fn increments_are_self_similar_under_summation() {
    let s = LevySymbol::isotropic(1.5, 1.0).unwrap();
    let m = 100_000;
    for dim in [1, 2] {
        let long = IncrementSampler::preferred(s, dim, 1).unwrap();
        let short = IncrementSampler::preferred(s, dim, 2).unwrap();
        let a = draws(&long, 0.2, m);
        let b: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let x = short.sample_increment(0.1, 2 * i as u64).unwrap();
                let y = short.sample_increment(0.1, 2 * i as u64 + 1).unwrap();
                x.iter().zip(&y).map(|(p, q)| p + q).collect()
            })
            .collect();
        for c in 0..dim {
            let d = ks_statistic(a.iter().map(|v| v[c]).collect(), b.iter().map(|v| v[c]).collect());
            assert!(d < ks_critical_001(m, m), "d={dim} coord {c}: KS {d}");
        }
    }
}

#[test]
fn pooled_increments_reproduce_longer_step() {
    let s = LevySymbol::isotropic(1.2, 0.8).unwrap();
    let m = 50_000;
    let n = 4;
    let one = IncrementSampler::preferred(s, 1, 3).unwrap();
    let many = IncrementSampler::preferred(s, 1, 4).unwrap();
    let a: Vec<f64> = (0..m).map(|i| one.sample_increment(0.2, i as u64).unwrap()[0]).collect();
    let b: Vec<f64> = (0..m)
        .map(|i| (0..n).map(|k| many.sample_increment(0.05, (i * n + k) as u64).unwrap()[0]).sum())
        .collect();
    assert!(ks_statistic(a, b) < ks_critical_001(m, m));
}

#[test]
fn increments_are_centred() {
    for alpha in [1.2, 1.5, 1.8] {
        let s = LevySymbol::isotropic(alpha, 1.0).unwrap();
        let sampler = IncrementSampler::preferred(s, 2, 77).unwrap();
        let xs = draws(&sampler, 0.1, 100_000);
        for c in 0..2 {
            let v: Vec<f64> = xs.iter().map(|x| x[c]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            assert!(mean.abs() <= 4.0 * sd / (v.len() as f64).sqrt(), "alpha={alpha}: mean {mean}, sd {sd}");
        }
    }
}

#[test]
fn sampling_is_addressed_by_stream_and_counter() {
    let s = LevySymbol::isotropic(1.5, 1.0).unwrap();
    let a = IncrementSampler::preferred(s, 2, 8).unwrap().with_stream(5);
    let b = IncrementSampler::preferred(s, 2, 8).unwrap().with_stream(5);
    let c = IncrementSampler::preferred(s, 2, 8).unwrap().with_stream(6);
    assert_eq!(a.sample_increment(0.1, 17).unwrap(), b.sample_increment(0.1, 17).unwrap());
    assert_ne!(a.sample_increment(0.1, 17).unwrap(), c.sample_increment(0.1, 17).unwrap());
}

fn log_range(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

#[test]
fn symbol_condition_reports() {
    let iso = LevySymbol::isotropic(1.5, 1.0).unwrap();
    let r = check_symbol_condition(&iso, 2, &log_range(1.0, 100.0, 30), DEFAULT_CONDITION_BOUND).unwrap();
    assert!((r.min_ratio - 1.0).abs() < 1e-12 && (r.max_ratio - 1.0).abs() < 1e-12);
    assert_eq!(r.status, ConditionStatus::Pass);

    let tr = LevySymbol::truncated(1.5, 1.0, 1.0).unwrap();
    let r = check_symbol_condition(&tr, 2, &log_range(10.0, 1000.0, 30), DEFAULT_CONDITION_BOUND).unwrap();
    assert!(r.min_ratio >= 0.5 && r.max_ratio <= 2.0, "{r:?}");
    assert_eq!(r.status, ConditionStatus::Pass);

    let r = check_symbol_condition(&tr, 2, &log_range(0.01, 1.0, 30), DEFAULT_CONDITION_BOUND).unwrap();
    assert_eq!(r.status, ConditionStatus::AsymptoticNotReached, "{r:?}");

    assert!(check_symbol_condition(&iso, 2, &log_range(1.0, 10.0, 5), DEFAULT_CONDITION_BOUND).is_err());
}

proptest! {
    #[test]
    fn symbol_is_even_real_and_nonnegative(
        x in -50.0f64..50.0, y in -50.0f64..50.0,
        alpha in 0.3f64..1.95, a in 0.1f64..5.0,
    ) {
        for s in [LevySymbol::isotropic(alpha, 1.0).unwrap(), LevySymbol::truncated(alpha, 1.0, a).unwrap()] {
            let p = s.eval(&[x, y]).unwrap();
            let q = s.eval(&[-x, -y]).unwrap();
            prop_assert!(p.im.abs() <= 1e-12);
            prop_assert!(p.re >= 0.0);
            prop_assert!((p.re - q.re).abs() <= 1e-12 * p.re.max(1.0));
        }
    }

    #[test]
    fn truncation_lowers_the_symbol(x in 0.01f64..30.0, alpha in 0.5f64..1.9, a in 0.1f64..3.0) {
        let iso = LevySymbol::isotropic(alpha, 1.0).unwrap().eval(&[x]).unwrap().re;
        let tr = LevySymbol::truncated(alpha, 1.0, a).unwrap().eval(&[x]).unwrap().re;
        prop_assert!(tr <= iso * (1.0 + 1e-10));
    }
}
