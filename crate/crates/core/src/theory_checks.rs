//! Empirical checks of the smoothing and integrability estimates the
//! solver relies on. Constants are never asserted, only exponents and
//! boundedness.
//!
//! Gradient-smoothing exponents are measured on the worst case over single
//! Fourier modes `cos(m x_1)`: for the multiplier `exp(-s |k|^alpha)` the
//! maximum of `|k| exp(-s |k|^alpha)` scales exactly like `s^(-1/alpha)`.
//! A point is usable when the maximising mode is interior to the candidate
//! band, so neither the band edge nor the lowest torus mode limits it.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};
use crate::feynman_kac::{mild_solve, PideProblem};
use crate::fields::{
    semigroup_apply, sobolev_norm, spectral_gradient, FieldHistory, Interpolation, PeriodicField, PeriodicGrid,
    VelocityHistory,
};
use crate::levy_sim::{IncrementSampler, LevySymbol, SamplingScheme};
use crate::mc::McEstimate;
use crate::report::{fmt_f64, CsvTable};
use crate::sde_flow::{FieldEvaluator, FlowConfig, NodeEnsemble};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
    pub points: usize,
}

impl SlopeFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 3 {
        return invalid("slope fit needs at least three paired points");
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return invalid("slope fit needs finite positive values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("slope fit needs at least two distinct abscissae");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = (rss / (n - 2.0) / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, n - 2.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    Ok(SlopeFit { slope, intercept, slope_stderr, ci: (slope - q * slope_stderr, slope + q * slope_stderr), points: x.len() })
}

/// One `(nu, t)` measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingPoint {
    pub viscosity: f64,
    pub t: f64,
    /// `nu |t|`
    pub product: f64,
    pub value: f64,
    pub stderr: f64,
    /// Wavenumber of the maximising mode.
    pub worst_mode: usize,
    pub usable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeReport {
    pub points: Vec<SmoothingPoint>,
    /// `None` when fewer than three points are usable.
    pub fit: Option<SlopeFit>,
    pub target: f64,
    pub tolerance: f64,
    /// Largest relative disagreement between curves of different `nu`
    /// at equal `nu |t|`, when they overlap.
    pub collapse_spread: Option<f64>,
    pub passes: bool,
}

impl SlopeReport {
    pub fn to_csv(&self) -> Result<CsvTable> {
        let mut t = CsvTable::new([
            "viscosity", "t", "product", "value", "stderr", "worst_mode", "usable", "slope", "ci_low", "ci_high", "pass",
        ]);
        let f = |g: fn(&SlopeFit) -> f64| self.fit.as_ref().map_or("nan".to_string(), |x| fmt_f64(g(x)));
        for p in &self.points {
            t.push(vec![
                fmt_f64(p.viscosity),
                fmt_f64(p.t),
                fmt_f64(p.product),
                fmt_f64(p.value),
                fmt_f64(p.stderr),
                p.worst_mode.to_string(),
                p.usable.to_string(),
                f(|x| x.slope),
                f(|x| x.ci.0),
                f(|x| x.ci.1),
                self.passes.to_string(),
            ])?;
        }
        Ok(t)
    }
}

/// Candidate wavenumbers `1..=N/3`.
fn candidate_modes(grid: &PeriodicGrid) -> Vec<usize> {
    (1..=grid.n / 3).collect()
}

fn axis_mode(grid: PeriodicGrid, m: usize) -> Result<PeriodicField> {
    PeriodicField::from_fn(grid, 1, |x, o| o[0] = (m as f64 * x[0]).cos())
}

fn check_params(viscosities: &[f64], times: &[f64]) -> Result<()> {
    if viscosities.is_empty() || times.is_empty() {
        return invalid("need at least one viscosity and one time");
    }
    for &nu in viscosities {
        crate::fields::check_viscosity(nu)?;
    }
    if times.iter().any(|t| !(*t < 0.0)) {
        return invalid("times must be negative");
    }
    Ok(())
}

/// Pick the largest value over candidate modes.
fn worst(values: &[(usize, f64, f64)], modes: &[usize]) -> (usize, f64, f64, bool) {
    let (m, v, e) = values.iter().copied().fold((0, f64::NEG_INFINITY, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let interior = m > modes[0] && m < *modes.last().expect("modes");
    (m, v, e, interior)
}

fn collapse_spread(points: &[SmoothingPoint]) -> Option<f64> {
    let mut nus: Vec<f64> = points.iter().map(|p| p.viscosity).collect();
    nus.sort_by(f64::total_cmp);
    nus.dedup();
    let curve = |nu: f64| {
        let mut c: Vec<(f64, f64)> =
            points.iter().filter(|p| p.viscosity == nu && p.usable).map(|p| (p.product.ln(), p.value.ln())).collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        c
    };
    let mut spread: Option<f64> = None;
    for (i, &a) in nus.iter().enumerate() {
        for &b in &nus[i + 1..] {
            let (ca, cb) = (curve(a), curve(b));
            for &(x, y) in &ca {
                if let Some(w) = cb.windows(2).find(|w| w[0].0 <= x && x <= w[1].0) {
                    let f = if w[1].0 > w[0].0 { (x - w[0].0) / (w[1].0 - w[0].0) } else { 0.0 };
                    let yb = w[0].1 + f * (w[1].1 - w[0].1);
                    let rel = (y - yb).exp() - 1.0;
                    spread = Some(spread.unwrap_or(0.0).max(rel.abs()));
                }
            }
        }
    }
    spread
}

fn finish(points: Vec<SmoothingPoint>, target: f64, tolerance: f64, collapse: bool) -> Result<SlopeReport> {
    let usable: Vec<&SmoothingPoint> = points.iter().filter(|p| p.usable).collect();
    let xs: Vec<f64> = usable.iter().map(|p| p.product).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.value).collect();
    let fit = if xs.len() >= 3 { Some(fit_loglog(&xs, &ys)?) } else { None };
    let collapse_spread = if collapse { collapse_spread(&points) } else { None };
    let passes =
        fit.is_some_and(|f| f.within(target, tolerance)) && collapse_spread.is_none_or(|s| s <= 0.1);
    Ok(SlopeReport { points, fit, target, tolerance, collapse_spread, passes })
}

/// `||grad T_t f||_p / ||f||_p` maximised over single modes, fitted against
/// `nu |t|`. Pass: slope `-1/alpha +- 0.1` and curves for different `nu`
/// agree within 10%.
pub fn semigroup_smoothing_check(
    symbol: &LevySymbol,
    grid: PeriodicGrid,
    viscosities: &[f64],
    times: &[f64],
    p: f64,
) -> Result<SlopeReport> {
    check_params(viscosities, times)?;
    let modes = candidate_modes(&grid);
    let fields = modes.iter().map(|&m| axis_mode(grid, m)).collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for &nu in viscosities {
        for &t in times {
            let mut vals = Vec::with_capacity(modes.len());
            for (&m, f) in modes.iter().zip(&fields) {
                let r = sobolev_norm(&semigroup_apply(f, t, symbol, nu)?, 1, p)? / f.lp_norm(p)?;
                vals.push((m, r, 0.0));
            }
            let (m, v, e, usable) = worst(&vals, &modes);
            points.push(SmoothingPoint { viscosity: nu, t, product: nu * t.abs(), value: v, stderr: e, worst_mode: m, usable });
        }
    }
    finish(points, -1.0 / symbol.alpha, 0.1, true)
}

/// Settings for the Monte Carlo gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McCheckSettings {
    pub samples: usize,
    pub dt: f64,
    pub interpolation: Interpolation,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeGradientReport {
    pub slope: SlopeReport,
    /// Smallest constant `C` with `sup|grad g| <= C (nu|t|)^(-1/alpha)` on
    /// the usable points.
    pub constant: f64,
    /// Neighbouring-node differences obey the Lipschitz bound within three
    /// standard errors.
    pub lipschitz_ok: bool,
}

/// `g_t = E cos(m X^1_{t,0})` on the grid for every candidate mode, from
/// shared paths; `sup |grad g_t|` maximised over modes and fitted against
/// `nu |t|`. Usable points also need the Monte Carlo noise of the gradient
/// below 10% of its size. Pass: slope `-1/alpha +- 0.15`.
pub fn sde_gradient_check(
    u: &VelocityHistory,
    symbol: &LevySymbol,
    viscosities: &[f64],
    times: &[f64],
    mc: &McCheckSettings,
) -> Result<SdeGradientReport> {
    check_params(viscosities, times)?;
    let grid = *u.grid();
    let d = grid.dim;
    let modes = candidate_modes(&grid);
    let points_xyz: Vec<[f64; 3]> = (0..grid.node_count()).map(|i| grid.node(i)).collect();
    let drift = FieldEvaluator::new(u, mc.interpolation, true)?;
    let mut points = Vec::new();
    let mut fields_per_point = Vec::new();
    for &nu in viscosities {
        let sampler = IncrementSampler::preferred(*symbol, d, mc.seed)?;
        let cfg = FlowConfig { dt: mc.dt, viscosity: nu, sampler, interpolation: mc.interpolation };
        cfg.validate()?;
        // Times are snapped to the step lattice; the report carries the
        // snapped values.
        let starts: Vec<usize> = times.iter().map(|t| ((-t / mc.dt).round() as usize).max(1)).collect();
        if starts.iter().any(|s| -(*s as f64) * mc.dt < u.horizon() - 1e-12) {
            return invalid("velocity history does not cover the requested times");
        }
        let ens = NodeEnsemble {
            drift: &drift,
            potential: None,
            drift_history: u,
            potential_history: None,
            cfg: &cfg,
            start_steps: &starts,
            points: &points_xyz,
            samples: mc.samples,
            width: modes.len(),
            track_grad_norm: false,
        };
        let sums = ens.run(|_, _, st, out| {
            let x1 = st.position()[0];
            for (o, &m) in out.iter_mut().zip(&modes) {
                *o = (m as f64 * x1).cos();
            }
        })?;
        let (means, errs) = sums.finish();
        let nodes = grid.node_count();
        let w = modes.len();
        for (si, &steps) in starts.iter().enumerate() {
            let t = -(steps as f64) * mc.dt;
            let mut vals = Vec::with_capacity(w);
            let mut fields = Vec::with_capacity(w);
            for (mi, &m) in modes.iter().enumerate() {
                let pick = |src: &[f64]| (0..nodes).map(|n| src[(si * nodes + n) * w + mi]).collect::<Vec<f64>>();
                let g = PeriodicField::from_values(grid, 1, pick(&means))?;
                let e = pick(&errs);
                let sup = spectral_gradient(&g)?.max_norm();
                // Noise in a mode-m estimate differentiates to about m times
                // its size.
                let noise = m as f64 * e.iter().copied().fold(0.0, f64::max);
                vals.push((m, sup, noise));
                fields.push((g, e));
            }
            let (m, v, noise, interior) = worst(&vals, &modes);
            let usable = interior && noise < 0.1 * v;
            let mi = modes.iter().position(|&x| x == m).expect("mode");
            fields_per_point.push(fields.swap_remove(mi));
            points.push(SmoothingPoint {
                viscosity: nu,
                t,
                product: nu * t.abs(),
                value: v,
                stderr: noise,
                worst_mode: m,
                usable,
            });
        }
    }
    let slope = finish(points, -1.0 / symbol.alpha, 0.15, false)?;
    let inv = 1.0 / symbol.alpha;
    let constant = slope
        .points
        .iter()
        .filter(|p| p.usable)
        .map(|p| p.value * p.product.powf(inv))
        .fold(0.0, f64::max);
    let mut lipschitz_ok = true;
    let h = grid.spacing();
    for (p, (g, e)) in slope.points.iter().zip(&fields_per_point) {
        if !p.usable {
            continue;
        }
        let bound = constant * p.product.powf(-inv) * h;
        for n in 0..grid.node_count() {
            let mut ix = grid.unflatten(n);
            for a in 0..d {
                let keep = ix[a];
                ix[a] = (keep + 1) % grid.n;
                let m = grid.flatten(&ix[..d]);
                ix[a] = keep;
                let diff = (g.values()[n] - g.values()[m]).abs();
                if diff > bound + 3.0 * (e[n] + e[m]) {
                    lipschitz_ok = false;
                }
            }
        }
    }
    Ok(SdeGradientReport { slope, constant, lipschitz_ok })
}

/// `||grad h_t||_p / ||phi||_p` from the mild solver, maximised over
/// single-mode terminal values. Pass: slope `-1/alpha +- 0.1`.
pub fn mild_gradient_bound_check(
    u: &VelocityHistory,
    symbol: &LevySymbol,
    viscosities: &[f64],
    times: &[f64],
    steps: usize,
    p: f64,
) -> Result<SlopeReport> {
    check_params(viscosities, times)?;
    let grid = *u.grid();
    let modes = candidate_modes(&grid);
    let mut points = Vec::new();
    for &nu in viscosities {
        for &t in times {
            let mut vals = Vec::with_capacity(modes.len());
            for &m in &modes {
                let phi = axis_mode(grid, m)?;
                let norm = phi.lp_norm(p)?;
                let prob = PideProblem::new(u.clone(), None, phi, *symbol, nu)?;
                let sol = mild_solve(&prob, t, steps)?;
                let h = sol.history.slices().last().expect("slices");
                vals.push((m, sobolev_norm(h, 1, p)? / norm, 0.0));
            }
            let (m, v, e, usable) = worst(&vals, &modes);
            points.push(SmoothingPoint { viscosity: nu, t, product: nu * t.abs(), value: v, stderr: e, worst_mode: m, usable });
        }
    }
    finish(points, -1.0 / symbol.alpha, 0.1, false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    pub t: f64,
    pub samples: usize,
    pub bin_width: f64,
    /// `max density |t|^(d/alpha) (1 + |t|^(-1/alpha) |x|)^(d+1)` over bins
    /// with at least ten samples, from `samples` and `2 samples` draws.
    pub weighted_max: f64,
    pub weighted_max_doubled: f64,
    /// Density in the window `|x| <= |t|^(1/alpha) / 10`.
    pub central_density: McEstimate,
    /// One dimension only: mirrored bins agree within three bin errors.
    pub symmetric: Option<bool>,
    /// Bins beyond the last well-populated one; a hint to widen bins.
    pub sparse_tail_bins: usize,
    pub passes: bool,
}

struct Histogram {
    lo: f64,
    width: f64,
    counts: Vec<u64>,
}

fn iqr(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    q(0.75) - q(0.25)
}

/// Samples of the process truncated at `a = |t|^(1/alpha)`, run for `|t|`.
fn tail_samples(symbol: &LevySymbol, dim: usize, t: f64, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let a = t.abs().powf(1.0 / symbol.alpha);
    let trunc = LevySymbol::truncated(symbol.alpha, symbol.sigma, a)?;
    let sampler = IncrementSampler::new(trunc, dim, SamplingScheme::CompoundPoissonGaussian, seed)?;
    let out = crate::par::map_indexed(m, |i| sampler.sample_increment(t.abs(), i as u64));
    out.into_iter().collect()
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Volume of the `d`-ball of radius `r`.
fn ball(d: usize, r: f64) -> f64 {
    match d {
        1 => 2.0 * r,
        2 => std::f64::consts::PI * r * r,
        _ => 4.0 / 3.0 * std::f64::consts::PI * r.powi(3),
    }
}

fn weighted_max(xs: &[Vec<f64>], dim: usize, t: f64, alpha: f64, width: f64) -> (f64, usize) {
    let m = xs.len() as f64;
    let scale = t.abs().powf(1.0 / alpha);
    // Radial shells; in one dimension the shell is both sides of the origin.
    let rs: Vec<f64> = xs.iter().map(|x| radius(x)).collect();
    let rmax = rs.iter().copied().fold(0.0, f64::max);
    let bins = (rmax / width).ceil() as usize + 1;
    let mut h = Histogram { lo: 0.0, width, counts: vec![0; bins] };
    for r in rs {
        h.counts[((r - h.lo) / h.width) as usize] += 1;
    }
    let mut best: f64 = 0.0;
    let mut last_good = 0;
    for (i, &c) in h.counts.iter().enumerate() {
        if c < 10 {
            continue;
        }
        last_good = i;
        let (r0, r1) = (i as f64 * width, (i + 1) as f64 * width);
        let density = c as f64 / (m * (ball(dim, r1) - ball(dim, r0)));
        let rc = 0.5 * (r0 + r1);
        let w = density * t.abs().powf(dim as f64 / alpha) * (1.0 + rc / scale).powi(dim as i32 + 1);
        best = best.max(w);
    }
    let sparse = h.counts[last_good + 1..].iter().filter(|c| **c > 0).count();
    (best, sparse)
}

/// Density of the truncated process at time `|t|` with truncation radius
/// `|t|^(1/alpha)`: weighted tail maximum, its stability under doubling of
/// the sample count, the central density and (in 1D) symmetry.
pub fn kernel_tail_check(symbol: &LevySymbol, dim: usize, t: f64, samples: usize, seed: u64) -> Result<TailReport> {
    if !(t < 0.0) || samples < 100 {
        return invalid("need t < 0 and at least 100 samples");
    }
    let xs = tail_samples(symbol, dim, t, 2 * samples, seed)?;
    let first = &xs[..samples];
    let mut r: Vec<f64> = if dim == 1 { first.iter().map(|x| x[0]).collect() } else { first.iter().map(|x| radius(x)).collect() };
    let width = (2.0 * iqr(&mut r) * (samples as f64).powf(-1.0 / 3.0)).max(f64::MIN_POSITIVE);
    let alpha = symbol.alpha;
    let (wm, sparse) = weighted_max(first, dim, t, alpha, width);
    let (wm2, _) = weighted_max(&xs, dim, t, alpha, width);
    let window = 0.1 * t.abs().powf(1.0 / alpha);
    let count = first.iter().filter(|x| radius(x) <= window).count() as f64;
    let vol = ball(dim, window) * samples as f64;
    let central_density = McEstimate { mean: count / vol, stderr: count.sqrt() / vol, samples };
    let symmetric = (dim == 1).then(|| {
        let lim = first.iter().map(|x| x[0].abs()).fold(0.0, f64::max);
        let bins = (lim / width).ceil() as usize;
        let mut pos = vec![0u64; bins + 1];
        let mut neg = vec![0u64; bins + 1];
        for x in first {
            let b = (x[0].abs() / width) as usize;
            if x[0] >= 0.0 {
                pos[b] += 1;
            } else {
                neg[b] += 1;
            }
        }
        pos.iter().zip(&neg).all(|(p, n)| (*p as f64 - *n as f64).abs() <= 3.0 * ((p + n) as f64).sqrt().max(1.0))
    });
    let stable = wm.is_finite() && wm > 0.0 && (wm / wm2 - 1.0).abs() < 0.2;
    Ok(TailReport {
        t,
        samples,
        bin_width: width,
        weighted_max: wm,
        weighted_max_doubled: wm2,
        central_density,
        symmetric,
        sparse_tail_bins: sparse,
        passes: stable && symmetric.unwrap_or(true),
    })
}

/// Central density against `|t|` for several times. Pass: slope
/// `-d/alpha +- 0.1`.
pub fn central_density_scaling(
    symbol: &LevySymbol,
    dim: usize,
    times: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(Vec<TailReport>, SlopeFit, bool)> {
    let reports = times
        .iter()
        .enumerate()
        .map(|(i, &t)| kernel_tail_check(symbol, dim, t, samples, crate::rng::derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = times.iter().map(|t| t.abs()).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.central_density.mean).collect();
    let fit = fit_loglog(&xs, &ys)?;
    let ok = fit.within(-(dim as f64) / symbol.alpha, 0.1);
    Ok((reports, fit, ok))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovReport {
    /// `sup_x E int_t^0 f_r(X_r) dr` over the start points.
    pub lhs: McEstimate,
    pub lhs_doubled: McEstimate,
    /// `||f||_{L^q([t,0]; L^p)}`
    pub rhs: f64,
    pub ratio: f64,
    pub ratio_doubled: f64,
    pub stable: bool,
}

/// Krylov-type bound `E int f(X) <= C ||f||_{L^q L^p}`: reports the ratio
/// and its stability when the sample count doubles.
#[allow(clippy::too_many_arguments)]
pub fn krylov_check(
    u: &VelocityHistory,
    f: &FieldHistory,
    symbol: &LevySymbol,
    viscosity: f64,
    t: f64,
    start_points: &[Vec<f64>],
    p: f64,
    q: f64,
    mc: &McCheckSettings,
) -> Result<KrylovReport> {
    let grid = *u.grid();
    let d = grid.dim as f64;
    let a = symbol.alpha;
    if !(p > d / a) {
        return invalid(format!("p = {p} must exceed d/alpha = {:.4}", d / a));
    }
    if !(q > p * a / (p * a - d)) {
        return invalid(format!("q = {q} must exceed p alpha / (p alpha - d) = {:.4}", p * a / (p * a - d)));
    }
    if f.comps() != 1 || *f.grid() != grid {
        return invalid("test function must be a scalar history on the drift grid");
    }
    if f.slices().iter().any(|s| s.values().iter().any(|v| *v < 0.0)) {
        return invalid("test function must be non-negative");
    }
    if !(t < 0.0) || t < u.horizon() - 1e-12 || t < f.horizon() - 1e-12 {
        return invalid("t must be negative and covered by both histories");
    }
    if start_points.is_empty() || start_points.iter().any(|x| x.len() != grid.dim) {
        return invalid("need start points of the grid dimension");
    }
    // Right side by the trapezoid rule in time on a fine partition.
    let parts = 64;
    let mut acc = 0.0;
    let mut prev = f.at(0.0)?.lp_norm(p)?.powf(q);
    for i in 1..=parts {
        let s = t * i as f64 / parts as f64;
        let cur = f.at(s)?.lp_norm(p)?.powf(q);
        acc += 0.5 * (prev + cur) * t.abs() / parts as f64;
        prev = cur;
    }
    let rhs = acc.powf(1.0 / q);

    let sampler = IncrementSampler::preferred(*symbol, grid.dim, mc.seed)?;
    let cfg = FlowConfig { dt: mc.dt, viscosity, sampler, interpolation: mc.interpolation };
    cfg.validate()?;
    let steps = cfg.steps_to_zero(t)?;
    let drift = FieldEvaluator::new(u, mc.interpolation, true)?;
    let pot = FieldEvaluator::new(f, mc.interpolation, false)?;
    let pts: Vec<[f64; 3]> = start_points
        .iter()
        .map(|x| {
            let mut p = [0.0; 3];
            p[..x.len()].copy_from_slice(x);
            p
        })
        .collect();
    let run = |samples| -> Result<McEstimate> {
        let ens = NodeEnsemble {
            drift: &drift,
            potential: Some(&pot),
            drift_history: u,
            potential_history: Some(f),
            cfg: &cfg,
            start_steps: &[steps],
            points: &pts,
            samples,
            width: 1,
            track_grad_norm: false,
        };
        let (means, errs) = ens.run(|_, _, st, out| out[0] = st.potential_integral)?.finish();
        let i = (0..means.len()).max_by(|a, b| means[*a].total_cmp(&means[*b])).expect("points");
        Ok(McEstimate { mean: means[i], stderr: errs[i], samples })
    };
    let lhs = run(mc.samples)?;
    let lhs_doubled = run(2 * mc.samples)?;
    let ratio = lhs.mean / rhs;
    let ratio_doubled = lhs_doubled.mean / rhs;
    let stable = ratio.is_finite() && ratio_doubled.is_finite() && (ratio / ratio_doubled - 1.0).abs() < 0.2;
    Ok(KrylovReport { lhs, lhs_doubled, rhs, ratio, ratio_doubled, stable })
}

/// Non-negative bump `max(0, 1 - |x - c|^2 / r^2)^2` scaled to unit `L^p`
/// norm.
pub fn bump(grid: PeriodicGrid, center: &[f64], r: f64, p: f64) -> Result<PeriodicField> {
    let f = PeriodicField::from_fn(grid, 1, |x, o| {
        let mut s = 0.0;
        for (a, c) in x.iter().zip(center) {
            let mut dx = (a - c).abs();
            dx = dx.min(2.0 * std::f64::consts::PI - dx);
            s += dx * dx;
        }
        o[0] = (1.0 - s / (r * r)).max(0.0).powi(2);
    })?;
    let n = f.lp_norm(p)?;
    if n == 0.0 {
        return invalid("bump radius is below the grid resolution");
    }
    f.scale(1.0 / n)
}
