//! Picard iteration for the stochastic Lagrangian system: the velocity on
//! `[T, 0]` is the projected average of `grad^T X_{t,0} u0(X_{t,0})` over
//! Lévy-driven flows whose drift is the previous iterate.

use std::path::Path;

use crate::error::{invalid, FnseError, Result};
use crate::feynman_kac::{vector_estimates, VectorJob};
use crate::fields::io::{read_field, write_field};
use crate::fields::{
    apply_generator, divergence, leray_project, sobolev_norm, spectral_gradient, FieldHistory, Interpolation,
    PeriodicField, PeriodicGrid, VelocityHistory,
};
use crate::levy_sim::{IncrementSampler, LevySymbol};
use crate::report::{fmt_f64, CsvTable};
use crate::rng::derive_seed;
use crate::sde_flow::{FlowConfig, EXP_MOMENT_THRESHOLD};

/// Halvings of the horizon allowed before giving up.
pub const MAX_HALVINGS: usize = 6;
/// `gamma` of the exponential-moment diagnostic used for horizon control.
pub const EXP_MOMENT_GAMMA: f64 = 4.0;
const MEAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    pub grid: PeriodicGrid,
    pub symbol: LevySymbol,
    pub viscosity: f64,
    /// Monte Carlo samples per grid node and slice.
    pub samples: usize,
    pub dt: f64,
    /// Number of time intervals `K`; the solution has `K + 1` slices.
    pub slices: usize,
    pub c0: f64,
    /// Absolute tolerance on `||u^{n+1}_t - u^n_t||_p`, added to three
    /// aggregate standard errors.
    pub picard_tol: f64,
    pub picard_max: usize,
    pub p: f64,
    pub interpolation: Interpolation,
    pub seed: u64,
}

impl SolveConfig {
    pub fn new(grid: PeriodicGrid, symbol: LevySymbol) -> Self {
        Self {
            grid,
            symbol,
            viscosity: 1.0,
            samples: 2000,
            dt: 1e-3,
            slices: 4,
            c0: 1.0,
            picard_tol: 1e-4,
            picard_max: 10,
            p: 4.0,
            interpolation: Interpolation::Linear,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.symbol.alpha;
        let d = self.grid.dim as f64;
        if !(a > 1.0 && a < 2.0) {
            return invalid(format!("alpha = {a} must lie in (1, 2) for the solver"));
        }
        if !(self.p > 2.0 * d / a) {
            return invalid(format!("p = {} must exceed 2d/alpha = {:.4}", self.p, 2.0 * d / a));
        }
        crate::fields::check_viscosity(self.viscosity)?;
        if self.samples == 0 || self.slices == 0 || self.picard_max == 0 {
            return invalid("samples, slices and picard_max must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt = {} must be positive", self.dt));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) || !(self.picard_tol >= 0.0) {
            return invalid("c0 must be positive and picard_tol non-negative");
        }
        Ok(())
    }

    fn flow_config(&self) -> Result<FlowConfig> {
        let sampler = IncrementSampler::preferred(self.symbol, self.grid.dim, self.seed)?;
        let cfg = FlowConfig { dt: self.dt, viscosity: self.viscosity, sampler, interpolation: self.interpolation };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Horizon quantum: slices must fall on the step lattice.
    fn quantum(&self) -> f64 {
        self.slices as f64 * self.dt
    }

    /// Largest multiple `n >= 1` of the quantum with `n q <= |t|`, as a
    /// negative time.
    fn snap(&self, t: f64) -> f64 {
        let n = ((t.abs() / self.quantum()) + 1e-9).floor().max(1.0);
        -((n as usize * self.slices) as f64) * self.dt
    }
}

fn check_initial(u0: &PeriodicField, cfg: &SolveConfig) -> Result<PeriodicField> {
    if *u0.grid() != cfg.grid || u0.comps() != cfg.grid.dim {
        return invalid("initial velocity must be a vector field on the configured grid");
    }
    let scale = u0.max_norm().max(1.0);
    if u0.mean().iter().any(|m| m.abs() > MEAN_TOL * scale) {
        return invalid("initial velocity must have zero mean");
    }
    u0.clone().mark_divergence_free()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Horizon {
    /// Chosen horizon `T < 0`, a multiple of `K dt`.
    pub t: f64,
    /// `max(-1, -1 / (C0 ||grad u0||_p))` before rounding and halving.
    pub formula: f64,
    pub halvings: usize,
    /// Largest per-node `E exp(4 int |grad u|)` seen at the chosen horizon.
    pub exp_moment: f64,
}

/// Local existence horizon, shrunk until the exponential moment of the
/// frozen initial drift is at most 2.
pub fn local_horizon(u0: &PeriodicField, cfg: &SolveConfig) -> Result<Horizon> {
    cfg.validate()?;
    let u0 = check_initial(u0, cfg)?;
    let g = sobolev_norm(&u0, 1, cfg.p)?;
    if g == 0.0 {
        return Ok(Horizon { t: cfg.snap(-1.0), formula: -1.0, halvings: 0, exp_moment: 1.0 });
    }
    let formula = (-1.0 / (cfg.c0 * g)).max(-1.0);
    let mut t = cfg.snap(formula);
    let mut halvings = 0;
    loop {
        let e = exp_moment_probe(&u0, t, cfg)?;
        if e <= EXP_MOMENT_THRESHOLD {
            return Ok(Horizon { t, formula, halvings, exp_moment: e });
        }
        let next = cfg.snap(t / 2.0);
        if halvings == MAX_HALVINGS || next == t {
            return Err(FnseError::NoLocalSolution(format!(
                "exponential moment {e:.3} still above {EXP_MOMENT_THRESHOLD} at T = {t} after {halvings} halvings"
            )));
        }
        t = next;
        halvings += 1;
    }
}

fn exp_moment_probe(u0: &PeriodicField, t: f64, cfg: &SolveConfig) -> Result<f64> {
    let flow = cfg.flow_config()?;
    let u = VelocityHistory::frozen(u0.clone(), t)?;
    let coarse = PeriodicGrid::new(cfg.grid.dim, cfg.grid.n.min(8))?;
    let job = VectorJob {
        u: &u,
        phi: u0,
        cfg: &flow,
        start_steps: &[flow.steps_to_zero(t)?],
        grid_eval: &coarse,
        samples: cfg.samples.min(128),
        with_grad: false,
        exp_gamma: Some(EXP_MOMENT_GAMMA),
        phi_interpolation: cfg.interpolation,
    };
    let est = vector_estimates(&job)?.pop().expect("one start time");
    let (means, _) = est.exp_moment.expect("requested");
    Ok(means.into_iter().fold(1.0, f64::max))
}

/// Result of one Picard sweep.
#[derive(Clone, Debug)]
pub struct PicardStep {
    pub u: VelocityHistory,
    /// Per slice: per-node standard errors of the unprojected average.
    pub stderr: Vec<PeriodicField>,
    /// Per slice: `L^p` norm of the standard errors of the gradient estimate.
    pub grad_stderr: Vec<f64>,
    /// Per slice: largest per-node `E exp(4 int |grad u_n|)`.
    pub exp_moment: Vec<f64>,
}

/// One sweep `u_n -> u_{n+1}` on the slice times of `u_n`.
pub fn picard_step(u_n: &VelocityHistory, u0: &PeriodicField, cfg: &SolveConfig) -> Result<PicardStep> {
    cfg.validate()?;
    let u0 = check_initial(u0, cfg)?;
    if *u_n.grid() != cfg.grid {
        return invalid("iterate and configuration grids differ");
    }
    let flow = cfg.flow_config()?;
    let times = u_n.times();
    let starts = times[1..].iter().map(|&t| flow.steps_to_zero(t)).collect::<Result<Vec<_>>>()?;
    let d = cfg.grid.dim;
    let zeros = PeriodicField::zeros(cfg.grid, d);
    let mut slices = vec![u0.clone()];
    let mut stderr = vec![zeros];
    let mut grad_stderr = vec![0.0];
    let mut exp_moment = vec![1.0];
    if !starts.is_empty() {
        let job = VectorJob {
            u: u_n,
            phi: &u0,
            cfg: &flow,
            start_steps: &starts,
            grid_eval: &cfg.grid,
            samples: cfg.samples,
            with_grad: true,
            exp_gamma: Some(EXP_MOMENT_GAMMA),
            // The terminal value is evaluated once per path, so the exact
            // series is affordable and removes interpolation bias.
            phi_interpolation: Interpolation::Spectral,
        };
        for est in vector_estimates(&job)? {
            let w = PeriodicField::from_values(cfg.grid, d, est.w)?;
            let field = leray_project(&w)?.subtract_mean()?.mark_divergence_free()?;
            slices.push(field);
            stderr.push(PeriodicField::from_values(cfg.grid, d, est.w_err)?);
            let (_, ge) = est.grad.expect("requested");
            grad_stderr.push(PeriodicField::from_values(cfg.grid, d * d, ge)?.lp_norm(cfg.p)?);
            let (em, _) = est.exp_moment.expect("requested");
            exp_moment.push(em.into_iter().fold(1.0, f64::max));
        }
    }
    Ok(PicardStep { u: VelocityHistory::new(times.to_vec(), slices)?, stderr, grad_stderr, exp_moment })
}

#[derive(Clone, Debug)]
pub struct SolutionHistory {
    pub u: VelocityHistory,
    pub horizon: Horizon,
    pub iterations: usize,
    pub converged: bool,
    /// `[iteration][slice]`: `||u^{n+1}_t - u^n_t||_p`.
    pub diffs: Vec<Vec<f64>>,
    pub stderr: Vec<PeriodicField>,
    /// Per slice `L^p` norm of `stderr`.
    pub stderr_aggregate: Vec<f64>,
    pub u_norms: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub grad_norm_stderr: Vec<f64>,
    pub initial_grad_norm: f64,
    pub exp_moment: Vec<f64>,
    pub exp_flags: Vec<bool>,
    pub c0: f64,
    pub p: f64,
}

impl SolutionHistory {
    pub fn times(&self) -> &[f64] {
        self.u.times()
    }

    /// `sup_t ||grad u_t||_p <= 3 C0 ||grad u0||_p`, each slice allowed three
    /// standard errors.
    pub fn norm_bound_holds(&self) -> bool {
        let bound = 3.0 * self.c0 * self.initial_grad_norm;
        self.grad_norms.iter().zip(&self.grad_norm_stderr).all(|(g, s)| *g <= bound + 3.0 * s)
    }

    /// The largest per-slice difference shrinks from one sweep to the next
    /// until it reaches the noise floor.
    pub fn contraction_evidence(&self) -> bool {
        let floor = 3.0 * self.stderr_aggregate.iter().copied().fold(0.0, f64::max);
        let sup: Vec<f64> = self.diffs.iter().map(|d| d.iter().copied().fold(0.0, f64::max)).collect();
        sup.windows(2).all(|w| w[1] <= w[0] || w[1] <= floor)
    }

    /// Manifest rows: slice time, norms, iteration count and noise level.
    pub fn manifest(&self) -> Result<CsvTable> {
        let mut t = CsvTable::new(["slice", "t", "u_norm_p", "grad_u_norm_p", "iterations", "stderr_aggregate"]);
        for (j, time) in self.times().iter().enumerate() {
            t.push(vec![
                j.to_string(),
                fmt_f64(*time),
                fmt_f64(self.u_norms[j]),
                fmt_f64(self.grad_norms[j]),
                self.iterations.to_string(),
                fmt_f64(self.stderr_aggregate[j]),
            ])?;
        }
        Ok(t)
    }

    /// `slice_XXX.fnse` dumps plus `manifest.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_history(dir, &self.u, &self.manifest()?)
    }
}

pub(crate) fn write_history(dir: &Path, u: &FieldHistory, manifest: &CsvTable) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (j, (t, f)) in u.times().iter().zip(u.slices()).enumerate() {
        write_field(&dir.join(format!("slice_{j:03}.fnse")), f, *t)?;
    }
    manifest.write(&dir.join("manifest.csv"))
}

/// Load the `slice_XXX.fnse` dumps of an output directory in slice order.
pub fn read_history(dir: &Path) -> Result<FieldHistory> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("slice_") && n.ends_with(".fnse"))
        })
        .collect();
    if paths.is_empty() {
        return invalid(format!("no slice dumps in {}", dir.display()));
    }
    paths.sort();
    let mut times = Vec::with_capacity(paths.len());
    let mut fields = Vec::with_capacity(paths.len());
    for p in paths {
        let (f, t) = read_field(&p)?;
        times.push(t);
        fields.push(f);
    }
    FieldHistory::new(times, fields)
}

enum LoopOutcome {
    Done(Box<SolutionHistory>),
    Diverged(String),
}

fn picard_loop(u0: &PeriodicField, cfg: &SolveConfig, horizon: Horizon) -> Result<LoopOutcome> {
    let times = FieldHistory::uniform_times(horizon.t, cfg.slices);
    let mut u = VelocityHistory::new(times, vec![u0.clone(); cfg.slices + 1])?;
    let mut diffs: Vec<Vec<f64>> = Vec::new();
    let mut growth = 0;
    let mut last: Option<PicardStep> = None;
    let mut converged = false;
    for _ in 0..cfg.picard_max {
        let step = picard_step(&u, u0, cfg)?;
        let mut d = Vec::with_capacity(cfg.slices + 1);
        let mut ok = true;
        for j in 0..=cfg.slices {
            let diff = step.u.slices()[j].combine(1.0, &u.slices()[j], -1.0)?.lp_norm(cfg.p)?;
            let agg = step.stderr[j].lp_norm(cfg.p)?;
            ok &= diff <= cfg.picard_tol + 3.0 * agg;
            d.push(diff);
        }
        let sup = d.iter().copied().fold(0.0, f64::max);
        if !sup.is_finite() {
            return Ok(LoopOutcome::Diverged(format!("non-finite iterate at T = {}", horizon.t)));
        }
        let prev_sup = diffs.last().map(|p| p.iter().copied().fold(0.0, f64::max));
        diffs.push(d);
        u = step.u.clone();
        last = Some(step);
        if ok {
            converged = true;
            break;
        }
        if prev_sup.is_some_and(|p| sup > p) {
            growth += 1;
            if growth >= 3 {
                return Ok(LoopOutcome::Diverged(format!(
                    "iteration differences grew three times in a row at T = {} (last {sup:.3e})",
                    horizon.t
                )));
            }
        } else {
            growth = 0;
        }
    }
    let step = last.expect("at least one sweep");
    let mut u_norms = Vec::new();
    let mut grad_norms = Vec::new();
    let mut stderr_aggregate = Vec::new();
    for (f, e) in u.slices().iter().zip(&step.stderr) {
        u_norms.push(f.lp_norm(cfg.p)?);
        grad_norms.push(sobolev_norm(f, 1, cfg.p)?);
        stderr_aggregate.push(e.lp_norm(cfg.p)?);
    }
    let exp_flags = step.exp_moment.iter().map(|e| *e > EXP_MOMENT_THRESHOLD).collect();
    Ok(LoopOutcome::Done(Box::new(SolutionHistory {
        initial_grad_norm: grad_norms[0],
        iterations: diffs.len(),
        converged,
        diffs,
        stderr: step.stderr,
        stderr_aggregate,
        u_norms,
        grad_norms,
        grad_norm_stderr: step.grad_stderr,
        exp_moment: step.exp_moment,
        exp_flags,
        c0: cfg.c0,
        p: cfg.p,
        horizon,
        u,
    })))
}

/// Local solution from `u0` on `[T, 0]`, halving `T` when the Picard
/// iteration fails to contract.
pub fn solve_local(u0: &PeriodicField, cfg: &SolveConfig) -> Result<SolutionHistory> {
    solve_local_capped(u0, cfg, None)
}

fn solve_local_capped(u0: &PeriodicField, cfg: &SolveConfig, cap: Option<f64>) -> Result<SolutionHistory> {
    let u0 = check_initial(u0, cfg)?;
    let mut horizon = local_horizon(&u0, cfg)?;
    if let Some(c) = cap {
        if horizon.t < c {
            horizon.t = cfg.snap(c);
        }
    }
    loop {
        match picard_loop(&u0, cfg, horizon)? {
            LoopOutcome::Done(sol) => return Ok(*sol),
            LoopOutcome::Diverged(why) => {
                let next = cfg.snap(horizon.t / 2.0);
                if horizon.halvings >= MAX_HALVINGS || next == horizon.t {
                    return Err(FnseError::NoLocalSolution(format!(
                        "{why}; {} halvings used, N = {}, M = {}, dt = {}",
                        horizon.halvings, cfg.grid.n, cfg.samples, cfg.dt
                    )));
                }
                horizon.t = next;
                horizon.halvings += 1;
            }
        }
    }
}

/// Residual of the weak form for one divergence-free test field.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakResidual {
    /// Per slice `<u_t, phi> - <u_0, phi> - int_t^0 (...) ds`.
    pub residual: Vec<f64>,
    /// Per slice standard error propagated from the node errors (fully
    /// correlated, which is conservative under common random numbers).
    pub stderr: Vec<f64>,
    /// Per slice trapezoid error estimate `|t| dT^2 max|f''| / 12`.
    pub budget: Vec<f64>,
}

impl WeakResidual {
    pub fn passes(&self) -> bool {
        self.residual.iter().zip(&self.stderr).zip(&self.budget).all(|((r, s), b)| r.abs() <= 3.0 * s + b)
    }
}

/// Pointwise `sum_c |a_c| |b_c|` integrated over the grid.
fn abs_inner(a: &PeriodicField, b: &PeriodicField) -> f64 {
    let w = a.grid().cell_volume();
    a.values().iter().zip(b.values()).map(|(x, y)| x.abs() * y.abs()).sum::<f64>() * w
}

/// Weak-form residuals of a solution against divergence-free test fields.
pub fn weak_form_residual(sol: &SolutionHistory, cfg: &SolveConfig, tests: &[PeriodicField]) -> Result<Vec<WeakResidual>> {
    let times = sol.times();
    if times.len() < 3 {
        return invalid("weak form needs at least three slices");
    }
    let grid = *sol.u.grid();
    let d = grid.dim;
    let delta = times[0] - times[1];
    let slices = sol.u.slices();
    let mut out = Vec::with_capacity(tests.len());
    for phi in tests {
        if *phi.grid() != grid || phi.comps() != d {
            return invalid("test field must be a vector field on the solution grid");
        }
        let div = divergence(phi)?.max_norm();
        if div > 1e-10 * phi.max_norm().max(1.0) {
            return invalid(format!("test field is not divergence-free (max |div| = {div:.3e})"));
        }
        let lphi = apply_generator(phi, &cfg.symbol, cfg.viscosity, true)?;
        let gphi = spectral_gradient(phi)?;
        // f_m = <u_m, L* phi> + <(u_m . grad) u_m, phi>, with the transport
        // term written as -sum u_a u_b d_a phi_b so its noise needs no
        // derivative of the estimate.
        let mut f = Vec::with_capacity(slices.len());
        let mut g = Vec::with_capacity(slices.len());
        for (u, e) in slices.iter().zip(&sol.stderr) {
            let mut nonlinear = 0.0;
            let mut nl_err = 0.0;
            for n in 0..grid.node_count() {
                let (un, en, gn) = (u.node_value(n), e.node_value(n), gphi.node_value(n));
                for b in 0..d {
                    for a in 0..d {
                        let dphi = gn[b * d + a];
                        nonlinear -= un[a] * un[b] * dphi;
                        nl_err += (en[a] * un[b].abs() + un[a].abs() * en[b]) * dphi.abs();
                    }
                }
            }
            let w = grid.cell_volume();
            f.push(u.inner(&lphi)? + nonlinear * w);
            g.push(abs_inner(e, &lphi) + nl_err * w);
        }
        let curvature = f.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).fold(0.0, f64::max) / (delta * delta);
        let base = slices[0].inner(phi)?;
        let mut residual = vec![0.0];
        let mut stderr = vec![0.0];
        let mut budget = vec![0.0];
        let (mut integral, mut int_err) = (0.0, 0.0);
        for j in 1..slices.len() {
            integral += 0.5 * delta * (f[j - 1] + f[j]);
            int_err += 0.5 * delta * (g[j - 1] + g[j]);
            residual.push(slices[j].inner(phi)? - base - integral);
            stderr.push(abs_inner(&sol.stderr[j], phi) + int_err);
            budget.push(times[j].abs() * delta * delta * curvature / 12.0);
        }
        out.push(WeakResidual { residual, stderr, budget });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReentryCheck {
    /// Global time of the restart slice.
    pub t: f64,
    pub grad_norm: f64,
    pub grad_norm_stderr: f64,
    /// `||grad u0||_p` of the original initial value.
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct GlobalSolution {
    /// The concatenated solution in global time.
    pub u: VelocityHistory,
    pub segments: Vec<SolutionHistory>,
    /// Global time of each segment's `t = 0` slice.
    pub offsets: Vec<f64>,
    pub reentry: Vec<ReentryCheck>,
}

impl GlobalSolution {
    pub fn manifest(&self, p: f64) -> Result<CsvTable> {
        let mut t = CsvTable::new(["slice", "t", "segment", "u_norm_p", "grad_u_norm_p"]);
        let mut j = 0;
        for (s, seg) in self.segments.iter().enumerate() {
            let skip = usize::from(s > 0);
            for (time, f) in seg.times().iter().zip(seg.u.slices()).skip(skip) {
                t.push(vec![
                    j.to_string(),
                    fmt_f64(self.offsets[s] + time),
                    s.to_string(),
                    fmt_f64(f.lp_norm(p)?),
                    fmt_f64(sobolev_norm(f, 1, p)?),
                ])?;
                j += 1;
            }
        }
        Ok(t)
    }

    pub fn write_to(&self, dir: &Path, p: f64) -> Result<()> {
        write_history(dir, &self.u, &self.manifest(p)?)
    }
}

/// Chain local solutions back to `total_horizon`, restarting from each
/// segment's earliest slice. Before each restart the gradient norm must not
/// exceed that of `u0` (two standard errors allowed); three failures in a
/// row abort.
pub fn continue_global(u0: &PeriodicField, cfg: &SolveConfig, total_horizon: f64) -> Result<GlobalSolution> {
    cfg.validate()?;
    let u0 = check_initial(u0, cfg)?;
    if !(total_horizon < 0.0) {
        return invalid(format!("total horizon {total_horizon} must be negative"));
    }
    let total = cfg.snap(total_horizon);
    let bound = sobolev_norm(&u0, 1, cfg.p)?;
    let mut current = u0;
    let mut offset = 0.0;
    let mut segments = Vec::new();
    let mut offsets = Vec::new();
    let mut reentry = Vec::new();
    let mut failures = 0;
    let eps = 1e-9 * cfg.dt;
    while offset > total + eps {
        let seg_cfg = SolveConfig { seed: derive_seed(cfg.seed, segments.len() as u64), ..cfg.clone() };
        let sol = solve_local_capped(&current, &seg_cfg, Some(total - offset))?;
        offsets.push(offset);
        offset += sol.horizon.t;
        current = sol.u.slices().last().expect("slices").clone();
        let se = *sol.grad_norm_stderr.last().expect("slices");
        segments.push(sol);
        if offset > total + eps {
            let g = sobolev_norm(&current, 1, cfg.p)?;
            let ok = g <= bound + 2.0 * se;
            reentry.push(ReentryCheck { t: offset, grad_norm: g, grad_norm_stderr: se, bound, ok });
            failures = if ok { 0 } else { failures + 1 };
            if failures >= 3 {
                return Err(FnseError::ViscosityTooSmall(format!(
                    "gradient norm {g:.4e} exceeded the initial {bound:.4e} at three consecutive restarts (t = {offset})"
                )));
            }
        }
    }
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for (s, seg) in segments.iter().enumerate() {
        let skip = usize::from(s > 0);
        for (t, f) in seg.times().iter().zip(seg.u.slices()).skip(skip) {
            times.push(offsets[s] + t);
            fields.push(f.clone());
        }
    }
    Ok(GlobalSolution { u: VelocityHistory::new(times, fields)?, segments, offsets, reentry })
}
