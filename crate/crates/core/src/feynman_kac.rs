//! Monte Carlo estimators for backward transport equations with Lévy noise,
//! and a deterministic mild-form solver used to check them.
//!
//! Scalar problem, for `t <= 0` with terminal value `phi`:
//! `d_t h + L_nu h + (u . grad) h + c h = 0`, represented as
//! `h_t(x) = E[exp(int_t^0 c_r(X_r) dr) phi(X_{t,0}(x))]`.
//!
//! Vector problem: `w_t = P E[grad^T X_{t,0} phi(X_{t,0})]`, together with the
//! gradient formula that only needs first derivatives of the flow.

use num_complex::Complex64;

use crate::error::{invalid, FnseError, Result};
use crate::fields::{
    advect, check_viscosity, leray_project, spectral_gradient, FieldHistory, Interpolation, PeriodicField,
    PeriodicGrid, VelocityHistory,
};
use crate::levy_sim::{IncrementSampler, LevySymbol};
use crate::mc::McEstimate;
use crate::sde_flow::{FieldEvaluator, FlowConfig, NodeEnsemble, PathState};

#[derive(Clone, Debug)]
pub struct PideProblem {
    pub u: VelocityHistory,
    /// Scalar potential; `None` means `c = 0`.
    pub c: Option<FieldHistory>,
    pub phi: PeriodicField,
    pub symbol: LevySymbol,
    pub viscosity: f64,
}

impl PideProblem {
    pub fn new(u: VelocityHistory, c: Option<FieldHistory>, phi: PeriodicField, symbol: LevySymbol, viscosity: f64) -> Result<Self> {
        check_viscosity(viscosity)?;
        let grid = *u.grid();
        if *phi.grid() != grid {
            return invalid("terminal value and drift live on different grids");
        }
        if let Some(c) = &c {
            if *c.grid() != grid || c.comps() != 1 {
                return invalid("potential must be a scalar history on the drift grid");
            }
        }
        Ok(Self { u, c, phi, symbol, viscosity })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.u.grid()
    }

    /// Latest time at which drift and potential are both defined.
    fn horizon(&self) -> f64 {
        let h = self.u.horizon();
        match &self.c {
            Some(c) => h.max(c.horizon()),
            None => h,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub dt: f64,
    pub interpolation: Interpolation,
    pub seed: u64,
}

impl McSettings {
    pub fn flow_config(&self, prob: &PideProblem) -> Result<FlowConfig> {
        let sampler = IncrementSampler::preferred(prob.symbol, prob.grid().dim, self.seed)?;
        let cfg = FlowConfig { dt: self.dt, viscosity: prob.viscosity, sampler, interpolation: self.interpolation };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_time(prob: &PideProblem, t: f64) -> Result<()> {
    if !(t <= 0.0) || t < prob.horizon() - 1e-12 {
        return invalid(format!("time {t} outside the problem interval [{}, 0]", prob.horizon()));
    }
    Ok(())
}

fn pad(x: &[f64]) -> Result<[f64; 3]> {
    let mut p = [0.0; 3];
    if x.len() > 3 || x.iter().any(|v| !v.is_finite()) {
        return invalid("evaluation point must be finite with at most 3 coordinates");
    }
    p[..x.len()].copy_from_slice(x);
    Ok(p)
}

/// `h_t` at several points from `m` paths each. All points share the noise
/// path of each sample.
pub fn estimate_h_points(prob: &PideProblem, points: &[Vec<f64>], t: f64, m: usize, mc: &McSettings) -> Result<Vec<McEstimate>> {
    if m == 0 {
        return invalid("sample count must be positive");
    }
    if prob.phi.comps() != 1 {
        return invalid("scalar estimator needs a scalar terminal value");
    }
    check_time(prob, t)?;
    let d = prob.grid().dim;
    if points.iter().any(|p| p.len() != d) {
        return invalid("evaluation points must match the grid dimension");
    }
    let cfg = mc.flow_config(prob)?;
    let steps = cfg.steps_to_zero(t)?;
    let drift = FieldEvaluator::new(&prob.u, mc.interpolation, true)?;
    let pot = match &prob.c {
        Some(c) => Some(FieldEvaluator::new(c, mc.interpolation, false)?),
        None => None,
    };
    let phi = FieldEvaluator::from_field(&prob.phi, mc.interpolation, false)?;
    let pts = points.iter().map(|p| pad(p)).collect::<Result<Vec<_>>>()?;
    let ens = NodeEnsemble {
        drift: &drift,
        potential: pot.as_ref(),
        drift_history: &prob.u,
        potential_history: prob.c.as_ref(),
        cfg: &cfg,
        start_steps: &[steps],
        points: &pts,
        samples: m,
        width: 1,
        track_grad_norm: false,
    };
    let sums = ens.run(|_, _, st: &PathState, out| {
        let mut v = [0.0];
        phi.eval_slice(0, st.position(), &mut v);
        out[0] = st.potential_integral.exp() * v[0];
    })?;
    let (means, errs) = sums.finish();
    Ok(means
        .into_iter()
        .zip(errs)
        .map(|(mean, stderr)| McEstimate { mean, stderr, samples: m })
        .collect())
}

pub fn estimate_h(prob: &PideProblem, x: &[f64], t: f64, m: usize, mc: &McSettings) -> Result<McEstimate> {
    Ok(estimate_h_points(prob, &[x.to_vec()], t, m, mc)?[0])
}

/// A field estimate with its per-node standard errors.
#[derive(Clone, Debug)]
pub struct FieldEstimate {
    pub field: PeriodicField,
    /// Per-node, per-component standard errors of the unprojected average.
    pub stderr: PeriodicField,
    pub samples: usize,
}

impl FieldEstimate {
    /// `L^p` norm of the standard-error field, used as an aggregate noise
    /// level for the estimate.
    pub fn aggregate_stderr(&self, p: f64) -> Result<f64> {
        self.stderr.lp_norm(p)
    }
}

fn grid_points(grid: &PeriodicGrid) -> Vec<[f64; 3]> {
    (0..grid.node_count()).map(|i| grid.node(i)).collect()
}

/// Per-node averages of `J^T phi(X)` and, when requested, of the gradient
/// integrand `J^T (G - G^T)(X) J` (`G = grad phi`) from the same paths.
pub(crate) struct VectorEstimates {
    pub w: Vec<f64>,
    pub w_err: Vec<f64>,
    /// Layout `[node][j * d + i]`: component `j`, derivative direction `i`.
    pub grad: Option<(Vec<f64>, Vec<f64>)>,
    /// Per-node mean of `exp(gamma int |grad u|)`.
    pub exp_moment: Option<(Vec<f64>, Vec<f64>)>,
}

pub(crate) struct VectorJob<'a> {
    pub u: &'a VelocityHistory,
    pub phi: &'a PeriodicField,
    pub cfg: &'a FlowConfig,
    pub start_steps: &'a [usize],
    pub grid_eval: &'a PeriodicGrid,
    pub samples: usize,
    pub with_grad: bool,
    pub exp_gamma: Option<f64>,
    /// Interpolation for the terminal value; the drift uses `cfg.interpolation`.
    pub phi_interpolation: Interpolation,
}

/// Run the vector estimator for every start time. Returns one result per
/// start time.
pub(crate) fn vector_estimates(job: &VectorJob) -> Result<Vec<VectorEstimates>> {
    let d = job.u.grid().dim;
    if job.phi.comps() != d || job.grid_eval.dim != d {
        return invalid("terminal field must be a vector field on a grid of the drift dimension");
    }
    let drift = FieldEvaluator::new(job.u, job.cfg.interpolation, true)?;
    let phi = FieldEvaluator::from_field(job.phi, job.phi_interpolation, job.with_grad)?;
    let points = grid_points(job.grid_eval);
    let w_off = 0;
    let g_off = d;
    let e_off = if job.with_grad { d + d * d } else { d };
    let width = e_off + usize::from(job.exp_gamma.is_some());
    let ens = NodeEnsemble {
        drift: &drift,
        potential: None,
        drift_history: job.u,
        potential_history: None,
        cfg: job.cfg,
        start_steps: job.start_steps,
        points: &points,
        samples: job.samples,
        width,
        track_grad_norm: job.exp_gamma.is_some(),
    };
    let pw = phi.width();
    let sums = ens.run(|_, _, st, out| {
        let mut buf = [0.0; 12];
        phi.eval_slice(0, st.position(), &mut buf[..pw]);
        let jac = st.jacobian();
        let v = &buf[..d];
        for j in 0..d {
            out[w_off + j] = (0..d).map(|a| jac[a * d + j] * v[a]).sum();
        }
        if job.with_grad {
            let g = &buf[d..d + d * d];
            // M = G - G^T, then J^T M J.
            let mut mj = [0.0; 9];
            for a in 0..d {
                for i in 0..d {
                    mj[a * d + i] = (0..d).map(|b| (g[a * d + b] - g[b * d + a]) * jac[b * d + i]).sum();
                }
            }
            for j in 0..d {
                for i in 0..d {
                    out[g_off + j * d + i] = (0..d).map(|a| jac[a * d + j] * mj[a * d + i]).sum();
                }
            }
        }
        if let Some(gamma) = job.exp_gamma {
            out[e_off] = (gamma * st.grad_integral).exp();
        }
    })?;
    let (means, errs) = sums.finish();
    let nodes = points.len();
    let mut out = Vec::with_capacity(job.start_steps.len());
    for s in 0..job.start_steps.len() {
        let mut w = Vec::with_capacity(nodes * d);
        let mut w_err = Vec::with_capacity(nodes * d);
        let mut gm = Vec::new();
        let mut ge = Vec::new();
        let mut em = Vec::new();
        let mut ee = Vec::new();
        for node in 0..nodes {
            let base = (s * nodes + node) * width;
            w.extend_from_slice(&means[base..base + d]);
            w_err.extend_from_slice(&errs[base..base + d]);
            if job.with_grad {
                gm.extend_from_slice(&means[base + g_off..base + g_off + d * d]);
                ge.extend_from_slice(&errs[base + g_off..base + g_off + d * d]);
            }
            if job.exp_gamma.is_some() {
                em.push(means[base + e_off]);
                ee.push(errs[base + e_off]);
            }
        }
        out.push(VectorEstimates {
            w,
            w_err,
            grad: job.with_grad.then_some((gm, ge)),
            exp_moment: job.exp_gamma.is_some().then_some((em, ee)),
        });
    }
    Ok(out)
}

/// Project each derivative direction `i` of a `[node][j * d + i]` tensor
/// over the component index `j`; output uses the gradient layout
/// `j * d + i = d_i w_j`.
pub(crate) fn project_gradient_tensor(grid: &PeriodicGrid, tensor: &[f64]) -> Result<PeriodicField> {
    let d = grid.dim;
    let nodes = grid.node_count();
    let mut out = vec![0.0; nodes * d * d];
    for i in 0..d {
        let values: Vec<f64> = (0..nodes)
            .flat_map(|n| (0..d).map(move |j| (n, j)))
            .map(|(n, j)| tensor[n * d * d + j * d + i])
            .collect();
        let p = leray_project(&PeriodicField::from_values(*grid, d, values)?)?;
        for n in 0..nodes {
            for j in 0..d {
                out[n * d * d + j * d + i] = p.node_value(n)[j];
            }
        }
    }
    PeriodicField::from_values(*grid, d * d, out)
}

fn vector_problem_check(prob: &PideProblem, grid_eval: &PeriodicGrid, m: usize) -> Result<()> {
    if m == 0 {
        return invalid("sample count must be positive");
    }
    let d = prob.grid().dim;
    if prob.phi.comps() != d || grid_eval.dim != d {
        return invalid("vector estimator needs a vector terminal value on a grid of the same dimension");
    }
    if prob.c.is_some() {
        return invalid("the vector representation has no potential term");
    }
    Ok(())
}

/// `w_t` on `grid_eval`, optionally Leray-projected.
pub fn estimate_w(
    prob: &PideProblem,
    t: f64,
    grid_eval: &PeriodicGrid,
    m: usize,
    project: bool,
    mc: &McSettings,
) -> Result<FieldEstimate> {
    vector_problem_check(prob, grid_eval, m)?;
    check_time(prob, t)?;
    let cfg = mc.flow_config(prob)?;
    let steps = cfg.steps_to_zero(t)?;
    let (field, stderr) = if steps == 0 {
        let f = prob.phi.resample(*grid_eval)?;
        let z = PeriodicField::zeros(*grid_eval, grid_eval.dim);
        (f, z)
    } else {
        let job = VectorJob {
            u: &prob.u,
            phi: &prob.phi,
            cfg: &cfg,
            start_steps: &[steps],
            grid_eval,
            samples: m,
            with_grad: false,
            exp_gamma: None,
            phi_interpolation: cfg.interpolation,
        };
        let est = vector_estimates(&job)?.pop().expect("one start time");
        (
            PeriodicField::from_values(*grid_eval, grid_eval.dim, est.w)?,
            PeriodicField::from_values(*grid_eval, grid_eval.dim, est.w_err)?,
        )
    };
    let field = if project { leray_project(&field)? } else { field };
    Ok(FieldEstimate { field, stderr, samples: m })
}

/// Projected `w_t` and its gradient from the same paths.
pub fn estimate_w_and_grad(
    prob: &PideProblem,
    t: f64,
    grid_eval: &PeriodicGrid,
    m: usize,
    mc: &McSettings,
) -> Result<(FieldEstimate, FieldEstimate)> {
    vector_problem_check(prob, grid_eval, m)?;
    check_time(prob, t)?;
    let cfg = mc.flow_config(prob)?;
    let steps = cfg.steps_to_zero(t)?;
    let d = grid_eval.dim;
    if steps == 0 {
        let phi = prob.phi.resample(*grid_eval)?;
        let g = spectral_gradient(&phi)?;
        let nodes = grid_eval.node_count();
        let mut tensor = vec![0.0; nodes * d * d];
        for n in 0..nodes {
            let gn = g.node_value(n);
            for j in 0..d {
                for i in 0..d {
                    // d_i phi_j - d_j phi_i
                    tensor[n * d * d + j * d + i] = gn[j * d + i] - gn[i * d + j];
                }
            }
        }
        let w = FieldEstimate {
            field: leray_project(&phi)?,
            stderr: PeriodicField::zeros(*grid_eval, d),
            samples: m,
        };
        let gw = FieldEstimate {
            field: project_gradient_tensor(grid_eval, &tensor)?,
            stderr: PeriodicField::zeros(*grid_eval, d * d),
            samples: m,
        };
        return Ok((w, gw));
    }
    let job = VectorJob {
        u: &prob.u,
        phi: &prob.phi,
        cfg: &cfg,
        start_steps: &[steps],
        grid_eval,
        samples: m,
        with_grad: true,
        exp_gamma: None,
        phi_interpolation: cfg.interpolation,
    };
    let est = vector_estimates(&job)?.pop().expect("one start time");
    let (gm, ge) = est.grad.expect("gradient requested");
    let w = FieldEstimate {
        field: leray_project(&PeriodicField::from_values(*grid_eval, d, est.w)?)?,
        stderr: PeriodicField::from_values(*grid_eval, d, est.w_err)?,
        samples: m,
    };
    let gw = FieldEstimate {
        field: project_gradient_tensor(grid_eval, &gm)?,
        stderr: PeriodicField::from_values(*grid_eval, d * d, ge)?,
        samples: m,
    };
    Ok((w, gw))
}

/// `grad w_t` (projected) in the gradient layout `j * d + i = d_i w_j`.
pub fn estimate_grad_w(prob: &PideProblem, t: f64, grid_eval: &PeriodicGrid, m: usize, mc: &McSettings) -> Result<FieldEstimate> {
    Ok(estimate_w_and_grad(prob, t, grid_eval, m, mc)?.1)
}

#[derive(Clone, Debug)]
pub struct MildSolution {
    pub history: FieldHistory,
    pub iterations: usize,
    /// Sup-norm change in the last sweep.
    pub final_diff: f64,
    /// Ratio of the last two sweep differences.
    pub contraction: f64,
}

pub const MILD_TOL: f64 = 1e-10;
pub const MILD_MAX_ITER: usize = 200;

/// Picard iteration on the Duhamel form
/// `h_t = T_t phi + int_t^0 T_{t-s}((u_s . grad) h_s + c_s h_s) ds`
/// on `K + 1` uniform times, trapezoidal in time.
pub fn mild_solve(prob: &PideProblem, horizon: f64, steps: usize) -> Result<MildSolution> {
    if steps == 0 {
        return invalid("need at least one time step");
    }
    if !(horizon < 0.0) {
        return invalid(format!("horizon {horizon} must be negative"));
    }
    check_time(prob, horizon)?;
    let grid = *prob.grid();
    let d = grid.dim;
    let comps = prob.phi.comps();
    let times = FieldHistory::uniform_times(horizon, steps);
    let delta = -horizon / steps as f64;
    let u: Vec<PeriodicField> = times.iter().map(|&t| prob.u.at(t)).collect::<Result<_>>()?;
    let c: Option<Vec<PeriodicField>> = match &prob.c {
        Some(ch) => Some(times.iter().map(|&t| ch.at(t)).collect::<Result<_>>()?),
        None => None,
    };
    let nodes = grid.node_count();
    // One-step decay factor per mode.
    let decay: Vec<f64> = (0..nodes)
        .map(|m| {
            let k = grid.mode(m);
            let rho = k[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
            (-delta * prob.symbol.viscous(prob.viscosity, rho, d)).exp()
        })
        .collect();
    let evolve = |coeffs: &mut [Complex64]| {
        for cpt in 0..comps {
            for (m, v) in coeffs[cpt * nodes..(cpt + 1) * nodes].iter_mut().enumerate() {
                *v *= decay[m];
            }
        }
    };
    let spectrum = |f: &PeriodicField| -> Vec<Complex64> { (0..comps).flat_map(|cpt| f.spectral(cpt).to_vec()).collect() };

    // Free evolution T_{t_m} phi.
    let mut free = Vec::with_capacity(steps + 1);
    let mut cur = spectrum(&prob.phi);
    free.push(cur.clone());
    for _ in 0..steps {
        evolve(&mut cur);
        free.push(cur.clone());
    }
    let mut h: Vec<PeriodicField> = free
        .iter()
        .map(|s| PeriodicField::from_spectral(grid, comps, s))
        .collect::<Result<_>>()?;

    let forcing = |m: usize, hm: &PeriodicField| -> Result<Vec<Complex64>> {
        let mut f = advect(&u[m], hm)?;
        if let Some(c) = &c {
            let vals = f
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| v + c[m].values()[i / comps] * hm.values()[i])
                .collect();
            f = PeriodicField::from_values(grid, comps, vals)?;
        }
        Ok(spectrum(&f))
    };

    let mut prev_diff = f64::INFINITY;
    let mut growth_run = 0;
    let mut contraction = 0.0;
    for iter in 1..=MILD_MAX_ITER {
        let forces: Vec<Vec<Complex64>> = h.iter().enumerate().map(|(m, hm)| forcing(m, hm)).collect::<Result<_>>()?;
        let mut integral = vec![Complex64::new(0.0, 0.0); nodes * comps];
        let mut next = Vec::with_capacity(steps + 1);
        next.push(h[0].clone());
        let mut diff: f64 = 0.0;
        for m in 1..=steps {
            // I_m = E I_{m-1} + (delta / 2) (E F_{m-1} + F_m)
            let mut prev_f = forces[m - 1].clone();
            evolve(&mut integral);
            evolve(&mut prev_f);
            for ((acc, a), b) in integral.iter_mut().zip(&prev_f).zip(&forces[m]) {
                *acc += (a + b) * (0.5 * delta);
            }
            let total: Vec<Complex64> = free[m].iter().zip(&integral).map(|(a, b)| a + b).collect();
            let hm = PeriodicField::from_spectral(grid, comps, &total)?;
            let dm = hm.combine(1.0, &h[m], -1.0)?.max_norm();
            diff = diff.max(dm);
            next.push(hm);
        }
        h = next;
        if !diff.is_finite() {
            return Err(FnseError::HorizonTooLong { growth: f64::INFINITY });
        }
        if prev_diff.is_finite() && prev_diff > 0.0 {
            contraction = diff / prev_diff;
        }
        if diff <= MILD_TOL {
            return Ok(MildSolution { history: FieldHistory::new(times, h)?, iterations: iter, final_diff: diff, contraction });
        }
        if diff > prev_diff {
            growth_run += 1;
            if growth_run >= 3 {
                return Err(FnseError::HorizonTooLong { growth: contraction });
            }
        } else {
            growth_run = 0;
        }
        prev_diff = diff;
    }
    if contraction >= 1.0 {
        return Err(FnseError::HorizonTooLong { growth: contraction });
    }
    Ok(MildSolution { history: FieldHistory::new(times, h)?, iterations: MILD_MAX_ITER, final_diff: prev_diff, contraction })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualNorms {
    pub t: f64,
    pub l2: f64,
    pub max: f64,
}

/// Residual of `d_t h + L_nu h + (u . grad) h + c h` at interior slices,
/// with central differences in time.
pub fn pide_residual(h: &FieldHistory, prob: &PideProblem) -> Result<Vec<ResidualNorms>> {
    if h.times().len() < 3 {
        return invalid("residual needs at least three time slices");
    }
    if *h.grid() != *prob.grid() {
        return invalid("solution and problem grids differ");
    }
    let times = h.times();
    let slices = h.slices();
    let mut out = Vec::with_capacity(times.len() - 2);
    for m in 1..times.len() - 1 {
        let t = times[m];
        let dt = times[m - 1] - times[m + 1];
        let dh = slices[m - 1].combine(1.0 / dt, &slices[m + 1], -1.0 / dt)?;
        let lh = crate::fields::apply_generator(&slices[m], &prob.symbol, prob.viscosity, false)?;
        let adv = advect(&prob.u.at(t)?, &slices[m])?;
        let mut r = dh.combine(1.0, &lh, 1.0)?.combine(1.0, &adv, 1.0)?;
        if let Some(c) = &prob.c {
            let cf = c.at(t)?;
            let comps = slices[m].comps();
            let vals = r
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| v + cf.values()[i / comps] * slices[m].values()[i])
                .collect();
            r = PeriodicField::from_values(*h.grid(), comps, vals)?;
        }
        out.push(ResidualNorms { t, l2: r.lp_norm(2.0)?, max: r.max_norm() });
    }
    Ok(out)
}
