//! Backward particle flow driven by a velocity history plus Lévy noise.
//!
//! A path started at time `t = -n dt` is advanced with explicit Euler steps
//! up to time 0. Step `a` covers `[-(a+1) dt, -a dt]`; its noise increment is
//! drawn from counter `a` of the sample's stream, so every start time and
//! every start point of one sample see the same noise path.

use crate::error::{invalid, Result};
use crate::fields::{spectral_gradient, wrap, FieldHistory, Interpolation, PeriodicField, PeriodicGrid, VelocityHistory};
use crate::levy_sim::IncrementSampler;
use crate::mc::{McEstimate, MeanVar, SumBlock};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    pub dt: f64,
    pub viscosity: f64,
    pub sampler: IncrementSampler,
    pub interpolation: Interpolation,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("time step {} must be positive", self.dt));
        }
        crate::fields::check_viscosity(self.viscosity)
    }

    /// Multiplier of the noise increments, `nu^(1/alpha)`.
    pub fn noise_scale(&self) -> f64 {
        self.viscosity.powf(1.0 / self.sampler.symbol.alpha)
    }

    /// Number of steps from `t` to `0`; `t` must sit on the step lattice.
    pub fn steps_to_zero(&self, t: f64) -> Result<usize> {
        if !(t <= 0.0) {
            return invalid(format!("start time {t} must be <= 0"));
        }
        let n = (-t / self.dt).round();
        if (n * self.dt + t).abs() > 1e-9 * self.dt.max(t.abs()) {
            return invalid(format!("start time {t} is not a multiple of dt = {}", self.dt));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    /// Terminal position wrapped into `[0, 2pi)^d`.
    pub terminal_position: Vec<f64>,
    /// Unwrapped displacement `X - x0`.
    pub displacement: Vec<f64>,
    /// Row-major `d x d` Jacobian, entry `(i, j) = d X_i / d x_j`.
    pub jacobian: Vec<f64>,
    /// Accumulated `int |grad u_r(X_r)| dr` (operator norm).
    pub path_integral_cache: Option<f64>,
}

impl FlowSample {
    pub fn jacobian_det(&self) -> f64 {
        det(&self.jacobian, self.terminal_position.len())
    }
}

pub fn det(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
    }
}

/// Point evaluation of a field history (values and, optionally, spatial
/// gradients) at arbitrary positions.
///
/// Linear mode reads a packed node table. Spectral mode sums the Fourier
/// series over the modes whose coefficients are not numerically zero, so
/// band-limited fields evaluate in time proportional to their bandwidth.
#[derive(Clone, Debug)]
pub struct FieldEvaluator {
    grid: PeriodicGrid,
    mode: Interpolation,
    comps: usize,
    width: usize,
    slices: Vec<EvalSlice>,
    constant: bool,
}

#[derive(Clone, Debug)]
struct EvalSlice {
    table: Vec<f64>,
    /// 2D only: per cell and component the bilinear coefficients
    /// `(a, b, c, e)` of `a + b fx + c fy + e fx fy`.
    cells: Vec<f64>,
    modes: Vec<SparseMode>,
}

#[derive(Clone, Debug)]
struct SparseMode {
    k: [f64; 3],
    nyquist: [bool; 3],
    re: Vec<f64>,
    im: Vec<f64>,
}

const ZERO_MODE_TOL: f64 = 1e-15;

impl FieldEvaluator {
    pub fn new(history: &FieldHistory, mode: Interpolation, with_gradient: bool) -> Result<Self> {
        let grid = *history.grid();
        let comps = history.comps();
        let d = grid.dim;
        let width = if with_gradient { comps + comps * d } else { comps };
        let constant = history.is_constant();
        let used = if constant { &history.slices()[..1] } else { history.slices() };
        let mut slices = Vec::with_capacity(used.len());
        for f in used {
            let stacked = if with_gradient { stack(f, &spectral_gradient(f)?)? } else { f.clone() };
            slices.push(EvalSlice::build(&stacked, mode));
        }
        Ok(Self { grid, mode, comps, width, slices, constant })
    }

    pub fn from_field(field: &PeriodicField, mode: Interpolation, with_gradient: bool) -> Result<Self> {
        let h = FieldHistory::new(vec![0.0], vec![field.clone()])?;
        Self::new(&h, mode, with_gradient)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    fn slice(&self, j: usize) -> &EvalSlice {
        if self.constant {
            &self.slices[0]
        } else {
            &self.slices[j]
        }
    }

    /// Evaluate slice `j` at `x` (already wrapped) into `out[..width]`.
    pub fn eval_slice(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let s = self.slice(j);
        match self.mode {
            Interpolation::Linear => s.linear(&self.grid, self.width, x, out),
            Interpolation::Spectral => s.spectral(self.grid.dim, self.width, x, out),
        }
    }

    /// `(1 - w) slice_j + w slice_{j+1}` at `x`.
    pub fn eval_blend(&self, j: usize, w: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.eval_slice(j, x, out);
        if w == 0.0 || self.constant {
            return;
        }
        self.eval_slice(j + 1, x, scratch);
        for (o, s) in out[..self.width].iter_mut().zip(&scratch[..self.width]) {
            *o = (1.0 - w) * *o + w * s;
        }
    }
}

#[inline(always)]
fn bilinear<const W: usize>(cells: &[f64], cell: usize, fx: f64, fy: f64, out: &mut [f64]) {
    let fxy = fx * fy;
    let start = cell * 4 * W;
    let c = &cells[start..start + 4 * W];
    let out = &mut out[..W];
    for k in 0..W {
        out[k] = c[4 * k] + c[4 * k + 1] * fx + c[4 * k + 2] * fy + c[4 * k + 3] * fxy;
    }
}

fn bilinear_cells(table: &[f64], n: usize, width: usize) -> Vec<f64> {
    let mut cells = vec![0.0; n * n * 4 * width];
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let base = (i * n + j) * 4 * width;
            for k in 0..width {
                let f00 = table[(i * n + j) * width + k];
                let f01 = table[(i * n + jp) * width + k];
                let f10 = table[(ip * n + j) * width + k];
                let f11 = table[(ip * n + jp) * width + k];
                let q = &mut cells[base + 4 * k..base + 4 * k + 4];
                q[0] = f00;
                q[1] = f10 - f00;
                q[2] = f01 - f00;
                q[3] = f11 - f10 - f01 + f00;
            }
        }
    }
    cells
}

fn stack(f: &PeriodicField, g: &PeriodicField) -> Result<PeriodicField> {
    let (cf, cg) = (f.comps(), g.comps());
    let nodes = f.grid().node_count();
    let mut values = Vec::with_capacity(nodes * (cf + cg));
    for node in 0..nodes {
        values.extend_from_slice(f.node_value(node));
        values.extend_from_slice(g.node_value(node));
    }
    PeriodicField::from_values(*f.grid(), cf + cg, values)
}

impl EvalSlice {
    fn build(f: &PeriodicField, mode: Interpolation) -> Self {
        match mode {
            Interpolation::Linear => {
                let g = f.grid();
                let table = f.values().to_vec();
                let cells = if g.dim == 2 { bilinear_cells(&table, g.n, f.comps()) } else { Vec::new() };
                Self { table, cells, modes: Vec::new() }
            }
            Interpolation::Spectral => {
                let g = f.grid();
                let c = f.comps();
                let scale = f.max_norm().max(f64::MIN_POSITIVE);
                let mut modes = Vec::new();
                for m in 0..g.node_count() {
                    let biggest = (0..c).map(|ci| f.spectral(ci)[m].norm()).fold(0.0, f64::max);
                    if biggest <= ZERO_MODE_TOL * scale {
                        continue;
                    }
                    let ix = g.unflatten(m);
                    let mut nyquist = [false; 3];
                    for a in 0..g.dim {
                        nyquist[a] = ix[a] == g.n / 2;
                    }
                    modes.push(SparseMode {
                        k: g.mode(m),
                        nyquist,
                        re: (0..c).map(|ci| f.spectral(ci)[m].re).collect(),
                        im: (0..c).map(|ci| f.spectral(ci)[m].im).collect(),
                    });
                }
                Self { table: Vec::new(), cells: Vec::new(), modes }
            }
        }
    }

    fn linear(&self, g: &PeriodicGrid, width: usize, x: &[f64], out: &mut [f64]) {
        let inv_h = g.n as f64 / (2.0 * std::f64::consts::PI);
        let n = g.n;
        if g.dim == 2 {
            // Positions are wrapped, so the cell index only needs an upper clamp.
            let (sx, sy) = (x[0] * inv_h, x[1] * inv_h);
            let (i, j) = ((sx as usize).min(n - 1), (sy as usize).min(n - 1));
            let (fx, fy) = (sx - i as f64, sy - j as f64);
            let cell = i * n + j;
            match width {
                2 => bilinear::<2>(&self.cells, cell, fx, fy, out),
                6 => bilinear::<6>(&self.cells, cell, fx, fy, out),
                _ => {
                    let c = &self.cells[cell * 4 * width..(cell + 1) * 4 * width];
                    for (o, q) in out[..width].iter_mut().zip(c.chunks_exact(4)) {
                        *o = q[0] + q[1] * fx + q[2] * fy + q[3] * fx * fy;
                    }
                }
            }
            return;
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut fr = [0.0; 3];
        for a in 0..g.dim {
            let s = x[a] * inv_h;
            let i = (s.max(0.0) as usize).min(n - 1);
            lo[a] = i;
            hi[a] = if i + 1 == n { 0 } else { i + 1 };
            fr[a] = s - i as f64;
        }
        let out = &mut out[..width];
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << g.dim) {
            let mut w = 1.0;
            let mut node = 0;
            for a in 0..g.dim {
                let (i, wa) = if corner >> a & 1 == 1 { (hi[a], fr[a]) } else { (lo[a], 1.0 - fr[a]) };
                w *= wa;
                node = node * n + i;
            }
            let row = &self.table[node * width..(node + 1) * width];
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }

    fn spectral(&self, dim: usize, width: usize, x: &[f64], out: &mut [f64]) {
        let out = &mut out[..width];
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in &self.modes {
            let (mut pr, mut pi) = (1.0, 0.0);
            for a in 0..dim {
                let ph = m.k[a] * x[a];
                let (s, c) = if m.nyquist[a] { (0.0, ph.cos()) } else { ph.sin_cos() };
                let nr = pr * c - pi * s;
                pi = pr * s + pi * c;
                pr = nr;
            }
            for (ci, o) in out.iter_mut().enumerate() {
                *o += m.re[ci] * pr - m.im[ci] * pi;
            }
        }
    }
}

/// Which slice bracket to use for each step's left endpoint.
#[derive(Clone, Debug)]
pub(crate) struct StepSchedule {
    pub dt: f64,
    /// Entry `a`: slice index and blend weight at time `-(a+1) dt`.
    pub brackets: Vec<(usize, f64)>,
}

impl StepSchedule {
    pub fn new(history: &FieldHistory, dt: f64, steps: usize) -> Result<Self> {
        let brackets = (0..steps)
            .map(|a| history.bracket(-((a + 1) as f64) * dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt, brackets })
    }
}

/// Scaled noise increments `nu^(1/alpha) dL` for steps `0..steps`.
pub fn noise_path(cfg: &FlowConfig, stream: u64, steps: usize) -> Vec<f64> {
    let d = cfg.sampler.dim;
    let sampler = cfg.sampler.with_stream(stream);
    let scale = cfg.noise_scale();
    let mut out = vec![0.0; steps * d];
    for (a, chunk) in out.chunks_exact_mut(d).enumerate() {
        let mut rng = crate::rng::counter_rng(sampler.seed, sampler.stream, a as u64);
        sampler.draw(cfg.dt, &mut rng, chunk);
        chunk.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// State of one path.
#[derive(Clone, Debug)]
pub struct PathState {
    pub dim: usize,
    pub x: [f64; 3],
    pub displacement: [f64; 3],
    pub jac: [f64; 9],
    pub grad_integral: f64,
    pub potential_integral: f64,
    /// Accumulate `grad_integral`; off when nobody reads it.
    pub track_grad_norm: bool,
}

impl PathState {
    pub fn start(x0: &[f64]) -> Self {
        let d = x0.len();
        let mut x = [0.0; 3];
        for a in 0..d {
            x[a] = wrap(x0[a]);
        }
        let mut jac = [0.0; 9];
        for i in 0..d {
            jac[i * d + i] = 1.0;
        }
        Self { dim: d, x, displacement: [0.0; 3], jac, grad_integral: 0.0, potential_integral: 0.0, track_grad_norm: true }
    }

    pub fn position(&self) -> &[f64] {
        &self.x[..self.dim]
    }

    pub fn jacobian(&self) -> &[f64] {
        &self.jac[..self.dim * self.dim]
    }

    fn into_sample(self) -> FlowSample {
        let d = self.dim;
        FlowSample {
            terminal_position: self.x[..d].to_vec(),
            displacement: self.displacement[..d].to_vec(),
            jacobian: self.jac[..d * d].to_vec(),
            path_integral_cache: Some(self.grad_integral),
        }
    }
}

/// Work buffers reused across paths.
pub(crate) struct Scratch {
    pub drift: Vec<f64>,
    pub blend: Vec<f64>,
    pub pot: Vec<f64>,
    pub pot_blend: Vec<f64>,
}

impl Scratch {
    pub fn new(drift: &FieldEvaluator) -> Self {
        let w = drift.width();
        Self { drift: vec![0.0; w], blend: vec![0.0; w], pot: vec![0.0; 1], pot_blend: vec![0.0; 1] }
    }
}

/// Largest singular value of a row-major `d x d` matrix, `d <= 3`.
pub fn operator_norm(m: &[f64], d: usize) -> f64 {
    // Eigenvalues of the symmetric S = M^T M.
    let mut s = [0.0; 9];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = (0..d).map(|k| m[k * d + i] * m[k * d + j]).sum();
        }
    }
    let top = match d {
        1 => s[0],
        2 => {
            let tr = s[0] + s[3];
            let det = s[0] * s[3] - s[1] * s[2];
            0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
        }
        _ => {
            // Trigonometric solution of the symmetric cubic.
            let q = (s[0] + s[4] + s[8]) / 3.0;
            let p1 = s[1] * s[1] + s[2] * s[2] + s[5] * s[5];
            let p2 = (s[0] - q).powi(2) + (s[4] - q).powi(2) + (s[8] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            if p < 1e-300 {
                q
            } else {
                let mut b = s;
                for i in 0..3 {
                    b[i * 3 + i] -= q;
                }
                let r = (det(&b, 3) / (2.0 * p.powi(3))).clamp(-1.0, 1.0);
                q + 2.0 * p * (r.acos() / 3.0).cos()
            }
        }
    };
    top.max(0.0).sqrt()
}

/// Euler steps `a = from_step - 1, ..., to_step`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advance(
    drift: &FieldEvaluator,
    potential: Option<(&FieldEvaluator, &StepSchedule)>,
    schedule: &StepSchedule,
    noise: &[f64],
    from_step: usize,
    to_step: usize,
    state: &mut PathState,
    scratch: &mut Scratch,
) {
    let d = state.dim;
    let dt = schedule.dt;
    for a in (to_step..from_step).rev() {
        let (j, w) = schedule.brackets[a];
        drift.eval_blend(j, w, &state.x[..d], &mut scratch.drift, &mut scratch.blend);
        if let Some((pot, psched)) = potential {
            let (pj, pw) = psched.brackets[a];
            pot.eval_blend(pj, pw, &state.x[..d], &mut scratch.pot, &mut scratch.pot_blend);
            state.potential_integral += scratch.pot[0] * dt;
        }
        let u = &scratch.drift[..d];
        let g = &scratch.drift[d..d + d * d];
        if state.track_grad_norm {
            state.grad_integral += operator_norm(g, d) * dt;
        }

        // J <- J + G J dt
        let mut next = [0.0; 9];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += g[i * d + k] * state.jac[k * d + j];
                }
                next[i * d + j] = state.jac[i * d + j] + s * dt;
            }
        }
        state.jac = next;

        let dl = &noise[a * d..(a + 1) * d];
        for i in 0..d {
            let step = u[i] * dt + dl[i];
            state.displacement[i] += step;
            state.x[i] = wrap(state.x[i] + step);
        }
    }
}

fn check_flow_inputs(x0: &[f64], u: &VelocityHistory, cfg: &FlowConfig) -> Result<()> {
    cfg.validate()?;
    let d = u.grid().dim;
    if x0.len() != d || cfg.sampler.dim != d {
        return invalid("start point, sampler and velocity dimensions differ");
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return invalid("start point must be finite");
    }
    Ok(())
}

/// One path from `x0` at time `t_start` to time `t_end` (both on the step
/// lattice, `t_start <= t_end <= 0`).
pub fn integrate_between(
    x0: &[f64],
    t_start: f64,
    t_end: f64,
    u: &VelocityHistory,
    cfg: &FlowConfig,
    stream: u64,
) -> Result<FlowSample> {
    check_flow_inputs(x0, u, cfg)?;
    let from = cfg.steps_to_zero(t_start)?;
    let to = cfg.steps_to_zero(t_end)?;
    if to > from {
        return invalid("end time precedes start time");
    }
    if t_start < u.horizon() - 1e-12 {
        return invalid(format!("velocity history is undefined at t = {t_start}"));
    }
    let drift = FieldEvaluator::new(u, cfg.interpolation, true)?;
    let schedule = StepSchedule::new(u, cfg.dt, from)?;
    let noise = noise_path(cfg, stream, from);
    let mut state = PathState::start(x0);
    let mut scratch = Scratch::new(&drift);
    advance(&drift, None, &schedule, &noise, from, to, &mut state, &mut scratch);
    Ok(state.into_sample())
}

/// One path from `x0` at time `t < 0` to time 0.
pub fn integrate_flow(x0: &[f64], t: f64, u: &VelocityHistory, cfg: &FlowConfig, stream: u64) -> Result<FlowSample> {
    integrate_between(x0, t, 0.0, u, cfg, stream)
}

/// One path under a drift given in closed form: `drift(s, x, out)` writes
/// `u_s(x)` followed by the row-major `grad u_s(x)`. With `stream = None`
/// the noise is switched off. Positions are not wrapped, so non-periodic
/// drifts (such as linear ones) can be used.
pub fn integrate_analytic(
    x0: &[f64],
    t: f64,
    drift: impl Fn(f64, &[f64], &mut [f64]),
    cfg: &FlowConfig,
    stream: Option<u64>,
) -> Result<FlowSample> {
    cfg.validate()?;
    let d = x0.len();
    if d != cfg.sampler.dim {
        return invalid("start point and sampler dimensions differ");
    }
    let steps = cfg.steps_to_zero(t)?;
    let noise = match stream {
        Some(s) => noise_path(cfg, s, steps),
        None => vec![0.0; steps * d],
    };
    let mut x = x0.to_vec();
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        jac[i * d + i] = 1.0;
    }
    let mut buf = vec![0.0; d + d * d];
    let mut integral = 0.0;
    for a in (0..steps).rev() {
        let s = -((a + 1) as f64) * cfg.dt;
        drift(s, &x, &mut buf);
        let (u, g) = buf.split_at(d);
        integral += operator_norm(g, d) * cfg.dt;
        let mut next = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let s: f64 = (0..d).map(|k| g[i * d + k] * jac[k * d + j]).sum();
                next[i * d + j] = jac[i * d + j] + s * cfg.dt;
            }
        }
        jac = next;
        for i in 0..d {
            x[i] += u[i] * cfg.dt + noise[a * d + i];
        }
    }
    let displacement = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    Ok(FlowSample { terminal_position: x, displacement, jacobian: jac, path_integral_cache: Some(integral) })
}

#[derive(Clone, Debug)]
pub struct FlowEnsemble {
    pub samples: Vec<FlowSample>,
    /// Mean unwrapped terminal position `x0 + displacement`.
    pub position: Vec<McEstimate>,
    /// Row-major Jacobian entries.
    pub jacobian: Vec<McEstimate>,
    pub jacobian_det: McEstimate,
}

/// `m` independent paths; sample `i` uses stream `i`.
pub fn flow_ensemble(x0: &[f64], t: f64, u: &VelocityHistory, cfg: &FlowConfig, m: usize) -> Result<FlowEnsemble> {
    if m == 0 {
        return invalid("ensemble needs at least one sample");
    }
    check_flow_inputs(x0, u, cfg)?;
    let steps = cfg.steps_to_zero(t)?;
    if t < u.horizon() - 1e-12 {
        return invalid(format!("velocity history is undefined at t = {t}"));
    }
    let drift = FieldEvaluator::new(u, cfg.interpolation, true)?;
    let schedule = StepSchedule::new(u, cfg.dt, steps)?;
    let samples = par::map_indexed(m, |i| {
        let noise = noise_path(cfg, i as u64, steps);
        let mut state = PathState::start(x0);
        let mut scratch = Scratch::new(&drift);
        advance(&drift, None, &schedule, &noise, steps, 0, &mut state, &mut scratch);
        state.into_sample()
    });
    let d = x0.len();
    let mut pos = vec![MeanVar::default(); d];
    let mut jac = vec![MeanVar::default(); d * d];
    let mut dets = MeanVar::default();
    for s in &samples {
        for i in 0..d {
            pos[i].push(x0[i] + s.displacement[i]);
        }
        for (acc, v) in jac.iter_mut().zip(&s.jacobian) {
            acc.push(*v);
        }
        dets.push(s.jacobian_det());
    }
    let est = |v: &MeanVar| v.estimate().expect("non-empty ensemble");
    Ok(FlowEnsemble {
        position: pos.iter().map(est).collect(),
        jacobian: jac.iter().map(est).collect(),
        jacobian_det: est(&dets),
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpMomentReport {
    pub estimate: McEstimate,
    /// The estimate exceeds the threshold of 2 used for horizon control.
    pub exceeds_threshold: bool,
}

pub const EXP_MOMENT_THRESHOLD: f64 = 2.0;

/// `E exp(gamma int |grad u_r(X_r)| dr)` from cached path integrals.
pub fn exp_moment_diagnostic(samples: &[FlowSample], gamma: f64) -> Result<ExpMomentReport> {
    if samples.is_empty() {
        return invalid("no samples");
    }
    if !(gamma >= 0.0) {
        return invalid(format!("gamma = {gamma} must be non-negative"));
    }
    let mut acc = MeanVar::default();
    for s in samples {
        let c = s
            .path_integral_cache
            .ok_or_else(|| crate::error::FnseError::InvalidInput("sample lacks a path-integral cache".into()))?;
        acc.push((gamma * c).exp());
    }
    let estimate = acc.estimate().expect("non-empty");
    Ok(ExpMomentReport { estimate, exceeds_threshold: estimate.mean > EXP_MOMENT_THRESHOLD })
}

/// Inputs to a batched run over many start times and start points that
/// share one noise path per sample.
pub(crate) struct NodeEnsemble<'a> {
    pub drift: &'a FieldEvaluator,
    pub potential: Option<&'a FieldEvaluator>,
    pub drift_history: &'a FieldHistory,
    pub potential_history: Option<&'a FieldHistory>,
    pub cfg: &'a FlowConfig,
    /// Steps from each start time to 0.
    pub start_steps: &'a [usize],
    pub points: &'a [[f64; 3]],
    pub samples: usize,
    pub width: usize,
    pub track_grad_norm: bool,
}

/// Samples per reduction block. Fixed so that the summation order does not
/// depend on the number of workers.
const BLOCK: usize = 16;

impl NodeEnsemble<'_> {
    /// Run all paths; `record(start, point, state, out)` writes `width`
    /// values per path. Returns sums laid out as `[start][point][width]`.
    pub fn run<F>(&self, record: F) -> Result<SumBlock>
    where
        F: Fn(usize, usize, &PathState, &mut [f64]) + Sync,
    {
        if self.samples == 0 {
            return invalid("ensemble needs at least one sample");
        }
        let max_steps = self.start_steps.iter().copied().max().unwrap_or(0);
        let schedule = StepSchedule::new(self.drift_history, self.cfg.dt, max_steps)?;
        let pschedule = match self.potential_history {
            Some(h) => Some(StepSchedule::new(h, self.cfg.dt, max_steps)?),
            None => None,
        };
        let slots = self.start_steps.len() * self.points.len();
        let width = self.width;
        let blocks = self.samples.div_ceil(BLOCK);
        let d = self.cfg.sampler.dim;
        let partial = par::map_indexed(blocks, |b| {
            let mut acc = SumBlock::new(slots * width);
            let mut scratch = Scratch::new(self.drift);
            let mut out = vec![0.0; width];
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(self.samples);
            for sample in lo..hi {
                let noise = noise_path(self.cfg, sample as u64, max_steps);
                for (si, &steps) in self.start_steps.iter().enumerate() {
                    for (pi, p) in self.points.iter().enumerate() {
                        let mut state = PathState::start(&p[..d]);
                        state.track_grad_norm = self.track_grad_norm;
                        let pot = self.potential.zip(pschedule.as_ref());
                        advance(self.drift, pot, &schedule, &noise, steps, 0, &mut state, &mut scratch);
                        record(si, pi, &state, &mut out);
                        let base = (si * self.points.len() + pi) * width;
                        for (k, v) in out.iter().enumerate() {
                            acc.sum[base + k] += v;
                            acc.sum_sq[base + k] += v * v;
                        }
                    }
                }
                acc.count += 1;
            }
            acc
        });
        let mut total = SumBlock::new(slots * width);
        for p in &partial {
            total.merge(p);
        }
        Ok(total)
    }
}
