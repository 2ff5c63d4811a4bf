//! Deterministic pseudo-spectral reference: integrating-factor RK4 with
//! exact dissipation, 2/3-rule dealiasing and a Leray projection per stage.
//!
//! The backward equations on `[T, 0]` are solved in forward time
//! `tau = -t`, where they read `d_tau v = L v + P (v . grad) v` (and
//! `d_tau v = L v + d_x (v^2 / 2)` for Burgers). Output slices are labelled
//! with the backward time `t = -tau`.

use num_complex::Complex64;

use crate::error::{invalid, FnseError, Result};
use crate::fields::{
    advect, check_viscosity, leray_project, spectral_gradient, FieldHistory, PeriodicField, PeriodicGrid,
};
use crate::levy_sim::LevySymbol;

/// Largest admissible advective Courant number `max|u| dt / dx`.
pub const MAX_COURANT: f64 = 1.0;
const REL_FLOOR: f64 = 1e-14;

struct Stepper {
    grid: PeriodicGrid,
    comps: usize,
    h: f64,
    /// Per mode `exp(lambda h)` and `exp(lambda h / 2)`.
    full: Vec<f64>,
    half: Vec<f64>,
    keep: Vec<bool>,
    project: bool,
}

impl Stepper {
    fn new(grid: PeriodicGrid, comps: usize, symbol: &LevySymbol, viscosity: f64, h: f64, project: bool) -> Self {
        let d = grid.dim;
        let n = grid.n as f64;
        let mut full = Vec::with_capacity(grid.node_count());
        let mut half = Vec::with_capacity(grid.node_count());
        let mut keep = Vec::with_capacity(grid.node_count());
        for m in 0..grid.node_count() {
            let k = grid.mode(m);
            let rho = k[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
            let lambda = -symbol.viscous(viscosity, rho, d);
            full.push((lambda * h).exp());
            half.push((lambda * h / 2.0).exp());
            keep.push(k[..d].iter().all(|v| 3.0 * v.abs() < n));
        }
        Self { grid, comps, h, full, half, keep, project }
    }

    fn coeffs(&self, f: &PeriodicField) -> Vec<Complex64> {
        (0..self.comps).flat_map(|c| f.spectral(c).to_vec()).collect()
    }

    fn field(&self, c: &[Complex64]) -> Result<PeriodicField> {
        PeriodicField::from_spectral(self.grid, self.comps, c)
    }

    fn scaled(&self, c: &[Complex64], by: &[f64]) -> Vec<Complex64> {
        let nodes = by.len();
        c.iter().enumerate().map(|(i, v)| v * by[i % nodes]).collect()
    }

    fn dealias(&self, c: &mut [Complex64]) {
        let nodes = self.keep.len();
        for (i, v) in c.iter_mut().enumerate() {
            if !self.keep[i % nodes] {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Dealiased nonlinear term in spectral form.
    fn nonlinear(&self, c: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut cd = c.to_vec();
        self.dealias(&mut cd);
        let v = self.field(&cd)?;
        let term = if self.project {
            leray_project(&advect(&v, &v)?)?
        } else {
            // d_x (v^2 / 2)
            let sq = PeriodicField::from_values(self.grid, 1, v.values().iter().map(|x| 0.5 * x * x).collect())?;
            spectral_gradient(&sq)?
        };
        let mut out = self.coeffs(&term);
        self.dealias(&mut out);
        Ok(out)
    }

    fn step(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let h = self.h;
        let axpy = |a: &[Complex64], s: f64, b: &[Complex64]| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y * s).collect()
        };
        let k1 = self.nonlinear(v)?;
        let v2 = self.scaled(&axpy(v, h / 2.0, &k1), &self.half);
        let k2 = self.nonlinear(&v2)?;
        let ev_half = self.scaled(v, &self.half);
        let v3 = axpy(&ev_half, h / 2.0, &k2);
        let k3 = self.nonlinear(&v3)?;
        let ev = self.scaled(v, &self.full);
        let v4 = axpy(&ev, h, &self.scaled(&k3, &self.half));
        let k4 = self.nonlinear(&v4)?;
        let ek1 = self.scaled(&k1, &self.full);
        let mid: Vec<Complex64> = k2.iter().zip(&k3).map(|(a, b)| a + b).collect();
        let emid = self.scaled(&mid, &self.half);
        Ok((0..v.len()).map(|i| ev[i] + (ek1[i] + emid[i] * 2.0 + k4[i]) * (h / 6.0)).collect())
    }
}

fn courant(f: &PeriodicField, h: f64) -> f64 {
    f.max_norm() * h / f.grid().spacing()
}

fn integrate(
    u0: &PeriodicField,
    symbol: &LevySymbol,
    viscosity: f64,
    horizon: f64,
    dt_ref: f64,
    slices: usize,
    project: bool,
) -> Result<FieldHistory> {
    check_viscosity(viscosity)?;
    if !(horizon < 0.0) || !(dt_ref > 0.0) || slices == 0 {
        return invalid("need horizon < 0, dt_ref > 0 and at least one slice");
    }
    let interval = -horizon / slices as f64;
    let steps = (interval / dt_ref).ceil().max(1.0) as usize;
    let h = interval / steps as f64;
    let comps = u0.comps();
    let stepper = Stepper::new(*u0.grid(), comps, symbol, viscosity, h, project);
    let c = courant(u0, h);
    if c > MAX_COURANT {
        return Err(FnseError::Cfl { courant: c });
    }
    let mut v = stepper.coeffs(u0);
    let mut out = vec![u0.clone()];
    for _ in 0..slices {
        for _ in 0..steps {
            v = stepper.step(&v)?;
        }
        let mut f = stepper.field(&v)?;
        let c = courant(&f, h);
        if !c.is_finite() || c > MAX_COURANT {
            return Err(FnseError::Cfl { courant: c });
        }
        if project {
            f = f.mark_divergence_free()?;
        }
        out.push(f);
    }
    FieldHistory::new(FieldHistory::uniform_times(horizon, slices), out)
}

/// Fractal Navier-Stokes in two dimensions from `u0` at `t = 0` back to
/// `horizon`, reported on `slices + 1` uniform times.
pub fn solve_fnse_spectral(
    u0: &PeriodicField,
    symbol: &LevySymbol,
    viscosity: f64,
    horizon: f64,
    dt_ref: f64,
    slices: usize,
) -> Result<FieldHistory> {
    if u0.grid().dim != 2 || u0.comps() != 2 {
        return invalid("the Navier-Stokes reference is two-dimensional");
    }
    let scale = u0.max_norm().max(1.0);
    if u0.mean().iter().any(|m| m.abs() > 1e-12 * scale) {
        return invalid("initial velocity must have zero mean");
    }
    let u0 = u0.clone().mark_divergence_free()?;
    integrate(&u0, symbol, viscosity, horizon, dt_ref, slices, true)
}

/// Fractal Burgers on the circle, conservative form.
pub fn solve_burgers_spectral(
    u0: &PeriodicField,
    symbol: &LevySymbol,
    viscosity: f64,
    horizon: f64,
    dt_ref: f64,
    slices: usize,
) -> Result<FieldHistory> {
    if u0.grid().dim != 1 || u0.comps() != 1 {
        return invalid("Burgers reference needs a scalar field on the circle");
    }
    integrate(u0, symbol, viscosity, horizon, dt_ref, slices, false)
}

/// `||a_t - b_t||_p / max(||a_t||_p, 1e-14)` at each time of `a`; `b` is
/// interpolated in time and resampled onto the grid of `a`.
pub fn compare_fields(a: &FieldHistory, b: &FieldHistory, p: f64) -> Result<Vec<(f64, f64)>> {
    if a.comps() != b.comps() || a.grid().dim != b.grid().dim {
        return invalid("histories have different shapes");
    }
    let mut out = Vec::with_capacity(a.times().len());
    for (t, fa) in a.times().iter().zip(a.slices()) {
        let fb = b.at(*t)?.resample(*a.grid())?;
        let num = fa.combine(1.0, &fb, -1.0)?.lp_norm(p)?;
        out.push((*t, num / fa.lp_norm(p)?.max(REL_FLOOR)));
    }
    Ok(out)
}
