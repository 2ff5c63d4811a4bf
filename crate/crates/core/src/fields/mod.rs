//! Periodic grid fields on `[0, 2pi)^d` with spectral calculus.
//!
//! Values are stored node-major with the component index fastest; nodes are
//! row-major with `x1` slowest. Fourier coefficients are normalized by the
//! node count, so a constant field has its value as the zero mode.

mod fft;
mod history;
pub mod io;

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::levy_sim::LevySymbol;

pub use history::{FieldHistory, VelocityHistory};

/// Relative tolerance on the spectral divergence of a solenoidal field.
pub const DIV_FREE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PeriodicGrid {
    pub dim: usize,
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension {dim} not in 1..=3"));
        }
        if n < 4 || !n.is_power_of_two() {
            return invalid(format!("resolution {n} must be a power of two >= 4"));
        }
        Ok(Self { dim, n })
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Per-axis indices of a flat node or mode index.
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn flatten(&self, ix: &[usize]) -> usize {
        ix[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn node(&self, idx: usize) -> [f64; 3] {
        let ix = self.unflatten(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = ix[a] as f64 * h;
        }
        x
    }

    /// Signed wavenumber of a per-axis index; the Nyquist index maps to `-n/2`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Wavevector of a flat mode index.
    pub fn mode(&self, idx: usize) -> [f64; 3] {
        let ix = self.unflatten(idx);
        let mut k = [0.0; 3];
        for a in 0..self.dim {
            k[a] = self.wavenumber(ix[a]) as f64;
        }
        k
    }

    /// Wavevector used for differentiation: Nyquist components set to zero.
    pub fn derivative_mode(&self, idx: usize) -> [f64; 3] {
        let ix = self.unflatten(idx);
        let mut k = [0.0; 3];
        for a in 0..self.dim {
            if ix[a] != self.n / 2 {
                k[a] = self.wavenumber(ix[a]) as f64;
            }
        }
        k
    }
}

pub fn wrap(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    // Paths move by small steps, so one shift is almost always enough.
    if (0.0..two_pi).contains(&x) {
        return x;
    }
    let y = if x < 0.0 { x + two_pi } else { x - two_pi };
    if (0.0..two_pi).contains(&y) {
        return y;
    }
    let r = x.rem_euclid(two_pi);
    if r >= two_pi {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Spectral,
    Linear,
}

#[derive(Clone, Debug)]
pub struct PeriodicField {
    grid: PeriodicGrid,
    comps: usize,
    values: Vec<f64>,
    /// One block of `node_count` coefficients per component.
    spectral: Vec<Complex64>,
    divergence_free: bool,
}

impl PartialEq for PeriodicField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.comps == other.comps && self.values == other.values
    }
}

impl PeriodicField {
    pub fn from_values(grid: PeriodicGrid, comps: usize, values: Vec<f64>) -> Result<Self> {
        if comps == 0 {
            return invalid("field needs at least one component");
        }
        if values.len() != grid.node_count() * comps {
            return invalid(format!(
                "expected {} values, got {}",
                grid.node_count() * comps,
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("field values must be finite");
        }
        let mut spectral = Vec::with_capacity(values.len());
        for c in 0..comps {
            spectral.extend(fft::forward(&grid, &values, comps, c));
        }
        Ok(Self { grid, comps, values, spectral, divergence_free: false })
    }

    pub fn from_fn(grid: PeriodicGrid, comps: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; grid.node_count() * comps];
        for (i, chunk) in values.chunks_exact_mut(comps).enumerate() {
            let x = grid.node(i);
            f(&x[..grid.dim], chunk);
        }
        Self::from_values(grid, comps, values)
    }

    /// Real part of the inverse transform; the cache is recomputed from the
    /// resulting values so it always matches them exactly.
    pub fn from_spectral(grid: PeriodicGrid, comps: usize, coeffs: &[Complex64]) -> Result<Self> {
        let nodes = grid.node_count();
        if coeffs.len() != nodes * comps {
            return invalid("coefficient count does not match grid");
        }
        let mut values = vec![0.0; nodes * comps];
        for c in 0..comps {
            let block = fft::inverse_real(&grid, &coeffs[c * nodes..(c + 1) * nodes]);
            for (i, v) in block.into_iter().enumerate() {
                values[i * comps + c] = v;
            }
        }
        Self::from_values(grid, comps, values)
    }

    pub fn zeros(grid: PeriodicGrid, comps: usize) -> Self {
        let len = grid.node_count() * comps;
        Self {
            grid,
            comps,
            values: vec![0.0; len],
            spectral: vec![Complex64::new(0.0, 0.0); len],
            divergence_free: comps == grid.dim,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spectral(&self, comp: usize) -> &[Complex64] {
        let n = self.grid.node_count();
        &self.spectral[comp * n..(comp + 1) * n]
    }

    pub fn node_value(&self, node: usize) -> &[f64] {
        &self.values[node * self.comps..(node + 1) * self.comps]
    }

    pub fn is_divergence_free(&self) -> bool {
        self.divergence_free
    }

    /// Flag the field as solenoidal after checking its spectral divergence.
    pub fn mark_divergence_free(mut self) -> Result<Self> {
        if self.comps != self.grid.dim {
            return invalid("only vector fields can be divergence-free");
        }
        let div = divergence(&self)?.max_norm();
        let scale = self.max_norm();
        if div > DIV_FREE_TOL * scale.max(f64::MIN_POSITIVE) {
            return invalid(format!("divergence {div:.3e} exceeds tolerance for field of size {scale:.3e}"));
        }
        self.divergence_free = true;
        Ok(self)
    }

    fn map_spectral(&self, out_comps: usize, f: impl Fn(usize, usize, [f64; 3], [f64; 3], &[Complex64]) -> Complex64) -> Result<Self> {
        // f(out_comp, mode, k, k_deriv, input coefficients at that mode)
        let nodes = self.grid.node_count();
        let mut out = vec![Complex64::new(0.0, 0.0); nodes * out_comps];
        let mut at = vec![Complex64::new(0.0, 0.0); self.comps];
        for m in 0..nodes {
            let k = self.grid.mode(m);
            let kd = self.grid.derivative_mode(m);
            for (c, a) in at.iter_mut().enumerate() {
                *a = self.spectral[c * nodes + m];
            }
            for oc in 0..out_comps {
                out[oc * nodes + m] = f(oc, m, k, kd, &at);
            }
        }
        Self::from_spectral(self.grid, out_comps, &out)
    }

    /// Multiply every component by a real per-mode multiplier of the
    /// wavevector.
    pub fn apply_multiplier(&self, mult: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let dim = self.grid.dim;
        let mut out = self.map_spectral(self.comps, |oc, _, k, _, at| {
            let r = mult(k);
            at[oc] * r
        })?;
        if self.divergence_free && self.comps == dim {
            out.divergence_free = true;
        }
        Ok(out)
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.comps)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Grid-quadrature `L^p` norm of the pointwise Euclidean norm; `p = inf`
    /// gives the grid maximum (a lower bound for the true supremum).
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return invalid(format!("integrability exponent {p} must be >= 1"));
        }
        if p.is_infinite() {
            return Ok(self.max_norm());
        }
        let w = self.grid.cell_volume();
        let s: f64 = self
            .values
            .chunks_exact(self.comps)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum();
        Ok((w * s).powf(1.0 / p))
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.comps).map(|c| self.spectral(c)[0].re).collect()
    }

    pub fn subtract_mean(&self) -> Result<Self> {
        let mean = self.mean();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v - mean[i % self.comps])
            .collect();
        let mut out = Self::from_values(self.grid, self.comps, values)?;
        out.divergence_free = self.divergence_free;
        Ok(out)
    }

    /// Grid inner product `h^d sum_x u(x) . v(x)`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(s * self.grid.cell_volume())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.comps != other.comps {
            return invalid("fields live on different grids or have different shapes");
        }
        Ok(())
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let mut out = Self::from_values(self.grid, self.comps, values)?;
        out.divergence_free = self.divergence_free && other.divergence_free;
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        let values = self.values.iter().map(|x| a * x).collect();
        let mut out = Self::from_values(self.grid, self.comps, values)?;
        out.divergence_free = self.divergence_free;
        Ok(out)
    }

    pub fn component(&self, c: usize) -> Result<Self> {
        if c >= self.comps {
            return invalid(format!("component {c} out of range"));
        }
        let values = self.values.iter().skip(c).step_by(self.comps).copied().collect();
        Self::from_values(self.grid, 1, values)
    }

    /// Evaluate at an arbitrary point. Coordinates are wrapped into the
    /// periodic cell first.
    pub fn interpolate(&self, x: &[f64], mode: Interpolation) -> Result<Vec<f64>> {
        if x.len() != self.grid.dim || x.iter().any(|v| !v.is_finite()) {
            return invalid("interpolation point has wrong dimension or is not finite");
        }
        let mut out = vec![0.0; self.comps];
        match mode {
            Interpolation::Spectral => self.interp_spectral(x, &mut out),
            Interpolation::Linear => self.interp_linear(x, &mut out),
        }
        Ok(out)
    }

    fn interp_spectral(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.n;
        // Per-axis phase factors; the Nyquist mode contributes a cosine.
        let mut phase = vec![Complex64::new(0.0, 0.0); g.dim * n];
        for a in 0..g.dim {
            let xa = wrap(x[a]);
            for i in 0..n {
                phase[a * n + i] = if i == n / 2 {
                    Complex64::new((0.5 * n as f64 * xa).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, g.wavenumber(i) as f64 * xa)
                };
            }
        }
        let nodes = g.node_count();
        for (c, o) in out.iter_mut().enumerate() {
            let coeffs = self.spectral(c);
            let mut acc = 0.0;
            for (m, cm) in coeffs.iter().enumerate().take(nodes) {
                if cm.norm_sqr() == 0.0 {
                    continue;
                }
                let ix = g.unflatten(m);
                let mut p = phase[ix[0]];
                for a in 1..g.dim {
                    p *= phase[a * n + ix[a]];
                }
                acc += (cm * p).re;
            }
            *o = acc;
        }
    }

    fn interp_linear(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let h = g.spacing();
        let mut lo = [0usize; 3];
        let mut fr = [0.0; 3];
        for a in 0..g.dim {
            let s = wrap(x[a]) / h;
            let i = (s.floor() as usize).min(g.n - 1);
            lo[a] = i;
            fr[a] = s - i as f64;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << g.dim) {
            let mut w = 1.0;
            let mut ix = [0usize; 3];
            for a in 0..g.dim {
                if corner >> a & 1 == 1 {
                    w *= fr[a];
                    ix[a] = (lo[a] + 1) % g.n;
                } else {
                    w *= 1.0 - fr[a];
                    ix[a] = lo[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let node = g.flatten(&ix);
            for (o, v) in out.iter_mut().zip(self.node_value(node)) {
                *o += w * v;
            }
        }
    }

    /// Band-limited resampling onto another resolution of the same
    /// dimension. Refinement splits the Nyquist mode symmetrically;
    /// coarsening drops modes at or above the new Nyquist frequency.
    pub fn resample(&self, target: PeriodicGrid) -> Result<Self> {
        if target.dim != self.grid.dim {
            return invalid("resampling cannot change the dimension");
        }
        if target == self.grid {
            return Ok(self.clone());
        }
        let src = self.grid;
        let refine = target.n > src.n;
        let half = (src.n / 2) as i64;
        // Source index and weight feeding one target index along an axis.
        let axis_map = |i: usize| -> Option<(usize, f64)> {
            let k = target.wavenumber(i);
            if refine {
                if k.abs() < half {
                    Some((k.rem_euclid(src.n as i64) as usize, 1.0))
                } else if k.abs() == half {
                    Some((src.n / 2, 0.5))
                } else {
                    None
                }
            } else if i == target.n / 2 {
                None
            } else {
                Some((k.rem_euclid(src.n as i64) as usize, 1.0))
            }
        };
        let nodes = target.node_count();
        let mut out = vec![Complex64::new(0.0, 0.0); nodes * self.comps];
        'modes: for m in 0..nodes {
            let ix = target.unflatten(m);
            let mut weight = 1.0;
            let mut sx = [0usize; 3];
            for a in 0..target.dim {
                match axis_map(ix[a]) {
                    Some((s, w)) => {
                        sx[a] = s;
                        weight *= w;
                    }
                    None => continue 'modes,
                }
            }
            let sm = src.flatten(&sx);
            for c in 0..self.comps {
                out[c * nodes + m] = self.spectral(c)[sm] * weight;
            }
        }
        let mut f = Self::from_spectral(target, self.comps, &out)?;
        f.divergence_free = self.divergence_free;
        Ok(f)
    }
}

/// Tensor gradient: output component `i * d + j` holds `d f_i / d x_j`.
pub fn spectral_gradient(f: &PeriodicField) -> Result<PeriodicField> {
    let d = f.grid.dim;
    f.map_spectral(f.comps * d, |oc, _, _, kd, at| {
        let (i, j) = (oc / d, oc % d);
        at[i] * Complex64::new(0.0, kd[j])
    })
}

pub fn divergence(u: &PeriodicField) -> Result<PeriodicField> {
    let d = u.grid.dim;
    if u.comps != d {
        return invalid("divergence needs a vector field");
    }
    u.map_spectral(1, |_, _, _, kd, at| {
        let mut s = Complex64::new(0.0, 0.0);
        for j in 0..d {
            s += at[j] * Complex64::new(0.0, kd[j]);
        }
        s
    })
}

/// Leray-Hodge projection, mode by mode `(I - k k^T / |k|^2)` with the
/// Nyquist components of `k` removed, so the spectral divergence of the
/// output vanishes identically. Modes with zero effective wavevector pass
/// through unchanged.
pub fn leray_project(u: &PeriodicField) -> Result<PeriodicField> {
    let d = u.grid.dim;
    if u.comps != d {
        return invalid("projection needs a vector field");
    }
    let mut out = u.map_spectral(d, |oc, _, _, kd, at| {
        let k2: f64 = kd[..d].iter().map(|v| v * v).sum();
        if k2 == 0.0 {
            return at[oc];
        }
        let mut kdot = Complex64::new(0.0, 0.0);
        for j in 0..d {
            kdot += at[j] * kd[j];
        }
        at[oc] - kdot * (kd[oc] / k2)
    })?;
    out.divergence_free = true;
    Ok(out)
}

/// `T_t f` for `t <= 0`: multiplier `exp(t psi(nu^(1/alpha) k))`.
pub fn semigroup_apply(f: &PeriodicField, t: f64, symbol: &LevySymbol, viscosity: f64) -> Result<PeriodicField> {
    if !(t <= 0.0) {
        return invalid(format!("semigroup time {t} must be <= 0"));
    }
    check_viscosity(viscosity)?;
    let d = f.grid.dim;
    f.apply_multiplier(|k| {
        let rho = k[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        (t * symbol.viscous(viscosity, rho, d)).exp()
    })
}

/// Multiplier of the viscous generator, `-psi(nu^(1/alpha) k)`. Its dual
/// uses the complex conjugate symbol, which coincides for symmetric jumps.
pub fn generator_multiplier(symbol: &LevySymbol, viscosity: f64, k: &[f64], dual: bool) -> f64 {
    let rho = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    let psi = num_complex::Complex64::new(symbol.viscous(viscosity, rho, k.len()), 0.0);
    let psi = if dual { psi.conj() } else { psi };
    -psi.re
}

pub fn apply_generator(f: &PeriodicField, symbol: &LevySymbol, viscosity: f64, dual: bool) -> Result<PeriodicField> {
    check_viscosity(viscosity)?;
    let d = f.grid.dim;
    f.apply_multiplier(|k| generator_multiplier(symbol, viscosity, &k[..d], dual))
}

pub(crate) fn check_viscosity(viscosity: f64) -> Result<()> {
    if !(viscosity >= 1.0) || !viscosity.is_finite() {
        return invalid(format!("viscosity {viscosity} must be finite and >= 1"));
    }
    Ok(())
}

/// `||grad^j f||_p` with `j` in {0, 1}.
pub fn sobolev_norm(f: &PeriodicField, order: u32, p: f64) -> Result<f64> {
    match order {
        0 => f.lp_norm(p),
        1 => spectral_gradient(f)?.lp_norm(p),
        _ => invalid(format!("Sobolev order {order} not supported (0 or 1)")),
    }
}

/// Advective term `(u . grad) v`, evaluated pointwise from spectral
/// derivatives.
pub fn advect(u: &PeriodicField, v: &PeriodicField) -> Result<PeriodicField> {
    let d = u.grid.dim;
    if u.comps != d || u.grid != v.grid {
        return invalid("advection needs a vector velocity on the field's grid");
    }
    let gv = spectral_gradient(v)?;
    let c = v.comps;
    let mut values = vec![0.0; u.grid.node_count() * c];
    for node in 0..u.grid.node_count() {
        let un = u.node_value(node);
        let g = gv.node_value(node);
        for i in 0..c {
            values[node * c + i] = (0..d).map(|j| un[j] * g[i * d + j]).sum();
        }
    }
    PeriodicField::from_values(u.grid, c, values)
}

/// Taylor-Green vortex `A (sin x1 cos x2, -cos x1 sin x2)` on a 2D grid.
pub fn taylor_green(grid: PeriodicGrid, amplitude: f64) -> Result<PeriodicField> {
    if grid.dim != 2 {
        return invalid("Taylor-Green preset is two-dimensional");
    }
    PeriodicField::from_fn(grid, 2, |x, out| {
        out[0] = amplitude * x[0].sin() * x[1].cos();
        out[1] = -amplitude * x[0].cos() * x[1].sin();
    })?
    .mark_divergence_free()
}

/// `amplitude * cos(k . x) e` with `e` perpendicular to `k`.
pub fn single_mode(grid: PeriodicGrid, k: &[f64], e: &[f64], amplitude: f64) -> Result<PeriodicField> {
    let d = grid.dim;
    if k.len() != d || e.len() != d {
        return invalid("wavevector and direction must match the grid dimension");
    }
    if k.iter().any(|v| v.fract() != 0.0 || v.abs() >= (grid.n / 2) as f64) {
        return invalid("wavevector must be integer and below the Nyquist frequency");
    }
    let dot: f64 = k.iter().zip(e).map(|(a, b)| a * b).sum();
    if dot.abs() > 1e-12 {
        return invalid("direction must be perpendicular to the wavevector");
    }
    let k = k.to_vec();
    let e = e.to_vec();
    PeriodicField::from_fn(grid, d, |x, out| {
        let phase: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
        for (o, ei) in out.iter_mut().zip(&e) {
            *o = amplitude * phase.cos() * ei;
        }
    })?
    .mark_divergence_free()
}
