//! wasm-bindgen entry points for `www/index.html`. Each export has a plain
//! Rust twin so the numerics can be tested on the host.

use fnse_core::fields::{semigroup_apply, single_mode, spectral_gradient, taylor_green, PeriodicField, PeriodicGrid};
use fnse_core::levy_sim::{empirical_cf, IncrementSampler, LevySymbol};
use fnse_core::reference_spectral::solve_fnse_spectral;
use fnse_core::Result;
use wasm_bindgen::prelude::*;

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Empirical characteristic function of `samples` one-dimensional increments
/// over `dt`, at `points` frequencies. Returns `[xi, re, im, exact]` rows,
/// flattened.
pub fn cf_curve(alpha: f64, dt: f64, samples: usize, seed: u64, points: usize) -> Result<Vec<f64>> {
    let symbol = LevySymbol::isotropic(alpha, 1.0)?;
    let sampler = IncrementSampler::preferred(symbol, 1, seed)?;
    let draws = (0..samples as u64)
        .map(|i| sampler.with_stream(i).sample_increment(dt, 0))
        .collect::<Result<Vec<_>>>()?;
    // Up to where the exact curve has dropped to about e^-4.
    let xi_max = (4.0 / dt).powf(1.0 / alpha);
    let mut out = Vec::with_capacity(4 * points);
    for j in 0..points {
        let xi = xi_max * j as f64 / (points.max(2) - 1) as f64;
        let cf = empirical_cf(&draws, &[xi])?;
        out.extend([xi, cf.mean.re, cf.mean.im, (-dt * symbol.eval(&[xi])?.re).exp()]);
    }
    Ok(out)
}

/// A square wave on `n` nodes of the circle after the fractional semigroup
/// has acted for time `t` (viscosity `nu`).
pub fn smoothed_square_wave(alpha: f64, nu: f64, t: f64, n: usize) -> Result<Vec<f64>> {
    let g = PeriodicGrid::new(1, n)?;
    let wave = PeriodicField::from_fn(g, 1, |x, o| o[0] = if x[0] < std::f64::consts::PI { 1.0 } else { -1.0 })?;
    let symbol = LevySymbol::isotropic(alpha, 1.0)?;
    Ok(semigroup_apply(&wave, -t.abs(), &symbol, nu)?.into_values())
}

/// Vorticity `d1 u2 - d2 u1` of the spectral reference flow started from a
/// Taylor-Green vortex plus a shear mode, on an `n x n` grid at time `-t`.
pub fn vorticity(n: usize, alpha: f64, nu: f64, amplitude: f64, t: f64, steps: usize) -> Result<Vec<f64>> {
    let g = PeriodicGrid::new(2, n)?;
    let u0 = taylor_green(g, amplitude)?.combine(1.0, &single_mode(g, &[0.0, 1.0], &[1.0, 0.0], amplitude)?, 1.0)?;
    let symbol = LevySymbol::isotropic(alpha, 1.0)?;
    let horizon = -t.abs().max(1e-6);
    let h = solve_fnse_spectral(&u0, &symbol, nu, horizon, horizon.abs() / steps.max(1) as f64, 1)?;
    let grad = spectral_gradient(&h.slices()[1])?;
    // Components are `d u_i / d x_j` at `i * 2 + j`.
    Ok((0..g.node_count()).map(|k| grad.node_value(k)[2] - grad.node_value(k)[1]).collect())
}

#[wasm_bindgen(js_name = cfCurve)]
pub fn cf_curve_js(alpha: f64, dt: f64, samples: usize, seed: u64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(cf_curve(alpha, dt, samples, seed, points))
}

#[wasm_bindgen(js_name = smoothedSquareWave)]
pub fn smoothed_square_wave_js(alpha: f64, nu: f64, t: f64, n: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(smoothed_square_wave(alpha, nu, t, n))
}

#[wasm_bindgen(js_name = vorticity)]
pub fn vorticity_js(n: usize, alpha: f64, nu: f64, amplitude: f64, t: f64, steps: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(vorticity(n, alpha, nu, amplitude, t, steps))
}
