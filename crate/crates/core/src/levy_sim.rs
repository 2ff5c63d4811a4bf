//! Symmetric Lévy processes: symbols and increment sampling.
//!
//! The process over a time span of length `s` has characteristic function
//! `E exp(i xi . L) = exp(-s psi(xi))` with `Re psi >= 0`. Backward-time
//! callers that carry `t <= 0` use `exp(t psi(xi))`.
//!
//! Both symbol kinds are built from the jump measure
//! `nu(dy) = sigma * C(d, alpha) |y|^(-d-alpha) dy`, optionally restricted to
//! `|y| <= a`. The constant `C(d, alpha)` is chosen so that the untruncated
//! symbol is exactly `sigma |xi|^alpha`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::error::{invalid, Result};
use crate::mc::ComplexMcEstimate;
use crate::rng::counter_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolKind {
    IsotropicStable,
    TruncatedStable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevySymbol {
    pub alpha: f64,
    pub sigma: f64,
    pub kind: SymbolKind,
    /// Jump-size cutoff. Only read for truncated symbols.
    pub truncation_a: f64,
}

impl LevySymbol {
    pub fn isotropic(alpha: f64, sigma: f64) -> Result<Self> {
        Self::validate(alpha, sigma, f64::INFINITY)?;
        Ok(Self { alpha, sigma, kind: SymbolKind::IsotropicStable, truncation_a: f64::INFINITY })
    }

    pub fn truncated(alpha: f64, sigma: f64, a: f64) -> Result<Self> {
        Self::validate(alpha, sigma, a)?;
        Ok(Self { alpha, sigma, kind: SymbolKind::TruncatedStable, truncation_a: a })
    }

    fn validate(alpha: f64, sigma: f64, a: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return invalid(format!("alpha = {alpha} outside (0, 2)"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma = {sigma} must be positive and finite"));
        }
        if !(a > 0.0) || a.is_nan() {
            return invalid(format!("truncation radius {a} must be positive"));
        }
        Ok(())
    }

    /// Jump measure density constant for dimension `d`, including `sigma`.
    pub fn measure_constant(&self, d: usize) -> f64 {
        self.sigma * stable_constant(d, self.alpha)
    }

    /// `psi(xi)` for a frequency vector. The dimension of `xi` selects the
    /// dimension of the jump measure.
    pub fn eval(&self, xi: &[f64]) -> Result<Complex64> {
        if xi.is_empty() || xi.len() > 3 {
            return invalid(format!("frequency dimension {} not in 1..=3", xi.len()));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite frequency");
        }
        let rho = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Complex64::new(self.radial(rho, xi.len()), 0.0))
    }

    /// `psi` as a function of `|xi|` in dimension `d`. Both kinds are
    /// symmetric, so the symbol is real.
    pub fn radial(&self, rho: f64, d: usize) -> f64 {
        match self.kind {
            SymbolKind::IsotropicStable => self.sigma * rho.powf(self.alpha),
            SymbolKind::TruncatedStable => {
                if rho == 0.0 {
                    return 0.0;
                }
                if self.truncation_a.is_infinite() {
                    return self.sigma * rho.powf(self.alpha);
                }
                let z_max = rho * self.truncation_a;
                self.measure_constant(d) * rho.powf(self.alpha) * scaled_integral(d, self.alpha, z_max)
            }
        }
    }

    /// Multiplier exponent `psi(nu^(1/alpha) |k|)` of the viscous semigroup.
    pub fn viscous(&self, viscosity: f64, rho: f64, d: usize) -> f64 {
        self.radial(viscosity.powf(1.0 / self.alpha) * rho, d)
    }
}

/// `C(d, alpha) = alpha 2^(alpha-1) Gamma((d+alpha)/2) / (pi^(d/2) Gamma(1-alpha/2))`.
pub fn stable_constant(d: usize, alpha: f64) -> f64 {
    let d = d as f64;
    alpha * 2f64.powf(alpha - 1.0) * libm::tgamma((d + alpha) / 2.0)
        / (PI.powf(d / 2.0) * libm::tgamma(1.0 - alpha / 2.0))
}

/// Surface area of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(d as f64 / 2.0) / libm::tgamma(d as f64 / 2.0),
    }
}

/// Angular average `S_d(z) = int_{S^{d-1}} (1 - cos(z theta_1)) dtheta`.
fn angular(d: usize, z: f64) -> f64 {
    match d {
        1 => 2.0 * (1.0 - z.cos()),
        2 => 2.0 * PI * (1.0 - libm::j0(z)),
        _ => 4.0 * PI * (1.0 - z.sin() / z),
    }
}

/// Coefficient of `z^(2k)` (without sign) in the power series of `S_d`.
fn angular_coeff(d: usize, k: usize) -> f64 {
    let mut fact = 1.0;
    match d {
        1 => {
            for j in 1..=2 * k {
                fact *= j as f64;
            }
            2.0 / fact
        }
        2 => {
            for j in 1..=k {
                fact *= j as f64;
            }
            2.0 * PI * 0.25f64.powi(k as i32) / (fact * fact)
        }
        _ => {
            for j in 1..=2 * k + 1 {
                fact *= j as f64;
            }
            4.0 * PI / fact
        }
    }
}

// Gauss-Legendre, 20 nodes on [-1, 1] (positive half; symmetric).
const GL_X: [f64; 10] = [
    0.076_526_521_133_497_33,
    0.227_785_851_141_645_08,
    0.373_706_088_715_419_56,
    0.510_867_001_950_827_1,
    0.636_053_680_726_515_1,
    0.746_331_906_460_150_8,
    0.839_116_971_822_218_8,
    0.912_234_428_251_325_9,
    0.963_971_927_277_913_8,
    0.993_128_599_185_094_9,
];
const GL_W: [f64; 10] = [
    0.152_753_387_130_725_85,
    0.149_172_986_472_603_75,
    0.142_096_109_318_382_05,
    0.131_688_638_449_176_63,
    0.118_194_531_961_518_42,
    0.101_930_119_817_240_44,
    0.083_276_741_576_704_75,
    0.062_672_048_334_109_06,
    0.040_601_429_800_386_94,
    0.017_614_007_139_152_118,
];

fn gauss_legendre(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut s = 0.0;
    for (x, w) in GL_X.iter().zip(GL_W.iter()) {
        s += w * (f(mid - half * x) + f(mid + half * x));
    }
    s * half
}

/// Beyond this upper limit the oscillating part of the tail is below
/// `Z^(-1-alpha)` and is dropped; only the constant part is subtracted.
const TAIL_START: f64 = 2e4;

/// `int_0^Z z^(-1-alpha) S_d(z) dz`.
fn scaled_integral(d: usize, alpha: f64, z_max: f64) -> f64 {
    const SERIES_LIMIT: f64 = 1.0;
    if z_max > TAIL_START {
        let s_inf = match d {
            1 => 2.0,
            2 => 2.0 * PI,
            _ => 4.0 * PI,
        };
        return 1.0 / stable_constant(d, alpha) - s_inf * z_max.powf(-alpha) / alpha;
    }
    let z0 = z_max.min(SERIES_LIMIT);
    let mut total = 0.0;
    let mut sign = 1.0;
    for k in 1..40 {
        let p = 2.0 * k as f64 - alpha;
        let term = angular_coeff(d, k) * z0.powf(p) / p;
        total += sign * term;
        sign = -sign;
        if term < 1e-18 * total.abs() {
            break;
        }
    }
    if z_max > z0 {
        let width = 0.5 * PI;
        let panels = ((z_max - z0) / width).ceil() as usize;
        let step = (z_max - z0) / panels as f64;
        let f = |z: f64| z.powf(-1.0 - alpha) * angular(d, z);
        for i in 0..panels {
            let lo = z0 + i as f64 * step;
            total += gauss_legendre(f, lo, lo + step);
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingScheme {
    /// Exact stable law: Chambers-Mallows-Stuck in 1D, Gaussian
    /// subordination in higher dimensions.
    ExactStable,
    /// Large jumps as a compound Poisson sum, small jumps replaced by a
    /// variance-matched Gaussian.
    CompoundPoissonGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncrementSampler {
    pub symbol: LevySymbol,
    pub dim: usize,
    pub scheme: SamplingScheme,
    /// Fixed small-jump radius; `None` means `dt^(1/alpha) / 10` per step.
    pub small_jump_cutoff: Option<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl IncrementSampler {
    pub fn new(symbol: LevySymbol, dim: usize, scheme: SamplingScheme, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension {dim} not in 1..=3"));
        }
        if scheme == SamplingScheme::ExactStable && symbol.kind != SymbolKind::IsotropicStable {
            return invalid("exact-stable sampling requires an isotropic-stable symbol");
        }
        Ok(Self { symbol, dim, scheme, small_jump_cutoff: None, seed, stream: 0 })
    }

    /// Exact scheme when available, compound Poisson otherwise.
    pub fn preferred(symbol: LevySymbol, dim: usize, seed: u64) -> Result<Self> {
        let scheme = match symbol.kind {
            SymbolKind::IsotropicStable => SamplingScheme::ExactStable,
            SymbolKind::TruncatedStable => SamplingScheme::CompoundPoissonGaussian,
        };
        Self::new(symbol, dim, scheme, seed)
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return invalid(format!("small-jump cutoff {cutoff} must be positive"));
        }
        self.small_jump_cutoff = Some(cutoff);
        Ok(self)
    }

    /// Increment over `dt` at counter `step` of this sampler's stream.
    pub fn sample_increment(&self, dt: f64, step: u64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.fill_increment(dt, step, &mut out)?;
        Ok(out)
    }

    pub fn fill_increment(&self, dt: f64, step: u64, out: &mut [f64]) -> Result<()> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return invalid(format!("time step {dt} must be finite and non-negative"));
        }
        if out.len() != self.dim {
            return invalid("output length does not match sampler dimension");
        }
        let mut rng = counter_rng(self.seed, self.stream, step);
        self.draw(dt, &mut rng, out);
        Ok(())
    }

    /// Draw one increment from an already positioned generator.
    pub fn draw(&self, dt: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if dt == 0.0 {
            return;
        }
        match self.scheme {
            SamplingScheme::ExactStable => self.draw_stable(dt, rng, out),
            SamplingScheme::CompoundPoissonGaussian => self.draw_cpg(dt, rng, out),
        }
    }

    fn draw_stable(&self, dt: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let alpha = self.symbol.alpha;
        let scale = dt * self.symbol.sigma;
        if self.dim == 1 {
            out[0] = scale.powf(1.0 / alpha) * symmetric_stable(alpha, rng);
            return;
        }
        // E exp(-s A) = exp(-c s^(alpha/2)) with s = |xi|^2 / 2.
        let c = scale * 2f64.powf(alpha / 2.0);
        let a = c.powf(2.0 / alpha) * positive_stable(alpha / 2.0, rng);
        let root = a.sqrt();
        for v in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v = root * g;
        }
    }

    fn draw_cpg(&self, dt: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let d = self.dim;
        let alpha = self.symbol.alpha;
        let a = match self.symbol.kind {
            SymbolKind::IsotropicStable => f64::INFINITY,
            SymbolKind::TruncatedStable => self.symbol.truncation_a,
        };
        let cutoff = self.small_jump_cutoff.unwrap_or(dt.powf(1.0 / alpha) / 10.0).min(a);
        let mass = self.symbol.measure_constant(d) * sphere_area(d);

        let var = mass * cutoff.powf(2.0 - alpha) / ((2.0 - alpha) * d as f64) * dt;
        let sd = var.sqrt();
        for v in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v = sd * g;
        }

        let lo = cutoff.powf(-alpha);
        let hi = if a.is_finite() { a.powf(-alpha) } else { 0.0 };
        let rate = mass * (lo - hi) / alpha * dt;
        if rate <= 0.0 {
            return;
        }
        let count = Poisson::new(rate).map(|p| p.sample(rng) as u64).unwrap_or(0);
        let mut dir = [0.0; 3];
        for _ in 0..count {
            let u: f64 = rng.random();
            let r = (lo - u * (lo - hi)).powf(-1.0 / alpha);
            unit_direction(d, rng, &mut dir[..d]);
            for (o, e) in out.iter_mut().zip(&dir[..d]) {
                *o += r * e;
            }
        }
    }
}

/// Standard symmetric stable variate, `E exp(i xi X) = exp(-|xi|^alpha)`.
fn symmetric_stable(alpha: f64, rng: &mut ChaCha8Rng) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    (alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variate with `E exp(-s A) = exp(-s^beta)`, `0 < beta < 1`
/// (Kanter's representation).
fn positive_stable(beta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u = PI * open01(rng);
    let e: f64 = Exp1.sample(rng);
    let s = u.sin();
    ((1.0 - beta) * u).sin().powf((1.0 - beta) / beta) * (beta * u).sin()
        / (s.powf(1.0 / beta) * e.powf((1.0 - beta) / beta))
}

fn open01(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn unit_direction(d: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    match d {
        1 => out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 },
        2 => {
            let th = 2.0 * PI * rng.random::<f64>();
            out[0] = th.cos();
            out[1] = th.sin();
        }
        _ => loop {
            let mut n2 = 0.0;
            for v in out.iter_mut() {
                *v = StandardNormal.sample(rng);
                n2 += *v * *v;
            }
            if n2 > 1e-300 {
                let n = n2.sqrt();
                out.iter_mut().for_each(|v| *v /= n);
                return;
            }
        },
    }
}

/// Mean of `exp(i xi . x)` over the samples.
pub fn empirical_cf<S: AsRef<[f64]>>(samples: &[S], xi: &[f64]) -> Result<ComplexMcEstimate> {
    if samples.is_empty() {
        return invalid("empirical characteristic function of an empty sample");
    }
    let m = samples.len() as f64;
    let (mut sr, mut si, mut qr, mut qi) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let s = s.as_ref();
        if s.len() != xi.len() {
            return invalid("sample and frequency dimensions differ");
        }
        let phase: f64 = s.iter().zip(xi).map(|(a, b)| a * b).sum();
        let (im, re) = phase.sin_cos();
        sr += re;
        si += im;
        qr += re * re;
        qi += im * im;
    }
    let (mr, mi) = (sr / m, si / m);
    let var = if samples.len() > 1 {
        (((qr - sr * mr) + (qi - si * mi)) / (m - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(ComplexMcEstimate { mean: Complex64::new(mr, mi), stderr: (var / m).sqrt(), samples: samples.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionStatus {
    Pass,
    /// The ratio still drifts with `|xi|`; the growth condition only
    /// constrains the high-frequency limit.
    AsymptoticNotReached,
    Fail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolConditionReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Log-log slope of the ratio over the upper half of the range.
    pub upper_slope: f64,
    pub status: ConditionStatus,
}

pub const DEFAULT_CONDITION_BOUND: f64 = 10.0;
const DRIFT_TOLERANCE: f64 = 0.02;

/// Range of `Re psi(xi) / |xi|^alpha` over the given magnitudes.
pub fn check_symbol_condition(
    symbol: &LevySymbol,
    dim: usize,
    magnitudes: &[f64],
    bound: f64,
) -> Result<SymbolConditionReport> {
    if magnitudes.len() < 2 || magnitudes.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return invalid("need at least two positive finite magnitudes");
    }
    if !(1..=3).contains(&dim) {
        return invalid(format!("dimension {dim} not in 1..=3"));
    }
    let lo = magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = magnitudes.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return invalid("magnitude range must span at least two decades");
    }
    let ratio = |m: f64| symbol.radial(m, dim) / m.powf(symbol.alpha);
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    for &m in magnitudes {
        let r = ratio(m);
        min_ratio = min_ratio.min(r);
        max_ratio = max_ratio.max(r);
    }
    let mid = (lo * hi).sqrt();
    let (r_mid, r_hi) = (ratio(mid), ratio(hi));
    let upper_slope = if r_mid > 0.0 && r_hi > 0.0 { (r_hi / r_mid).ln() / (hi / mid).ln() } else { f64::NAN };

    let sane = min_ratio.is_finite() && max_ratio.is_finite() && min_ratio > 0.0;
    let status = if !sane {
        ConditionStatus::Fail
    } else if upper_slope.abs() > DRIFT_TOLERANCE {
        ConditionStatus::AsymptoticNotReached
    } else if max_ratio / min_ratio <= bound {
        ConditionStatus::Pass
    } else {
        ConditionStatus::Fail
    };
    Ok(SymbolConditionReport { min_ratio, max_ratio, upper_slope, status })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matches_known_values() {
        // d = 1, alpha = 1: Cauchy measure 1/(pi y^2).
        assert!((stable_constant(1, 1.0) - 1.0 / PI).abs() < 1e-14);
        // d = 3, alpha = 1: 1/pi^2.
        assert!((stable_constant(3, 1.0) - 1.0 / (PI * PI)).abs() < 1e-14);
    }

    #[test]
    fn truncated_symbol_tends_to_stable() {
        for d in 1..=3 {
            let s = LevySymbol::truncated(1.5, 1.3, 1e7).unwrap();
            let v = s.radial(2.0, d);
            let exact = 1.3 * 2f64.powf(1.5);
            assert!((v - exact).abs() < 1e-8 * exact, "d={d}: {v} vs {exact}");
        }
    }

    #[test]
    fn tail_shortcut_is_continuous() {
        for d in 1..=3 {
            let below = scaled_integral(d, 1.5, TAIL_START * (1.0 - 1e-12));
            let above = scaled_integral(d, 1.5, TAIL_START * (1.0 + 1e-12));
            assert!((above - below).abs() < 1e-9 * below, "d={d}: {below} {above}");
        }
    }

    #[test]
    fn series_and_quadrature_agree_at_switch() {
        for d in 1..=3 {
            let below = scaled_integral(d, 1.5, 1.0 - 1e-9);
            let above = scaled_integral(d, 1.5, 1.0 + 1e-9);
            assert!((above - below).abs() < 1e-8);
        }
    }

    #[test]
    fn stable_draw_is_finite() {
        let s = LevySymbol::isotropic(1.2, 1.0).unwrap();
        let sampler = IncrementSampler::preferred(s, 2, 1).unwrap();
        for step in 0..1000 {
            let v = sampler.sample_increment(0.1, step).unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}
