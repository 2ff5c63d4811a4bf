//! Run configurations and the batch commands behind the `fnse` binary.
//!
//! A configuration is a flat `key = value` document. Every command writes
//! CSV reports (each with a checksum trailer) into the output directory and
//! returns one pass/fail line per check.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{FnseError, Result};
use crate::feynman_kac::{estimate_h_points, mild_solve, McSettings, PideProblem};
use crate::fields::io::read_field;
use crate::fields::{
    divergence, leray_project, semigroup_apply, single_mode, spectral_gradient, taylor_green, FieldHistory,
    Interpolation, PeriodicField, PeriodicGrid, VelocityHistory,
};
use crate::fnse_solver::{continue_global, read_history, solve_local, weak_form_residual, write_history, SolveConfig};
use crate::levy_sim::{check_symbol_condition, empirical_cf, ConditionStatus, IncrementSampler, LevySymbol};
use crate::reference_spectral::{compare_fields, solve_fnse_spectral};
use crate::report::{fmt_f64, CsvTable};
use crate::rng::{counter_rng, derive_seed};
use crate::theory_checks::{
    central_density_scaling, kernel_tail_check, krylov_check, mild_gradient_bound_check, sde_gradient_check,
    semigroup_smoothing_check, McCheckSettings,
};

/// Keys, defaults and meaning; printed by `fnse --help`.
pub const CONFIG_HELP: &str = "\
Configuration keys (one `key = value` per line, `#` starts a comment):
  command          verify-levy | verify-fields | verify-feynman-kac |
                   verify-estimates | solve | continue | compare   (required)
  dim              spatial dimension 1..3                          [2]
  n                grid points per axis, power of two >= 4         [16]
  alpha            stability index; (0,2), solver commands (1,2)   [1.5]
  sigma            symbol scale                                    [1]
  viscosity        nu >= 1                                         [1]
  samples          Monte Carlo paths per node for the solver       [2000]
  mc_samples       Monte Carlo paths for verification commands     [20000]
  dt               Euler step                                      [0.001]
  slices           time intervals K of a local solution            [4]
  c0               horizon constant                                [1]
  picard_tol       absolute Picard tolerance                       [1e-4]
  picard_max       Picard iteration cap                            [10]
  p                Lebesgue exponent, p > 2d/alpha                 [4]
  interpolation    linear | spectral                               [linear]
  u0               taylor-green | zero | single-mode k=.. e=.. |
                   file:<path>                                     [taylor-green]
  amplitude        amplitude of the u0 preset                      [1]
  method           monte-carlo | spectral (solve only)             [monte-carlo]
  horizon          horizon for method = spectral; default from the
                   local-horizon rule                              [unset]
  total_horizon    end time of `continue`                          [-2]
  reference        reference output directory (compare)            [unset]
  candidate        candidate output directory (compare)            [unset]
  budget           largest accepted relative error (compare)       [0.05]
  master_seed      64-bit seed                                     [0]
  output_dir       output directory; --output and FNSE_OUTPUT
                   take precedence / act as fallback               [unset]
";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    VerifyLevy,
    VerifyFields,
    VerifyFeynmanKac,
    VerifyEstimates,
    Solve,
    Continue,
    Compare,
}

impl Command {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "verify-levy" => Self::VerifyLevy,
            "verify-fields" => Self::VerifyFields,
            "verify-feynman-kac" => Self::VerifyFeynmanKac,
            "verify-estimates" => Self::VerifyEstimates,
            "solve" => Self::Solve,
            "continue" => Self::Continue,
            "compare" => Self::Compare,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::VerifyLevy => "verify-levy",
            Self::VerifyFields => "verify-fields",
            Self::VerifyFeynmanKac => "verify-feynman-kac",
            Self::VerifyEstimates => "verify-estimates",
            Self::Solve => "solve",
            Self::Continue => "continue",
            Self::Compare => "compare",
        }
    }

    /// Commands that run the nonlinear solver and need `alpha` in (1, 2).
    fn is_solver(self) -> bool {
        matches!(self, Self::Solve | Self::Continue)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum U0Spec {
    TaylorGreen,
    Zero,
    SingleMode { k: Vec<f64>, e: Vec<f64> },
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    MonteCarlo,
    Spectral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub dim: usize,
    pub n: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub viscosity: f64,
    pub samples: usize,
    pub mc_samples: usize,
    pub dt: f64,
    pub slices: usize,
    pub c0: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub p: f64,
    pub interpolation: Interpolation,
    pub u0: U0Spec,
    pub amplitude: f64,
    pub method: Method,
    pub horizon: Option<f64>,
    pub total_horizon: f64,
    pub reference: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
    pub budget: f64,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn with_defaults(command: Command) -> Self {
        Self {
            command,
            dim: 2,
            n: 16,
            alpha: 1.5,
            sigma: 1.0,
            viscosity: 1.0,
            samples: 2000,
            mc_samples: 20_000,
            dt: 1e-3,
            slices: 4,
            c0: 1.0,
            picard_tol: 1e-4,
            picard_max: 10,
            p: 4.0,
            interpolation: Interpolation::Linear,
            u0: U0Spec::TaylorGreen,
            amplitude: 1.0,
            method: Method::MonteCarlo,
            horizon: None,
            total_horizon: -2.0,
            reference: None,
            candidate: None,
            budget: 0.05,
            master_seed: 0,
            output_dir: None,
        }
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.dim, self.n)
    }

    pub fn symbol(&self) -> Result<LevySymbol> {
        LevySymbol::isotropic(self.alpha, self.sigma)
    }

    pub fn solve_config(&self) -> Result<SolveConfig> {
        Ok(SolveConfig {
            viscosity: self.viscosity,
            samples: self.samples,
            dt: self.dt,
            slices: self.slices,
            c0: self.c0,
            picard_tol: self.picard_tol,
            picard_max: self.picard_max,
            p: self.p,
            interpolation: self.interpolation,
            seed: self.master_seed,
            ..SolveConfig::new(self.grid()?, self.symbol()?)
        })
    }

    pub fn initial_velocity(&self) -> Result<PeriodicField> {
        let g = self.grid()?;
        let d = self.dim;
        match &self.u0 {
            U0Spec::Zero => Ok(PeriodicField::zeros(g, d)),
            U0Spec::TaylorGreen => taylor_green(g, self.amplitude),
            U0Spec::SingleMode { k, e } => single_mode(g, k, e, self.amplitude),
            U0Spec::File(path) => {
                let (f, _) = read_field(path)?;
                if *f.grid() != g || f.comps() != d {
                    return Err(FnseError::InvalidInput(format!(
                        "{} does not hold a {d}-component field on the configured grid",
                        path.display()
                    )));
                }
                Ok(f)
            }
        }
    }
}

fn cfg_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(FnseError::Config { line, message: message.into() })
}

fn num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().or_else(|_| cfg_err(line, format!("`{key}`: cannot parse `{v}`")))
}

fn vector(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split(',').map(|x| num::<f64>("u0", x.trim(), line)).collect()
}

fn parse_u0(v: &str, line: usize) -> Result<U0Spec> {
    if let Some(path) = v.strip_prefix("file:") {
        return Ok(U0Spec::File(PathBuf::from(path.trim())));
    }
    let mut parts = v.split_whitespace();
    match parts.next() {
        Some("taylor-green") => Ok(U0Spec::TaylorGreen),
        Some("zero") => Ok(U0Spec::Zero),
        Some("single-mode") => {
            let (mut k, mut e) = (None, None);
            for part in parts {
                match part.split_once('=') {
                    Some(("k", s)) => k = Some(vector(s, line)?),
                    Some(("e", s)) => e = Some(vector(s, line)?),
                    _ => return cfg_err(line, format!("`u0`: unexpected `{part}` in single-mode preset")),
                }
            }
            match (k, e) {
                (Some(k), Some(e)) => Ok(U0Spec::SingleMode { k, e }),
                _ => cfg_err(line, "`u0`: single-mode needs both k=... and e=..."),
            }
        }
        _ => cfg_err(line, format!("`u0`: unknown preset `{v}`")),
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: HashMap<String, (String, usize)> = HashMap::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return cfg_err(line, format!("expected `key = value`, found `{content}`"));
        };
        let key = key.trim().to_string();
        if entries.contains_key(&key) {
            return cfg_err(line, format!("duplicate key `{key}`"));
        }
        entries.insert(key, (value.trim().to_string(), line));
    }
    let Some((cmd, cmd_line)) = entries.remove("command") else {
        return cfg_err(last_line, "missing required key `command`");
    };
    let command = Command::parse(&cmd).map_or_else(|| cfg_err(cmd_line, format!("unknown command `{cmd}`")), Ok)?;
    let mut c = RunConfig::with_defaults(command);
    let mut lines: HashMap<&'static str, usize> = HashMap::new();
    let mut sorted: Vec<_> = entries.into_iter().collect();
    sorted.sort_by_key(|(_, (_, l))| *l);
    for (key, (v, line)) in sorted {
        let v = v.as_str();
        let k: &'static str = match key.as_str() {
            "dim" => {
                c.dim = num(&key, v, line)?;
                "dim"
            }
            "n" => {
                c.n = num(&key, v, line)?;
                "n"
            }
            "alpha" => {
                c.alpha = num(&key, v, line)?;
                "alpha"
            }
            "sigma" => {
                c.sigma = num(&key, v, line)?;
                "sigma"
            }
            "viscosity" => {
                c.viscosity = num(&key, v, line)?;
                "viscosity"
            }
            "samples" => {
                c.samples = num(&key, v, line)?;
                "samples"
            }
            "mc_samples" => {
                c.mc_samples = num(&key, v, line)?;
                "mc_samples"
            }
            "dt" => {
                c.dt = num(&key, v, line)?;
                "dt"
            }
            "slices" => {
                c.slices = num(&key, v, line)?;
                "slices"
            }
            "c0" => {
                c.c0 = num(&key, v, line)?;
                "c0"
            }
            "picard_tol" => {
                c.picard_tol = num(&key, v, line)?;
                "picard_tol"
            }
            "picard_max" => {
                c.picard_max = num(&key, v, line)?;
                "picard_max"
            }
            "p" => {
                c.p = num(&key, v, line)?;
                "p"
            }
            "interpolation" => {
                c.interpolation = match v {
                    "linear" => Interpolation::Linear,
                    "spectral" => Interpolation::Spectral,
                    _ => return cfg_err(line, format!("`interpolation`: expected linear or spectral, found `{v}`")),
                };
                "interpolation"
            }
            "u0" => {
                c.u0 = parse_u0(v, line)?;
                "u0"
            }
            "amplitude" => {
                c.amplitude = num(&key, v, line)?;
                "amplitude"
            }
            "method" => {
                c.method = match v {
                    "monte-carlo" => Method::MonteCarlo,
                    "spectral" => Method::Spectral,
                    _ => return cfg_err(line, format!("`method`: expected monte-carlo or spectral, found `{v}`")),
                };
                "method"
            }
            "horizon" => {
                c.horizon = Some(num(&key, v, line)?);
                "horizon"
            }
            "total_horizon" => {
                c.total_horizon = num(&key, v, line)?;
                "total_horizon"
            }
            "reference" => {
                c.reference = Some(PathBuf::from(v));
                "reference"
            }
            "candidate" => {
                c.candidate = Some(PathBuf::from(v));
                "candidate"
            }
            "budget" => {
                c.budget = num(&key, v, line)?;
                "budget"
            }
            "master_seed" => {
                c.master_seed = num(&key, v, line)?;
                "master_seed"
            }
            "output_dir" => {
                c.output_dir = Some(PathBuf::from(v));
                "output_dir"
            }
            _ => return cfg_err(line, format!("unknown key `{key}`")),
        };
        lines.insert(k, line);
    }
    let at = |k: &str| lines.get(k).copied().unwrap_or(cmd_line);
    validate(&c, at)?;
    Ok(c)
}

fn validate(c: &RunConfig, at: impl Fn(&str) -> usize) -> Result<()> {
    if !(1..=3).contains(&c.dim) {
        return cfg_err(at("dim"), format!("dim = {} must be 1, 2 or 3", c.dim));
    }
    if c.n < 4 || !c.n.is_power_of_two() {
        return cfg_err(at("n"), format!("n = {} must be a power of two and at least 4", c.n));
    }
    if !(c.alpha > 0.0 && c.alpha < 2.0) {
        return cfg_err(
            at("alpha"),
            format!(
                "alpha = {} out of range: the symbol condition needs alpha in (0, 2) and the solver needs (1, 2)",
                c.alpha
            ),
        );
    }
    if c.command.is_solver() && c.alpha <= 1.0 {
        return cfg_err(at("alpha"), format!("alpha = {} out of range: solver commands need alpha in (1, 2)", c.alpha));
    }
    if !(c.sigma > 0.0 && c.sigma.is_finite()) {
        return cfg_err(at("sigma"), "sigma must be positive");
    }
    if !(c.viscosity >= 1.0 && c.viscosity.is_finite()) {
        return cfg_err(at("viscosity"), format!("viscosity = {} must be >= 1", c.viscosity));
    }
    let bound = 2.0 * c.dim as f64 / c.alpha;
    if c.command.is_solver() && !(c.p > bound) {
        return cfg_err(at("p"), format!("p = {} violates p > 2d/alpha = {bound:.4}", c.p));
    }
    if !(c.p >= 1.0) {
        return cfg_err(at("p"), "p must be at least 1");
    }
    if !(c.dt > 0.0 && c.dt.is_finite()) {
        return cfg_err(at("dt"), "dt must be positive");
    }
    if c.samples == 0 || c.mc_samples == 0 {
        return cfg_err(at(if c.samples == 0 { "samples" } else { "mc_samples" }), "sample counts must be positive");
    }
    if c.slices == 0 || c.picard_max == 0 {
        return cfg_err(at(if c.slices == 0 { "slices" } else { "picard_max" }), "must be positive");
    }
    if !(c.c0 > 0.0) {
        return cfg_err(at("c0"), "c0 must be positive");
    }
    if !(c.picard_tol >= 0.0) {
        return cfg_err(at("picard_tol"), "picard_tol must be non-negative");
    }
    if c.horizon.is_some_and(|h| !(h < 0.0)) {
        return cfg_err(at("horizon"), "horizon must be negative");
    }
    if !(c.total_horizon < 0.0) {
        return cfg_err(at("total_horizon"), "total_horizon must be negative");
    }
    if !(c.budget > 0.0) {
        return cfg_err(at("budget"), "budget must be positive");
    }
    if c.command.is_solver() && c.dim == 1 {
        return cfg_err(at("dim"), "solver commands need dim 2 or 3");
    }
    if let U0Spec::SingleMode { k, e } = &c.u0 {
        if k.len() != c.dim || e.len() != c.dim {
            return cfg_err(at("u0"), "single-mode k and e must have dim components");
        }
    }
    if matches!(c.u0, U0Spec::TaylorGreen) && c.command.is_solver() && c.dim != 2 {
        return cfg_err(at("u0"), "the taylor-green preset is two-dimensional");
    }
    if c.command == Command::Solve && c.method == Method::Spectral && c.dim != 2 {
        return cfg_err(at("method"), "the spectral reference is two-dimensional");
    }
    if c.command == Command::Compare && (c.reference.is_none() || c.candidate.is_none()) {
        return cfg_err(at("command"), "compare needs both `reference` and `candidate`");
    }
    Ok(())
}

/// One line of a command's summary.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub checks: Vec<CheckLine>,
    /// `(file name, checksum)` of every CSV written.
    pub checksums: Vec<(String, String)>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckLine { name: name.into(), pass, detail: detail.into() });
    }

    fn table(&mut self, dir: &Path, name: &str, table: &CsvTable) -> Result<()> {
        table.write(&dir.join(name))?;
        self.checksums.push((name.to_string(), table.checksum()));
        Ok(())
    }
}

/// Output directory: explicit flag, then the config key, then `FNSE_OUTPUT`,
/// then `fnse-output`.
pub fn resolve_output(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os("FNSE_OUTPUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fnse-output"))
}

/// Execute a command, writing artifacts under `out`.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let mut r = RunReport::default();
    match config.command {
        Command::VerifyLevy => verify_levy(config, out, &mut r)?,
        Command::VerifyFields => verify_fields(config, out, &mut r)?,
        Command::VerifyFeynmanKac => verify_feynman_kac(config, out, &mut r)?,
        Command::VerifyEstimates => verify_estimates(config, out, &mut r)?,
        Command::Solve => solve(config, out, &mut r)?,
        Command::Continue => continue_cmd(config, out, &mut r)?,
        Command::Compare => compare(config, out, &mut r)?,
    }
    Ok(r)
}

/// Frequencies `|xi|` spread over the body of the characteristic function.
fn cf_frequencies(dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (1..=8)
        .map(|i| {
            let m = scale * i as f64 / 4.0;
            let th = 0.7 * i as f64;
            match dim {
                1 => vec![m],
                2 => vec![m * th.cos(), m * th.sin()],
                _ => vec![m * th.cos(), m * th.sin() * 0.6, m * th.sin() * 0.8],
            }
        })
        .collect()
}

fn verify_levy(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    let symbol = c.symbol()?;
    let mut t = CsvTable::new(["dim", "dt", "xi_norm", "re_emp", "im_emp", "target", "stderr", "pass"]);
    for (i, &dt) in [0.05, 0.2].iter().enumerate() {
        let sampler = IncrementSampler::preferred(symbol, c.dim, derive_seed(c.master_seed, i as u64))?;
        let xs: Vec<Vec<f64>> = crate::par::map_indexed(c.mc_samples, |j| {
            sampler.with_stream(j as u64).sample_increment(dt, 0).expect("valid step")
        });
        // |xi| up to where the target modulus is e^-3.
        let scale = 0.5 * (3.0 / (dt * c.sigma)).powf(1.0 / c.alpha);
        let mut all = true;
        for xi in cf_frequencies(c.dim, scale) {
            let est = empirical_cf(&xs, &xi)?;
            let target = (-dt * symbol.eval(&xi)?).exp();
            let ok = (est.mean - target).norm() <= 3.0 * est.stderr.max(1e-12);
            all &= ok;
            let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            t.push(vec![
                c.dim.to_string(),
                fmt_f64(dt),
                fmt_f64(norm),
                fmt_f64(est.mean.re),
                fmt_f64(est.mean.im),
                fmt_f64(target.re),
                fmt_f64(est.stderr),
                ok.to_string(),
            ])?;
        }
        r.check(format!("characteristic function dt={dt}"), all, format!("{} samples, 8 frequencies", c.mc_samples));
    }
    let mags: Vec<f64> = (0..40).map(|i| 10f64.powf(-1.0 + 5.0 * i as f64 / 39.0)).collect();
    let cond = check_symbol_condition(&symbol, c.dim, &mags, 10.0)?;
    r.check(
        "symbol growth condition",
        cond.status == ConditionStatus::Pass,
        format!("ratio range [{:.4}, {:.4}]", cond.min_ratio, cond.max_ratio),
    );
    r.table(out, "levy.csv", &t)
}

fn random_field(grid: PeriodicGrid, comps: usize, seed: u64) -> Result<PeriodicField> {
    use rand::Rng;
    let mut rng = counter_rng(seed, 0, 0);
    let values = (0..grid.node_count() * comps).map(|_| rng.random::<f64>() - 0.5).collect();
    PeriodicField::from_values(grid, comps, values)
}

fn verify_fields(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    let g = c.grid()?;
    let d = c.dim;
    let symbol = c.symbol()?;
    let u = random_field(g, d, derive_seed(c.master_seed, 1))?;
    let phi = random_field(g, 1, derive_seed(c.master_seed, 2))?;
    let pu = leray_project(&u)?;
    let scale = u.max_norm();
    let idem = pu.combine(1.0, &leray_project(&pu)?, -1.0)?.max_norm() / scale;
    let grad = leray_project(&spectral_gradient(&phi)?)?.max_norm() / phi.max_norm();
    let div = divergence(&pu)?.max_norm() / scale;
    let (s, tt) = (-0.13, -0.29);
    let two = semigroup_apply(&semigroup_apply(&phi, s, &symbol, c.viscosity)?, tt, &symbol, c.viscosity)?;
    let one = semigroup_apply(&phi, s + tt, &symbol, c.viscosity)?;
    let law = two.combine(1.0, &one, -1.0)?.max_norm() / phi.max_norm();
    let mut t = CsvTable::new(["check", "value", "tolerance", "pass"]);
    for (name, v, tol) in [
        ("leray idempotence", idem, 1e-10),
        ("gradient annihilation", grad, 1e-10),
        ("divergence of projection", div, 1e-10),
        ("semigroup law", law, 1e-12),
    ] {
        let ok = v <= tol;
        t.push(vec![name.replace(' ', "_"), fmt_f64(v), fmt_f64(tol), ok.to_string()])?;
        r.check(name, ok, format!("{v:.3e} <= {tol:e}"));
    }
    r.table(out, "fields.csv", &t)
}

fn verify_feynman_kac(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    use rand::Rng;
    let g = c.grid()?;
    let symbol = c.symbol()?;
    let t_end = -0.1;
    let u = if c.dim == 2 {
        VelocityHistory::frozen(taylor_green(g, c.amplitude)?, t_end)?
    } else {
        VelocityHistory::zero(g, t_end)?
    };
    let phi = PeriodicField::from_fn(g, 1, |x, o| o[0] = x[0].cos())?;
    let prob = PideProblem::new(u, None, phi, symbol, c.viscosity)?;
    let sol = mild_solve(&prob, t_end, 40)?;
    let h = sol.history.slices().last().expect("slices");
    let mut rng = counter_rng(derive_seed(c.master_seed, 3), 0, 0);
    let pts: Vec<Vec<f64>> =
        (0..20).map(|_| (0..c.dim).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect()).collect();
    // The Euler step must divide the horizon.
    let dt = 0.1 / (0.1 / c.dt.max(1e-4)).round().max(1.0);
    let mc = McSettings { dt, interpolation: Interpolation::Spectral, seed: c.master_seed };
    let est = estimate_h_points(&prob, &pts, t_end, c.mc_samples, &mc)?;
    let mut t = CsvTable::new(["point", "estimate", "stderr", "oracle", "pass"]);
    let mut worst: f64 = 0.0;
    let mut all = true;
    for (i, (p, e)) in pts.iter().zip(&est).enumerate() {
        let want = h.interpolate(p, Interpolation::Spectral)?[0];
        let ok = e.agrees_with(want, 3.0, 5.0 * dt);
        all &= ok;
        worst = worst.max((e.mean - want).abs() / (3.0 * e.stderr + 5.0 * dt));
        t.push(vec![i.to_string(), fmt_f64(e.mean), fmt_f64(e.stderr), fmt_f64(want), ok.to_string()])?;
    }
    r.check("feynman-kac vs mild solution", all, format!("20 points, worst error/budget {worst:.3}"));
    r.table(out, "feynman_kac.csv", &t)
}

fn log_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| -lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn verify_estimates(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    let symbol = c.symbol()?;
    let a = c.alpha;
    let seed = c.master_seed;
    // Products nu|t| for which the worst single mode lies inside the band
    // 1..N/3 of the grid.
    let kmax = (c.n / 3) as f64;
    let s_lo = 1.0 / (a * (0.8 * kmax).powf(a));
    let s_hi = 1.0 / (a * 2f64.powf(a));

    let g = c.grid()?;
    let semi = semigroup_smoothing_check(&symbol, g, &[1.0, 2.0, 4.0, 8.0], &log_times(s_lo / 8.0, s_hi, 16), c.p)?;
    let fit = |f: Option<crate::theory_checks::SlopeFit>| f.map_or("no fit".into(), |f| format!("slope {:.4}", f.slope));
    r.check("semigroup smoothing", semi.passes, format!("{} (target {:.4})", fit(semi.fit), semi.target));
    r.table(out, "semigroup_smoothing.csv", &semi.to_csv()?)?;

    // Long enough for the Krylov window and for times snapped up to the dt
    // lattice.
    let t_end: f64 = -0.25;
    let cover = t_end.min(-s_hi) - 2.0 * c.dt;
    let u = if c.dim == 2 {
        VelocityHistory::frozen(taylor_green(g, c.amplitude)?, cover)?
    } else {
        VelocityHistory::zero(g, cover)?
    };
    let mild = mild_gradient_bound_check(&u, &symbol, &[1.0], &log_times(s_lo, s_hi, 5), 8, c.p)?;
    r.check("mild gradient bound", mild.passes, format!("{} (target {:.4})", fit(mild.fit), mild.target));
    r.table(out, "mild_gradient.csv", &mild.to_csv()?)?;

    let mc = McCheckSettings { samples: c.samples, dt: c.dt, interpolation: c.interpolation, seed };
    let sde = sde_gradient_check(&u, &symbol, &[1.0], &log_times(s_lo, s_hi, 5), &mc)?;
    r.check(
        "sde gradient",
        sde.slope.passes && sde.lipschitz_ok,
        format!("{} (target {:.4}), lipschitz {}", fit(sde.slope.fit), sde.slope.target, sde.lipschitz_ok),
    );
    r.table(out, "sde_gradient.csv", &sde.slope.to_csv()?)?;

    let tail = kernel_tail_check(&symbol, 1, -0.5, c.mc_samples, derive_seed(seed, 20))?;
    r.check(
        "kernel tail",
        tail.passes,
        format!("weighted max {:.4} vs {:.4} on doubling", tail.weighted_max, tail.weighted_max_doubled),
    );
    let (reports, cfit, ok) = central_density_scaling(&symbol, 1, &[-0.1, -0.2, -0.4], c.mc_samples, derive_seed(seed, 21))?;
    r.check("central density scaling", ok, format!("slope {:.4} (target {:.4})", cfit.slope, -1.0 / a));
    let mut kt = CsvTable::new(["t", "central_density", "stderr", "weighted_max", "weighted_max_doubled", "pass"]);
    for rep in std::iter::once(&tail).chain(&reports) {
        kt.push(vec![
            fmt_f64(rep.t),
            fmt_f64(rep.central_density.mean),
            fmt_f64(rep.central_density.stderr),
            fmt_f64(rep.weighted_max),
            fmt_f64(rep.weighted_max_doubled),
            rep.passes.to_string(),
        ])?;
    }
    r.table(out, "kernel_tail.csv", &kt)?;

    if c.dim >= 2 && c.p > c.dim as f64 / a {
        let q = 2.0 * c.p * a / (c.p * a - c.dim as f64);
        let center = vec![std::f64::consts::PI; c.dim];
        let mut krt = CsvTable::new(["radius", "lhs", "lhs_stderr", "rhs", "ratio", "ratio_doubled", "stable"]);
        let kmc = McCheckSettings { samples: (c.samples / 4).max(64), dt: 0.005, interpolation: c.interpolation, seed };
        let mut all = true;
        for radius in [1.0, 0.5, 0.25] {
            let f = FieldHistory::frozen(crate::theory_checks::bump(g, &center, radius, c.p)?, t_end)?;
            let k = krylov_check(&u, &f, &symbol, c.viscosity, t_end, std::slice::from_ref(&center), c.p, q, &kmc)?;
            all &= k.stable;
            krt.push(vec![
                fmt_f64(radius),
                fmt_f64(k.lhs.mean),
                fmt_f64(k.lhs.stderr),
                fmt_f64(k.rhs),
                fmt_f64(k.ratio),
                fmt_f64(k.ratio_doubled),
                k.stable.to_string(),
            ])?;
        }
        r.check("krylov ratio", all, "bounded and stable for shrinking bumps");
        r.table(out, "krylov.csv", &krt)?;
    }
    Ok(())
}

/// Divergence-free test fields for the weak form.
fn weak_tests(g: PeriodicGrid) -> Result<Vec<PeriodicField>> {
    let d = g.dim;
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let mut k2 = vec![0.0; d];
    k2[1] = 1.0;
    let mut tests = vec![single_mode(g, &k2, &e1, 1.0)?];
    let mut kd = vec![1.0; d];
    kd[0] = 1.0;
    let mut ed = vec![0.0; d];
    ed[0] = 1.0;
    ed[1] = -1.0;
    tests.push(single_mode(g, &kd, &ed, 1.0)?);
    if d == 2 {
        tests.push(taylor_green(g, 1.0)?);
    }
    Ok(tests)
}

fn solve(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    let cfg = c.solve_config()?;
    let u0 = c.initial_velocity()?;
    if c.method == Method::Spectral {
        let horizon = match c.horizon {
            Some(h) => h,
            None => crate::fnse_solver::local_horizon(&u0, &cfg)?.t,
        };
        let h = solve_fnse_spectral(&u0, &cfg.symbol, c.viscosity, horizon, c.dt, c.slices)?;
        let mut m = CsvTable::new(["slice", "t", "u_norm_p", "grad_u_norm_p"]);
        for (j, (t, f)) in h.times().iter().zip(h.slices()).enumerate() {
            m.push(vec![
                j.to_string(),
                fmt_f64(*t),
                fmt_f64(f.lp_norm(c.p)?),
                fmt_f64(crate::fields::sobolev_norm(f, 1, c.p)?),
            ])?;
        }
        write_history(out, &h, &m)?;
        r.checksums.push(("manifest.csv".into(), m.checksum()));
        r.check("spectral reference", true, format!("{} slices to T = {horizon}", h.slices().len()));
        return Ok(());
    }
    let sol = solve_local(&u0, &cfg)?;
    sol.write_to(out)?;
    r.checksums.push(("manifest.csv".into(), sol.manifest()?.checksum()));
    r.check(
        "picard convergence",
        sol.converged,
        format!("{} iterations, T = {}, {} halvings", sol.iterations, sol.horizon.t, sol.horizon.halvings),
    );
    let div = sol.u.slices().iter().map(|f| divergence(f).map(|v| v.max_norm())).collect::<Result<Vec<_>>>()?;
    let worst = div.iter().copied().fold(0.0, f64::max);
    r.check("divergence-free slices", worst <= 1e-10 * u0.max_norm().max(1.0), format!("max |div u| {worst:.3e}"));
    let sup = sol.grad_norms.iter().copied().fold(0.0, f64::max);
    r.check(
        "gradient norm bound",
        sol.norm_bound_holds(),
        format!("sup ||grad u||_p = {sup:.4e} vs 3 C0 ||grad u0||_p = {:.4e} (C0 = {})", 3.0 * c.c0 * sol.initial_grad_norm, c.c0),
    );
    let tests = weak_tests(cfg.grid)?;
    let res = weak_form_residual(&sol, &cfg, &tests)?;
    let mut t = CsvTable::new(["test", "slice", "t", "residual", "stderr", "quadrature_budget", "pass"]);
    let mut all = true;
    for (i, w) in res.iter().enumerate() {
        all &= w.passes();
        for (j, time) in sol.times().iter().enumerate() {
            let ok = w.residual[j].abs() <= 3.0 * w.stderr[j] + w.budget[j];
            t.push(vec![
                i.to_string(),
                j.to_string(),
                fmt_f64(*time),
                fmt_f64(w.residual[j]),
                fmt_f64(w.stderr[j]),
                fmt_f64(w.budget[j]),
                ok.to_string(),
            ])?;
        }
    }
    r.check("weak-form residual", all, format!("{} test fields", tests.len()));
    r.table(out, "weak_form.csv", &t)
}

fn continue_cmd(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    let cfg = c.solve_config()?;
    let u0 = c.initial_velocity()?;
    let g = continue_global(&u0, &cfg, c.total_horizon)?;
    g.write_to(out, c.p)?;
    r.checksums.push(("manifest.csv".into(), g.manifest(c.p)?.checksum()));
    let mut t = CsvTable::new(["t", "grad_u_norm_p", "stderr", "bound", "ok"]);
    for e in &g.reentry {
        t.push(vec![fmt_f64(e.t), fmt_f64(e.grad_norm), fmt_f64(e.grad_norm_stderr), fmt_f64(e.bound), e.ok.to_string()])?;
    }
    r.check(
        "global continuation",
        g.segments.iter().all(|s| s.converged),
        format!("{} segments to t = {}", g.segments.len(), g.u.horizon()),
    );
    r.check(
        "re-entry condition",
        g.reentry.iter().all(|e| e.ok),
        format!("{}/{} restarts within the initial gradient norm", g.reentry.iter().filter(|e| e.ok).count(), g.reentry.len()),
    );
    r.table(out, "reentry.csv", &t)
}

fn compare(c: &RunConfig, out: &Path, r: &mut RunReport) -> Result<()> {
    let reference = read_history(c.reference.as_deref().expect("validated"))?;
    let candidate = read_history(c.candidate.as_deref().expect("validated"))?;
    let errs = compare_fields(&reference, &candidate, c.p)?;
    let mut t = CsvTable::new(["t", "relative_error", "budget", "pass"]);
    let mut worst: f64 = 0.0;
    for (time, e) in &errs {
        worst = worst.max(*e);
        t.push(vec![fmt_f64(*time), fmt_f64(*e), fmt_f64(c.budget), (*e <= c.budget).to_string()])?;
    }
    r.check("relative error", worst <= c.budget, format!("worst {worst:.4e} vs budget {}", c.budget));
    r.table(out, "compare.csv", &t)
}
