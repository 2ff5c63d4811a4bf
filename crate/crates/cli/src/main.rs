use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fnse_core::cli::{parse_config, resolve_output, run, CONFIG_HELP};

/// Monte Carlo solver and verification suites for fractal Navier-Stokes on
/// the torus.
#[derive(Parser, Debug)]
#[command(name = "fnse", version, after_help = CONFIG_HELP)]
struct Args {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,

    /// Overrides `master_seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory (falls back to `output_dir`, then FNSE_OUTPUT).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(n) = args.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let out = resolve_output(args.output.as_deref(), &config);
    match run(&config, &out) {
        Ok(report) => {
            // A closed stdout (e.g. piped into `head`) must not change the
            // exit status.
            let mut stdout = std::io::stdout().lock();
            for line in &report.checks {
                let _ = writeln!(stdout, "{line}");
            }
            for (name, sum) in &report.checksums {
                let _ = writeln!(stdout, "checksum {name} {sum}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", config.command.name());
            ExitCode::from(2)
        }
    }
}
