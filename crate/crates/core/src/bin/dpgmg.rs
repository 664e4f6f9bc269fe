//! Command-line driver for multigrid experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dpgmg::harness::{emit_report, run, ExperimentConfig};
use dpgmg::Error;

/// Runs one two-grid, multilevel or adaptive experiment and writes a report.
///
/// Options from `--config` are applied first; flags override them.
#[derive(Parser, Debug)]
#[command(name = "dpgmg", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// poisson | stokes | kovasznay | cavity
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long = "delta-k")]
    delta_k: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long = "coarse-width")]
    coarse_width: Option<String>,
    /// h | p | none
    #[arg(long = "two-grid")]
    two_grid: Option<String>,
    #[arg(long = "k-coarse")]
    k_coarse: Option<String>,
    #[arg(long = "skip-intermediate-p")]
    skip_intermediate_p: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "overlap-h")]
    overlap_h: Option<String>,
    #[arg(long = "overlap-p")]
    overlap_p: Option<String>,
    /// aggressive | conservative
    #[arg(long = "sigma-mode")]
    sigma_mode: Option<String>,
    #[arg(long)]
    adaptive: Option<String>,
    #[arg(long)]
    refs: Option<String>,
    #[arg(long)]
    fraction: Option<String>,
    /// zero | previous | both
    #[arg(long)]
    guess: Option<String>,
    #[arg(long)]
    re: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// json | csv
    #[arg(long)]
    format: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("problem", &self.problem),
            ("dim", &self.dim),
            ("k", &self.k),
            ("delta_k", &self.delta_k),
            ("width", &self.width),
            ("coarse_width", &self.coarse_width),
            ("two_grid", &self.two_grid),
            ("k_coarse", &self.k_coarse),
            ("skip_intermediate_p", &self.skip_intermediate_p),
            ("tol", &self.tol),
            ("overlap_h", &self.overlap_h),
            ("overlap_p", &self.overlap_p),
            ("sigma_mode", &self.sigma_mode),
            ("adaptive", &self.adaptive),
            ("refs", &self.refs),
            ("fraction", &self.fraction),
            ("guess", &self.guess),
            ("re", &self.re),
            ("out", &self.out),
            ("format", &self.format),
        ]
    }

    fn config(&self) -> dpgmg::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors; help and version are not.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match cli.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dpgmg: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_kv_text());
        return ExitCode::SUCCESS;
    }
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e @ Error::Indefinite { .. }) => {
            eprintln!("dpgmg: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("dpgmg: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = emit_report(&report, cfg.format, cfg.out.as_deref()) {
        eprintln!("dpgmg: {e}");
        return ExitCode::from(1);
    }
    if report.all_converged() {
        ExitCode::SUCCESS
    } else {
        eprintln!("dpgmg: at least one solve did not converge");
        ExitCode::from(2)
    }
}
