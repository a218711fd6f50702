use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nullwave::cli::{self, FitRequest, RunConfig};
use nullwave::error::CliError;
use nullwave::ratefit::{Claim, DEFAULT_C_TOL};

#[derive(Parser)]
#[command(name = "nullwave", version, about = "Double-null evolution and decay-rate diagnostics")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured modes, write series and report.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config; `NULLWAVE_OUT` overrides both).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run over several epsilon values and fit the sharp exponents.
    Sweep {
        config: PathBuf,
        /// Comma-separated list, e.g. `--eps 0.05,0.1,-0.05`.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a decay exponent to one column of a series CSV.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        claim: Claim,
        #[arg(long)]
        column: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        eps: Option<f64>,
        #[arg(long, num_args = 2, value_names = ["U1", "U2"])]
        window: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.05)]
        tail_share: f64,
        #[arg(long)]
        envelope: bool,
        #[arg(long, default_value_t = DEFAULT_C_TOL)]
        c_tol: f64,
        /// Fixed tolerance instead of the theorem tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Measure the convergence order over h, h/2, h/4.
    Convergence {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the background and potential assumptions on a sample region.
    CheckAssumptions { config: PathBuf },
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    match (std::env::var_os(cli::OUTPUT_ENV).filter(|d| !d.is_empty()), flag) {
        (Some(d), _) => PathBuf::from(d),
        (None, Some(d)) => d,
        (None, None) => cfg.output_dir(),
    }
}

fn verdict(pass: bool) -> Result<ExitCode, CliError> {
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn dispatch(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(&cfg, out);
            let artifacts = cli::run(&cfg, &dir)?;
            for line in cli::summary_lines(&artifacts.report) {
                println!("{line}");
            }
            println!("wrote {}", dir.display());
            verdict(artifacts.report.pass)
        }
        Command::Sweep { config, eps, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(&cfg, out);
            let report = cli::sweep(&cfg, &eps, &dir)?;
            for p in &report.points {
                let show = |f: &Option<nullwave::FitResult>| match f {
                    Some(f) => format!("{:.4} ({})", f.exponent, f.verdict.map_or("-".into(), |v| v.to_string())),
                    None => "error".into(),
                };
                println!(
                    "eps {:<8} pointwise {} target {:.4}  radiation {} target {:.4}",
                    p.epsilon,
                    show(&p.pointwise),
                    p.target_pointwise,
                    show(&p.radiation),
                    p.target_radiation
                );
                for e in &p.errors {
                    println!("  error: {e}");
                }
            }
            verdict(report.pass)
        }
        Command::Fit { csv, claim, column, eps, window, tail_share, envelope, c_tol, tolerance } => {
            let req = FitRequest {
                claim,
                column,
                epsilon: eps,
                window: window.map(|w| (w[0], w[1])),
                envelope,
                tail_share,
                c_tol,
                tolerance,
            };
            let entry = cli::fit_csv(&read(&csv)?, &req)?;
            println!("{}", serde_json::to_string_pretty(&entry).expect("fit serializes"));
            verdict(entry.pass)
        }
        Command::Convergence { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(&cfg, out);
            let summary = cli::convergence(&cfg)?;
            for m in &summary.modes {
                match m.report.order_range() {
                    Some((lo, hi)) => println!("l={} order in [{lo:.3}, {hi:.3}]", m.ell),
                    None => println!("l={} inconclusive (differences at rounding level)", m.ell),
                }
            }
            cli::write_json(&dir.join("convergence.json"), &summary)?;
            verdict(summary.pass)
        }
        Command::CheckAssumptions { config } => {
            let cfg = RunConfig::load(&config)?;
            let report = cli::check_assumptions(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            verdict(report.pass())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(args.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
