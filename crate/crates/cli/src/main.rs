use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlhomog_cli::commands::{self, CliError, CommandOutput};
use nlhomog_cli::config::RunConfig;
use nlhomog_cli::outputs::{fmt_f64, write_csv};
use nlhomog_cli::verify;

/// Effective homogenized energy densities of non-local convolution-type
/// functionals: cell solvers, sweeps, finite-scale simulations, and a
/// verification suite.
#[derive(Parser)]
#[command(name = "nlhomog", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (key = value lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides NLHOMOG_OUT and the config's out.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for all sampled randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Moment and assumption report of the configured kernel.
    Kappa,
    /// Solve one cell problem at the configured regime and matrix.
    Cell,
    /// Solve the non-local cell problem over a list of interaction scales.
    Sweep,
    /// Evaluate the supercritical value (pure quadrature).
    Fsup,
    /// Minimize the relaxed supercritical functional on the product torus.
    Relaxed,
    /// Minimize the finite-scale functionals along an (eps, delta) schedule.
    Gamma,
    /// Stationarity residual of a converged quadratic cell minimizer.
    Elres,
    /// Run the full verification suite; nonzero exit on any failure.
    Verify,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed)?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(dir) = &cli.out {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var("NLHOMOG_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(cfg.get("out.dir"))
}

fn run(cli: &Cli) -> Result<CommandOutput, CliError> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, &cfg);
    match cli.command {
        Command::Kappa => Ok(commands::cmd_kappa(&cfg, &dir)?.1),
        Command::Cell => Ok(commands::cmd_cell(&cfg, &dir)?.1),
        Command::Sweep => Ok(commands::cmd_sweep(&cfg, &dir)?.1),
        Command::Fsup => Ok(commands::cmd_fsup(&cfg, &dir)?.1),
        Command::Relaxed => Ok(commands::cmd_relaxed(&cfg, &dir)?.1),
        Command::Gamma => Ok(commands::cmd_gamma(&cfg, &dir)?.1),
        Command::Elres => Ok(commands::cmd_elres(&cfg, &dir)?.1),
        Command::Verify => {
            std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(e.to_string()))?;
            let outcomes = verify::run_all();
            let mut summary = Vec::new();
            let mut rows = Vec::new();
            let mut failed = 0usize;
            for o in &outcomes {
                println!("{}", o.line());
                summary.push(o.line());
                rows.push(vec![
                    o.index.to_string(),
                    o.name.to_string(),
                    o.passed.to_string(),
                    fmt_f64(o.seconds),
                    o.detail.clone(),
                ]);
                if !o.passed {
                    failed += 1;
                }
            }
            let csv = write_csv(&dir, "verify.csv", &["index", "name", "passed", "seconds", "detail"], &rows)
                .map_err(|e| CliError::Io(e.to_string()))?;
            if failed > 0 {
                return Err(CliError::Verification(failed));
            }
            Ok(CommandOutput { summary: vec![format!("all {} criteria passed", outcomes.len())], files: vec![csv] })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => {
            for line in &output.summary {
                println!("{line}");
            }
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
