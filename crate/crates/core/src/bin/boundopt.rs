use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boundopt::experiment::{
    compare_runs, default_out_root, emit_figure_data, resolve_run_dir, run_experiment, selftest, ExperimentSpec,
    FigureKind, RunManifest, OUT_ENV,
};
use boundopt::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

#[derive(Parser)]
#[command(name = "boundopt", version, about = "Run and analyse bound-optimization experiments")]
#[command(after_help = format!("Output directories default to subdirectories of ${OUT_ENV} (or ./runs)."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its run directory.
    Run {
        /// Experiment description (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run directory; replaces an existing run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Data seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare runs against the first one.
    Compare {
        /// Run directories or manifest files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot data: fig1-quiver, fig2-curves, fig3-curves or fig4-curves.
    Figure {
        kind: String,
        /// Run directories or manifest files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for the CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick end-to-end checks.
    Selftest,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() || matches!(e.root(), Error::Io(_)) {
        EXIT_CONFIG
    } else {
        EXIT_NUMERIC
    }
}

fn load_runs(paths: &[PathBuf]) -> Result<Vec<RunManifest>, Error> {
    paths.iter().map(|p| RunManifest::load(p)).collect()
}

fn run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<(), Error> {
    let mut spec = ExperimentSpec::load(config)?;
    if let Some(seed) = seed {
        spec.data_spec.seed = seed;
    }
    let dir = resolve_run_dir(&spec, out, &default_out_root());
    let m = run_experiment(&spec, &dir)?;
    println!("run        {}", spec.label());
    println!("status     {:?} after {} iterations", m.status, m.iterations);
    println!("objective  {}", m.final_objective);
    if let Some(p) = m.predicted_rate {
        println!("predicted  {p:.6}");
    }
    if let Some(o) = m.observed_rate {
        println!("observed   {o:.6}");
    }
    println!("wrote      {}", dir.display());
    Ok(())
}

fn compare(runs: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    let table = compare_runs(&load_runs(runs)?)?;
    print!("{}", table.to_table());
    if let Some(path) = out {
        std::fs::write(path, table.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn figure(kind: &str, runs: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    let kind: FigureKind = kind.parse()?;
    let dir = out.map_or_else(|| default_out_root().join("figures"), Path::to_path_buf);
    for path in emit_figure_data(kind, &load_runs(runs)?, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seed } => run(config, out.as_deref(), *seed),
        Command::Compare { runs, out } => compare(runs, out.as_deref()),
        Command::Figure { kind, runs, out } => figure(kind, runs, out.as_deref()),
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {:<26} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFTEST)
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
