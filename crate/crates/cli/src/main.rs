use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpfedavg::harness::{plan, run, sweep, validate, Experiment, ExperimentConfig};
use dpfedavg::Error;

#[derive(Parser)]
#[command(name = "dpfedavg", version, about = "Differentially private FedAvg simulator and planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment for every repeat and write per-round CSVs.
    Run(Common),
    /// Evaluate the [sweep] grid of the config, one averaged run per point.
    Sweep(Common),
    /// Print calibration values, bound constants and tuning recommendations.
    Plan(Common),
    /// Monte-Carlo check of the predicted noise-item variance.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Number of simulated pool aggregations.
        #[arg(long, default_value_t = 1_000_000)]
        draws: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides federation.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repeats; overrides federation.repeats.
    #[arg(long)]
    repeats: Option<usize>,
    /// Suppress the report on stdout.
    #[arg(long)]
    quiet: bool,
}

const EXIT_INVALID: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Csv(_) => EXIT_IO,
        _ => EXIT_INVALID,
    }
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.federation.seed = seed;
        }
        if let Some(repeats) = self.repeats {
            config.federation.repeats = repeats;
        }
        let out = self.out.clone().unwrap_or_else(|| config.output.dir.clone());
        Ok((config, out))
    }

    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|e| io_error(path, e))?;
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn experiment(config: &ExperimentConfig) -> Result<Experiment, Error> {
    let exp = Experiment::from_config(config)?;
    for w in exp.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(exp)
}

fn execute(command: &Command) -> Result<u8, Error> {
    match command {
        Command::Run(common) => {
            let (config, out) = common.load()?;
            let exp = experiment(&config)?;
            let (runs, summary) = run::run_experiment(&exp)?;
            run::write_run_outputs(&out, &runs, &summary)?;
            common.say(&format!(
                "repeats = {}\ndiverged_runs = {}\nmean_final_loss = {}\nstd_final_loss = {}\nmean_final_y = {}\ny0 = {}\noutput = {}\n",
                summary.repeats,
                summary.diverged_runs,
                summary.mean_final_loss,
                summary.std_final_loss,
                summary.mean_final_y.map_or("n/a".into(), |y| y.to_string()),
                exp.constants.y0,
                out.display()
            ));
            Ok(if summary.diverged_runs == summary.repeats { EXIT_DIVERGED } else { 0 })
        }
        Command::Sweep(common) => {
            let (config, out) = common.load()?;
            let spec = config
                .sweep
                .clone()
                .ok_or_else(|| Error::Config("the config has no [sweep] section".into()))?;
            let exp = experiment(&config)?;
            let result = sweep::run_sweep(&exp, &spec)?;
            sweep::write_sweep_csv(&out.join("sweep.csv"), &result)?;
            common.say(&sweep::render(&result));
            Ok(if result.argmin.is_none() { EXIT_DIVERGED } else { 0 })
        }
        Command::Plan(common) => {
            let (config, out) = common.load()?;
            let report = plan::plan(&experiment(&config)?)?.to_string();
            write_text(&out.join("plan.txt"), &report)?;
            common.say(&report);
            Ok(0)
        }
        Command::Validate { common, draws } => {
            let (config, out) = common.load()?;
            let report = validate::validate_noise(&experiment(&config)?, *draws)?;
            let text = report.to_string();
            write_text(&out.join("validate.txt"), &text)?;
            common.say(&text);
            Ok(if report.passed { 0 } else { EXIT_INVALID })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
