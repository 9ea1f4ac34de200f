//! Command-line front end. `main` only forwards to [`run_cli`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_config, AggregationRule, ConfigOverrides, TransportKind};
use crate::data::synth;
use crate::metrics::MetricsLog;
use crate::orchestration::{run_experiment, ExperimentError};
use crate::report::{emit_metrics, emit_plot, read_curve, write_plot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fedshield", version, about = "Federated-learning security simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, accuracy.svg and config.json.
    Run(RunArgs),
    /// Draw accuracy curves from one or more metrics CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic stand-in dataset as CSV.
    Synth {
        #[arg(long, default_value_t = synth::BRFSS_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = synth::DEFAULT_SEPARATION)]
        separation: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_parser = parse_keyword::<AggregationRule>)]
    rule: Option<AggregationRule>,
    #[arg(long, value_enum)]
    ibi: Option<Switch>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_keyword::<TransportKind>)]
    transport: Option<TransportKind>,
    #[arg(long)]
    n_clients: Option<usize>,
    #[arg(long)]
    n_malicious: Option<usize>,
    /// Legend text for plots.
    #[arg(long)]
    label: Option<String>,
}

fn parse_keyword<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            rounds: self.rounds,
            rule: self.rule,
            ibi_enabled: self.ibi.map(|s| matches!(s, Switch::On)),
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            transport: self.transport,
            n_clients: self.n_clients,
            n_malicious: self.n_malicious,
            label: self.label.clone(),
        }
    }
}

/// Parses `args` (including the program name) and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Plot { csv, out } => plot(&csv, &out),
        Command::Synth { rows, seed, separation, out } => {
            match synth::generate(rows, separation, seed).and_then(|d| d.write_csv(&out)) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
    }
}

fn run(args: &RunArgs) -> i32 {
    let config = match parse_config(&args.config, &args.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let log = match run_experiment(&config) {
        Ok(log) => log,
        Err(ExperimentError::Config(e)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_outputs(&log, &config.out_dir) {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }
    let s = log.summary();
    println!(
        "{}: final accuracy {:.4}, average {:.4}, {} disconnections, {} authentication denials ({} honest clients disconnected)",
        log.label, s.final_accuracy, s.avg_accuracy, s.total_disconnections, s.total_auth_denials, s.false_positives
    );
    println!("wrote {}", config.out_dir.display());
    match &log.error {
        Some(e) => {
            eprintln!("error: experiment stopped early: {e}");
            EXIT_RUNTIME
        }
        None => EXIT_OK,
    }
}

fn write_outputs(log: &MetricsLog, dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    fs::create_dir_all(dir)?;
    emit_metrics(log, &dir.join("metrics.csv"))?;
    emit_plot(std::slice::from_ref(log), &dir.join("accuracy.svg"))?;
    fs::write(dir.join("config.json"), format!("{}\n", log.config))?;
    Ok(())
}

fn plot(csvs: &[PathBuf], out: &Path) -> i32 {
    let curves = match csvs.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>, _>>() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match write_plot(&curves, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
