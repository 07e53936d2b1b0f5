use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sipm_core::correlation::{FitSpec, NrfCurve};
use sipm_core::harness::{self, ExperimentConfig, Overrides, RunOutcome};
use sipm_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_FIT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sipm",
    version,
    about = "SiPM photon-counting simulator and analysis toolkit"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chain preset applied before the configuration file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shots per spectrum or per sweep point.
    #[arg(long)]
    shots: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pulse-height spectra of one arm through the full chain.
    Phs(RunArgs),
    /// Noise reduction factor curve through the full chain.
    Nrf(RunArgs),
    /// Noise reduction factor curve from avalanche counts (no waveforms).
    Fastpath(RunArgs),
    /// Fit the analytic model to a measured curve.
    Fit {
        /// Curve CSV with columns mean_k,R,sigma_R (mean_k1, mean_k2 optional).
        #[arg(long)]
        curve: PathBuf,
        /// Fit settings (TOML); defaults fit eps, dark counts and t.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write digitized arm-1 traces in the binary dump format.
    DumpWaveforms(RunArgs),
    /// Print the configuration JSON schema.
    Schema,
    /// List presets, or print one as TOML.
    Presets { name: Option<String> },
}

fn config(args: &RunArgs) -> sipm_core::Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: args.seed,
        shots: args.shots,
        outputs: args.out.clone(),
    };
    harness::load_config(args.preset.as_deref(), args.config.as_deref(), &overrides)
}

fn fit_spec(path: Option<&Path>, seed: Option<u64>) -> sipm_core::Result<FitSpec> {
    let mut spec = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config {
                field: "config".into(),
                reason: format!("cannot read {}: {e}", p.display()),
            })?;
            toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))?
        }
        None => FitSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

/// Print to stdout, tolerating a closed pipe (e.g. `| head`).
fn emit(text: &str) {
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn run(cmd: Command) -> sipm_core::Result<Option<RunOutcome>> {
    let outcome = match cmd {
        Command::Phs(a) => harness::run_phs(&config(&a)?)?,
        Command::Nrf(a) => harness::run_nrf(&config(&a)?)?,
        Command::Fastpath(a) => harness::run_fastpath(&config(&a)?)?,
        Command::DumpWaveforms(a) => harness::run_dump_waveforms(&config(&a)?)?,
        Command::Fit {
            curve,
            config,
            seed,
            out,
        } => {
            let spec = fit_spec(config.as_deref(), seed)?;
            let c = NrfCurve::read_csv(fs::File::open(&curve)?)?;
            harness::run_fit(&c, &spec, &out)?
        }
        Command::Schema => {
            emit(&serde_json::to_string_pretty(&harness::config_schema())?);
            return Ok(None);
        }
        Command::Presets { name: None } => {
            emit(&harness::preset_names().join("\n"));
            return Ok(None);
        }
        Command::Presets { name: Some(n) } => {
            let text = harness::preset(&n).ok_or_else(|| Error::Config {
                field: "preset".into(),
                reason: format!("unknown preset `{n}`"),
            })?;
            emit(text.trim());
            return Ok(None);
        }
    };
    Ok(Some(outcome))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(o)) => {
            for n in &o.notices {
                eprintln!("warning: {n}");
            }
            for name in o.manifest.outputs.keys() {
                println!("{name}");
            }
            println!("manifest.json");
            if o.fit_failed.is_some() {
                ExitCode::from(EXIT_FIT)
            } else if o.degenerate {
                ExitCode::from(EXIT_DEGENERATE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::Toml(_) => EXIT_CONFIG,
                Error::DegenerateSpectrum(_) => EXIT_DEGENERATE,
                Error::FitFailed { .. } => EXIT_FIT,
                _ => EXIT_FAILURE,
            })
        }
    }
}
