//! Command-line tools for pseudo-true variance-component analysis:
//! simulate marker panels, build similarity kernels, scan the divergence
//! between a true covariance and a misspecified model family, fit weights
//! by maximum likelihood, and run whole panel × scenario experiments from
//! a config file.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 on usage
//! errors, 2 when a computation fails. Diagnostics go to standard error;
//! data goes to files or standard output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pseudotrue::{ModelId, Scenario};

mod commands;
mod experiment;

#[derive(Parser)]
#[command(
    name = "pseudotrue",
    version,
    about = "Pseudo-true variance components under model misspecification",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a genetic similarity matrix from a marker panel
    Gsm(GsmArgs),
    /// Simulate a marker panel (unrelated or structured subpopulations)
    SimulateMarkers(SimulateMarkersArgs),
    /// Draw trait replicates from a scenario's true covariance
    SimulatePheno(SimulatePhenoArgs),
    /// Grid-scan the divergence for the pseudo-true model weights
    KlScan(KlScanArgs),
    /// Fit model weights to phenotypes by maximum likelihood
    Fit(FitArgs),
    /// Fisher information and asymptotic standard errors at a point
    Fisher(FisherArgs),
    /// Monte-Carlo check that ML estimates track the pseudo-true point
    McStudy(McStudyArgs),
    /// Run a config-driven panel × scenario experiment to a TSV report
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GsmArgs {
    /// Marker panel CSV (header `id,<marker id>,...`; `NA` = missing)
    #[arg(long)]
    markers: PathBuf,
    /// Output kernel TSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    /// Independent binomial dosages, no relatedness
    Unrelated,
    /// Balding–Nichols subpopulations (needs --subpops and --fst)
    Bn,
}

#[derive(Args)]
struct SimulateMarkersArgs {
    /// Number of samples
    #[arg(long)]
    n: usize,
    /// Number of markers
    #[arg(long)]
    m: usize,
    /// Population structure
    #[arg(long, value_enum, default_value_t = StructureArg::Unrelated)]
    structure: StructureArg,
    /// Number of subpopulations (bn only)
    #[arg(long, required_if_eq("structure", "bn"))]
    subpops: Option<usize>,
    /// Differentiation F_ST in (0, 1) (bn only)
    #[arg(long, required_if_eq("structure", "bn"))]
    fst: Option<f64>,
    /// RNG seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output marker CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulatePhenoArgs {
    /// True-covariance scenario (A, B, or C)
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    /// Kernel TSV for the panel
    #[arg(long)]
    kernel: PathBuf,
    /// Replicates per genotype (scenario A requires 1)
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Number of independent trait replicates to draw
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// RNG seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Truth weights wA,wNA,wE (default 0.4,0.2,0.4)
    #[arg(long, value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
    /// Output phenotype TSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KlScanArgs {
    /// True covariance: a scenario letter (A/B/C) or a covariance TSV file
    #[arg(long)]
    truth_cov: String,
    /// Fitted model family (1, 2, or 3)
    #[arg(long, value_parser = parse_model)]
    model: ModelId,
    /// Kernel TSV for the panel
    #[arg(long)]
    kernel: PathBuf,
    /// Replicates per genotype
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Grid step; its reciprocal must be an integer
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Also write the full divergence curve to this TSV
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Truth weights wA,wNA,wE (scenario truths only)
    #[arg(long, value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
    /// Write the JSON result here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Phenotype TSV (one row per trait replicate)
    #[arg(long)]
    pheno: PathBuf,
    /// Fitted model family (1, 2, or 3)
    #[arg(long, value_parser = parse_model)]
    model: ModelId,
    /// Kernel TSV for the panel
    #[arg(long)]
    kernel: PathBuf,
    /// Replicates per genotype
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Estimate an overall scale too, instead of weights summing to one
    #[arg(long)]
    free_scale: bool,
    /// Write the JSON result here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FisherArgs {
    /// Model family (1, 2, or 3)
    #[arg(long, value_parser = parse_model)]
    model: ModelId,
    /// Kernel TSV for the panel
    #[arg(long)]
    kernel: PathBuf,
    /// Replicates per genotype
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Evaluation point, comma-separated (one weight per component)
    #[arg(long, value_parser = parse_theta)]
    theta: ThetaList,
    /// Write the JSON result here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McStudyArgs {
    /// True-covariance scenario (A, B, or C)
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    /// Fitted model (default: the scenario's conventional pairing)
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelId>,
    /// Kernel TSV for the panel
    #[arg(long)]
    kernel: PathBuf,
    /// Replicates per genotype
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Number of simulated traits
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// RNG seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write per-replicate estimates to this TSV
    #[arg(long)]
    estimates_out: Option<PathBuf>,
    /// Write the JSON summary here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config file (flat `key = value` lines)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's grid step
    #[arg(long)]
    step: Option<f64>,
    /// Override the config's replicates per genotype
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's truth weights wA,wNA,wE
    #[arg(long, value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
    /// Override the config's report path
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Comma-separated weights for `--theta`; length is validated against the
/// model downstream.
#[derive(Clone)]
struct ThetaList(Vec<f64>);

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    match s {
        "A" | "a" => Ok(Scenario::A),
        "B" | "b" => Ok(Scenario::B),
        "C" | "c" => Ok(Scenario::C),
        _ => Err(format!("unknown scenario {s:?} (expected A, B, or C)")),
    }
}

fn parse_model(s: &str) -> Result<ModelId, String> {
    match s {
        "1" => Ok(ModelId::M1),
        "2" => Ok(ModelId::M2),
        "3" => Ok(ModelId::M3),
        _ => Err(format!("unknown model {s:?} (expected 1, 2, or 3)")),
    }
}

fn parse_weights(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights, got {s:?}"));
    }
    let mut weights = [0.0; 3];
    for (slot, part) in weights.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("cannot parse weight {part:?}"))?;
    }
    Ok(weights)
}

fn parse_theta(s: &str) -> Result<ThetaList, String> {
    let mut values = Vec::new();
    for part in s.split(',') {
        values.push(
            part.trim()
                .parse()
                .map_err(|_| format!("cannot parse weight {part:?}"))?,
        );
    }
    Ok(ThetaList(values))
}

/// Honor `PSEUDOTRUE_THREADS` (0 = auto) before any parallel work starts.
fn configure_threads() -> Result<(), ExitCode> {
    let value = match std::env::var("PSEUDOTRUE_THREADS") {
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(std::env::VarError::NotUnicode(_)) => {
            eprintln!("error: PSEUDOTRUE_THREADS is not valid unicode");
            return Err(ExitCode::from(1));
        }
        Ok(value) => value,
    };
    let threads: usize = match value.parse() {
        Ok(n) => n,
        Err(_) => {
            eprintln!(
                "error: PSEUDOTRUE_THREADS must be a nonnegative integer (0 = auto), \
                 got {value:?}"
            );
            return Err(ExitCode::from(1));
        }
    };
    if threads > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure the thread pool: {err}");
            return Err(ExitCode::from(2));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to standard output and errors to standard
            // error on its own.
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if let Err(code) = configure_threads() {
        return code;
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
