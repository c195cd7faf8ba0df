//! `bnrecon`: build, verify and benchmark normalization-only reconstructions
//! of ReLU networks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bnrecon::deep::construct_deep;
use bnrecon::harness::{
    emit_gnuplot, emit_results, run_experiment, verify_equivalence_on, EquivalenceResult,
    ExperimentConfig,
};
use bnrecon::netmodel::{sample_target_with_rank, Forward, Network, NetworkDoc, TargetNetwork};
use bnrecon::report::ReconstructionReport;
use bnrecon::rng::WeightDist;
use bnrecon::sparse::{calibrate_cbar, choose_sparsity, estimate_singularity_rate_with};
use bnrecon::wide::{construct_lowrank, construct_wide};
use bnrecon::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

const EXIT_CONSTRUCTION: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(name = "bnrecon", version, about = "Normalization-only reconstruction of ReLU networks")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Primary output file (network JSON, CSV, ...); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write a JSON report of the run here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,

    /// JSON experiment configuration (for `sweep`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Normal,
}

impl From<DistArg> for WeightDist {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Uniform => WeightDist::Uniform,
            DistArg::Normal => WeightDist::StandardNormal,
        }
    }
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Unit-ball samples used to check the result.
    #[arg(long, default_value_t = 1000)]
    samples: usize,

    /// Maximum allowed ‖f(x) − g(x)‖∞.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,

    /// Radius of the input ball.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random target network.
    SampleTarget {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        depth: usize,
        /// Rank of every weight matrix (defaults to full rank).
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Wide construction: two frozen layers of width d² per target layer.
    ConstructWide {
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Low-rank construction for targets whose weights have rank ≤ r.
    ConstructLowrank {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        rank: usize,
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Deep construction with skip connections and chunk size k.
    ConstructDeep {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        chunk: usize,
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Wide construction on Bernoulli-masked frozen weights.
    ConstructSparse {
        #[arg(long)]
        target: PathBuf,
        /// Mask density; defaults to the density chosen from `--cbar`.
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        cbar: f64,
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Check a stored network against a stored target.
    Verify {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        verify: VerifyArgs,
    },
    /// Monte-Carlo singularity rate of sparse Khatri-Rao systems.
    SingularityRate {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        sparsity: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = DistArg::Uniform)]
        dist: DistArg,
    },
    /// Smallest cbar on a grid whose singularity rate is certified below a target.
    CalibrateSparsity {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Target rate; defaults to 1/dim.
        #[arg(long)]
        target_rate: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.25,0.3,0.35,0.4,0.5,0.6,0.8,1.0")]
        grid: Vec<f64>,
    },
    /// Run a teacher/student sweep from `--config`; writes CSV and a gnuplot table.
    Sweep,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Construction(Error),
    Verification(EquivalenceResult, f64),
    Other(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    write_output(path, &serde_json::to_string_pretty(value)?)
}

fn read_target(path: &Path) -> anyhow::Result<TargetNetwork<f64>> {
    let doc = NetworkDoc::<f64>::read(path).with_context(|| format!("reading {}", path.display()))?;
    match doc.network {
        Network::Target(g) => Ok(g),
        other => bail!("{} holds a {} network, expected a target", path.display(), other.kind()),
    }
}

#[derive(Serialize)]
struct ConstructionSummary<'a> {
    construction: &'a ReconstructionReport,
    equivalence: &'a EquivalenceResult,
}

fn finish_construction(
    cli: &Cli,
    network: Network<f64>,
    report: &ReconstructionReport,
    g: &TargetNetwork<f64>,
    args: &VerifyArgs,
) -> Outcome {
    let eq = verify_equivalence_on(&network as &dyn Forward<f64>, g, args.samples, args.radius, cli.seed)?;
    write_output(cli.out.as_deref(), &NetworkDoc::new(network, Some(cli.seed)).to_json()?)?;
    if let Some(path) = &cli.report {
        write_json(
            Some(path),
            &ConstructionSummary {
                construction: report,
                equivalence: &eq,
            },
        )?;
    }
    if !eq.within(args.tolerance) {
        return Err(Failure::Verification(eq, args.tolerance));
    }
    Ok(())
}

fn constructed<T>(result: bnrecon::Result<T>) -> Result<T, Failure> {
    result.map_err(|e| {
        if e.is_construction_failure() {
            Failure::Construction(e)
        } else {
            Failure::Other(e.into())
        }
    })
}

#[derive(Serialize)]
struct RateOutput {
    dim: usize,
    sparsity: f64,
    rate: f64,
    interval: (f64, f64),
    trials: usize,
    failures: usize,
    zero_line_events: usize,
}

fn run(cli: &Cli) -> Outcome {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::SampleTarget { dim, depth, rank } => {
            let g = sample_target_with_rank::<f64>(*dim, *depth, rank.unwrap_or(*dim), cli.seed)?;
            write_output(out, &NetworkDoc::new(Network::Target(g), Some(cli.seed)).to_json()?)?;
        }
        Command::ConstructWide { target, verify } => {
            let g = read_target(target)?;
            let (f, report) = constructed(construct_wide(&g, cli.seed))?;
            finish_construction(cli, Network::Wide(f), &report, &g, verify)?;
        }
        Command::ConstructLowrank { target, rank, verify } => {
            let g = read_target(target)?;
            let (f, report) = constructed(construct_lowrank(&g, *rank, cli.seed))?;
            finish_construction(cli, Network::Wide(f), &report, &g, verify)?;
        }
        Command::ConstructDeep { target, chunk, verify } => {
            let g = read_target(target)?;
            let (f, report) = constructed(construct_deep(&g, *chunk, cli.seed))?;
            finish_construction(cli, Network::Skip(f), &report, &g, verify)?;
        }
        Command::ConstructSparse {
            target,
            sparsity,
            cbar,
            verify,
        } => {
            let g = read_target(target)?;
            let p = sparsity.unwrap_or_else(|| choose_sparsity(g.input_dim.max(2), *cbar));
            let (f, report) = constructed(bnrecon::sparse::construct_sparse(&g, p, cli.seed))?;
            finish_construction(cli, Network::Wide(f), &report, &g, verify)?;
        }
        Command::Verify {
            network,
            target,
            verify,
        } => {
            let g = read_target(target)?;
            let f = NetworkDoc::<f64>::read(network)
                .with_context(|| format!("reading {}", network.display()))?
                .network;
            let eq = verify_equivalence_on(&f as &dyn Forward<f64>, &g, verify.samples, verify.radius, cli.seed)?;
            write_json(out, &eq)?;
            if let Some(path) = &cli.report {
                write_json(Some(path), &eq)?;
            }
            if !eq.within(verify.tolerance) {
                return Err(Failure::Verification(eq, verify.tolerance));
            }
        }
        Command::SingularityRate {
            dim,
            sparsity,
            trials,
            dist,
        } => {
            let e = estimate_singularity_rate_with(*dim, *sparsity, *trials, cli.seed, (*dist).into())?;
            write_json(
                out,
                &RateOutput {
                    dim: e.dim,
                    sparsity: e.p,
                    rate: e.rate,
                    interval: e.wilson_interval,
                    trials: e.trials,
                    failures: e.failures,
                    zero_line_events: e.zero_line_events,
                },
            )?;
        }
        Command::CalibrateSparsity {
            dim,
            trials,
            target_rate,
            grid,
        } => {
            let target = target_rate.unwrap_or(1.0 / *dim as f64);
            let cal = calibrate_cbar(*dim, grid, *trials, target, cli.seed)?;
            write_json(out, &cal)?;
        }
        Command::Sweep => {
            let path = cli.config.as_deref().context("sweep needs --config")?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing experiment config")?;
            let outcome = run_experiment(&cfg)?;
            let csv_path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("sweep.csv"));
            emit_results(&outcome.rows, &csv_path)?;
            emit_gnuplot(&outcome.summary, &csv_path.with_extension("dat"))?;
            if let Some(report) = &cli.report {
                write_json(Some(report), &outcome)?;
            }
            for f in &outcome.failures {
                eprintln!("failed: {} width {} seed {}: {}", f.algorithm, f.width, f.seed, f.reason);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Construction(e)) => {
            eprintln!("construction failed: {e}");
            ExitCode::from(EXIT_CONSTRUCTION)
        }
        Err(Failure::Verification(eq, tol)) => {
            eprintln!(
                "verification failed: max error {:.3e} exceeds {tol:e} over {} samples",
                eq.max_abs_error, eq.samples
            );
            ExitCode::from(EXIT_VERIFICATION)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
