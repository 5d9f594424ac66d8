use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cpul::dispatch::Topology;
use cpul::pipeline::{
    evaluate, gen_case, gen_data, EvaluateOptions, EvaluateOverrides, GenCaseOptions, GenDataOptions,
};
use cpul::{Error, MethodKind};

#[derive(Parser)]
#[command(
    name = "cpul",
    version,
    about = "Conformal calibration of certified objective bounds"
)]
struct Cli {
    /// Worker threads for parallel solves and repeats (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Ring,
    Star,
    RandomTreePlusChords,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Ring => Topology::Ring,
            TopologyArg::Star => Topology::Star,
            TopologyArg::RandomTreePlusChords => Topology::RandomTreePlusChords,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic grid case.
    GenCase {
        #[arg(long, value_enum, default_value = "ring")]
        topology: TopologyArg,
        #[arg(long)]
        buses: usize,
        #[arg(long, env = "CPUL_SEED", default_value_t = 0)]
        seed: u64,
        /// Number of generators (default: half the buses).
        #[arg(long)]
        n_gen: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Sample loads, solve them and write a bounded-sample dataset.
    GenData {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = parse_range, default_value = "0.6,1.0")]
        global_range: (f64, f64),
        #[arg(long, value_parser = parse_range, default_value = "0.85,1.15")]
        local_range: (f64, f64),
        #[arg(long, env = "CPUL_SEED", default_value_t = 0)]
        seed: u64,
        /// Separate load draws used to fit the proxies.
        #[arg(long, default_value_t = 2000)]
        proxy_samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        primal_reg: f64,
        #[arg(long, default_value_t = 1e-3)]
        dual_reg: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run an experiment config and write results, report and manifest.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated subset of methods.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<MethodKind>>,
        /// Comma-separated miscoverage levels.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((lo, hi))
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownMethod { .. } | Error::InvalidParameter(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> cpul::Result<String> {
    match cli.command {
        Command::GenCase {
            topology,
            buses,
            seed,
            n_gen,
            out,
            force,
        } => gen_case(&GenCaseOptions {
            topology: topology.into(),
            buses,
            seed,
            n_gen,
            out,
            force,
        }),
        Command::GenData {
            case,
            n,
            global_range,
            local_range,
            seed,
            proxy_samples,
            primal_reg,
            dual_reg,
            out,
            force,
        } => gen_data(&GenDataOptions {
            case,
            n,
            global_range,
            local_range,
            seed,
            proxy_samples,
            primal_regularization: primal_reg,
            dual_regularization: dual_reg,
            out,
            force,
        }),
        Command::Evaluate {
            config,
            out_dir,
            methods,
            alphas,
            repeats,
            seed,
            force,
        } => evaluate(&EvaluateOptions {
            config,
            out_dir,
            overrides: EvaluateOverrides {
                methods,
                alphas,
                repeats,
                seed,
            },
            force,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(hash) => {
            println!("manifest_hash={hash}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
