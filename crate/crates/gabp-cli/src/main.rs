//! Command-line front end for the `gabp` library.
//!
//! `generate` draws random model files, `run` executes belief propagation
//! and optionally compares against the exact marginals, `certify` evaluates
//! the per-node convergence certificate, with optional centralized spectral
//! baselines or a fully simulated distributed execution.
//!
//! Exit codes: 0 success, 2 bad arguments or unusable input, 3 numerical
//! failure, 4 non-convergence under `--strict`, 5 fixed point failed to
//! certify. Reports are single JSON documents on stdout (or `-o PATH`);
//! without `--timing` a report is byte-identical across repeated
//! invocations with the same inputs.

use clap::{Args, Parser, Subcommand, ValueEnum};
use gabp::convergence::{self, CertifyOptions, ConvergenceReport};
use gabp::engine::{self, EngineConfig, MessageInit};
use gabp::model::generate::{generate_gmrf, generate_linear, Topology};
use gabp::model::{io, FactorGraphModel};
use gabp::netsim::{self, SimPhases};
use gabp::oracle;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "gabp", version, about = "Gaussian belief propagation with distributed convergence certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random model and write it as a JSON file.
    Generate(GenerateArgs),
    /// Run belief propagation on a model file and report the results.
    Run(RunArgs),
    /// Evaluate the per-node convergence certificate for a model file.
    Certify(CertifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Gmrf,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Chain,
    Cycle,
    Grid,
    /// Erdos-Renyi with `--edge-prob`, resampled until connected.
    Er,
    RandomTree,
}

#[derive(Args)]
struct GenerateArgs {
    /// Model family to draw.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Node count for a GMRF model.
    #[arg(long)]
    n: Option<usize>,
    /// Node count for a linear Gaussian model.
    #[arg(long)]
    nodes: Option<usize>,
    /// State dimension shared by every node of a linear Gaussian model.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = TopologyArg::Chain)]
    topology: TopologyArg,
    /// Edge probability for the `er` topology.
    #[arg(long, default_value_t = 0.3)]
    edge_prob: f64,
    /// Off-diagonal precision value for GMRF edges (must be nonzero).
    #[arg(long, allow_hyphen_values = true)]
    coupling: Option<f64>,
    /// RNG seed; the `GABP_SEED` environment variable overrides this.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Model file to load.
    model: PathBuf,
    /// Termination threshold on the max per-node belief mean change.
    #[arg(long, default_value_t = 1e-9)]
    eta: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Compare against the exact marginals and report the max mean error.
    #[arg(long)]
    oracle: bool,
    /// Exit 4 when the run does not converge.
    #[arg(long)]
    strict: bool,
    /// Worker threads for the message updates; results are identical.
    #[arg(long)]
    threads: Option<usize>,
    /// Include wall-clock timing in the report. Timed reports are not
    /// byte-reproducible.
    #[arg(long)]
    timing: bool,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Model file to load.
    model: PathBuf,
    /// Also compute the centralized baselines: the global radii and, for
    /// GMRF models, walk-summability.
    #[arg(long)]
    centralized: bool,
    /// Route certification through the simulated network and check that
    /// every transmitted payload respected the topology.
    #[arg(long)]
    distributed: bool,
    /// Include wall-clock timing in the report.
    #[arg(long)]
    timing: bool,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// CLI failure carrying its exit code. Code 1 is reserved for output I/O
/// problems that do not fit the documented contract.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn args(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }
}

/// Maps library errors onto the exit-code contract. Anything wrong with
/// the input itself is an argument error; everything that happens during
/// computation is a numerical failure, except the dedicated certification
/// outcome.
fn classify(err: gabp::Error) -> Failure {
    use gabp::Error as E;
    let code = match &err {
        E::Load(_)
        | E::Generate(_)
        | E::InvalidModel(_)
        | E::WrongModelKind { .. }
        | E::InvalidConfig(_)
        | E::TooLarge { .. } => 2,
        E::FixedPointNotCertified { .. } => 5,
        E::Io(_) => 1,
        _ => 3,
    };
    Failure { code, message: err.to_string() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Certify(args) => cmd_certify(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn emit(bytes: &[u8], output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Failure {
            code: 1,
            message: format!("cannot write {}: {e}", path.display()),
        }),
        None => std::io::stdout().write_all(bytes).map_err(|e| Failure {
            code: 1,
            message: format!("cannot write to stdout: {e}"),
        }),
    }
}

fn effective_seed(flag: u64) -> Result<u64, Failure> {
    match std::env::var("GABP_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| Failure::args(format!("GABP_SEED must be an unsigned integer, got {text:?}"))),
        Err(_) => Ok(flag),
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let seed = effective_seed(args.seed)?;
    let topology = match args.topology {
        TopologyArg::Chain => Topology::Chain,
        TopologyArg::Cycle => Topology::Cycle,
        TopologyArg::Grid => Topology::Grid,
        TopologyArg::Er => Topology::ErdosRenyi { edge_prob: args.edge_prob },
        TopologyArg::RandomTree => Topology::RandomTree,
    };
    let model = match args.kind {
        KindArg::Gmrf => {
            let n = args.n.ok_or_else(|| Failure::args("--n is required for --kind gmrf"))?;
            let coupling = args
                .coupling
                .ok_or_else(|| Failure::args("--coupling is required for --kind gmrf"))?;
            generate_gmrf(n, topology, coupling, seed).map_err(|e| classify(e.into()))?
        }
        KindArg::Linear => {
            let nodes = args
                .nodes
                .ok_or_else(|| Failure::args("--nodes is required for --kind linear"))?;
            let dim = args.dim.ok_or_else(|| Failure::args("--dim is required for --kind linear"))?;
            let dims = vec![dim; nodes];
            generate_linear(&dims, topology, seed).map_err(|e| classify(e.into()))?.0
        }
    };
    let bytes = io::to_canonical_bytes(&model).map_err(|e| classify(e.into()))?;
    emit(&bytes, args.output.as_deref())
}

fn load_with_digest(path: &Path) -> Result<(FactorGraphModel, String), Failure> {
    let model = io::load(path).map_err(|e| classify(e.into()))?;
    let bytes = io::to_canonical_bytes(&model).map_err(|e| classify(e.into()))?;
    let digest = format!("{:x}", Sha256::digest(&bytes));
    Ok((model, digest))
}

/// Engine configuration echo embedded in run reports.
#[derive(Serialize)]
struct ConfigEcho {
    eta: f64,
    max_iter: usize,
    threads: Option<usize>,
}

#[derive(Serialize)]
struct RunReport {
    model_digest: String,
    config: ConfigEcho,
    converged: bool,
    iterations: usize,
    /// Final belief means, indexed by node id minus one.
    means: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_means: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_mean_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certification: Option<ConvergenceReport>,
    /// Set instead of `certification` when the certificate itself could
    /// not be evaluated, e.g. the information fixed point diverged.
    #[serde(skip_serializing_if = "Option::is_none")]
    certification_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_ms: Option<f64>,
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let (model, model_digest) = load_with_digest(&args.model)?;
    let config = EngineConfig {
        eta: args.eta,
        max_iter: args.max_iter,
        init: MessageInit::Zero,
        threads: args.threads,
        record_history: false,
    };
    let started = Instant::now();
    let result = engine::run(&model, config.clone()).map_err(classify)?;
    let means: Vec<Vec<f64>> = result.beliefs.iter().map(|b| b.mean.iter().copied().collect()).collect();
    let (oracle_means, max_mean_error) = if args.oracle {
        let exact = oracle::exact_marginals(&model).map_err(classify)?;
        let worst = result
            .beliefs
            .iter()
            .zip(&exact.means)
            .map(|(b, m)| (&b.mean - m).amax())
            .fold(0.0_f64, f64::max);
        let exact_means = exact.means.iter().map(|m| m.iter().copied().collect()).collect();
        (Some(exact_means), Some(worst))
    } else {
        (None, None)
    };
    let (certification, certification_error) =
        match convergence::certify(&model, &CertifyOptions::default()) {
            Ok(report) => (Some(report), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let timing_ms = args.timing.then(|| started.elapsed().as_secs_f64() * 1e3);
    let report = RunReport {
        model_digest,
        config: ConfigEcho { eta: config.eta, max_iter: config.max_iter, threads: config.threads },
        converged: result.converged,
        iterations: result.iterations,
        means,
        oracle_means,
        max_mean_error,
        certification,
        certification_error,
        timing_ms,
    };
    emit(&io::to_json_bytes(&report), args.output.as_deref())?;
    if args.strict && !result.converged {
        return Err(Failure {
            code: 4,
            message: format!("did not converge within {} iterations", args.max_iter),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct CertifyReport {
    model_digest: String,
    #[serde(flatten)]
    report: ConvergenceReport,
    /// Present with `--distributed`: "pass" when every transmitted payload
    /// stayed on a model edge.
    #[serde(skip_serializing_if = "Option::is_none")]
    locality: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_ms: Option<f64>,
}

fn cmd_certify(args: &CertifyArgs) -> Result<(), Failure> {
    let (model, model_digest) = load_with_digest(&args.model)?;
    let started = Instant::now();
    let (mut report, locality) = if args.distributed {
        let phases = SimPhases { info_fixed_point: true, certify: true, mean_propagation: false };
        let outcome = netsim::simulate(&model, &EngineConfig::default(), phases).map_err(classify)?;
        let ok = netsim::verify_locality(&outcome.trace, &model);
        let report = outcome.report.expect("certify phase was requested");
        (report, Some(if ok { "pass" } else { "fail" }))
    } else {
        let options = CertifyOptions { centralized: args.centralized, ..CertifyOptions::default() };
        (convergence::certify(&model, &options).map_err(classify)?, None)
    };
    if args.distributed && args.centralized {
        // The simulated path only produces the local certificate; fill in
        // the baselines from the centralized evaluation of the same model.
        let options = CertifyOptions { centralized: true, ..CertifyOptions::default() };
        let central = convergence::certify(&model, &options).map_err(classify)?;
        report.rho_q = central.rho_q;
        report.rho_qqt = central.rho_qqt;
        report.walk_summability = central.walk_summability;
        report.provenance = central.provenance;
    }
    let timing_ms = args.timing.then(|| started.elapsed().as_secs_f64() * 1e3);
    let out = CertifyReport { model_digest, report, locality, timing_ms };
    emit(&io::to_json_bytes(&out), args.output.as_deref())
}
