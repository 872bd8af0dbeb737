use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rhmc::collocation::CollocationConfig;
use rhmc::cooling::{estimate_volume_traced, CoolingConfig};
use rhmc::io::{read_polytope, write_polytope, write_samples, SampleFormat};
use rhmc::oracles::parameter_monitor;
use rhmc::sampler::StepContext;
use rhmc::verify::{run_suite, trace_chain, Suite, VerifyConfig};
use rhmc::{generate, run_chains, BodyKind, GenParams, GibbsTarget, Polytope, RhmcError, SamplerConfig};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_SAMPLER: u8 = 3;

#[derive(Parser)]
#[command(name = "rhmc", version, about = "Riemannian HMC sampling and volume estimation on polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw from exp(-α φ) on a polytope.
    Sample(SampleArgs),
    /// Estimate the volume of a polytope by Gaussian cooling.
    Volume(VolumeArgs),
    /// Write a generated test body as polytope JSON.
    Gen(GenArgs),
    /// Run verification suites and print a result table.
    Check(CheckArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    polytope: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step-size constant c.
    #[arg(long = "step-constant", default_value_t = 0.1)]
    step_constant: f64,
    #[arg(long, default_value_t = 1)]
    thinning: usize,
    /// Defaults to steps / 5.
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    /// csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Sample file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chain report JSON; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Track ℓ and energy drift per trajectory.
    #[arg(long)]
    diagnostics: bool,
    /// Curves traced for the curvature monitor added to the report.
    #[arg(long = "monitor-curves", default_value_t = 0)]
    monitor_curves: usize,
}

#[derive(Args)]
struct VolumeArgs {
    #[arg(long)]
    polytope: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where partial phase records go if the run fails.
    #[arg(long = "dump")]
    dump: Option<PathBuf>,
    /// Starting temperature; defaults to 0.05/n.
    #[arg(long = "sigma0-sq")]
    sigma0_sq: Option<f64>,
    /// Use the σ₀² rule with this constant instead of 0.05/n.
    #[arg(long = "sigma0-constant", conflicts_with = "sigma0_sq")]
    sigma0_constant: Option<f64>,
    #[arg(long = "k-min", default_value_t = 1)]
    k_min: usize,
    /// Cap on samples per phase; 0 removes the cap.
    #[arg(long = "k-max", default_value_t = 800)]
    k_max: usize,
    #[arg(long = "sample-constant", default_value_t = 1.0)]
    sample_constant: f64,
    #[arg(long = "termination-constant", default_value_t = 1.0)]
    termination_constant: f64,
    /// Stop at the threshold instead of twice it.
    #[arg(long = "no-extra-doubling")]
    no_extra_doubling: bool,
    #[arg(long, default_value_t = 16)]
    chains: usize,
    #[arg(long = "step-constant", default_value_t = 2.0)]
    step_constant: f64,
}

#[derive(Args)]
struct GenArgs {
    /// cube, simplex or random_halfspaces.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Needed by every suite except stationarity and beta.
    #[arg(long)]
    polytope: Option<PathBuf>,
    /// Comma-separated: energy, reversal, jacobian, stationarity, ell, params, beta.
    #[arg(long, default_value = "energy,reversal,jacobian")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to 1/m.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "step-constant", default_value_t = 0.1)]
    step_constant: f64,
    #[arg(long, default_value_t = 1000)]
    trajectories: usize,
    /// Write the result table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<RhmcError> for Failure {
    fn from(e: RhmcError) -> Self {
        match e {
            RhmcError::Input(m) => Failure {
                code: EXIT_INVALID,
                message: m,
            },
            other => Failure {
                code: EXIT_SAMPLER,
                message: other.to_string(),
            },
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    invalid(format!("{}: {e}", path.display()))
}

fn load(path: &Path) -> Result<Polytope, Failure> {
    Ok(read_polytope(path)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn sample(args: SampleArgs) -> Result<(), Failure> {
    let format: SampleFormat = args.format.parse()?;
    let p = load(&args.polytope)?;
    let config = SamplerConfig {
        alpha: args.alpha,
        step_constant: args.step_constant,
        steps: args.steps,
        chains: args.chains,
        seed: args.seed,
        thinning: args.thinning,
        burn_in: args.burn_in,
        record_diagnostics: args.diagnostics,
        collocation: CollocationConfig::default(),
    };
    config.validate()?;
    let (samples, mut report) = run_chains(&p, &config, None)?;
    if args.monitor_curves > 0 {
        let target = GibbsTarget::new(config.alpha)?;
        let ctx = StepContext::new(&p, target, config.step_constant, config.collocation);
        let curves = trace_chain(&p, &ctx, args.monitor_curves, config.seed)?;
        let monitor = parameter_monitor(&p, &target, &curves.records)?;
        report.monitor = Some(serde_json::to_value(monitor).map_err(|e| invalid(e.to_string()))?);
    }
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_failure(path, e))?;
            let mut w = BufWriter::new(file);
            write_samples(&mut w, &samples, format)?;
            w.flush().map_err(|e| io_failure(path, e))?;
        }
        None => {
            let stdout = std::io::stdout();
            write_samples(stdout.lock(), &samples, format)?;
        }
    }
    let report_path = args
        .report
        .or_else(|| args.out.as_ref().map(|o| with_suffix(o, ".report.json")));
    if let Some(path) = report_path {
        write_json(&path, &report)?;
    }
    Ok(())
}

fn volume(args: VolumeArgs) -> Result<(), Failure> {
    let p = load(&args.polytope)?;
    let mut cfg = CoolingConfig {
        k_min: args.k_min,
        k_max: (args.k_max > 0).then_some(args.k_max),
        sample_constant: args.sample_constant,
        termination_constant: args.termination_constant,
        extra_doubling: !args.no_extra_doubling,
        chains: args.chains,
        step_constant: args.step_constant,
        ..CoolingConfig::practical(p.n())
    };
    if let Some(s) = args.sigma0_sq {
        cfg.sigma0_sq = Some(s);
    }
    if let Some(c) = args.sigma0_constant {
        cfg.sigma0_sq = None;
        cfg.sigma0_constant = c;
    }
    cfg.validate()?;
    match estimate_volume_traced(&p, args.eps, &cfg, args.seed) {
        Ok(est) => {
            println!("volume {:.17e}", est.volume);
            println!("log_volume {:.17e}", est.log_volume);
            if let Some(path) = &args.out {
                write_json(path, &est)?;
            }
            Ok(())
        }
        Err(failure) => {
            let mut fail = Failure::from(failure.error);
            if let Some(partial) = failure.partial {
                let path = args.dump.clone().unwrap_or_else(|| match &args.out {
                    Some(o) => with_suffix(o, ".phases.json"),
                    None => PathBuf::from("rhmc-volume.phases.json"),
                });
                write_json(&path, &partial)?;
                fail.message = format!("{} (phase dump: {})", fail.message, path.display());
            }
            Err(fail)
        }
    }
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let kind: BodyKind = args.kind.parse()?;
    let p = generate(kind, args.n, GenParams { m: args.m, seed: args.seed })?;
    match &args.out {
        Some(path) => write_polytope(path, &p)?,
        None => println!("{}", rhmc::io::polytope_to_json(&p)),
    }
    Ok(())
}

fn check(args: CheckArgs) -> Result<bool, Failure> {
    let suites = args
        .suite
        .split(',')
        .map(|s| s.trim().parse::<Suite>())
        .collect::<Result<Vec<_>, _>>()?;
    let p = args.polytope.as_deref().map(load).transpose()?;
    if p.is_none() {
        if let Some(s) = suites.iter().find(|s| !s.uses_interval()) {
            return Err(invalid(format!("suite '{s}' needs --polytope")));
        }
    }
    let cfg = VerifyConfig {
        alpha: args.alpha,
        step_constant: args.step_constant,
        trajectories: args.trajectories,
        seed: args.seed,
        ..Default::default()
    };
    let mut results = Vec::new();
    for suite in suites {
        results.extend(run_suite(suite, p.as_ref(), &cfg)?);
    }
    for r in &results {
        println!("{r}");
    }
    if let Some(path) = &args.json {
        write_json(path, &results)?;
    }
    Ok(results.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sample(a) => sample(a).map(|_| true),
        Command::Volume(a) => volume(a).map(|_| true),
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Check(a) => check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(f) => {
            eprintln!("rhmc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
