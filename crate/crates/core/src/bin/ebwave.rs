use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ebwave::bounds::{rate_trace, BumpKernel, KernelShape};
use ebwave::estimator::{estimate, DeltaPolicy};
use ebwave::families::{FamilyConfig, FamilyModel};
use ebwave::harness::verify::{verify_suite, SUITES};
use ebwave::harness::{fit_rate, run_experiment_with, ExperimentConfig};
use ebwave::lepski::{self, LambdaChoice, LevelGrid};
use ebwave::oracle::{PosteriorSpec, PriorConfig, PriorModel};
use ebwave::{Error, ScalingBasis};

const EXIT_RUNTIME: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "ebwave", version, about = "Wavelet empirical Bayes estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate φ, φ′, φ″ and write the binary cache file.
    TabulateBasis {
        #[arg(long, default_value = "db8")]
        wavelet: String,
        #[arg(long, default_value_t = 12)]
        depth: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate t(y) from a sample (one observation per line).
    Estimate(EstimateArgs),
    /// Two-point lower-bound trace over a grid of sample sizes.
    LowerBound(LowerBoundArgs),
    /// Run a Monte-Carlo experiment described by a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run replications on one thread.
        #[arg(long)]
        serial: bool,
    },
    /// Run a property suite (or `all`).
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[command(flatten)]
        basis: BasisArgs,
    },
}

#[derive(Args)]
struct BasisArgs {
    #[arg(long, default_value = "db8")]
    wavelet: String,
    #[arg(long, default_value_t = 12)]
    depth: u32,
}

impl BasisArgs {
    fn build(&self) -> Result<ScalingBasis, Error> {
        ScalingBasis::build(&self.wavelet, self.depth)
    }
}

#[derive(Args)]
struct FamilyArgs {
    /// normal, double_exponential, weibull, gamma or uniform.
    #[arg(long)]
    family: String,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    theta_lo: Option<f64>,
    #[arg(long)]
    theta_hi: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
}

impl FamilyArgs {
    fn model(&self) -> Result<FamilyModel, Error> {
        FamilyModel::from_config(&FamilyConfig {
            family: self.family.clone(),
            sigma: self.sigma,
            b: self.b,
            beta: self.beta,
            theta_lo: self.theta_lo,
            theta_hi: self.theta_hi,
            c1: self.c1,
            c2: self.c2,
        })
    }
}

#[derive(Args)]
struct PriorArgs {
    /// normal, gamma, point_mass or uniform.
    #[arg(long)]
    prior: String,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    hi: Option<f64>,
}

impl PriorArgs {
    fn model(&self) -> Result<PriorModel, Error> {
        PriorModel::from_config(&PriorConfig {
            prior: self.prior.clone(),
            mu0: self.mu0,
            sigma0: self.sigma0,
            a: self.a,
            rate: self.rate,
            theta0: self.theta0,
            lo: self.lo,
            hi: self.hi,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaModeArg {
    Calibrated,
    Theory,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Desk,
    Asymptotic,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    y: f64,
    /// Resolution level, or `auto` for Lepski selection.
    #[arg(long)]
    m: String,
    #[arg(long, default_value_t = 1.0)]
    delta_mult: f64,
    #[arg(long, value_enum, default_value = "calibrated")]
    lambda_mode: LambdaModeArg,
    #[arg(long, default_value_t = 1.0)]
    lambda_mult: f64,
    /// Bound on |Ψ| for theoretical λ when θ is unbounded.
    #[arg(long)]
    psi_sup: Option<f64>,
    #[arg(long, value_enum, default_value = "desk")]
    grid: GridArg,
    /// Write the Lepski selection trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    basis: BasisArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Mixed,
    Odd,
}

#[derive(Args)]
struct LowerBoundArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    y: f64,
    /// Comma-separated sample sizes, e.g. `1e3,1e4,1e5`.
    #[arg(long, value_delimiter = ',')]
    n_grid: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mixed")]
    kernel: KernelArg,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::UnknownWavelet(_)
        | Error::InsufficientRegularity { .. }
        | Error::InvalidNu { .. }
        | Error::DomainViolation { .. }
        | Error::EmptyGrid => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn read_data(path: &Path) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> Result<serde_json::Value, Error> {
    let family = args.family.model()?;
    let basis = args.basis.build()?;
    let data = read_data(&args.data)?;
    if !(args.delta_mult > 0.0) {
        return Err(Error::Config("--delta-mult must be positive".into()));
    }
    if args.m != "auto" {
        let m: i32 = args
            .m
            .parse()
            .map_err(|_| Error::Config(format!("--m expects an integer or `auto`, got `{}`", args.m)))?;
        let est = estimate(&family, &basis, &data, args.y, m, DeltaPolicy::Scaled(args.delta_mult))?;
        return serde_json::to_value(est).map_err(|e| Error::Io(e.to_string()));
    }
    let n = data.len();
    let top = (n.max(2) as f64).log2().floor() as i32;
    let gamma = lepski::gamma_table(&family, &basis, args.y, &(0..=top).collect::<Vec<_>>())?;
    let grid = match args.grid {
        GridArg::Desk => LevelGrid::desk(n)?,
        GridArg::Asymptotic => LevelGrid::asymptotic(n, |m| {
            gamma.get(&m).copied().ok_or_else(|| Error::Config(format!("no γ² at level {m}")))
        })?,
    };
    let lambda = match args.lambda_mode {
        LambdaModeArg::Calibrated => LambdaChoice::calibrated(args.lambda_mult),
        LambdaModeArg::Theory => {
            LambdaChoice::theory(&family, &basis, &data, args.y, &grid, args.psi_sup, args.lambda_mult)?
        }
    };
    let trace = lepski::select_level(&family, &basis, &data, args.y, &grid, lambda, &gamma)?;
    if let Some(path) = &args.trace {
        write_json(path, &trace)?;
    }
    let est = estimate(&family, &basis, &data, args.y, trace.m_hat, DeltaPolicy::Scaled(args.delta_mult))?;
    let mut value = serde_json::to_value(est).map_err(|e| Error::Io(e.to_string()))?;
    value["selection"] = json!({
        "m_hat": trace.m_hat,
        "flags": trace.flags,
        "lambda": lambda,
    });
    Ok(value)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::TabulateBasis { wavelet, depth, out } => {
            let basis = ScalingBasis::build(&wavelet, depth)?;
            basis.write_cache(&out)?;
            println!(
                "{}",
                json!({"wavelet": basis.name(), "depth": depth, "support": [basis.support_lo(), basis.support_hi()],
                       "vanishing_moments": basis.vanishing_moments(), "out": out})
            );
        }
        Command::Estimate(args) => {
            println!("{}", run_estimate(&args)?);
        }
        Command::LowerBound(args) => {
            let spec = PosteriorSpec::new(args.family.model()?, args.prior.model()?)?;
            if !(args.r >= 0.5) || args.r.fract() != 0.0 {
                return Err(Error::Config("--r must be a positive integer".into()));
            }
            let shape = match args.kernel {
                KernelArg::Mixed => KernelShape::Mixed,
                KernelArg::Odd => KernelShape::Odd,
            };
            let kernel = BumpKernel::for_smoothness(shape, args.r as u32);
            let trace = rate_trace(&spec, &kernel, args.r, args.y, &args.n_grid)?;
            trace.write_csv(std::fs::File::create(&args.out)?)?;
            println!(
                "{}",
                json!({"slope": trace.fit.slope, "slope_stderr": trace.fit.stderr,
                       "expected_exponent": trace.expected_exponent, "r1": trace.r1, "r2": trace.r2,
                       "zeta0": trace.zeta0, "kl_bound_ratio": trace.kl_bound_ratio,
                       "kl_exact_le_bound": trace.kl_exact_le_bound})
            );
        }
        Command::Simulate { config, out, serial } => {
            let cfg = ExperimentConfig::load(&config)?;
            let result = run_experiment_with(&cfg, !serial)?;
            result.save_csv(&out)?;
            for &y in &cfg.y_points {
                if let Ok(fit) = fit_rate(&result, y) {
                    eprintln!("y = {y}: mse slope {:.4} ± {:.4}", fit.slope, fit.stderr);
                }
            }
        }
        Command::Verify { suite, basis } => {
            let basis = basis.build()?;
            let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite.as_str()] };
            let mut ok = true;
            for name in names {
                let report = verify_suite(name, &basis)?;
                for check in &report.checks {
                    println!("{name}: {check}");
                }
                ok &= report.passed();
            }
            if !ok {
                return Ok(EXIT_VERIFY);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
