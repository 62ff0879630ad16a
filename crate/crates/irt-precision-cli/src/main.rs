//! Command-line front end: fit, score, reliability, oracle, and simulate.
//!
//! Exit codes: 0 success, 2 input validation error, 3 numerical failure.
//! Failures print a machine-readable JSON object on standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use irt_precision::estimation::observed_information_grouped;
use irt_precision::quadrature::{DEFAULT_HI, DEFAULT_LO, DEFAULT_Q};
use irt_precision::reliability::{
    estimate_moments_grouped, report_from_moments, OracleMode, DEFAULT_MC_DRAWS,
};
use irt_precision::scoring::posterior_summary;
use irt_precision::{
    default_init, fit_em, population_oracle, run_study, CoefficientKind, IrtError, ItemParams,
    PatternGroups, QuadratureGrid, ResponseMatrix, SimDesign, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "irt-precision",
    about = "Graded response model fitting with asymptotic precision estimates for reliability coefficients",
    version
)]
struct Cli {
    /// Worker threads for parallel sections (or env IRT_PRECISION_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a response CSV by marginal maximum likelihood
    Fit(FitArgs),
    /// EAP scores and posterior variances per respondent
    Score(ScoreArgs),
    /// Reliability coefficients with analytic SEs and Wald intervals
    Reliability(ReliabilityArgs),
    /// Population coefficient values at known item parameters
    Oracle(OracleArgs),
    /// Monte Carlo coverage study from a design file
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "2pl")]
    TwoPl,
    Grm,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Prmse,
    Ctt,
    Both,
}

impl KindArg {
    fn kinds(self) -> Vec<CoefficientKind> {
        match self {
            KindArg::Prmse => vec![CoefficientKind::Prmse],
            KindArg::Ctt => vec![CoefficientKind::Ctt],
            KindArg::Both => vec![CoefficientKind::Prmse, CoefficientKind::Ctt],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Enumerate,
    Mc,
}

#[derive(Args, Clone)]
struct QuadArgs {
    #[arg(long, default_value_t = DEFAULT_Q)]
    quad_points: usize,
    #[arg(long, default_value_t = DEFAULT_LO, allow_hyphen_values = true)]
    quad_lo: f64,
    #[arg(long, default_value_t = DEFAULT_HI, allow_hyphen_values = true)]
    quad_hi: f64,
}

impl QuadArgs {
    fn grid(&self) -> Result<QuadratureGrid, IrtError> {
        QuadratureGrid::new(self.quad_points, self.quad_lo, self.quad_hi)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Response CSV: header of item names, then integer categories
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReliabilityArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    kind: KindArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Item parameter JSON: {"items": [{"a": .., "c": [..]}, ..]}
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    kind: KindArg,
    #[arg(long, value_enum, default_value = "enumerate")]
    mode: ModeArg,
    /// Monte Carlo draws (mc mode)
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    quad: QuadArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Persisted fit: enough to score and to rebuild the information matrix.
#[derive(Serialize, Deserialize)]
struct FitFile {
    schema_version: u32,
    model: String,
    n: usize,
    m: usize,
    converged: bool,
    iterations: usize,
    log_likelihood: f64,
    quad_points: usize,
    quad_lo: f64,
    quad_hi: f64,
    #[serde(flatten)]
    params: ItemParams,
}

#[derive(Serialize)]
struct ReportFile {
    schema_version: u32,
    reports: Vec<irt_precision::ReliabilityReport>,
}

#[derive(Serialize)]
struct OracleFile {
    schema_version: u32,
    mode: String,
    draws: Option<usize>,
    values: Vec<OracleValue>,
}

#[derive(Serialize)]
struct OracleValue {
    kind: CoefficientKind,
    value: f64,
}

enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<IrtError> for CliError {
    fn from(e: IrtError) -> Self {
        match e {
            IrtError::NonConvergence { .. }
            | IrtError::SingularInformation { .. }
            | IrtError::DegenerateMoments(_)
            | IrtError::EnumerationCap { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("IRT_PRECISION_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Score(args) => run_score(args),
        Command::Reliability(args) => run_reliability(args),
        Command::Oracle(args) => run_oracle(args),
        Command::Simulate(args) => run_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(message)) => {
            emit_error("validation", &message);
            ExitCode::from(2)
        }
        Err(CliError::Numerical(message)) => {
            emit_error("numerical", &message);
            ExitCode::from(3)
        }
    }
}

fn emit_error(code: &str, message: &str) {
    let body = serde_json::json!({
        "error": { "code": code, "message": message }
    });
    eprintln!("{body}");
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("serialization: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Validation(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn read_fit(path: &Path) -> Result<FitFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("parsing {}: {e}", path.display())))
}

fn run_fit(args: FitArgs) -> Result<(), CliError> {
    let data = ResponseMatrix::from_csv_path(&args.data)?;
    let grid = args.quad.grid()?;
    let k_per_item: Vec<usize> = match args.model {
        ModelArg::TwoPl => vec![2; data.n_items()],
        ModelArg::Grm => data
            .max_category()
            .iter()
            .map(|&c| (c as usize + 1).max(2))
            .collect(),
    };
    // range-check before fitting so bad cells are named up front
    let probe = default_init(&data, &k_per_item)?;
    data.validate_against(&probe)?;
    let fit = fit_em(&data, &probe, &grid, args.tol, args.max_iter)?;
    if !fit.converged {
        return Err(CliError::Numerical(format!(
            "EM did not converge in {} iterations",
            fit.iterations
        )));
    }
    write_json(
        &args.out,
        &FitFile {
            schema_version: SCHEMA_VERSION,
            model: match args.model {
                ModelArg::TwoPl => "2pl".into(),
                ModelArg::Grm => "grm".into(),
            },
            n: fit.n,
            m: data.n_items(),
            converged: fit.converged,
            iterations: fit.iterations,
            log_likelihood: fit.log_likelihood,
            quad_points: args.quad.quad_points,
            quad_lo: args.quad.quad_lo,
            quad_hi: args.quad.quad_hi,
            params: fit.params,
        },
    )
}

fn run_score(args: ScoreArgs) -> Result<(), CliError> {
    let fit = read_fit(&args.fit)?;
    let data = ResponseMatrix::from_csv_path(&args.data)?;
    data.validate_against(&fit.params)?;
    let grid = QuadratureGrid::new(fit.quad_points, fit.quad_lo, fit.quad_hi)?;
    let mut out = String::from("row,eap,post_var\n");
    for (i, pattern) in data.rows().enumerate() {
        let s = posterior_summary(pattern, &fit.params, &grid);
        out.push_str(&format!("{},{},{}\n", i + 1, s.eap, s.post_var));
    }
    std::fs::write(&args.out, out)
        .map_err(|e| CliError::Validation(format!("writing {}: {e}", args.out.display())))?;
    Ok(())
}

fn run_reliability(args: ReliabilityArgs) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Validation(format!(
            "alpha must be in (0,1), got {}",
            args.alpha
        )));
    }
    let fit = read_fit(&args.fit)?;
    let data = ResponseMatrix::from_csv_path(&args.data)?;
    data.validate_against(&fit.params)?;
    let grid = QuadratureGrid::new(fit.quad_points, fit.quad_lo, fit.quad_hi)?;
    let groups = PatternGroups::from_data(&data);
    let info = observed_information_grouped(&groups, &fit.params, &grid);
    let mut reports = Vec::new();
    for kind in args.kind.kinds() {
        let moments = estimate_moments_grouped(&groups, &fit.params, &grid, kind, &info)?;
        reports.push(report_from_moments(
            &moments,
            &grid,
            kind,
            args.alpha,
            data.n_items(),
        )?);
    }
    write_json(
        &args.out,
        &ReportFile {
            schema_version: SCHEMA_VERSION,
            reports,
        },
    )
}

fn run_oracle(args: OracleArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.params)
        .map_err(|e| CliError::Validation(format!("reading {}: {e}", args.params.display())))?;
    let params: ItemParams = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("parsing {}: {e}", args.params.display())))?;
    let grid = args.quad.grid()?;
    let mode = match args.mode {
        ModeArg::Enumerate => OracleMode::Enumerate,
        ModeArg::Mc => OracleMode::MonteCarlo,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut values = Vec::new();
    for kind in args.kind.kinds() {
        let value = population_oracle(&params, &grid, kind, mode, args.draws, &mut rng)?;
        values.push(OracleValue { kind, value });
    }
    let file = OracleFile {
        schema_version: SCHEMA_VERSION,
        mode: match args.mode {
            ModeArg::Enumerate => "enumerate".into(),
            ModeArg::Mc => "mc".into(),
        },
        draws: matches!(args.mode, ModeArg::Mc).then_some(args.draws),
        values,
    };
    match &args.out {
        Some(path) => write_json(path, &file),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&file)
                    .map_err(|e| CliError::Validation(e.to_string()))?
            );
            Ok(())
        }
    }
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.design)
        .map_err(|e| CliError::Validation(format!("reading {}: {e}", args.design.display())))?;
    let design: SimDesign = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("parsing {}: {e}", args.design.display())))?;
    let summary = run_study(&design)?;
    #[derive(Serialize)]
    struct SummaryFile {
        schema_version: u32,
        #[serde(flatten)]
        summary: irt_precision::SimSummary,
    }
    write_json(
        &args.out,
        &SummaryFile {
            schema_version: SCHEMA_VERSION,
            summary: summary.clone(),
        },
    )?;
    if let Some(csv_path) = &args.csv {
        let file = std::fs::File::create(csv_path)
            .map_err(|e| CliError::Validation(format!("writing {}: {e}", csv_path.display())))?;
        summary.write_csv(file)?;
    }
    Ok(())
}
