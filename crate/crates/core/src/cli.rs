//! `scenconf` command-line front end.
//!
//! Exit codes: 0 pass, 1 statistical failure, 2 configuration or domain
//! error, 3 infeasible program.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use num_traits::{One, Signed};
use serde::Serialize;

use crate::bounds::{self, BoundSpec, CorrectedDiscard, Fraction};
use crate::engine::{self, EngineError, Family, LinearScenarioProgram, ScoreDistribution};
use crate::exact;
use crate::validation::{self, Experiment, ExperimentFile};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

const DEFAULT_OUT_DIR: &str = "scenconf-out";

#[derive(Debug, Parser)]
#[command(name = "scenconf", version, about = "Scenario programs, conformal quantiles and their validation")]
pub struct Cli {
    /// Root seed; overrides `root_seed` in experiment configs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for validation runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Directory for reports; overrides `out_dir` in experiment configs.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a validation experiment and write its CSV and JSON reports.
    Validate {
        /// vanilla, cdf, mean, equivalence, miscoverage or ccc (long names accepted).
        #[arg(value_parser = parse_experiment)]
        experiment: Experiment,
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a closed-form bound or sample-size formula.
    Calc(CalcArgs),
    /// Generate, solve or audit a linear scenario program.
    #[command(subcommand)]
    Instance(InstanceCommand),
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Formula {
    SampleSizeVanilla,
    SampleSizeCcc,
    ExpectedViolation,
    BinomialTail,
    CccDelta,
    QuantileIndex,
    #[value(alias = "lindemann-r")]
    CorrectedR,
}

#[derive(Debug, Args)]
pub struct CalcArgs {
    pub formula: Formula,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub r: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub d: u64,
    #[arg(long)]
    pub k: Option<u64>,
    /// Decimal literal; kept as text so exact fractions can be reported.
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyName {
    Order,
    IntervalCover,
    RandomLp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistName {
    Uniform,
    Gaussian,
    Exponential,
}

#[derive(Debug, Subcommand)]
pub enum InstanceCommand {
    /// Write a seeded program (scenario-engine JSON schema).
    Generate {
        #[arg(long, value_enum)]
        family: FamilyName,
        #[arg(long)]
        m: usize,
        /// Dimension of the random LP family.
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = DistName::Uniform)]
        dist: DistName,
        /// Output file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve a program and print x*, the objective, active and support sets.
    Solve {
        path: PathBuf,
        /// Remove this many samples by cascade discarding first.
        #[arg(long, default_value_t = 0)]
        discard: usize,
    },
    /// Removal-test support audit against the multiplier fast path.
    Support { path: PathBuf },
}

enum Failure {
    Config(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) => m,
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InfeasibleProgram => Failure::Infeasible(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<bounds::BoundsError> for Failure {
    fn from(e: bounds::BoundsError) -> Self {
        Failure::Config(e.to_string())
    }
}

/// Runs the CLI on `args` (including the program name), writing results to
/// `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{text}");
            return EXIT_PASS;
        }
    };
    let result = match &cli.command {
        Command::Validate { experiment, config } => validate(&cli, *experiment, config, out),
        Command::Calc(args) => calc(args, out),
        Command::Instance(cmd) => instance(&cli, cmd, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

/// Twelve significant digits, trailing zeros trimmed.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-6..=15).contains(&magnitude) {
        let s = format!("{x:.11e}");
        let (mant, exp) = s.split_once('e').expect("exponent form");
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        return format!("{mant}e{exp}");
    }
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn require<T: Copy>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Config(format!("--{flag} is required for this formula")))
}

fn real(text: &Option<String>, flag: &str) -> Result<(f64, Option<BigRational>), Failure> {
    let text = text
        .as_deref()
        .ok_or_else(|| Failure::Config(format!("--{flag} is required for this formula")))?;
    let value: f64 = text
        .trim()
        .parse()
        .map_err(|_| Failure::Config(format!("--{flag}: `{text}` is not a number")))?;
    Ok((value, exact::parse_decimal(text)))
}

/// ` (= n/d)` for short non-integer fractions.
fn annotation(q: &BigRational) -> String {
    if q.is_integer() || q.denom().to_string().len() > 30 || q.is_negative() {
        String::new()
    } else {
        format!(" (= {}/{})", q.numer(), q.denom())
    }
}

fn fraction_annotation(f: Fraction) -> String {
    annotation(&BigRational::new(f.num.into(), f.den.into()))
}

fn exact_probability(eps: &Option<BigRational>, eval: impl Fn(&BigRational) -> BigRational, m: u64) -> String {
    match eps {
        // exact sums over thousands of terms are not worth printing
        Some(e) if m <= 200 && e.is_positive() && e < &BigRational::one() => annotation(&eval(e)),
        _ => String::new(),
    }
}

fn calc(args: &CalcArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (value, note) = match args.formula {
        Formula::SampleSizeVanilla => {
            let r = require(args.r, "r")?;
            let (delta, _) = real(&args.delta, "delta")?;
            (
                bounds::sample_size_vanilla(r, delta)?.to_string(),
                "smallest m with (r + 1)/(m + 1) <= delta".to_string(),
            )
        }
        Formula::SampleSizeCcc => {
            let r = require(args.r, "r")?;
            let (eps, _) = real(&args.eps, "eps")?;
            let (delta, _) = real(&args.delta, "delta")?;
            (
                bounds::sample_size_ccc(r, eps, delta)?.to_string(),
                "ceil((2/eps)(r + ln(1/delta))), sufficient for calibration-conditional coverage".to_string(),
            )
        }
        Formula::ExpectedViolation => {
            let m = require(args.m, "m")?;
            let spec = BoundSpec::new(m, args.d, args.r.unwrap_or(0))?;
            let f = bounds::expected_violation_fraction(&spec);
            (
                format!("{}{}", format_sig12(bounds::expected_violation_bound(&spec).value()), fraction_annotation(f)),
                "E[V] <= (r + d)/(m + 1) under cascade discarding".to_string(),
            )
        }
        Formula::BinomialTail => {
            let m = require(args.m, "m")?;
            let k = require(args.k, "k")?;
            let (eps, eps_exact) = real(&args.eps, "eps")?;
            let v = bounds::binomial_tail(m, k, eps)?.value();
            let ann = exact_probability(&eps_exact, |e| exact::binomial_tail_exact(m, k, e), m);
            (
                format!("{}{}", format_sig12(v), ann),
                "1 - sum_{i<=k} C(m,i) eps^i (1-eps)^(m-i)".to_string(),
            )
        }
        Formula::CccDelta => {
            let m = require(args.m, "m")?;
            let (eps, eps_exact) = real(&args.eps, "eps")?;
            let c = bounds::ccc_delta(m, eps)?;
            let ann = exact_probability(&eps_exact, |e| exact::binomial_head_exact(m, c.r, e), m);
            (
                format!("{}{}", format_sig12(c.delta.value()), ann),
                format!("sum_{{i<=r}} C(m,i) eps^i (1-eps)^(m-i) with r = m - ceil((1-eps)(m+1)) = {}", c.r),
            )
        }
        Formula::QuantileIndex => {
            let m = require(args.m, "m")?;
            let (delta, _) = real(&args.delta, "delta")?;
            let q = bounds::quantile_index(m, delta)?;
            let r = q.r().map_or_else(|| "none (appended infinity)".to_string(), |r| r.to_string());
            (
                q.p.to_string(),
                format!(
                    "p = ceil((1-delta)(m+1)); r = {r}; exact miscoverage {}",
                    q.miscoverage()
                ),
            )
        }
        Formula::CorrectedR => {
            let m = require(args.m, "m")?;
            let (eps, _) = real(&args.eps, "eps")?;
            let (delta, _) = real(&args.delta, "delta")?;
            let desc = "r = m - ceil((1 - eps + sqrt(ln(1/delta)/(2m)))(m+1))";
            match bounds::corrected_discard_count(m, eps, delta)? {
                CorrectedDiscard::Discard { level, p, r } => (
                    r.to_string(),
                    format!("{desc}; level {}, p = {p}", format_sig12(level)),
                ),
                CorrectedDiscard::AppendedInfinity { level } => (
                    "inf".to_string(),
                    format!("{desc}; level {} selects the appended infinity", format_sig12(level)),
                ),
                CorrectedDiscard::Infeasible { level } => {
                    return Err(Failure::Config(format!(
                        "corrected level {} leaves no valid discard count",
                        format_sig12(level)
                    )))
                }
            }
        }
    };
    let _ = writeln!(out, "{value}");
    let _ = writeln!(out, "# {note}");
    Ok(EXIT_PASS)
}

fn validate(cli: &Cli, experiment: Experiment, path: &PathBuf, out: &mut dyn Write) -> Result<i32, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let file = ExperimentFile::parse(&text, Some(experiment)).map_err(|e| Failure::Config(e.to_string()))?;
    let mut config = file.config;
    if let Some(seed) = cli.seed {
        config.root_seed = seed;
    }
    let dir = cli
        .out_dir
        .clone()
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let report = validation::run(&config, cli.threads).map_err(|e| Failure::Config(e.to_string()))?;
    let (csv_path, json_path) = report
        .write(&dir)
        .map_err(|e| Failure::Config(format!("cannot write reports to {}: {e}", dir.display())))?;
    let s = &report.summary;
    let _ = writeln!(
        out,
        "{} m={} r={} trials={} recorded={} attempt={}",
        s.experiment,
        s.config.m,
        s.r.map_or_else(|| "inf".to_string(), |r| r.to_string()),
        s.trials,
        s.recorded,
        s.attempt
    );
    let show = |x: Option<f64>| x.map_or_else(|| "-".to_string(), format_sig12);
    for c in &s.checks {
        let _ = writeln!(
            out,
            "{} {} observed={} exact={} band=[{}, {}]",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            show(c.observed),
            show(c.exact),
            show(c.lower),
            show(c.upper)
        );
    }
    let _ = writeln!(out, "wrote {} and {}", csv_path.display(), json_path.display());
    Ok(if report.pass() { EXIT_PASS } else { EXIT_FAIL })
}

fn read_program(path: &PathBuf) -> Result<LinearScenarioProgram, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(LinearScenarioProgram::from_json(&text)?)
}

#[derive(Serialize)]
struct SupportAudit {
    x_star: Vec<f64>,
    active_indices: Vec<usize>,
    support_removal_test: Vec<usize>,
    support_fast_path: Option<Vec<usize>>,
    agree: bool,
    dimension: usize,
    fully_supported: bool,
}

fn instance(cli: &Cli, cmd: &InstanceCommand, out: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        InstanceCommand::Generate {
            family,
            m,
            dim,
            dist,
            output,
        } => {
            let dist = match dist {
                DistName::Uniform => ScoreDistribution::default(),
                DistName::Gaussian => ScoreDistribution::Gaussian {
                    mean: 0.0,
                    std_dev: 1.0,
                },
                DistName::Exponential => ScoreDistribution::Exponential { rate: 1.0 },
            };
            let family = match family {
                FamilyName::Order => Family::Order { dist },
                FamilyName::IntervalCover => Family::IntervalCover { dist },
                FamilyName::RandomLp => Family::RandomLp { dimension: *dim },
            };
            family.validate()?;
            if *m == 0 {
                return Err(Failure::Config("--m must be positive".into()));
            }
            let generated = family.generate(*m, cli.seed.unwrap_or(0));
            let mut text = generated.program.to_json();
            text.push('\n');
            match output {
                Some(path) => std::fs::write(path, text)
                    .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?,
                None => {
                    let _ = write!(out, "{text}");
                }
            }
            Ok(EXIT_PASS)
        }
        InstanceCommand::Solve { path, discard } => {
            let program = read_program(path)?;
            let solution = if *discard == 0 {
                engine::solve(&program)?
            } else {
                engine::cascade_discard(&program, *discard)?.solution
            };
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&solution).expect("serializes"));
            Ok(EXIT_PASS)
        }
        InstanceCommand::Support { path } => {
            let program = read_program(path)?;
            let solution = engine::solve(&program)?;
            let removal = engine::support_set(&program, &solution)?;
            let fast = engine::support_set_fast(&program, &solution);
            let audit = SupportAudit {
                agree: fast.as_ref().is_none_or(|f| f == &removal),
                fully_supported: removal.len() == program.dimension,
                x_star: solution.x_star,
                active_indices: solution.active_indices,
                support_removal_test: removal,
                support_fast_path: fast,
                dimension: program.dimension,
            };
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&audit).expect("serializes"));
            Ok(EXIT_PASS)
        }
    }
}
