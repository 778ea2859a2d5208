//! Seeded Monte Carlo harness checking the exact predictions of [`crate::bounds`]
//! against simulated scenario programs and conformal quantiles.

mod experiments;
pub mod ks;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, Fraction};
use crate::engine::Family;

pub use experiments::{membership_pair, PairOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Fresh-draw miscoverage of the vanilla conformal quantile.
    VanillaCoverage,
    /// Distribution of `V` after cascade discarding.
    ViolationCdf,
    /// Mean of `V` after cascade discarding.
    ViolationMean,
    /// Conformal set predictor against the scenario feasibility set.
    SetEquivalence,
    /// Fresh-draw violation frequency of the scenario solution.
    ScenarioMiscoverage,
    /// Calibration-conditional coverage.
    CccCoverage,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::VanillaCoverage,
        Experiment::ViolationCdf,
        Experiment::ViolationMean,
        Experiment::SetEquivalence,
        Experiment::ScenarioMiscoverage,
        Experiment::CccCoverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VanillaCoverage => "vanilla_coverage",
            Experiment::ViolationCdf => "violation_cdf",
            Experiment::ViolationMean => "violation_mean",
            Experiment::SetEquivalence => "set_equivalence",
            Experiment::ScenarioMiscoverage => "scenario_miscoverage",
            Experiment::CccCoverage => "ccc_coverage",
        }
    }

    /// Short command-line name.
    pub fn short_name(self) -> &'static str {
        match self {
            Experiment::VanillaCoverage => "vanilla",
            Experiment::ViolationCdf => "cdf",
            Experiment::ViolationMean => "mean",
            Experiment::SetEquivalence => "equivalence",
            Experiment::ScenarioMiscoverage => "miscoverage",
            Experiment::CccCoverage => "ccc",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Experiment::VanillaCoverage | Experiment::ScenarioMiscoverage => 5000,
            Experiment::SetEquivalence => 500,
            _ => 2000,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.replace('-', "_");
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == key || e.short_name() == key)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

fn default_test_points() -> usize {
    20
}

/// One validation run. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub experiment: Experiment,
    pub family: Family,
    pub m: usize,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Defaults per experiment when absent.
    #[serde(default)]
    pub trials: Option<usize>,
    /// Monte Carlo test draws per trial for `V`; 0 selects the closed form.
    #[serde(default)]
    pub n_test: usize,
    /// Fresh test samples per trial in the set-equivalence run.
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    /// Use the concentration-corrected quantile in the ccc run.
    #[serde(default)]
    pub corrected: bool,
    #[serde(default)]
    pub root_seed: u64,
    /// Harness self-test: added to every exact prediction.
    #[serde(default)]
    pub exact_offset: f64,
}

impl TrialConfig {
    pub fn new(experiment: Experiment, family: Family, m: usize) -> Self {
        Self {
            experiment,
            family,
            m,
            r: None,
            epsilon: None,
            delta: None,
            trials: None,
            n_test: 0,
            test_points: default_test_points(),
            corrected: false,
            root_seed: 0,
            exact_offset: 0.0,
        }
    }

    pub fn trial_count(&self) -> usize {
        self.trials.unwrap_or_else(|| self.experiment.default_trials())
    }

    pub fn r_or_zero(&self) -> usize {
        self.r.unwrap_or(0)
    }

    pub fn dimension(&self) -> usize {
        self.family.dimension()
    }

    fn unit(&self, field: &str, value: Option<f64>) -> Result<f64, ConfigError> {
        let v = value.ok_or_else(|| ConfigError::new(field, "required for this experiment"))?;
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err(ConfigError::new(field, format!("{v} is outside (0, 1)")))
        }
    }

    fn require_order(&self) -> Result<(), ConfigError> {
        match self.family {
            Family::Order { .. } => Ok(()),
            _ => Err(ConfigError::new("family", format!("{} requires the order family", self.experiment))),
        }
    }

    fn require_violation_source(&self) -> Result<(), ConfigError> {
        if self.n_test == 0 && !self.family.has_closed_form() {
            Err(ConfigError::new(
                "n_test",
                format!("{} has no closed-form violation; set n_test > 0", self.family.label()),
            ))
        } else {
            Ok(())
        }
    }

    fn require_discard(&self) -> Result<(), ConfigError> {
        let (r, d) = (self.r_or_zero(), self.dimension());
        if r % d != 0 {
            return Err(ConfigError::new("r", format!("{r} is not a multiple of d = {d}")));
        }
        if r + d > self.m {
            return Err(ConfigError::new("r", format!("r + d = {} exceeds m = {}", r + d, self.m)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.family
            .validate()
            .map_err(|e| ConfigError::new("family", e.to_string()))?;
        if self.trial_count() == 0 {
            return Err(ConfigError::new("trials", "must be at least 1"));
        }
        if self.m < self.dimension() {
            return Err(ConfigError::new("m", format!("must be at least d = {}", self.dimension())));
        }
        if !self.exact_offset.is_finite() {
            return Err(ConfigError::new("exact_offset", "must be finite"));
        }
        match self.experiment {
            Experiment::VanillaCoverage => {
                self.require_order()?;
                self.unit("delta", self.delta)?;
            }
            Experiment::ViolationCdf => {
                if !self.family.has_closed_form() {
                    return Err(ConfigError::new(
                        "family",
                        "the distributional test needs a closed-form violation probability",
                    ));
                }
                if self.n_test != 0 {
                    return Err(ConfigError::new(
                        "n_test",
                        "Monte Carlo violation estimates would corrupt the distributional test",
                    ));
                }
                self.require_discard()?;
                if self.epsilon.is_some() {
                    self.unit("epsilon", self.epsilon)?;
                }
            }
            Experiment::ViolationMean => {
                self.require_violation_source()?;
                self.require_discard()?;
            }
            Experiment::SetEquivalence | Experiment::ScenarioMiscoverage => {
                if self.experiment == Experiment::SetEquivalence && self.test_points == 0 {
                    return Err(ConfigError::new("test_points", "must be at least 1"));
                }
            }
            Experiment::CccCoverage => {
                self.require_order()?;
                let eps = self.unit("epsilon", self.epsilon)?;
                if self.corrected {
                    self.unit("delta", self.delta)?;
                } else {
                    bounds::ccc_delta(self.m as u64, eps).map_err(|e| ConfigError::new("epsilon", e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

/// A config file: [`TrialConfig`] plus an optional `out_dir`. The
/// `experiment` key may be omitted when the caller names it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub config: TrialConfig,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentFile {
    pub fn parse(text: &str, experiment: Option<Experiment>) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        let object = value
            .as_object_mut()
            .ok_or_else(|| ConfigError::new("<document>", "expected a JSON object"))?;
        let out_dir = match object.remove("out_dir") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => return Err(ConfigError::new("out_dir", format!("expected a string, got {other}"))),
        };
        if let Some(named) = experiment {
            match object.get("experiment") {
                None => {
                    object.insert("experiment".into(), serde_json::to_value(named).expect("enum serializes"));
                }
                Some(v) => {
                    let in_file: Experiment = serde_json::from_value(v.clone())
                        .map_err(|e| ConfigError::new("experiment", e.to_string()))?;
                    if in_file != named {
                        return Err(ConfigError::new(
                            "experiment",
                            format!("file says {in_file} but {named} was requested"),
                        ));
                    }
                }
            }
        }
        let config: TrialConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("<document>")
                .to_string();
            ConfigError { field, reason: msg }
        })?;
        config.validate()?;
        Ok(Self { config, out_dir })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index`, independent of scheduling.
pub fn trial_seed(root_seed: u64, index: usize) -> u64 {
    splitmix64(root_seed ^ splitmix64(index as u64).rotate_left(17))
}

/// Seed for the single re-run after a failed attempt.
pub fn rerun_seed(root_seed: u64) -> u64 {
    splitmix64(root_seed ^ 0xA5A5_5A5A_C3C3_3C3C)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Support set not of size `d`, or the multiplier audit was inconclusive.
    Degenerate,
    /// Repeated score or sample.
    Tie,
    InfeasibleProgram,
    /// Corrected quantile level leaves no valid discard count.
    InfeasibleQuantile,
}

impl Exclusion {
    pub const ALL: [Exclusion; 4] = [
        Exclusion::Degenerate,
        Exclusion::Tie,
        Exclusion::InfeasibleProgram,
        Exclusion::InfeasibleQuantile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Exclusion::Degenerate => "degenerate",
            Exclusion::Tie => "tie",
            Exclusion::InfeasibleProgram => "infeasible_program",
            Exclusion::InfeasibleQuantile => "infeasible_quantile",
        }
    }
}

/// A set-equivalence disagreement, with everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub trial_index: usize,
    pub seed: u64,
    pub test_point: usize,
    pub samples: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub x_star: Vec<f64>,
    pub in_predictor: bool,
    pub in_feasibility_set: bool,
    pub on_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub seed: u64,
    pub v: Option<f64>,
    pub r_p: Option<f64>,
    pub miscovered: Option<bool>,
    pub flags: Vec<&'static str>,
    pub tie_count: usize,
    pub exclusion: Option<Exclusion>,
    /// Second route to `miscovered` (conformal predictor), when computed.
    pub alt_miscovered: Option<bool>,
    /// Order-program bridge agreed with the conformal quantile.
    pub bridge_ok: Option<bool>,
    /// Every cascade stage was violated by all later solutions.
    pub tight: Option<bool>,
    pub pairs: usize,
    pub tie_pairs: usize,
    pub boundary_pairs: usize,
    pub mismatches: Vec<Mismatch>,
}

impl TrialRecord {
    fn new(trial_index: usize, seed: u64) -> Self {
        Self {
            trial_index,
            seed,
            ..Self::default()
        }
    }

    fn excluded(mut self, cause: Exclusion) -> Self {
        self.exclusion = Some(cause);
        self.flags.push(cause.name());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `|observed - exact| <= 3 sigma`.
    TwoSided,
    /// `observed >= lower`.
    AtLeast,
    /// `observed <= upper`.
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub exact: Option<f64>,
    pub observed: Option<f64>,
    pub sigma: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    /// Band `exact +- 3 sigma`.
    fn two_sided(name: &str, exact: f64, observed: Option<f64>, sigma: f64) -> Self {
        let (lower, upper) = (exact - 3.0 * sigma, exact + 3.0 * sigma);
        Self {
            name: name.into(),
            kind: CheckKind::TwoSided,
            exact: Some(exact),
            observed,
            sigma: Some(sigma),
            lower: Some(lower),
            upper: Some(upper),
            pass: observed.is_some_and(|o| o >= lower && o <= upper),
        }
    }

    fn at_least(name: &str, exact: Option<f64>, observed: Option<f64>, sigma: Option<f64>, lower: f64) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::AtLeast,
            exact,
            observed,
            sigma,
            lower: Some(lower),
            upper: None,
            pass: observed.is_some_and(|o| o >= lower),
        }
    }

    fn at_most(name: &str, exact: Option<f64>, observed: Option<f64>, sigma: Option<f64>, upper: f64) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::AtMost,
            exact,
            observed,
            sigma,
            lower: None,
            upper: Some(upper),
            pass: observed.is_some_and(|o| o <= upper),
        }
    }

    fn zero_count(name: &str, count: usize) -> Self {
        Self::at_most(name, Some(0.0), Some(count as f64), None, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub empirical: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean_v: Option<f64>,
    pub std_v: Option<f64>,
    pub miscoverage_rate: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub ecdf_grid: Vec<GridPoint>,
    pub membership_pairs: usize,
    pub tie_pairs: usize,
    pub boundary_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub config: TrialConfig,
    /// 1, or 2 after a failed first attempt.
    pub attempt: u32,
    pub seed_used: u64,
    /// Discard count the run used, or `None` for the appended infinity.
    pub r: Option<u64>,
    pub trials: usize,
    pub recorded: usize,
    pub exclusions: BTreeMap<String, usize>,
    pub stats: Stats,
    pub checks: Vec<Check>,
    pub mismatches: Vec<Mismatch>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub records: Vec<TrialRecord>,
}

fn format_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

impl Report {
    pub fn pass(&self) -> bool {
        self.summary.pass
    }

    /// `<experiment>_<m>_<r>_<seed>`, with `inf` for the appended infinity.
    pub fn file_stem(&self) -> String {
        let s = &self.summary;
        let r = s.r.map_or_else(|| "inf".to_string(), |r| r.to_string());
        format!("{}_{}_{}_{}", s.experiment.name(), s.config.m, r, s.config.root_seed)
    }

    pub fn csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["trial_index", "seed", "V", "r_p", "miscovered", "flags"])
            .expect("in-memory write");
        for rec in &self.records {
            let mut flags = rec.flags.clone();
            if rec.tie_count > 0 && !flags.contains(&"tie") {
                flags.push("tie");
            }
            writer
                .write_record([
                    rec.trial_index.to_string(),
                    rec.seed.to_string(),
                    rec.v.map(format_float).unwrap_or_default(),
                    rec.r_p.map(format_float).unwrap_or_default(),
                    rec.miscovered.map(|b| b.to_string()).unwrap_or_default(),
                    flags.join("|"),
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("csv is utf-8")
    }

    pub fn json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        text.push('\n');
        text
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let stem = self.file_stem();
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&csv_path, self.csv_string())?;
        std::fs::write(&json_path, self.json_string())?;
        Ok((csv_path, json_path))
    }
}

/// Runs the experiment on `threads` workers (0 = rayon default). A failed
/// attempt is repeated once with [`rerun_seed`]; the second result is final.
pub fn run(config: &TrialConfig, threads: usize) -> Result<Report, ConfigError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ConfigError::new("threads", e.to_string()))?;
    let first = pool.install(|| attempt(config, config.root_seed, 1));
    if first.pass() {
        return Ok(first);
    }
    Ok(pool.install(|| attempt(config, rerun_seed(config.root_seed), 2)))
}

/// A single attempt with the given seed, no re-run.
pub fn run_once(config: &TrialConfig, seed: u64, threads: usize) -> Result<Report, ConfigError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ConfigError::new("threads", e.to_string()))?;
    Ok(pool.install(|| attempt(config, seed, 1)))
}

fn attempt(config: &TrialConfig, seed: u64, attempt: u32) -> Report {
    let records: Vec<TrialRecord> = (0..config.trial_count())
        .into_par_iter()
        .map(|i| experiments::run_trial(config, i, trial_seed(seed, i)))
        .collect();
    let summary = summarize(config, seed, attempt, &records);
    Report { summary, records }
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<(f64, usize)> {
    let (hits, n) = flags.fold((0usize, 0usize), |(h, n), b| (h + b as usize, n + 1));
    (n > 0).then(|| (hits as f64 / n as f64, n))
}

/// `sqrt(q (1 - q) / n)`.
fn binomial_sigma(q: f64, n: usize) -> f64 {
    (q.clamp(0.0, 1.0) * (1.0 - q.clamp(0.0, 1.0)) / n.max(1) as f64).sqrt()
}

fn summarize(config: &TrialConfig, seed: u64, attempt: u32, records: &[TrialRecord]) -> Summary {
    let kept: Vec<&TrialRecord> = records.iter().filter(|r| r.exclusion.is_none()).collect();
    let mut exclusions: BTreeMap<String, usize> = Exclusion::ALL.iter().map(|e| (e.name().to_string(), 0)).collect();
    for rec in records {
        if let Some(cause) = rec.exclusion {
            *exclusions.get_mut(cause.name()).expect("all causes listed") += 1;
        }
    }
    let vs: Vec<f64> = kept.iter().filter_map(|r| r.v).collect();
    let mv = mean_std(&vs);
    let miss = rate(kept.iter().filter_map(|r| r.miscovered));
    let mut stats = Stats {
        mean_v: mv.map(|(m, _)| m),
        std_v: mv.map(|(_, s)| s),
        miscoverage_rate: miss.map(|(q, _)| q),
        membership_pairs: kept.iter().map(|r| r.pairs).sum(),
        tie_pairs: kept.iter().map(|r| r.tie_pairs).sum(),
        boundary_pairs: kept.iter().map(|r| r.boundary_pairs).sum(),
        ..Stats::default()
    };
    let mismatches: Vec<Mismatch> = kept.iter().flat_map(|r| r.mismatches.iter().cloned()).collect();
    let ctx = experiments::Context::new(config);
    let mut checks = Vec::new();
    let off = config.exact_offset;
    let m = config.m as u64;
    let d = config.dimension() as u64;

    match config.experiment {
        Experiment::VanillaCoverage => {
            let exact = ctx.vanilla_index().miscoverage().value() + off;
            checks.push(Check::two_sided(
                "miscoverage_rate",
                exact,
                miss.map(|(q, _)| q),
                binomial_sigma(exact, miss.map_or(0, |(_, n)| n)),
            ));
            if let Some((mean, sd)) = mv {
                checks.push(Check::two_sided("mean_violation", exact, Some(mean), sd / (vs.len() as f64).sqrt()));
            }
            push_agreement(&mut checks, miss, mv, vs.len());
            let bad = kept.iter().filter(|r| r.bridge_ok == Some(false)).count();
            checks.push(Check::zero_count("order_program_bridge_mismatches", bad));
        }
        Experiment::ViolationCdf => {
            let r = config.r_or_zero() as u64;
            let (a, b) = (r + d, m + 1 - r - d);
            let cdf = |x: f64| {
                bounds::beta_cdf(a, b, (x - off).clamp(0.0, 1.0))
                    .map(|p| p.value())
                    .unwrap_or(f64::NAN)
            };
            if !vs.is_empty() {
                let ks = ks::ks_statistic(&vs, cdf);
                stats.ks_statistic = Some(ks);
                checks.push(Check::at_most("ks_beta", None, Some(ks), None, ks::ks_critical_95(vs.len())));
                stats.ecdf_grid = (0..=20)
                    .map(|k| {
                        let x = k as f64 / 20.0;
                        GridPoint {
                            x,
                            empirical: vs.iter().filter(|&&v| v <= x).count() as f64 / vs.len() as f64,
                            exact: cdf(x),
                        }
                    })
                    .collect();
            } else {
                checks.push(Check::at_most("ks_beta", None, None, None, 0.0));
            }
            if let Some(eps) = config.epsilon {
                let exact = ctx.cdf_exact(eps) + off;
                let q = rate(vs.iter().map(|&v| v <= eps));
                checks.push(Check::two_sided(
                    "p_violation_at_most_epsilon",
                    exact,
                    q.map(|(q, _)| q),
                    binomial_sigma(exact, vs.len()),
                ));
            }
        }
        Experiment::ViolationMean => {
            let exact = ctx.mean_exact() + off;
            let sigma = mv.map_or(0.0, |(_, sd)| sd / (vs.len() as f64).sqrt());
            let observed = mv.map(|(mean, _)| mean);
            if ctx.mean_is_equality() {
                checks.push(Check::two_sided("mean_violation", exact, observed, sigma));
            } else {
                checks.push(Check::at_most("mean_violation", Some(exact), observed, Some(sigma), exact + 3.0 * sigma));
            }
            if ctx.cascade_is_tight_family() {
                let loose = kept.iter().filter(|r| r.tight == Some(false)).count();
                checks.push(Check::zero_count("non_tight_cascades", loose));
            }
        }
        Experiment::SetEquivalence => {
            checks.push(Check::zero_count("membership_mismatches", mismatches.len()));
            let exact = Fraction::new(d, m + 1).value() + off;
            checks.push(Check::two_sided(
                "miscoverage_rate",
                exact,
                miss.map(|(q, _)| q),
                binomial_sigma(exact, miss.map_or(0, |(_, n)| n)),
            ));
        }
        Experiment::ScenarioMiscoverage => {
            let exact = Fraction::new(d, m + 1).value() + off;
            checks.push(Check::two_sided(
                "miscoverage_rate",
                exact,
                miss.map(|(q, _)| q),
                binomial_sigma(exact, miss.map_or(0, |(_, n)| n)),
            ));
            let disagree = kept
                .iter()
                .filter(|r| r.alt_miscovered.is_some() && r.alt_miscovered != r.miscovered)
                .count();
            checks.push(Check::zero_count("predictor_route_disagreements", disagree));
            if config.family.has_closed_form() {
                push_agreement(&mut checks, miss, mv, vs.len());
            }
        }
        Experiment::CccCoverage => {
            let eps = config.epsilon.expect("validated");
            let covered = rate(vs.iter().map(|&v| v <= eps));
            let observed = covered.map(|(q, _)| q);
            let n = vs.len();
            match ctx.ccc_r() {
                _ if !config.corrected => {
                    let exact = 1.0 - bounds::ccc_delta(m, eps).expect("validated").delta.value() + off;
                    checks.push(Check::two_sided("coverage_probability", exact, observed, binomial_sigma(exact, n)));
                }
                r => {
                    let delta = config.delta.expect("validated");
                    let target = 1.0 - delta + off;
                    let sigma = binomial_sigma(target, n);
                    checks.push(Check::at_least(
                        "coverage_at_least_target",
                        Some(target),
                        observed,
                        Some(sigma),
                        target - 3.0 * sigma,
                    ));
                    if let Some(r) = r {
                        let exact = bounds::binomial_tail(m, r, eps).map_or(f64::NAN, |p| p.value()) + off;
                        checks.push(Check::two_sided("coverage_probability", exact, observed, binomial_sigma(exact, n)));
                    }
                }
            }
        }
    }

    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    Summary {
        experiment: config.experiment,
        config: config.clone(),
        attempt,
        seed_used: seed,
        r: ctx.effective_r(),
        trials: records.len(),
        recorded: kept.len(),
        exclusions,
        stats,
        checks,
        mismatches,
        pass,
    }
}

/// Fresh-draw frequency against the mean of `V`: both estimate the same
/// probability, so their difference is centered at zero.
fn push_agreement(checks: &mut Vec<Check>, miss: Option<(f64, usize)>, mv: Option<(f64, f64)>, nv: usize) {
    let (Some((q, n)), Some((mean, sd))) = (miss, mv) else {
        return;
    };
    let se = (q * (1.0 - q) / n as f64 + sd * sd / nv as f64).sqrt();
    checks.push(Check::two_sided("estimator_agreement", 0.0, Some(q - mean), se));
}
