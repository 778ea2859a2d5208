//! Vanilla and calibration-conditional conformal prediction.
//!
//! Scores are compared with `>=` exactly as produced by the measure; the
//! scenario measure snaps constraint values within the feasibility tolerance
//! to zero so that active constraints tie exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{
    corrected_discard_count, quantile_index, quantile_index_exact, BoundsError,
    CorrectedDiscard, Fraction, QuantileIndex,
};
use crate::engine::{self, EngineError, Family, Sample, ScenarioSolution, FEASIBILITY_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConformalError {
    #[error("scores must be finite (score {index} is {value})")]
    NonFinite { index: usize, value: f64 },
    #[error("calibration set is empty")]
    Empty,
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("nonconformity measure failed: {0}")]
    Measure(#[from] EngineError),
}

/// Nonconformity scores `R_1, ..., R_m` in sample order, with a sorted view.
/// Ties are ordered by original index and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector {
    raw: Vec<f64>,
    order: Vec<usize>,
    ties: usize,
}

impl ScoreVector {
    pub fn new(raw: Vec<f64>) -> Result<Self, ConformalError> {
        if let Some((index, &value)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ConformalError::NonFinite { index, value });
        }
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
        let ties = order.windows(2).filter(|w| raw[w[0]] == raw[w[1]]).count();
        Ok(Self { raw, order, ties })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Sample indices in non-decreasing score order.
    pub fn sorted_indices(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted(&self) -> impl Iterator<Item = f64> + '_ {
        self.order.iter().map(|&i| self.raw[i])
    }

    /// The `k`-th smallest score, 1-based.
    pub fn order_statistic(&self, k: usize) -> f64 {
        self.raw[self.order[k - 1]]
    }

    /// Adjacent equal pairs in the sorted view.
    pub fn tie_count(&self) -> usize {
        self.ties
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.raw).expect("finite scores serialize")
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = ConformalError;

    fn try_from(raw: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(raw)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(s: ScoreVector) -> Self {
        s.raw
    }
}

/// Significance level, either a float or an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Significance {
    Real(f64),
    Exact(Fraction),
}

impl Significance {
    pub fn value(self) -> f64 {
        match self {
            Significance::Real(v) => v,
            Significance::Exact(f) => f.value(),
        }
    }

    /// Whether `num / den > self`, exactly for fractional levels.
    pub fn is_below(self, num: u64, den: u64) -> bool {
        match self {
            Significance::Real(v) => (num as f64 / den as f64) > v,
            Significance::Exact(f) => num as u128 * f.den as u128 > f.num as u128 * den as u128,
        }
    }

    pub fn quantile_index(self, m: u64) -> Result<QuantileIndex, BoundsError> {
        match self {
            Significance::Real(v) => quantile_index(m, v),
            Significance::Exact(f) => quantile_index_exact(m, f.num, f.den),
        }
    }
}

impl From<f64> for Significance {
    fn from(v: f64) -> Self {
        Significance::Real(v)
    }
}

/// `f(omega; S) = |{i in 1..=m+1 : R_i >= R}| / (m + 1)`, the test score
/// counting itself.
pub fn f_value(calibration: &ScoreVector, test_score: f64) -> Fraction {
    let count = calibration.raw.iter().filter(|&&r| r >= test_score).count() + 1;
    Fraction {
        num: count as u64,
        den: calibration.len() as u64 + 1,
    }
}

/// Permutation-invariant map from a sample multiset to one score per sample.
pub trait NonconformityMeasure {
    fn scores(&self, samples: &[Sample]) -> Result<Vec<f64>, ConformalError>;
}

/// Scores are the first coordinate of each sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMeasure;

impl NonconformityMeasure for IdentityMeasure {
    fn scores(&self, samples: &[Sample]) -> Result<Vec<f64>, ConformalError> {
        Ok(samples.iter().map(|s| s[0]).collect())
    }
}

/// `R_i = g(x*(T), omega_i)` where `x*(T)` solves the family's scenario
/// program on the whole multiset `T`.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioMeasure {
    pub family: Family,
}

impl ScenarioMeasure {
    pub fn new(family: Family) -> Self {
        Self { family }
    }

    /// Scores at a known optimizer.
    pub fn scores_at(&self, x: &[f64], samples: &[Sample]) -> Vec<f64> {
        samples
            .iter()
            .map(|w| snap(self.family.constraint_value(x, w)))
            .collect()
    }
}

fn snap(g: f64) -> f64 {
    if g.abs() <= FEASIBILITY_TOL {
        0.0
    } else {
        g
    }
}

impl NonconformityMeasure for ScenarioMeasure {
    fn scores(&self, samples: &[Sample]) -> Result<Vec<f64>, ConformalError> {
        let solution = engine::solve(&self.family.program(samples))?;
        Ok(self.scores_at(&solution.x_star, samples))
    }
}

pub fn scenario_nonconformity(family: Family) -> ScenarioMeasure {
    ScenarioMeasure::new(family)
}

/// Whether `omega` lies in the vanilla set predictor
/// `{omega : f(omega; S) > delta}`, scoring all `m + 1` samples jointly.
pub fn predictor_contains<M: NonconformityMeasure + ?Sized>(
    calibration: &[Sample],
    omega: &Sample,
    delta: Significance,
    measure: &M,
) -> Result<bool, ConformalError> {
    let mut all = calibration.to_vec();
    all.push(omega.clone());
    let scores = measure.scores(&all)?;
    let (cal, test) = scores.split_at(calibration.len());
    let count = cal.iter().filter(|&&r| r >= test[0]).count() as u64 + 1;
    Ok(delta.is_below(count, calibration.len() as u64 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileValue {
    Finite(f64),
    /// The appended `+inf`.
    Infinite,
}

impl QuantileValue {
    pub fn as_f64(self) -> f64 {
        match self {
            QuantileValue::Finite(v) => v,
            QuantileValue::Infinite => f64::INFINITY,
        }
    }

    /// `score <= value`.
    pub fn covers(self, score: f64) -> bool {
        score <= self.as_f64()
    }

    pub fn is_finite(self) -> bool {
        matches!(self, QuantileValue::Finite(_))
    }
}

/// `R_p = Quantile_{1-delta}(R_1, ..., R_m, +inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileResult {
    pub r_p: QuantileValue,
    pub p: u64,
    /// `m - p`; `None` when the quantile is the appended infinity.
    pub r: Option<u64>,
}

fn quantile_at(calibration: &ScoreVector, index: QuantileIndex) -> QuantileResult {
    let r_p = if index.is_appended_infinity() {
        QuantileValue::Infinite
    } else {
        QuantileValue::Finite(calibration.order_statistic(index.p as usize))
    };
    QuantileResult {
        r_p,
        p: index.p,
        r: index.r(),
    }
}

pub fn conformal_quantile(
    calibration: &ScoreVector,
    delta: Significance,
) -> Result<QuantileResult, ConformalError> {
    if calibration.is_empty() {
        return Err(ConformalError::Empty);
    }
    let index = delta.quantile_index(calibration.len() as u64)?;
    Ok(quantile_at(calibration, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub inside: bool,
    /// `|g| <= FEASIBILITY_TOL`.
    pub boundary: bool,
}

/// `omega in U = {omega : g(x*(S), omega) <= 0}`, up to the feasibility
/// tolerance.
pub fn feasibility_set_contains(family: &Family, solution: &ScenarioSolution, omega: &[f64]) -> Membership {
    let g = family.constraint_value(&solution.x_star, omega);
    Membership {
        inside: g <= FEASIBILITY_TOL,
        boundary: g.abs() <= FEASIBILITY_TOL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CccQuantile {
    Quantile(QuantileResult),
    /// The corrected level leaves no valid discard count.
    Infeasible { level: f64 },
}

/// Calibration-conditional quantile at level `1 - eps`, or at the
/// concentration-corrected level when `corrected_delta` is given.
pub fn ccc_quantile(
    calibration: &ScoreVector,
    eps: f64,
    corrected_delta: Option<f64>,
) -> Result<CccQuantile, ConformalError> {
    if calibration.is_empty() {
        return Err(ConformalError::Empty);
    }
    let m = calibration.len() as u64;
    let Some(delta) = corrected_delta else {
        return Ok(CccQuantile::Quantile(conformal_quantile(calibration, Significance::Real(eps))?));
    };
    let index = match corrected_discard_count(m, eps, delta)? {
        CorrectedDiscard::Discard { p, .. } => QuantileIndex { m, p },
        CorrectedDiscard::AppendedInfinity { .. } => QuantileIndex { m, p: m + 1 },
        CorrectedDiscard::Infeasible { level } => return Ok(CccQuantile::Infeasible { level }),
    };
    Ok(CccQuantile::Quantile(quantile_at(calibration, index)))
}
