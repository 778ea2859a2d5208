//! Linear scenario programs: solving, support sets, cascade discarding and
//! the one-dimensional order program.

mod family;
mod lp;
mod order;
mod program;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use family::{
    gen_interval_cover, gen_order_problem, gen_random_lp, violation_probability, Family,
    GeneratedInstance, Sample, ScoreDistribution, ViolationEstimate, ViolationMode,
};
pub use order::{solve_order_program, OrderProgramResult};
pub use program::{AffineRow, LinearScenarioProgram};

use lp::{LpFailure, LpProblem};

/// A retained constraint counts as satisfied up to this value of `g`.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// `|g| <= ACTIVITY_TOL` marks an active constraint.
pub const ACTIVITY_TOL: f64 = 1e-7;
/// Removing a sample moves the optimizer by more than this (infinity norm)
/// iff the sample is of support.
pub const MOVEMENT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("scenario program is infeasible")]
    InfeasibleProgram,
    #[error("simplex failed to converge")]
    Numerical,
    #[error("invalid program: {0}")]
    Schema(String),
    #[error("discard count {r} is not a multiple of d = {d}")]
    DiscardNotMultiple { r: usize, d: usize },
    #[error("cannot discard {r} of {m} samples with d = {d}")]
    TooManyDiscarded { r: usize, m: usize, d: usize },
    #[error("analytic violation probability unavailable for {0}; use monte_carlo mode")]
    NoClosedForm(String),
    #[error("order program needs r < m (r = {r}, m = {m})")]
    OrderDiscardAll { r: usize, m: usize },
}

impl From<LpFailure> for EngineError {
    fn from(f: LpFailure) -> Self {
        match f {
            LpFailure::Infeasible => EngineError::InfeasibleProgram,
            LpFailure::Numerical => EngineError::Numerical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSolution {
    pub x_star: Vec<f64>,
    pub objective: f64,
    /// Retained samples with `|g(x*, omega_i)| <= ACTIVITY_TOL`.
    pub active_indices: Vec<usize>,
    pub support_indices: Vec<usize>,
    /// Removed samples, in removal order.
    pub discarded_indices: Vec<usize>,
    /// Support size differs from `d`, or the support is not inside the
    /// active set, or the multiplier fast path was inapplicable.
    pub degenerate: bool,
}

/// Minimizer over all samples.
pub fn solve(program: &LinearScenarioProgram) -> Result<ScenarioSolution, EngineError> {
    solve_discarding(program, &[])
}

/// Minimizer with the listed samples removed.
pub fn solve_discarding(
    program: &LinearScenarioProgram,
    discarded: &[usize],
) -> Result<ScenarioSolution, EngineError> {
    let x_star = optimizer(program, discarded)?;
    let mut solution = ScenarioSolution {
        objective: program.objective(&x_star),
        active_indices: active_samples(program, discarded, &x_star),
        x_star,
        support_indices: Vec::new(),
        discarded_indices: discarded.to_vec(),
        degenerate: false,
    };
    let (support, fast) = match support_set_fast(program, &solution) {
        Some(s) => (s, true),
        None => (support_set(program, &solution)?, false),
    };
    solution.degenerate = !fast
        || support.len() != program.dimension
        || !support.iter().all(|i| solution.active_indices.contains(i));
    solution.support_indices = support;
    Ok(solution)
}

fn retained_mask(program: &LinearScenarioProgram, discarded: &[usize]) -> Vec<bool> {
    let mut keep = vec![true; program.sample_count()];
    for &i in discarded {
        keep[i] = false;
    }
    keep
}

fn optimizer(program: &LinearScenarioProgram, discarded: &[usize]) -> Result<Vec<f64>, EngineError> {
    let keep = retained_mask(program, discarded);
    let lower = program.lower();
    let upper = program.upper();
    let rows = program
        .constraints
        .iter()
        .enumerate()
        .filter(|(r, _)| keep[program.owner(*r)])
        .map(|(_, row)| (row.a.as_slice(), row.b))
        .collect();
    let lp = LpProblem {
        cost: &program.cost,
        lower: &lower,
        upper: &upper,
        rows,
    };
    Ok(lp.solve()?)
}

fn active_samples(program: &LinearScenarioProgram, discarded: &[usize], x: &[f64]) -> Vec<usize> {
    let keep = retained_mask(program, discarded);
    program
        .sample_values(x)
        .into_iter()
        .enumerate()
        .filter(|&(i, g)| keep[i] && g.abs() <= ACTIVITY_TOL)
        .map(|(i, _)| i)
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Support set by removal: sample `i` is included iff re-solving without it
/// moves the optimizer by more than [`MOVEMENT_TOL`].
pub fn support_set(
    program: &LinearScenarioProgram,
    solution: &ScenarioSolution,
) -> Result<Vec<usize>, EngineError> {
    let keep = retained_mask(program, &solution.discarded_indices);
    let mut removed = solution.discarded_indices.clone();
    let mut support = Vec::new();
    for i in (0..program.sample_count()).filter(|&i| keep[i]) {
        removed.push(i);
        let x = optimizer(program, &removed)?;
        removed.pop();
        if max_abs_diff(&x, &solution.x_star) > MOVEMENT_TOL {
            support.push(i);
        }
    }
    Ok(support)
}

/// Support set from KKT multipliers, available when exactly `d` rows
/// (sample rows and box faces) are active with independent gradients and
/// every multiplier is strictly positive. Returns `None` otherwise.
pub fn support_set_fast(
    program: &LinearScenarioProgram,
    solution: &ScenarioSolution,
) -> Option<Vec<usize>> {
    let d = program.dimension;
    let x = &solution.x_star;
    let keep = retained_mask(program, &solution.discarded_indices);
    // (gradient, owning sample or None for a box face)
    let mut active: Vec<(Vec<f64>, Option<usize>)> = Vec::new();
    for (r, row) in program.constraints.iter().enumerate() {
        let owner = program.owner(r);
        if keep[owner] && row.value(x).abs() <= ACTIVITY_TOL {
            active.push((row.a.clone(), Some(owner)));
        }
    }
    for (j, [lo, hi]) in program.domain_box.iter().enumerate() {
        let mut e = vec![0.0; d];
        if (x[j] - hi).abs() <= ACTIVITY_TOL {
            e[j] = 1.0;
            active.push((e.clone(), None));
        }
        if (x[j] - lo).abs() <= ACTIVITY_TOL {
            e[j] = -1.0;
            active.push((e, None));
        }
    }
    if active.len() != d {
        return None;
    }
    // c + sum_k lambda_k grad_k = 0
    let g = nalgebra::DMatrix::from_fn(d, d, |j, k| active[k].0[j]);
    let rhs = nalgebra::DVector::from_fn(d, |j, _| -program.cost[j]);
    let lu = g.lu();
    if lu.determinant().abs() < 1e-12 {
        return None;
    }
    let lambda = lu.solve(&rhs)?;
    let scale = 1.0 + program.cost.iter().map(|c| c.abs()).fold(0.0, f64::max);
    if lambda.iter().any(|&l| l <= 1e-9 * scale) {
        return None;
    }
    let mut support: Vec<usize> = active.iter().filter_map(|(_, o)| *o).collect();
    support.sort_unstable();
    support.dedup();
    Some(support)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub removed: Vec<usize>,
    /// Objective of the program solved at this stage, before removal.
    pub objective: f64,
    /// Every sample removed here is violated by all later interim solutions
    /// and by the final one.
    pub violated_later: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub solution: ScenarioSolution,
    pub stages: Vec<CascadeStage>,
    /// Some stage had a support set of size other than `d`.
    pub degenerate: bool,
}

impl CascadeOutcome {
    /// All removed samples violate every subsequent solution.
    pub fn tight(&self) -> bool {
        self.stages.iter().all(|s| s.violated_later)
    }
}

/// Remove `r` samples in `r / d` stages, discarding the current support set
/// at each stage.
pub fn cascade_discard(
    program: &LinearScenarioProgram,
    r: usize,
) -> Result<CascadeOutcome, EngineError> {
    let d = program.dimension;
    let m = program.sample_count();
    if !r.is_multiple_of(d) {
        return Err(EngineError::DiscardNotMultiple { r, d });
    }
    if r + d > m {
        return Err(EngineError::TooManyDiscarded { r, m, d });
    }
    let mut discarded = Vec::new();
    let mut stages = Vec::new();
    let mut interim = Vec::new();
    let mut degenerate = false;
    let mut current = solve_discarding(program, &discarded)?;
    while discarded.len() < r {
        let support = current.support_indices.clone();
        degenerate |= current.degenerate || support.len() != d;
        if support.is_empty() {
            break;
        }
        stages.push(CascadeStage {
            removed: support.clone(),
            objective: current.objective,
            violated_later: true,
        });
        discarded.extend(support);
        current = solve_discarding(program, &discarded)?;
        interim.push(current.x_star.clone());
    }
    for (s, stage) in stages.iter_mut().enumerate() {
        stage.violated_later = interim[s..].iter().all(|x| {
            stage
                .removed
                .iter()
                .all(|&i| program.sample_value(i, x) > FEASIBILITY_TOL)
        });
    }
    Ok(CascadeOutcome {
        solution: current,
        stages,
        degenerate,
    })
}
