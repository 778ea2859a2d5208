use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Experiment, Exclusion, Mismatch, TrialConfig, TrialRecord};
use crate::bounds::{self, BoundSpec, CorrectedDiscard, Fraction, QuantileIndex};
use crate::conformal::{
    ccc_quantile, conformal_quantile, feasibility_set_contains, predictor_contains, CccQuantile, ConformalError,
    QuantileValue, ScenarioMeasure, ScoreVector, Significance,
};
use crate::engine::{
    self, cascade_discard, solve_order_program, violation_probability, EngineError, Family, Sample, ScenarioSolution,
    ViolationMode,
};

/// Exact quantities shared by every trial of a run.
pub(super) struct Context<'a> {
    config: &'a TrialConfig,
}

impl<'a> Context<'a> {
    pub(super) fn new(config: &'a TrialConfig) -> Self {
        Self { config }
    }

    fn m(&self) -> u64 {
        self.config.m as u64
    }

    fn d(&self) -> u64 {
        self.config.dimension() as u64
    }

    pub(super) fn vanilla_index(&self) -> QuantileIndex {
        bounds::quantile_index(self.m(), self.config.delta.expect("validated")).expect("validated")
    }

    fn spec(&self) -> BoundSpec {
        BoundSpec::new(self.m(), self.d(), self.config.r_or_zero() as u64).expect("validated")
    }

    /// `P{V <= eps}` for cascade discarding.
    pub(super) fn cdf_exact(&self, eps: f64) -> f64 {
        let spec = self.spec().with_epsilon(eps).expect("validated");
        bounds::violation_cdf_bound(&spec).expect("validated").value()
    }

    pub(super) fn mean_exact(&self) -> f64 {
        bounds::expected_violation_fraction(&self.spec()).value()
    }

    /// The mean identity is an equality for the cascade families and for
    /// any fully supported family without discarding.
    pub(super) fn mean_is_equality(&self) -> bool {
        self.cascade_is_tight_family() || self.config.r_or_zero() == 0
    }

    pub(super) fn cascade_is_tight_family(&self) -> bool {
        matches!(self.config.family, Family::Order { .. } | Family::IntervalCover { .. })
    }

    /// Discard count of the ccc quantile; `None` for the appended infinity
    /// or an infeasible corrected level.
    pub(super) fn ccc_r(&self) -> Option<u64> {
        let eps = self.config.epsilon?;
        if self.config.corrected {
            match bounds::corrected_discard_count(self.m(), eps, self.config.delta?).ok()? {
                CorrectedDiscard::Discard { r, .. } => Some(r),
                _ => None,
            }
        } else {
            bounds::quantile_index(self.m(), eps).ok()?.r()
        }
    }

    pub(super) fn effective_r(&self) -> Option<u64> {
        match self.config.experiment {
            Experiment::VanillaCoverage => self.vanilla_index().r(),
            Experiment::CccCoverage => self.ccc_r(),
            Experiment::ViolationCdf | Experiment::ViolationMean => Some(self.config.r_or_zero() as u64),
            Experiment::SetEquivalence | Experiment::ScenarioMiscoverage => Some(0),
        }
    }

    fn violation_mode(&self) -> Option<ViolationMode> {
        if self.config.n_test > 0 {
            Some(ViolationMode::MonteCarlo {
                n_test: self.config.n_test,
            })
        } else if self.config.family.has_closed_form() {
            Some(ViolationMode::Analytic)
        } else {
            None
        }
    }

    /// `delta = d / (m + 1)` held exactly.
    fn scenario_delta(&self) -> Significance {
        Significance::Exact(Fraction {
            num: self.d(),
            den: self.m() + 1,
        })
    }
}

/// Outcome of comparing one fresh sample against both sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOutcome {
    /// The test sample repeats a calibration sample.
    Tie,
    Agree { inside: bool, boundary: bool },
    Mismatch { in_predictor: bool, in_feasibility_set: bool, boundary: bool },
}

/// Membership of `omega` in the conformal predictor built from `samples`
/// (scenario nonconformity, significance `delta`) and in the feasibility set
/// of `solution`, which must solve the program on `samples`.
pub fn membership_pair(
    family: &Family,
    samples: &[Sample],
    solution: &ScenarioSolution,
    omega: &Sample,
    delta: Significance,
) -> Result<PairOutcome, ConformalError> {
    if samples.iter().any(|s| s == omega) {
        return Ok(PairOutcome::Tie);
    }
    let in_predictor = predictor_contains(samples, omega, delta, &ScenarioMeasure::new(*family))?;
    let u = feasibility_set_contains(family, solution, omega);
    Ok(if in_predictor == u.inside {
        PairOutcome::Agree {
            inside: u.inside,
            boundary: u.boundary,
        }
    } else {
        PairOutcome::Mismatch {
            in_predictor,
            in_feasibility_set: u.inside,
            boundary: u.boundary,
        }
    })
}

pub(super) fn run_trial(config: &TrialConfig, index: usize, seed: u64) -> TrialRecord {
    let ctx = Context::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rec = TrialRecord::new(index, seed);
    match config.experiment {
        Experiment::VanillaCoverage => vanilla(&ctx, rec, &mut rng),
        Experiment::ViolationCdf => violation_cdf(&ctx, rec, &mut rng),
        Experiment::ViolationMean => violation_mean(&ctx, rec, &mut rng),
        Experiment::SetEquivalence => set_equivalence(&ctx, rec, &mut rng),
        Experiment::ScenarioMiscoverage => scenario_miscoverage(&ctx, rec, &mut rng),
        Experiment::CccCoverage => ccc(&ctx, rec, &mut rng),
    }
}

fn draw_scores(ctx: &Context, rng: &mut ChaCha8Rng) -> ScoreVector {
    let dist = ctx.config.family.score_distribution().expect("order family");
    let raw = (0..ctx.config.m).map(|_| dist.sample(rng)).collect();
    ScoreVector::new(raw).expect("distribution draws are finite")
}

/// `1 - F(r_p)`, zero at the appended infinity.
fn order_violation(ctx: &Context, r_p: QuantileValue) -> f64 {
    let dist = ctx.config.family.score_distribution().expect("order family");
    match r_p {
        QuantileValue::Finite(x) => (1.0 - dist.cdf(x)).clamp(0.0, 1.0),
        QuantileValue::Infinite => 0.0,
    }
}

fn vanilla(ctx: &Context, mut rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    let dist = ctx.config.family.score_distribution().expect("order family");
    let scores = draw_scores(ctx, rng);
    rec.tie_count = scores.tie_count();
    if rec.tie_count > 0 {
        return rec.excluded(Exclusion::Tie);
    }
    let q = conformal_quantile(&scores, Significance::Real(ctx.config.delta.expect("validated")))
        .expect("validated");
    if let Some(r) = q.r {
        let bridged = solve_order_program(&scores, r as usize).expect("r < m");
        rec.bridge_ok = Some(bridged.r_p == q.r_p.as_f64());
        if rec.bridge_ok == Some(false) {
            rec.flags.push("bridge_mismatch");
        }
    } else {
        rec.flags.push("appended_infinity");
    }
    let test = dist.sample(rng);
    rec.r_p = Some(q.r_p.as_f64());
    rec.miscovered = Some(!q.r_p.covers(test));
    rec.v = Some(order_violation(ctx, q.r_p));
    rec
}

fn violation_cdf(ctx: &Context, rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    match ctx.config.family {
        Family::Order { .. } => {
            let mut rec = rec;
            let scores = draw_scores(ctx, rng);
            rec.tie_count = scores.tie_count();
            if rec.tie_count > 0 {
                return rec.excluded(Exclusion::Tie);
            }
            let out = solve_order_program(&scores, ctx.config.r_or_zero()).expect("validated");
            rec.r_p = Some(out.r_p);
            rec.v = Some(order_violation(ctx, QuantileValue::Finite(out.r_p)));
            rec
        }
        _ => cascade_trial(ctx, rec, rng),
    }
}

fn violation_mean(ctx: &Context, rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    cascade_trial(ctx, rec, rng)
}

fn count_tied_samples(samples: &[Sample]) -> usize {
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.windows(2).filter(|w| w[0] == w[1]).count()
}

fn cascade_trial(ctx: &Context, mut rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    let family = ctx.config.family;
    let samples = family.draw_many(ctx.config.m, rng);
    rec.tie_count = count_tied_samples(&samples);
    if rec.tie_count > 0 {
        return rec.excluded(Exclusion::Tie);
    }
    let outcome = match cascade_discard(&family.program(&samples), ctx.config.r_or_zero()) {
        Ok(o) => o,
        Err(EngineError::InfeasibleProgram) => return rec.excluded(Exclusion::InfeasibleProgram),
        Err(_) => return rec.excluded(Exclusion::Degenerate),
    };
    if outcome.degenerate || outcome.solution.degenerate {
        return rec.excluded(Exclusion::Degenerate);
    }
    rec.tight = Some(outcome.tight());
    if !outcome.tight() {
        rec.flags.push("not_tight");
    }
    if family.dimension() == 1 {
        rec.r_p = Some(outcome.solution.x_star[0]);
    }
    let mode = ctx.violation_mode().expect("validated");
    rec.v = violation_probability(&outcome.solution, &family, mode, rng)
        .ok()
        .map(|v| v.value);
    rec
}

/// Draws `S`, solves it and applies the common exclusions.
fn solved_scenario(
    ctx: &Context,
    rec: TrialRecord,
    rng: &mut ChaCha8Rng,
) -> Result<(TrialRecord, Vec<Sample>, ScenarioSolution), TrialRecord> {
    let family = ctx.config.family;
    let mut rec = rec;
    let samples = family.draw_many(ctx.config.m, rng);
    rec.tie_count = count_tied_samples(&samples);
    if rec.tie_count > 0 {
        return Err(rec.excluded(Exclusion::Tie));
    }
    let solution = match engine::solve(&family.program(&samples)) {
        Ok(s) => s,
        Err(EngineError::InfeasibleProgram) => return Err(rec.excluded(Exclusion::InfeasibleProgram)),
        Err(_) => return Err(rec.excluded(Exclusion::Degenerate)),
    };
    if solution.degenerate {
        return Err(rec.excluded(Exclusion::Degenerate));
    }
    if family.dimension() == 1 {
        rec.r_p = Some(solution.x_star[0]);
    }
    Ok((rec, samples, solution))
}

fn attach_violation(ctx: &Context, rec: &mut TrialRecord, solution: &ScenarioSolution, rng: &mut ChaCha8Rng) {
    if let Some(mode) = ctx.violation_mode() {
        rec.v = violation_probability(solution, &ctx.config.family, mode, rng)
            .ok()
            .map(|v| v.value);
    }
}

fn set_equivalence(ctx: &Context, rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    let (mut rec, samples, solution) = match solved_scenario(ctx, rec, rng) {
        Ok(t) => t,
        Err(rec) => return rec,
    };
    let family = ctx.config.family;
    let delta = ctx.scenario_delta();
    for k in 0..ctx.config.test_points {
        let omega = family.draw(rng);
        let outcome = match membership_pair(&family, &samples, &solution, &omega, delta) {
            Ok(o) => o,
            Err(_) => return rec.excluded(Exclusion::Degenerate),
        };
        match outcome {
            PairOutcome::Tie => {
                rec.tie_pairs += 1;
                continue;
            }
            PairOutcome::Agree { inside, boundary } => {
                rec.boundary_pairs += boundary as usize;
                rec.miscovered.get_or_insert(!inside);
            }
            PairOutcome::Mismatch {
                in_predictor,
                in_feasibility_set,
                boundary,
            } => {
                rec.boundary_pairs += boundary as usize;
                rec.miscovered.get_or_insert(!in_feasibility_set);
                rec.mismatches.push(Mismatch {
                    trial_index: rec.trial_index,
                    seed: rec.seed,
                    test_point: k,
                    samples: samples.clone(),
                    omega: omega.clone(),
                    x_star: solution.x_star.clone(),
                    in_predictor,
                    in_feasibility_set,
                    on_boundary: boundary,
                });
            }
        }
        rec.pairs += 1;
    }
    if rec.tie_pairs > 0 {
        rec.flags.push("tie");
    }
    if !rec.mismatches.is_empty() {
        rec.flags.push("mismatch");
    }
    attach_violation(ctx, &mut rec, &solution, rng);
    rec
}

fn scenario_miscoverage(ctx: &Context, rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    let (mut rec, samples, solution) = match solved_scenario(ctx, rec, rng) {
        Ok(t) => t,
        Err(rec) => return rec,
    };
    let family = ctx.config.family;
    let omega = family.draw(rng);
    match membership_pair(&family, &samples, &solution, &omega, ctx.scenario_delta()) {
        Ok(PairOutcome::Tie) => return rec.excluded(Exclusion::Tie),
        Ok(PairOutcome::Agree { inside, .. }) => {
            rec.miscovered = Some(!inside);
            rec.alt_miscovered = Some(!inside);
        }
        Ok(PairOutcome::Mismatch {
            in_predictor,
            in_feasibility_set,
            ..
        }) => {
            rec.miscovered = Some(!in_feasibility_set);
            rec.alt_miscovered = Some(!in_predictor);
            rec.flags.push("mismatch");
        }
        Err(_) => return rec.excluded(Exclusion::Degenerate),
    }
    attach_violation(ctx, &mut rec, &solution, rng);
    rec
}

fn ccc(ctx: &Context, mut rec: TrialRecord, rng: &mut ChaCha8Rng) -> TrialRecord {
    let scores = draw_scores(ctx, rng);
    rec.tie_count = scores.tie_count();
    if rec.tie_count > 0 {
        return rec.excluded(Exclusion::Tie);
    }
    let eps = ctx.config.epsilon.expect("validated");
    let corrected = ctx.config.corrected.then(|| ctx.config.delta.expect("validated"));
    match ccc_quantile(&scores, eps, corrected).expect("validated") {
        CccQuantile::Infeasible { .. } => rec.excluded(Exclusion::InfeasibleQuantile),
        CccQuantile::Quantile(q) => {
            if !q.r_p.is_finite() {
                rec.flags.push("appended_infinity");
            }
            let v = order_violation(ctx, q.r_p);
            rec.r_p = Some(q.r_p.as_f64());
            rec.v = Some(v);
            rec.miscovered = Some(v > eps);
            rec
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ScoreDistribution;

    #[test]
    fn injected_tie_is_flagged_not_compared() {
        let family = Family::IntervalCover {
            dist: ScoreDistribution::default(),
        };
        let samples: Vec<Sample> = vec![vec![0.2], vec![0.5], vec![0.9]];
        let solution = engine::solve(&family.program(&samples)).unwrap();
        let delta = Significance::Exact(Fraction { num: 2, den: 4 });
        let out = membership_pair(&family, &samples, &solution, &vec![0.5], delta).unwrap();
        assert_eq!(out, PairOutcome::Tie);
        let out = membership_pair(&family, &samples, &solution, &vec![0.95], delta).unwrap();
        assert_eq!(
            out,
            PairOutcome::Agree {
                inside: false,
                boundary: false
            }
        );
        let out = membership_pair(&family, &samples, &solution, &vec![0.6], delta).unwrap();
        assert!(matches!(out, PairOutcome::Agree { inside: true, .. }));
    }

    #[test]
    fn tied_samples_are_counted() {
        let s: Vec<Sample> = vec![vec![1.0], vec![0.5], vec![1.0], vec![0.5], vec![0.1]];
        assert_eq!(count_tied_samples(&s), 2);
        assert_eq!(count_tied_samples(&s[..2]), 0);
    }
}
