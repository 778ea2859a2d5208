//! Built-in sample families and their violation oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalLaw};

use super::{AffineRow, EngineError, LinearScenarioProgram, ScenarioSolution};

/// A sample `omega`: a scalar score for the order and interval families, a
/// constraint normal for random LPs.
pub type Sample = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreDistribution {
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, std_dev: f64 },
    Exponential { rate: f64 },
}

impl Default for ScoreDistribution {
    fn default() -> Self {
        Self::Uniform { low: 0.0, high: 1.0 }
    }
}

impl ScoreDistribution {
    pub fn validate(&self) -> Result<(), EngineError> {
        let ok = match *self {
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Self::Gaussian { mean, std_dev } => mean.is_finite() && std_dev > 0.0 && std_dev.is_finite(),
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(EngineError::Schema(format!("invalid distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::Gaussian { mean, std_dev } => mean + std_dev * rng.sample::<f64, _>(StandardNormal),
            Self::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            Self::Gaussian { mean, std_dev } => NormalLaw::new(mean, std_dev).expect("validated").cdf(x),
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
        }
    }

    /// Interval holding every draw with overwhelming probability.
    fn envelope(&self) -> [f64; 2] {
        match *self {
            Self::Uniform { low, high } => {
                let w = high - low;
                [low - w, high + w]
            }
            Self::Gaussian { mean, std_dev } => [mean - 40.0 * std_dev, mean + 40.0 * std_dev],
            Self::Exponential { rate } => [-1.0 / rate, 80.0 / rate],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `min x s.t. omega_i <= x`: the order program, `g(x, omega) = omega - x`.
    Order {
        #[serde(default)]
        dist: ScoreDistribution,
    },
    /// Smallest interval `[c - rho, c + rho]` covering the points,
    /// `g((c, rho), omega) = |omega - c| - rho`.
    IntervalCover {
        #[serde(default)]
        dist: ScoreDistribution,
    },
    /// `min x_1 s.t. a_i . x <= 1`, `a_i ~ N(0, I_d)`, box `[-100, 100]^d`.
    /// Empirically fully supported; no closed-form violation probability.
    RandomLp { dimension: usize },
}

impl Family {
    pub fn validate(&self) -> Result<(), EngineError> {
        match self {
            Family::Order { dist } | Family::IntervalCover { dist } => dist.validate(),
            Family::RandomLp { dimension } if *dimension == 0 => {
                Err(EngineError::Schema("random_lp dimension must be positive".into()))
            }
            Family::RandomLp { .. } => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Family::Order { .. } => "order",
            Family::IntervalCover { .. } => "interval_cover",
            Family::RandomLp { .. } => "random_lp",
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Family::Order { .. } => 1,
            Family::IntervalCover { .. } => 2,
            Family::RandomLp { dimension } => *dimension,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, Family::RandomLp { .. })
    }

    /// Scalar score distribution, for the families built on one.
    pub fn score_distribution(&self) -> Option<ScoreDistribution> {
        match self {
            Family::Order { dist } | Family::IntervalCover { dist } => Some(*dist),
            Family::RandomLp { .. } => None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        match self {
            Family::Order { dist } | Family::IntervalCover { dist } => vec![dist.sample(rng)],
            Family::RandomLp { dimension } => (0..*dimension)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    pub fn draw_many<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<Sample> {
        (0..m).map(|_| self.draw(rng)).collect()
    }

    pub fn rows(&self, omega: &[f64]) -> Vec<AffineRow> {
        match self {
            Family::Order { .. } => vec![AffineRow::new(vec![-1.0], -omega[0])],
            Family::IntervalCover { .. } => vec![
                AffineRow::new(vec![1.0, -1.0], omega[0]),
                AffineRow::new(vec![-1.0, -1.0], -omega[0]),
            ],
            Family::RandomLp { .. } => vec![AffineRow::new(omega.to_vec(), 1.0)],
        }
    }

    /// `g(x, omega)`.
    pub fn constraint_value(&self, x: &[f64], omega: &[f64]) -> f64 {
        self.rows(omega)
            .iter()
            .map(|row| row.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn program(&self, samples: &[Sample]) -> LinearScenarioProgram {
        let d = self.dimension();
        let (cost, domain_box) = match self {
            Family::Order { dist } => (vec![1.0], vec![dist.envelope()]),
            Family::IntervalCover { dist } => {
                let env = dist.envelope();
                (vec![0.0, 1.0], vec![env, [0.0, env[1] - env[0]]])
            }
            Family::RandomLp { .. } => {
                let mut cost = vec![0.0; d];
                cost[0] = 1.0;
                (cost, vec![[-100.0, 100.0]; d])
            }
        };
        let groups = samples.iter().map(|w| self.rows(w)).collect();
        LinearScenarioProgram::grouped(cost, groups, domain_box).expect("family programs are well formed")
    }

    /// Exact `V(x) = P{g(x, omega) > 0}` where a closed form exists.
    pub fn analytic_violation(&self, x: &[f64]) -> Result<f64, EngineError> {
        match self {
            Family::Order { dist } => Ok(1.0 - dist.cdf(x[0])),
            Family::IntervalCover { dist } => {
                let (c, rho) = (x[0], x[1]);
                Ok((1.0 - (dist.cdf(c + rho) - dist.cdf(c - rho))).clamp(0.0, 1.0))
            }
            Family::RandomLp { .. } => Err(EngineError::NoClosedForm(self.label().into())),
        }
    }

    pub fn generate(&self, m: usize, seed: u64) -> GeneratedInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = self.draw_many(m, &mut rng);
        GeneratedInstance {
            family: *self,
            program: self.program(&samples),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    /// Doubles as the violation oracle descriptor.
    pub family: Family,
    pub samples: Vec<Sample>,
    pub program: LinearScenarioProgram,
}

pub fn gen_order_problem(dist: ScoreDistribution, m: usize, seed: u64) -> GeneratedInstance {
    Family::Order { dist }.generate(m, seed)
}

pub fn gen_interval_cover(dist: ScoreDistribution, m: usize, seed: u64) -> GeneratedInstance {
    Family::IntervalCover { dist }.generate(m, seed)
}

pub fn gen_random_lp(d: usize, m: usize, seed: u64) -> GeneratedInstance {
    Family::RandomLp { dimension: d }.generate(m, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationMode {
    Analytic,
    MonteCarlo { n_test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    pub value: f64,
    /// Zero in analytic mode; `sqrt(V (1 - V) / n_test)` otherwise.
    pub std_error: f64,
}

/// `V(S)` for a solution of a program drawn from `family`.
pub fn violation_probability<R: Rng + ?Sized>(
    solution: &ScenarioSolution,
    family: &Family,
    mode: ViolationMode,
    rng: &mut R,
) -> Result<ViolationEstimate, EngineError> {
    violation_at(&solution.x_star, family, mode, rng)
}

pub(crate) fn violation_at<R: Rng + ?Sized>(
    x: &[f64],
    family: &Family,
    mode: ViolationMode,
    rng: &mut R,
) -> Result<ViolationEstimate, EngineError> {
    match mode {
        ViolationMode::Analytic => Ok(ViolationEstimate {
            value: family.analytic_violation(x)?,
            std_error: 0.0,
        }),
        ViolationMode::MonteCarlo { n_test } => {
            let n = n_test.max(1);
            let hits = (0..n)
                .filter(|_| family.constraint_value(x, &family.draw(rng)) > 0.0)
                .count();
            let v = hits as f64 / n as f64;
            Ok(ViolationEstimate {
                value: v,
                std_error: (v * (1.0 - v) / n as f64).sqrt(),
            })
        }
    }
}

impl From<ViolationEstimate> for f64 {
    fn from(v: ViolationEstimate) -> f64 {
        v.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{solve, support_set};

    #[test]
    fn generators_are_deterministic() {
        let a = gen_order_problem(ScoreDistribution::default(), 5, 7);
        let b = gen_order_problem(ScoreDistribution::default(), 5, 7);
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 5);
        assert_ne!(a, gen_order_problem(ScoreDistribution::default(), 5, 8));
    }

    #[test]
    fn analytic_violation_examples() {
        let order = Family::Order { dist: ScoreDistribution::default() };
        assert!((order.analytic_violation(&[0.9]).unwrap() - 0.1).abs() < 1e-15);
        let cover = Family::IntervalCover { dist: ScoreDistribution::default() };
        assert!((cover.analytic_violation(&[0.5, 0.3]).unwrap() - 0.4).abs() < 1e-15);
        let lp = Family::RandomLp { dimension: 3 };
        assert!(matches!(lp.analytic_violation(&[0.0; 3]), Err(EngineError::NoClosedForm(_))));
    }

    #[test]
    fn interval_cover_gaussian_support_audit() {
        let fam = Family::IntervalCover {
            dist: ScoreDistribution::Gaussian { mean: 0.0, std_dev: 1.0 },
        };
        for seed in 0..1000 {
            let inst = fam.generate(10, seed);
            let sol = solve(&inst.program).unwrap();
            assert_eq!(support_set(&inst.program, &sol).unwrap().len(), 2, "seed {seed}");
        }
    }

    #[test]
    fn random_lp_monte_carlo_resolutions_agree() {
        let inst = gen_random_lp(3, 50, 5);
        let sol = solve(&inst.program).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coarse = violation_probability(&sol, &inst.family, ViolationMode::MonteCarlo { n_test: 100_000 }, &mut rng).unwrap();
        let fine = violation_probability(&sol, &inst.family, ViolationMode::MonteCarlo { n_test: 1_000_000 }, &mut rng).unwrap();
        let se = (coarse.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
        assert!((coarse.value - fine.value).abs() <= 3.0 * se, "{coarse:?} {fine:?}");
        // a.x ~ N(0, |x|^2) for Gaussian a, so V = 1 - Phi(1 / |x|).
        let norm = sol.x_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        let exact = 1.0 - NormalLaw::new(0.0, 1.0).unwrap().cdf(1.0 / norm);
        assert!((fine.value - exact).abs() <= 3.0 * fine.std_error.max(1e-4), "{fine:?} vs {exact}");
    }
}
