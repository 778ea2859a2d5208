//! Closed-form probability expressions for scenario programs with discarded
//! samples: binomial tails, integer-shape Beta laws, expectation bounds and
//! sample-size calculators.
//!
//! Every function here is pure. Binomial sums are evaluated from the mode
//! outwards with term ratios and normalized by the computed total, so no
//! factorial is ever formed and the cost stays linear in `m`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values this close to an integer are treated as that integer before a ceiling.
pub const CEIL_GUARD: f64 = 1e-12;

/// Floating-point residue outside `[0, 1]` up to this magnitude is clamped away.
const RESIDUE: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("{name} = {value} must lie strictly inside (0, 1)")]
    OpenUnit { name: &'static str, value: f64 },
    #[error("x = {0} must lie in [0, 1]")]
    ClosedUnit(f64),
    #[error("k = {k} exceeds m = {m}")]
    CountExceeds { k: u64, m: u64 },
    #[error("Beta shapes must be integers >= 1 (got a = {a}, b = {b})")]
    Shape { a: u64, b: u64 },
    #[error("invalid bound parameters: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, BoundsError>;

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (-RESIDUE..=1.0 + RESIDUE).contains(&value) {
            Ok(Self(value.clamp(0.0, 1.0)))
        } else {
            Err(BoundsError::ClosedUnit(value))
        }
    }

    pub(crate) fn clamped(value: f64) -> Self {
        debug_assert!(
            (-RESIDUE..=1.0 + RESIDUE).contains(&value),
            "probability residue too large: {value}"
        );
        Self(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// A non-negative rational `num / den`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The `(m, d, r, epsilon, delta)` tuple shared by every bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub m: u64,
    pub d: u64,
    pub r: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl BoundSpec {
    pub fn new(m: u64, d: u64, r: u64) -> Result<Self> {
        let spec = Self {
            m,
            d,
            r,
            epsilon: None,
            delta: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        open_unit("epsilon", epsilon)?;
        self.epsilon = Some(epsilon);
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        open_unit("delta", delta)?;
        self.delta = Some(delta);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 {
            return Err(BoundsError::Spec(format!(
                "m and d must be positive (m = {}, d = {})",
                self.m, self.d
            )));
        }
        if self.d > self.m || self.r > self.m - self.d {
            return Err(BoundsError::Spec(format!(
                "need r <= m - d (m = {}, d = {}, r = {})",
                self.m, self.d, self.r
            )));
        }
        if let Some(e) = self.epsilon {
            open_unit("epsilon", e)?;
        }
        if let Some(d) = self.delta {
            open_unit("delta", d)?;
        }
        Ok(())
    }

    fn epsilon_or_err(&self) -> Result<f64> {
        self.epsilon
            .ok_or_else(|| BoundsError::Spec("epsilon is required".into()))
    }

    /// Shapes `(r + d, m + 1 - r - d)` of the Beta law followed by the
    /// violation probability under cascade discarding.
    pub fn beta_shapes(&self) -> (u64, u64) {
        (self.r + self.d, self.m + 1 - self.r - self.d)
    }
}

pub(crate) fn open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(BoundsError::OpenUnit { name, value })
    }
}

pub(crate) fn ceil_guarded(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= CEIL_GUARD * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// Unnormalized binomial weights, scaled so the mode term is 1.
/// Terms that underflow are left at zero.
fn binomial_weights(m: u64, eps: f64) -> Vec<f64> {
    let n = m as usize;
    let mut w = vec![0.0; n + 1];
    let mode = (((m + 1) as f64) * eps).floor().min(m as f64) as usize;
    let odds = eps / (1.0 - eps);
    w[mode] = 1.0;
    let mut t = 1.0;
    for i in mode..n {
        t *= (m - i as u64) as f64 / (i + 1) as f64 * odds;
        if t == 0.0 {
            break;
        }
        w[i + 1] = t;
    }
    t = 1.0;
    for i in (1..=mode).rev() {
        t *= i as f64 / (m - i as u64 + 1) as f64 / odds;
        if t == 0.0 {
            break;
        }
        w[i - 1] = t;
    }
    w
}

/// Splits the binomial(m, eps) mass into `(P{X <= k}, P{X > k})`.
fn binomial_split(m: u64, k: u64, eps: f64) -> (f64, f64) {
    let w = binomial_weights(m, eps);
    let k = k as usize;
    let head: f64 = w[..=k].iter().sum();
    let tail: f64 = w[k + 1..].iter().sum();
    let total = head + tail;
    (head / total, tail / total)
}

fn check_binomial(m: u64, k: u64, eps: f64) -> Result<()> {
    open_unit("eps", eps)?;
    if k > m {
        return Err(BoundsError::CountExceeds { k, m });
    }
    Ok(())
}

/// `1 - sum_{i=0}^{k} C(m,i) eps^i (1-eps)^(m-i)`, i.e. `P{Bin(m, eps) > k}`.
pub fn binomial_tail(m: u64, k: u64, eps: f64) -> Result<Probability> {
    check_binomial(m, k, eps)?;
    if k == m {
        return Ok(Probability(0.0));
    }
    Ok(Probability::clamped(binomial_split(m, k, eps).1))
}

/// `sum_{i=0}^{k} C(m,i) eps^i (1-eps)^(m-i)`, summed directly rather than as
/// the complement of [`binomial_tail`].
pub fn binomial_head(m: u64, k: u64, eps: f64) -> Result<Probability> {
    check_binomial(m, k, eps)?;
    if k == m {
        return Ok(Probability(1.0));
    }
    Ok(Probability::clamped(binomial_split(m, k, eps).0))
}

/// `ln(n!)`, exact summation for small `n` and a Stirling series beyond.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    if n < 256 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        let x = n as f64 + 1.0;
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        (x - 0.5) * x.ln() - x
            + 0.5 * (2.0 * std::f64::consts::PI).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
    }
}

/// `ln(1 / B(a, b))` for integer shapes.
fn ln_inv_beta(a: u64, b: u64) -> f64 {
    ln_factorial(a + b - 1) - ln_factorial(a - 1) - ln_factorial(b - 1)
}

fn check_beta(a: u64, b: u64, x: f64) -> Result<()> {
    if a == 0 || b == 0 {
        return Err(BoundsError::Shape { a, b });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(BoundsError::ClosedUnit(x));
    }
    Ok(())
}

/// Density of Beta(a, b) at `x`, integer shapes only.
pub fn beta_pdf(a: u64, b: u64, x: f64) -> Result<f64> {
    check_beta(a, b, x)?;
    if (x == 0.0 && a > 1) || (x == 1.0 && b > 1) {
        return Ok(0.0);
    }
    let mut ln = ln_inv_beta(a, b);
    if a > 1 {
        ln += (a - 1) as f64 * x.ln();
    }
    if b > 1 {
        ln += (b - 1) as f64 * (-x).ln_1p();
    }
    Ok(ln.exp())
}

/// Regularized incomplete beta function `I_x(a, b)` for integer shapes.
///
/// Evaluated with the modified Lentz continued fraction, independently of the
/// binomial sums; `I_x(a, b) = binomial_tail(a + b - 1, a - 1, x)` is the
/// identity the two routes are tested against.
pub fn beta_cdf(a: u64, b: u64, x: f64) -> Result<Probability> {
    check_beta(a, b, x)?;
    if x == 0.0 {
        return Ok(Probability(0.0));
    }
    if x == 1.0 {
        return Ok(Probability(1.0));
    }
    let (af, bf) = (a as f64, b as f64);
    let front = |a: u64, b: u64, x: f64| {
        (ln_inv_beta(a, b) + a as f64 * x.ln() + b as f64 * (-x).ln_1p()).exp() / a as f64
    };
    let value = if x < (af + 1.0) / (af + bf + 2.0) {
        front(a, b, x) * beta_continued_fraction(af, bf, x)
    } else {
        1.0 - front(b, a, 1.0 - x) * beta_continued_fraction(bf, af, 1.0 - x)
    };
    Ok(Probability::clamped(value))
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 100_000;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let m = i as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// `(r + d) / (m + 1)` as an exact fraction.
pub fn expected_violation_fraction(spec: &BoundSpec) -> Fraction {
    Fraction::new(spec.r + spec.d, spec.m + 1)
}

/// Upper bound `(r + d) / (m + 1)` on the expected violation probability.
pub fn expected_violation_bound(spec: &BoundSpec) -> Probability {
    Probability::clamped(expected_violation_fraction(spec).value())
}

/// Lower bound `1 - sum_{i=0}^{r+d-1} C(m,i) eps^i (1-eps)^(m-i)` on
/// `P{V <= eps}` for cascade discarding. Holds with equality for the order
/// program and for interval covering.
pub fn violation_cdf_bound(spec: &BoundSpec) -> Result<Probability> {
    let eps = spec.epsilon_or_err()?;
    binomial_tail(spec.m, spec.r + spec.d - 1, eps)
}

/// Which quantity [`generic_discarding_bound`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenericVariant {
    /// `1 - C(r+d-1, r) * sum_{i=0}^{r+d-1} ...`, clamped to `[0, 1]`.
    Cdf,
    /// `C(r+d-1, r) * (r + d) / (m + 1)`, unclamped.
    Expectation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericBound {
    pub value: f64,
    /// The bound carries no information (an expectation above 1, or a CDF
    /// lower bound clamped at 0).
    pub vacuous: bool,
}

/// `C(n, k)` as a float, by the multiplicative formula.
pub fn binomial_coefficient(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bounds for discarding mechanisms other than the support-set cascade.
pub fn generic_discarding_bound(spec: &BoundSpec, variant: GenericVariant) -> Result<GenericBound> {
    let factor = binomial_coefficient(spec.r + spec.d - 1, spec.r);
    match variant {
        GenericVariant::Cdf => {
            let eps = spec.epsilon_or_err()?;
            let head = binomial_head(spec.m, spec.r + spec.d - 1, eps)?.value();
            let raw = 1.0 - factor * head;
            Ok(GenericBound {
                value: raw.clamp(0.0, 1.0),
                vacuous: raw <= 0.0,
            })
        }
        GenericVariant::Expectation => {
            let value = factor * expected_violation_fraction(spec).value();
            Ok(GenericBound {
                value,
                vacuous: value > 1.0,
            })
        }
    }
}

/// Rank `p = ceil((1 - delta)(m + 1))` of the empirical quantile over
/// `R_1, ..., R_m, +inf`, together with the implied discard count `r = m - p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileIndex {
    pub m: u64,
    pub p: u64,
}

impl QuantileIndex {
    /// `None` when `p = m + 1`: the quantile is the appended infinity.
    pub fn r(&self) -> Option<u64> {
        self.m.checked_sub(self.p)
    }

    pub fn is_appended_infinity(&self) -> bool {
        self.p > self.m
    }

    /// `floor(delta (m + 1)) / (m + 1)`, the exact miscoverage of the quantile.
    pub fn miscoverage(&self) -> Fraction {
        Fraction::new(self.m + 1 - self.p, self.m + 1)
    }
}

pub fn quantile_index(m: u64, delta: f64) -> Result<QuantileIndex> {
    if m == 0 {
        return Err(BoundsError::Spec("m must be positive".into()));
    }
    open_unit("delta", delta)?;
    let p = ceil_guarded((1.0 - delta) * (m + 1) as f64) as u64;
    Ok(QuantileIndex {
        m,
        p: p.clamp(1, m + 1),
    })
}

/// [`quantile_index`] for `delta = num / den`, in integer arithmetic.
pub fn quantile_index_exact(m: u64, num: u64, den: u64) -> Result<QuantileIndex> {
    if m == 0 {
        return Err(BoundsError::Spec("m must be positive".into()));
    }
    if num == 0 || num >= den {
        return Err(BoundsError::OpenUnit {
            name: "delta",
            value: num as f64 / den.max(1) as f64,
        });
    }
    let top = (den - num) as u128 * (m + 1) as u128;
    let p = top.div_ceil(den as u128) as u64;
    Ok(QuantileIndex { m, p })
}

/// Smallest `m` with `(r + 1) / (m + 1) <= delta`.
pub fn sample_size_vanilla(r: u64, delta: f64) -> Result<u64> {
    open_unit("delta", delta)?;
    let holds = |m: u64| (r + 1) as f64 / (m + 1) as f64 <= delta;
    let mut m = ceil_guarded((r + 1) as f64 / delta - 1.0).max(0.0) as u64;
    while !holds(m) {
        m += 1;
    }
    while m > 0 && holds(m - 1) {
        m -= 1;
    }
    Ok(m)
}

/// `ceil((2 / eps)(r + ln(1 / delta)))`: sufficient, not necessary, for the
/// calibration-conditional guarantee at level `(eps, delta)`.
pub fn sample_size_ccc(r: u64, eps: f64, delta: f64) -> Result<u64> {
    open_unit("eps", eps)?;
    open_unit("delta", delta)?;
    let raw = 2.0 / eps * (r as f64 + (1.0 / delta).ln());
    Ok((ceil_guarded(raw) as u64).max(1))
}

/// Failure probability of the calibration-conditional quantile at level
/// `1 - eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccDelta {
    pub r: u64,
    pub delta: Probability,
}

/// `delta = sum_{i=0}^{r} C(m,i) eps^i (1-eps)^(m-i)` with
/// `r = m - ceil((1 - eps)(m + 1))`.
pub fn ccc_delta(m: u64, eps: f64) -> Result<CccDelta> {
    let index = quantile_index(m, eps)?;
    let r = index.r().ok_or_else(|| {
        BoundsError::Spec(format!(
            "eps = {eps} < 1/(m+1) puts the quantile at the appended infinity; no discard count exists"
        ))
    })?;
    Ok(CccDelta {
        r,
        delta: binomial_head(m, r, eps)?,
    })
}

/// Outcome of the concentration-corrected discard count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrectedDiscard {
    Discard { level: f64, p: u64, r: u64 },
    /// `p = m + 1`: the corrected quantile is the appended infinity.
    AppendedInfinity { level: f64 },
    /// `p > m + 1`: no valid discard count exists.
    Infeasible { level: f64 },
}

/// `r = m - ceil((1 - eps + sqrt(ln(1/delta) / (2m)))(m + 1))`.
pub fn corrected_discard_count(m: u64, eps: f64, delta: f64) -> Result<CorrectedDiscard> {
    if m == 0 {
        return Err(BoundsError::Spec("m must be positive".into()));
    }
    open_unit("eps", eps)?;
    open_unit("delta", delta)?;
    let level = 1.0 - eps + ((1.0 / delta).ln() / (2.0 * m as f64)).sqrt();
    let p = ceil_guarded(level * (m + 1) as f64) as u64;
    Ok(if p <= m {
        CorrectedDiscard::Discard {
            level,
            p,
            r: m - p,
        }
    } else if p == m + 1 {
        CorrectedDiscard::AppendedInfinity { level }
    } else {
        CorrectedDiscard::Infeasible { level }
    })
}
