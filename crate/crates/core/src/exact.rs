//! Exact rational evaluation of the binomial sums, for decimal inputs.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};

/// Parses a plain or scientific decimal literal (`0.05`, `1e-3`, `5`)
/// into the rational it denotes.
pub fn parse_decimal(text: &str) -> Option<BigRational> {
    let text = text.trim();
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: BigInt = format!("{int_part}{frac_part}0").parse::<BigInt>().ok()? / 10;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        BigRational::from_integer(all * Pow::pow(&ten, scale as u32))
    } else {
        BigRational::new(all, Pow::pow(&ten, (-scale) as u32))
    };
    if negative {
        value = -value;
    }
    Some(value)
}

fn binomial(m: u64, i: u64) -> BigInt {
    (0..i).fold(BigInt::one(), |acc, j| acc * BigInt::from(m - j) / BigInt::from(j + 1))
}

/// `sum_{i=0}^{k} C(m,i) eps^i (1-eps)^(m-i)`.
pub fn binomial_head_exact(m: u64, k: u64, eps: &BigRational) -> BigRational {
    let q = BigRational::one() - eps;
    (0..=k.min(m)).fold(BigRational::zero(), |acc, i| {
        acc + BigRational::from_integer(binomial(m, i)) * Pow::pow(eps, i as u32) * Pow::pow(&q, (m - i) as u32)
    })
}

/// `1 - binomial_head_exact(m, k, eps)`.
pub fn binomial_tail_exact(m: u64, k: u64, eps: &BigRational) -> BigRational {
    BigRational::one() - binomial_head_exact(m, k, eps)
}
