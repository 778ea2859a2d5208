use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::conformal::ScoreVector;

/// Solution of `min R_bar s.t. R_i <= R_bar` over the scores left after
/// discarding the current maximum `r` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderProgramResult {
    pub r_p: f64,
    /// `p = m - r`, the 1-based rank of `r_p` among the sorted scores.
    pub p_index: usize,
    /// The removed scores, in removal order (strictly decreasing for
    /// distinct scores).
    pub discarded_scores: Vec<f64>,
    /// Original sample indices of the removed scores.
    pub discarded_indices: Vec<usize>,
}

/// One-dimensional order program with highest-first discarding.
///
/// Each stage's support set is the current maximum, so the cascade walks the
/// sorted view from the top. Ties are resolved by original index (the later
/// index counts as larger).
pub fn solve_order_program(scores: &ScoreVector, r: usize) -> Result<OrderProgramResult, EngineError> {
    let m = scores.len();
    if r >= m {
        return Err(EngineError::OrderDiscardAll { r, m });
    }
    let order = scores.sorted_indices();
    let mut remaining = m;
    let mut discarded_scores = Vec::with_capacity(r);
    let mut discarded_indices = Vec::with_capacity(r);
    for _ in 0..r {
        remaining -= 1;
        let top = order[remaining];
        discarded_indices.push(top);
        discarded_scores.push(scores.raw()[top]);
    }
    Ok(OrderProgramResult {
        r_p: scores.raw()[order[remaining - 1]],
        p_index: remaining,
        discarded_scores,
        discarded_indices,
    })
}
