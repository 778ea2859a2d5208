//! Dense simplex for `min c.x  s.t.  G x <= h` where `G` stacks the sample
//! rows on top of the box faces.
//!
//! The solver runs the primal simplex on the dual
//! `min h.lambda  s.t.  G^T lambda = -c, lambda >= 0`, which has only `d`
//! equality rows. Box faces give a feasible starting basis, so no phase one
//! is needed. The leaving row is chosen by the lexicographic ratio test on
//! the right-hand side `[-c | -I]`; this both prevents cycling and makes the
//! primal point the lexicographic minimizer of `(c.x, x_1, ..., x_d)`, which
//! is the tie-break on a non-trivial optimal face.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-11;
const VIOLATION_TOL: f64 = 1e-11;
const LEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpFailure {
    Infeasible,
    Numerical,
}

pub(crate) struct LpProblem<'a> {
    pub cost: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
    pub rows: Vec<(&'a [f64], f64)>,
}

impl LpProblem<'_> {
    fn dim(&self) -> usize {
        self.cost.len()
    }

    fn total(&self) -> usize {
        self.rows.len() + 2 * self.dim()
    }

    fn gradient(&self, k: usize, j: usize) -> f64 {
        let n = self.rows.len();
        let d = self.dim();
        if k < n {
            self.rows[k].0[j]
        } else if k < n + d {
            if k - n == j {
                1.0
            } else {
                0.0
            }
        } else if k - n - d == j {
            -1.0
        } else {
            0.0
        }
    }

    fn rhs(&self, k: usize) -> f64 {
        let n = self.rows.len();
        let d = self.dim();
        if k < n {
            self.rows[k].1
        } else if k < n + d {
            self.upper[k - n]
        } else {
            -self.lower[k - n - d]
        }
    }

    fn slack(&self, k: usize, x: &[f64]) -> f64 {
        let n = self.rows.len();
        let d = self.dim();
        if k < n {
            self.rows[k].1 - super::program::dot(self.rows[k].0, x)
        } else if k < n + d {
            self.upper[k - n] - x[k - n]
        } else {
            x[k - n - d] - self.lower[k - n - d]
        }
    }

    /// Lexicographic minimizer of `(c.x, x_1, ..., x_d)`.
    pub fn solve(&self) -> Result<Vec<f64>, LpFailure> {
        let d = self.dim();
        let n = self.rows.len();
        let total = self.total();

        let mut rhs = DMatrix::<f64>::zeros(d, d + 1);
        for j in 0..d {
            rhs[(j, 0)] = -self.cost[j];
            rhs[(j, j + 1)] = -1.0;
        }
        let mut basis: Vec<usize> = (0..d)
            .map(|j| if self.cost[j] < 0.0 { n + j } else { n + d + j })
            .collect();
        let mut in_basis = vec![false; total];
        for &k in &basis {
            in_basis[k] = true;
        }

        let max_iter = 1000 + 50 * total;
        for _ in 0..max_iter {
            let b = DMatrix::from_fn(d, d, |j, i| self.gradient(basis[i], j));
            let binv = b.try_inverse().ok_or(LpFailure::Numerical)?;
            let h_b = DVector::from_fn(d, |i, _| self.rhs(basis[i]));
            let x: Vec<f64> = (binv.transpose() * h_b).iter().copied().collect();

            let mut entering = None;
            let mut worst = 0.0;
            for k in 0..total {
                if in_basis[k] {
                    continue;
                }
                let s = self.slack(k, &x);
                if s < -VIOLATION_TOL * (1.0 + self.rhs(k).abs()) && s < worst {
                    worst = s;
                    entering = Some(k);
                }
            }
            let Some(k) = entering else {
                return Ok(x);
            };

            let g_k = DVector::from_fn(d, |j, _| self.gradient(k, j));
            let col = &binv * g_k;
            let lam = &binv * &rhs;
            let mut leave: Option<usize> = None;
            for i in 0..d {
                if col[i] <= PIVOT_TOL {
                    continue;
                }
                leave = Some(match leave {
                    None => i,
                    Some(best) => {
                        if lex_less(&lam, i, col[i], best, col[best]) {
                            i
                        } else {
                            best
                        }
                    }
                });
            }
            let Some(i) = leave else {
                return Err(LpFailure::Infeasible);
            };
            in_basis[basis[i]] = false;
            in_basis[k] = true;
            basis[i] = k;
        }
        Err(LpFailure::Numerical)
    }
}

/// Whether row `i` of `lam / col_i` is lexicographically below row `j` of `lam / col_j`.
fn lex_less(lam: &DMatrix<f64>, i: usize, ci: f64, j: usize, cj: f64) -> bool {
    for t in 0..lam.ncols() {
        let a = lam[(i, t)] / ci;
        let b = lam[(j, t)] / cj;
        if (a - b).abs() > LEX_TOL * (1.0 + a.abs().max(b.abs())) {
            return a < b;
        }
    }
    i < j
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(cost: &[f64], lo: &[f64], hi: &[f64], rows: &[(Vec<f64>, f64)]) -> Result<Vec<f64>, LpFailure> {
        LpProblem {
            cost,
            lower: lo,
            upper: hi,
            rows: rows.iter().map(|(a, b)| (a.as_slice(), *b)).collect(),
        }
        .solve()
    }

    #[test]
    fn box_only() {
        let x = solve(&[1.0, -2.0], &[-1.0, -3.0], &[4.0, 5.0], &[]).unwrap();
        assert_eq!(x, vec![-1.0, 5.0]);
    }

    #[test]
    fn zero_cost_takes_lexicographic_minimum() {
        let x = solve(&[0.0, 0.0], &[-1.0, -3.0], &[4.0, 5.0], &[(vec![-1.0, -1.0], -1.0)]).unwrap();
        // x1 at its lower bound, then x2 as low as x1 + x2 >= 1 allows.
        assert!((x[0] + 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12, "{x:?}");
    }

    #[test]
    fn flat_objective_face() {
        // min x2 s.t. x2 >= 0.5 : every x1 is optimal; tie-break picks the lowest.
        let x = solve(&[0.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], &[(vec![0.0, -1.0], -0.5)]).unwrap();
        assert_eq!(x, vec![0.0, 0.5]);
    }

    #[test]
    fn infeasible_detected() {
        let r = solve(&[1.0], &[0.0], &[1.0], &[(vec![1.0], 0.2), (vec![-1.0], -0.7)]);
        assert_eq!(r, Err(LpFailure::Infeasible));
        let r = solve(&[1.0], &[0.0], &[1.0], &[(vec![-1.0], -3.0)]);
        assert_eq!(r, Err(LpFailure::Infeasible));
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Many constraints through the optimal vertex (0.5, 0.5).
        let rows: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|i| {
                let t = 0.1 + 0.04 * i as f64;
                let a = vec![-t, -(1.0 - t)];
                (a, -0.5)
            })
            .collect();
        let x = solve(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], &rows).unwrap();
        assert!((x[0] + x[1] - 1.0).abs() < 1e-12);
        for (a, b) in &rows {
            assert!(a[0] * x[0] + a[1] * x[1] - b <= 1e-9);
        }
    }
}
