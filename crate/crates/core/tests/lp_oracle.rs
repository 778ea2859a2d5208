//! The LP engine against brute-force vertex enumeration on small programs.
//!
//! With a bounded box the lexicographic minimum of `(c.x, x_1, ..., x_d)`
//! over the feasible polytope is a vertex, so enumerating every
//! `d`-subset of hyperplanes finds it.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenconf_core::engine::{self, AffineRow, EngineError, LinearScenarioProgram};

const TOL: f64 = 1e-9;

fn hyperplanes(p: &LinearScenarioProgram) -> Vec<(Vec<f64>, f64)> {
    let d = p.dimension;
    let mut planes: Vec<(Vec<f64>, f64)> = p.constraints.iter().map(|r| (r.a.clone(), r.b)).collect();
    for (j, [lo, hi]) in p.domain_box.iter().enumerate() {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        planes.push((e.clone(), *hi));
        e[j] = -1.0;
        planes.push((e, -lo));
    }
    planes
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn feasible(p: &LinearScenarioProgram, x: &[f64]) -> bool {
    let in_box = p
        .domain_box
        .iter()
        .zip(x)
        .all(|([lo, hi], v)| *v >= lo - TOL && *v <= hi + TOL);
    in_box && p.constraints.iter().all(|r| r.value(x) <= TOL)
}

/// Lexicographic minimizer by vertex enumeration, `None` if infeasible.
fn oracle(p: &LinearScenarioProgram) -> Option<Vec<f64>> {
    let d = p.dimension;
    let planes = hyperplanes(p);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for subset in subsets(planes.len(), d) {
        let a = DMatrix::from_fn(d, d, |i, j| planes[subset[i]].0[j]);
        let b = DVector::from_fn(d, |i, _| planes[subset[i]].1);
        let lu = a.lu();
        if lu.determinant().abs() < 1e-9 {
            continue;
        }
        let Some(x) = lu.solve(&b) else { continue };
        let x: Vec<f64> = x.iter().copied().collect();
        if !feasible(p, &x) {
            continue;
        }
        let obj: f64 = p.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        let better = match &best {
            None => true,
            Some((bo, bx)) => {
                if obj < bo - TOL {
                    true
                } else if obj > bo + TOL {
                    false
                } else {
                    x.iter()
                        .zip(bx)
                        .find(|(u, v)| (*u - *v).abs() > TOL)
                        .is_some_and(|(u, v)| u < v)
                }
            }
        };
        if better {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Small integer programs, so optimal faces of positive dimension and
/// degenerate vertices are common.
fn random_program(rng: &mut ChaCha8Rng, d: usize, m: usize, allow_infeasible: bool) -> LinearScenarioProgram {
    let cost: Vec<f64> = (0..d).map(|_| rng.random_range(-2..=2) as f64).collect();
    let lo_b = if allow_infeasible { -4 } else { 0 };
    let rows: Vec<AffineRow> = (0..m)
        .map(|_| {
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3..=3) as f64).collect();
            AffineRow::new(a, rng.random_range(lo_b..=5) as f64)
        })
        .collect();
    LinearScenarioProgram::new(cost, rows, vec![[-5.0, 5.0]; d]).unwrap()
}

fn compare(p: &LinearScenarioProgram) -> Result<(), String> {
    match (oracle(p), engine::solve(p)) {
        (None, Err(EngineError::InfeasibleProgram)) => Ok(()),
        (Some(x), Ok(sol)) => {
            let gap = x.iter().zip(&sol.x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap <= 1e-7 {
                Ok(())
            } else {
                Err(format!("oracle {x:?} vs engine {:?} on {}", sol.x_star, p.to_json()))
            }
        }
        (o, e) => Err(format!("oracle {o:?} vs engine {e:?} on {}", p.to_json())),
    }
}

#[test]
fn engine_matches_enumeration_on_integer_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for case in 0..3000 {
        let d = 1 + case % 3;
        let m = rng.random_range(0..=7);
        let p = random_program(&mut rng, d, m, case % 4 == 0);
        compare(&p).unwrap();
    }
}

#[test]
fn engine_matches_enumeration_on_continuous_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3141);
    for case in 0..1000 {
        let d = 1 + case % 3;
        let m = rng.random_range(1..=8);
        let cost: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = (0..m)
            .map(|_| AffineRow::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.0..1.0)))
            .collect();
        let p = LinearScenarioProgram::new(cost, rows, vec![[-10.0, 10.0]; d]).unwrap();
        compare(&p).unwrap();
    }
}

#[test]
fn zero_cost_returns_lexicographic_minimum() {
    // feasible set: x + y >= 1 inside [0, 2]^2; lexicographic minimum is (0, 1)
    let p = LinearScenarioProgram::new(
        vec![0.0, 0.0],
        vec![AffineRow::new(vec![-1.0, -1.0], -1.0)],
        vec![[0.0, 2.0]; 2],
    )
    .unwrap();
    assert_eq!(oracle(&p).unwrap(), vec![0.0, 1.0]);
    let sol = engine::solve(&p).unwrap();
    assert!((sol.x_star[0] - 0.0).abs() < 1e-12 && (sol.x_star[1] - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn removing_a_constraint_never_worsens_the_objective(seed in any::<u64>(), d in 1usize..=3, m in 1usize..=7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_program(&mut rng, d, m, false);
        let full = engine::solve(&p).unwrap();
        for i in 0..m {
            let relaxed = engine::solve_discarding(&p, &[i]).unwrap();
            prop_assert!(relaxed.objective <= full.objective + 1e-9);
        }
    }
}
