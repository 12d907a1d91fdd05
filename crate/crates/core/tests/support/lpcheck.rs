//! Float LP versus the exact reference on small random systems.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reluver::lp::{ConstraintSystem, FeasibilityResult, LinearConstraint, Relation};

use super::rational::{is_feasible, Rel, Row, Q};

fn relation(k: u8) -> Relation {
    [Relation::Le, Relation::Lt, Relation::Eq, Relation::Ge, Relation::Gt][k as usize % 5]
}

fn rel(r: Relation) -> Rel {
    match r {
        Relation::Le => Rel::Le,
        Relation::Lt => Rel::Lt,
        Relation::Eq => Rel::Eq,
        Relation::Ge => Rel::Ge,
        Relation::Gt => Rel::Gt,
    }
}

pub type Spec = (usize, Vec<(Vec<i64>, u8, i64)>);

pub fn random_spec(rng: &mut ChaCha8Rng) -> Spec {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=6);
    let rows = (0..m)
        .map(|_| {
            let c = (0..n).map(|_| rng.gen_range(-3..=3)).collect();
            (c, rng.gen_range(0..5), rng.gen_range(-5..=5))
        })
        .collect();
    (n, rows)
}

/// Checks one system against the exact reference; `Err` describes a mismatch.
pub fn compare((n, rows): &Spec) -> Result<bool, String> {
    let mut sys = ConstraintSystem::new(*n);
    let mut exact = Vec::new();
    for v in 0..*n {
        // keep everything bounded
        for (r, b) in [(Relation::Ge, -10), (Relation::Le, 10)] {
            sys.assert(LinearConstraint::new(vec![(v, 1.0)], r, b as f64, exact.len())).unwrap();
            exact.push(Row {
                coeffs: vec![(v, Q::from_integer(1.into()))],
                rel: rel(r),
                rhs: Q::from_integer(b.into()),
            });
        }
    }
    for (c, k, b) in rows {
        let r = relation(*k);
        let coeffs: Vec<(usize, i64)> = c.iter().copied().enumerate().filter(|(_, a)| *a != 0).collect();
        sys.assert(LinearConstraint::new(
            coeffs.iter().map(|&(v, a)| (v, a as f64)).collect(),
            r,
            *b as f64,
            exact.len(),
        ))
        .unwrap();
        exact.push(Row {
            coeffs: coeffs.iter().map(|&(v, a)| (v, Q::from_integer(a.into()))).collect(),
            rel: rel(r),
            rhs: Q::from_integer((*b).into()),
        });
    }
    let truth = is_feasible(*n, &exact);
    match sys.check_feasible().map_err(|e| e.to_string())? {
        FeasibilityResult::Feasible { witness } => {
            if !truth {
                return Err("float LP feasible, exact infeasible".into());
            }
            let eps = sys.options().eps_strict;
            for c in sys.constraints() {
                if !c.is_satisfied_by(&witness, 1e-6, eps / 2.0) {
                    return Err(format!("witness violates row {}", c.tag));
                }
            }
        }
        FeasibilityResult::Infeasible { conflict } => {
            if truth {
                return Err("float LP infeasible, exact feasible".into());
            }
            let sub: Vec<Row> = conflict.iter().map(|&t| exact[t].clone()).collect();
            if is_feasible(*n, &sub) {
                return Err("conflict set is satisfiable".into());
            }
        }
    }
    Ok(truth)
}
