//! Exact two-phase simplex over rationals with Bland's rule.
//!
//! Strict rows are handled exactly: `a·x < b` becomes `a·x + t <= b` and the
//! system is strictly feasible iff the maximum of `t` (capped at 1) is
//! positive.

use num::{BigRational, One, Signed, Zero};

pub type Q = BigRational;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Lt,
    Eq,
    Ge,
    Gt,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, Q)>,
    pub rel: Rel,
    pub rhs: Q,
}

pub fn q(v: f64) -> Q {
    Q::from_float(v).expect("finite")
}

pub fn to_f64(v: &Q) -> f64 {
    use num::ToPrimitive;
    v.to_f64().expect("representable")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sense {
    Le,
    Ge,
    Eq,
}

/// Returns a point satisfying every row over `n` free variables, or `None`.
pub fn feasible_point(n: usize, rows: &[Row]) -> Option<Vec<Q>> {
    // columns: x+ (n), x- (n), t
    let t = 2 * n;
    let ncols = 2 * n + 1;
    let mut a = Vec::new();
    let mut sense = Vec::new();
    let mut b = Vec::new();
    let mut strict = false;
    for r in rows {
        let mut row = vec![Q::zero(); ncols];
        for (v, c) in &r.coeffs {
            row[*v] += c.clone();
            row[n + *v] -= c.clone();
        }
        let s = match r.rel {
            Rel::Le => Sense::Le,
            Rel::Ge => Sense::Ge,
            Rel::Eq => Sense::Eq,
            Rel::Lt => {
                strict = true;
                row[t] = Q::one();
                Sense::Le
            }
            Rel::Gt => {
                strict = true;
                row[t] = -Q::one();
                Sense::Ge
            }
        };
        a.push(row);
        sense.push(s);
        b.push(r.rhs.clone());
    }
    let mut cap = vec![Q::zero(); ncols];
    cap[t] = Q::one();
    a.push(cap);
    sense.push(Sense::Le);
    b.push(Q::one());

    let mut cost = vec![Q::zero(); ncols];
    cost[t] = Q::one();
    let (best, x) = maximize(&a, &sense, &b, &cost)?;
    if strict && !best.is_positive() {
        return None;
    }
    Some((0..n).map(|j| x[j].clone() - x[n + j].clone()).collect())
}

pub fn is_feasible(n: usize, rows: &[Row]) -> bool {
    feasible_point(n, rows).is_some()
}

/// `max c·x` subject to the rows and `x >= 0`; `None` when infeasible.
/// The caller guarantees boundedness.
fn maximize(a: &[Vec<Q>], sense: &[Sense], b: &[Q], c: &[Q]) -> Option<(Q, Vec<Q>)> {
    let m = a.len();
    let nv = c.len();
    let slacks = sense.iter().filter(|s| **s != Sense::Eq).count();
    let arts = sense.iter().filter(|s| **s != Sense::Le).count() + count_flips(a, sense, b);
    let width = nv + slacks + arts;
    let mut tab: Vec<Vec<Q>> = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut is_art = vec![false; width];
    let mut next_slack = nv;
    let mut next_art = nv + slacks;
    for i in 0..m {
        let mut row = vec![Q::zero(); width + 1];
        let flip = b[i].is_negative();
        let sign = if flip { -Q::one() } else { Q::one() };
        for j in 0..nv {
            row[j] = a[i][j].clone() * sign.clone();
        }
        row[width] = b[i].clone() * sign;
        let s = match (sense[i], flip) {
            (Sense::Le, false) | (Sense::Ge, true) => Sense::Le,
            (Sense::Ge, false) | (Sense::Le, true) => Sense::Ge,
            (Sense::Eq, _) => Sense::Eq,
        };
        let orig_has_slack = sense[i] != Sense::Eq;
        let mut slack_col = None;
        if orig_has_slack {
            slack_col = Some(next_slack);
            next_slack += 1;
        }
        match s {
            Sense::Le => {
                let col = slack_col.expect("Le rows have a slack");
                row[col] = Q::one();
                basis.push(col);
            }
            Sense::Ge => {
                let col = slack_col.expect("Ge rows have a slack");
                row[col] = -Q::one();
                row[next_art] = Q::one();
                is_art[next_art] = true;
                basis.push(next_art);
                next_art += 1;
            }
            Sense::Eq => {
                row[next_art] = Q::one();
                is_art[next_art] = true;
                basis.push(next_art);
                next_art += 1;
            }
        }
        tab.push(row);
    }
    let used = next_art;
    for row in tab.iter_mut() {
        row.drain(used..width);
    }
    is_art.truncate(used);
    let width = used;

    let phase1: Vec<Q> = (0..width).map(|j| if is_art[j] { -Q::one() } else { Q::zero() }).collect();
    let all = vec![true; width];
    run(&mut tab, &mut basis, &phase1, &all);
    let value: Q = basis
        .iter()
        .zip(&tab)
        .map(|(&j, row)| phase1[j].clone() * row[width].clone())
        .sum();
    if value.is_negative() {
        return None;
    }
    // drive zero-level artificials out of the basis
    let mut i = 0;
    while i < tab.len() {
        if is_art[basis[i]] {
            match (0..width).find(|&j| !is_art[j] && !tab[i][j].is_zero()) {
                Some(j) => pivot(&mut tab, &mut basis, i, j),
                None => {
                    tab.remove(i);
                    basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    let mut cost = vec![Q::zero(); width];
    cost[..nv].clone_from_slice(c);
    let allowed: Vec<bool> = is_art.iter().map(|a| !a).collect();
    run(&mut tab, &mut basis, &cost, &allowed);
    let mut x = vec![Q::zero(); nv];
    for (r, &j) in basis.iter().enumerate() {
        if j < nv {
            x[j] = tab[r][width].clone();
        }
    }
    let best = x.iter().zip(c).map(|(a, b)| a.clone() * b.clone()).sum();
    Some((best, x))
}

fn count_flips(_a: &[Vec<Q>], sense: &[Sense], b: &[Q]) -> usize {
    // Le rows with negative rhs turn into Ge rows and need an artificial
    sense
        .iter()
        .zip(b)
        .filter(|(s, v)| **s == Sense::Le && v.is_negative())
        .count()
}

fn run(tab: &mut [Vec<Q>], basis: &mut [usize], cost: &[Q], allowed: &[bool]) {
    let width = cost.len();
    loop {
        let entering = (0..width).find(|&j| {
            if !allowed[j] || basis.contains(&j) {
                return false;
            }
            let mut r = cost[j].clone();
            for (row, &bj) in tab.iter().zip(basis.iter()) {
                if !cost[bj].is_zero() && !row[j].is_zero() {
                    r -= cost[bj].clone() * row[j].clone();
                }
            }
            r.is_positive()
        });
        let Some(j) = entering else { return };
        let mut leave: Option<(usize, Q)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[j].is_positive() {
                let ratio = row[width].clone() / row[j].clone();
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((i, _)) = leave else {
            panic!("reference LP is unbounded");
        };
        pivot(tab, basis, i, j);
    }
}

fn pivot(tab: &mut [Vec<Q>], basis: &mut [usize], i: usize, j: usize) {
    let p = tab[i][j].clone();
    for v in tab[i].iter_mut() {
        *v = v.clone() / p.clone();
    }
    let pivot_row = tab[i].clone();
    for (k, row) in tab.iter_mut().enumerate() {
        if k == i || row[j].is_zero() {
            continue;
        }
        let f = row[j].clone();
        for (v, pv) in row.iter_mut().zip(&pivot_row) {
            if !pv.is_zero() {
                *v -= f.clone() * pv.clone();
            }
        }
    }
    basis[i] = j;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: &[(usize, i64)], rel: Rel, rhs: i64) -> Row {
        Row {
            coeffs: c.iter().map(|&(v, a)| (v, Q::from_integer(a.into()))).collect(),
            rel,
            rhs: Q::from_integer(rhs.into()),
        }
    }

    #[test]
    fn reference_basics() {
        assert!(is_feasible(1, &[row(&[(0, 1)], Rel::Ge, 0), row(&[(0, 1)], Rel::Le, 1)]));
        assert!(!is_feasible(1, &[row(&[(0, 1)], Rel::Ge, 0), row(&[(0, 1)], Rel::Le, -1)]));
        assert!(!is_feasible(1, &[row(&[(0, 1)], Rel::Gt, 0), row(&[(0, 1)], Rel::Le, 0)]));
        assert!(is_feasible(1, &[row(&[(0, 1)], Rel::Ge, 0), row(&[(0, 1)], Rel::Le, 0)]));
        let p = feasible_point(2, &[row(&[(0, 1), (1, 1)], Rel::Eq, -3), row(&[(0, 1)], Rel::Gt, -1)]).unwrap();
        assert_eq!(p[0].clone() + p[1].clone(), Q::from_integer((-3).into()));
        assert!(p[0] > Q::from_integer((-1).into()));
    }
}
