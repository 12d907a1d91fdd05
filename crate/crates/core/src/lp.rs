//! Feasibility checking for conjunctions of linear constraints over real
//! variables.
//!
//! The solver is a bounded-variable primal simplex: every constraint with two
//! or more variables gets a slack `s = a·x` that starts basic, single-variable
//! constraints become bounds, and Bland's rule picks both the violated basic
//! variable and the entering variable, so the method cannot cycle. When a
//! violated row has no variable left to move, the bounds that block the row
//! form an infeasible subset (a Farkas certificate), which is reported as the
//! conflict.
//!
//! Strict relations are closed off by `eps_strict`: `a·x < b` is solved as
//! `a·x <= b - eps_strict`.

use std::collections::HashSet;
use std::fmt::Debug;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Le,
    Lt,
    Eq,
    Ge,
    Gt,
}

impl Relation {
    pub fn is_strict(self) -> bool {
        matches!(self, Relation::Lt | Relation::Gt)
    }
}

/// `Σ coeff·x[var]  relation  rhs`, labelled with `tag`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint<T> {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub tag: T,
}

impl<T> LinearConstraint<T> {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64, tag: T) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
            tag,
        }
    }

    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * x[v]).sum()
    }

    /// Checks `x` against this constraint. Non-strict relations get `tol`
    /// slack; strict ones must hold with at least half the strictness margin.
    pub fn is_satisfied_by(&self, x: &[f64], tol: f64, eps_strict: f64) -> bool {
        let lhs = self.lhs(x);
        let margin = 0.5 * eps_strict;
        match self.relation {
            Relation::Le => lhs <= self.rhs + tol,
            Relation::Ge => lhs >= self.rhs - tol,
            Relation::Eq => (lhs - self.rhs).abs() <= tol,
            Relation::Lt => lhs <= self.rhs - margin,
            Relation::Gt => lhs >= self.rhs + margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    /// Gap used to close strict inequalities.
    pub eps_strict: f64,
    /// Bound violation tolerated inside the simplex loop.
    pub feasibility_tol: f64,
    /// Tolerance for the independent witness re-check.
    pub witness_tol: f64,
    /// Smallest pivot magnitude considered nonzero.
    pub pivot_tol: f64,
    /// Pivot budget before giving up with a solver failure.
    pub max_pivots: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            eps_strict: 1e-7,
            feasibility_tol: 1e-9,
            witness_tol: 1e-6,
            pivot_tol: 1e-9,
            max_pivots: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityResult<T> {
    /// A point satisfying every asserted constraint.
    Feasible { witness: Vec<f64> },
    /// Tags of an infeasible subset of the asserted constraints.
    Infeasible { conflict: Vec<T> },
}

impl<T> FeasibilityResult<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityResult::Feasible { .. })
    }
}

/// Constraints asserted in LIFO scopes. Single owner; not shareable while
/// being mutated.
#[derive(Debug, Clone)]
pub struct ConstraintSystem<T> {
    num_vars: usize,
    constraints: Vec<LinearConstraint<T>>,
    scope_starts: Vec<usize>,
    live_tags: HashSet<T>,
    options: LpOptions,
}

impl<T: Clone + Eq + Hash + Debug> ConstraintSystem<T> {
    pub fn new(num_vars: usize) -> Self {
        Self::with_options(num_vars, LpOptions::default())
    }

    pub fn with_options(num_vars: usize, options: LpOptions) -> Self {
        Self {
            num_vars,
            constraints: Vec::new(),
            scope_starts: Vec::new(),
            live_tags: HashSet::new(),
            options,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn options(&self) -> &LpOptions {
        &self.options
    }

    pub fn constraints(&self) -> &[LinearConstraint<T>] {
        &self.constraints
    }

    pub fn scope_depth(&self) -> usize {
        self.scope_starts.len()
    }

    pub fn assert(&mut self, constraint: LinearConstraint<T>) -> Result<()> {
        if let Some(&(v, _)) = constraint.coeffs.iter().find(|(v, _)| *v >= self.num_vars) {
            return Err(Error::InvalidInput(format!(
                "variable {v} out of range ({} variables)",
                self.num_vars
            )));
        }
        if !constraint.rhs.is_finite() || constraint.coeffs.iter().any(|(_, c)| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite data in constraint {:?}",
                constraint.tag
            )));
        }
        if !self.live_tags.insert(constraint.tag.clone()) {
            return Err(Error::DuplicateTag(format!("{:?}", constraint.tag)));
        }
        self.constraints.push(constraint);
        Ok(())
    }

    pub fn assert_all(&mut self, cs: impl IntoIterator<Item = LinearConstraint<T>>) -> Result<()> {
        for c in cs {
            self.assert(c)?;
        }
        Ok(())
    }

    pub fn push_scope(&mut self) {
        self.scope_starts.push(self.constraints.len());
    }

    pub fn pop_scope(&mut self) -> Result<()> {
        let start = self.scope_starts.pop().ok_or(Error::EmptyScopeStack)?;
        for c in self.constraints.drain(start..) {
            self.live_tags.remove(&c.tag);
        }
        Ok(())
    }

    /// Decides feasibility of all live constraints.
    pub fn check_feasible(&self) -> Result<FeasibilityResult<T>> {
        let outcome = Simplex::build(self.num_vars, &self.constraints, &self.options)
            .and_then(|mut s| s.solve())?;
        match outcome {
            Outcome::Infeasible(rows) => {
                let mut conflict: Vec<T> =
                    rows.iter().map(|&i| self.constraints[i].tag.clone()).collect();
                let mut seen = HashSet::new();
                conflict.retain(|t| seen.insert(t.clone()));
                Ok(FeasibilityResult::Infeasible { conflict })
            }
            Outcome::Feasible(witness) => {
                let o = &self.options;
                if let Some(bad) = self
                    .constraints
                    .iter()
                    .find(|c| !c.is_satisfied_by(&witness, o.witness_tol, o.eps_strict))
                {
                    return Err(Error::SolverFailure(format!(
                        "witness violates {:?} (lhs {}, rhs {})",
                        bad.tag,
                        bad.lhs(&witness),
                        bad.rhs
                    )));
                }
                Ok(FeasibilityResult::Feasible { witness })
            }
        }
    }
}

enum Outcome {
    Feasible(Vec<f64>),
    /// Indices of the constraints in the certificate.
    Infeasible(Vec<usize>),
}

/// Dense tableau state. Variables `0..n` are the caller's, `n..` are slacks.
struct Simplex<'o> {
    n_orig: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_src: Vec<Option<usize>>,
    upper_src: Vec<Option<usize>>,
    value: Vec<f64>,
    /// Row r expresses `basis[r]` over the non-basic variables.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    opts: &'o LpOptions,
    early_conflict: Option<Vec<usize>>,
}

impl<'o> Simplex<'o> {
    fn build<T>(n: usize, constraints: &[LinearConstraint<T>], opts: &'o LpOptions) -> Result<Self> {
        let mut s = Simplex {
            n_orig: n,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            lower_src: vec![None; n],
            upper_src: vec![None; n],
            value: vec![0.0; n],
            rows: Vec::new(),
            basis: Vec::new(),
            row_of: vec![None; n],
            opts,
            early_conflict: None,
        };
        let mut slack_rows: Vec<Vec<(usize, f64)>> = Vec::new();
        for (ci, c) in constraints.iter().enumerate() {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(c.coeffs.len());
            let mut sorted = c.coeffs.clone();
            sorted.sort_by_key(|&(v, _)| v);
            for (v, a) in sorted {
                match merged.last_mut() {
                    Some((lv, la)) if *lv == v => *la += a,
                    _ => merged.push((v, a)),
                }
            }
            merged.retain(|&(_, a)| a != 0.0);
            let (rel, rhs) = match c.relation {
                Relation::Lt => (Relation::Le, c.rhs - opts.eps_strict),
                Relation::Gt => (Relation::Ge, c.rhs + opts.eps_strict),
                r => (r, c.rhs),
            };
            match merged.len() {
                0 => {
                    let ok = match rel {
                        Relation::Le => 0.0 <= rhs,
                        Relation::Ge => 0.0 >= rhs,
                        _ => rhs == 0.0,
                    };
                    if !ok {
                        s.early_conflict = Some(vec![ci]);
                        return Ok(s);
                    }
                }
                1 => {
                    let (v, a) = merged[0];
                    let rel = if a < 0.0 { flip(rel) } else { rel };
                    s.tighten(v, rel, rhs / a, ci);
                }
                _ => {
                    let v = s.lower.len();
                    s.lower.push(f64::NEG_INFINITY);
                    s.upper.push(f64::INFINITY);
                    s.lower_src.push(None);
                    s.upper_src.push(None);
                    s.value.push(0.0);
                    s.row_of.push(None);
                    s.tighten(v, rel, rhs, ci);
                    slack_rows.push(merged);
                }
            }
        }
        for v in 0..s.lower.len() {
            if s.lower[v] > s.upper[v] + opts.feasibility_tol {
                let mut conflict = vec![s.lower_src[v].unwrap(), s.upper_src[v].unwrap()];
                conflict.dedup();
                s.early_conflict = Some(conflict);
                return Ok(s);
            }
        }
        let total = s.lower.len();
        for v in 0..n {
            s.value[v] = 0.0f64.clamp(s.lower[v].min(s.upper[v]), s.upper[v]);
        }
        for (r, coeffs) in slack_rows.into_iter().enumerate() {
            let var = n + r;
            let mut row = vec![0.0; total];
            for (v, a) in coeffs {
                row[v] = a;
            }
            s.rows.push(row);
            s.basis.push(var);
            s.row_of[var] = Some(r);
        }
        s.recompute_basic();
        Ok(s)
    }

    fn tighten(&mut self, v: usize, rel: Relation, bound: f64, src: usize) {
        if matches!(rel, Relation::Ge | Relation::Eq) && bound > self.lower[v] {
            self.lower[v] = bound;
            self.lower_src[v] = Some(src);
        }
        if matches!(rel, Relation::Le | Relation::Eq) && bound < self.upper[v] {
            self.upper[v] = bound;
            self.upper_src[v] = Some(src);
        }
    }

    fn recompute_basic(&mut self) {
        for r in 0..self.rows.len() {
            let v: f64 = self.rows[r]
                .iter()
                .zip(&self.value)
                .enumerate()
                .filter(|(j, _)| self.row_of[*j].is_none())
                .map(|(_, (a, x))| a * x)
                .sum();
            self.value[self.basis[r]] = v;
        }
    }

    fn solve(&mut self) -> Result<Outcome> {
        if let Some(c) = self.early_conflict.take() {
            return Ok(Outcome::Infeasible(c));
        }
        let tol = self.opts.feasibility_tol;
        let ptol = self.opts.pivot_tol;
        let total = self.lower.len();
        let mut pivots = 0usize;
        loop {
            // Bland: lowest-index violated basic variable.
            let mut leaving = None;
            for v in 0..total {
                if let Some(r) = self.row_of[v] {
                    let x = self.value[v];
                    if !x.is_finite() {
                        return Err(Error::SolverFailure("non-finite tableau value".into()));
                    }
                    if x < self.lower[v] - tol || x > self.upper[v] + tol {
                        leaving = Some((v, r));
                        break;
                    }
                }
            }
            let Some((b, r)) = leaving else {
                self.recompute_basic();
                return Ok(Outcome::Feasible(self.value[..self.n_orig].to_vec()));
            };
            let increase = self.value[b] < self.lower[b];
            let row = &self.rows[r];
            let entering = (0..total).find(|&j| {
                if self.row_of[j].is_some() {
                    return false;
                }
                let a = row[j];
                if a.abs() <= ptol {
                    return false;
                }
                let up = (a > 0.0) == increase;
                if up {
                    self.value[j] < self.upper[j]
                } else {
                    self.value[j] > self.lower[j]
                }
            });
            let Some(j) = entering else {
                return Ok(Outcome::Infeasible(self.explain(b, r, increase)));
            };
            pivots += 1;
            if pivots > self.opts.max_pivots {
                return Err(Error::SolverFailure(format!(
                    "no decision after {pivots} pivots"
                )));
            }
            let target = if increase { self.lower[b] } else { self.upper[b] };
            self.pivot_and_update(r, j, target);
            if pivots.is_multiple_of(32) {
                self.recompute_basic();
            }
        }
    }

    /// Blocking bounds of a violated row.
    fn explain(&self, b: usize, r: usize, increase: bool) -> Vec<usize> {
        let mut out = Vec::new();
        let own = if increase {
            self.lower_src[b]
        } else {
            self.upper_src[b]
        };
        out.extend(own);
        for (j, &a) in self.rows[r].iter().enumerate() {
            if self.row_of[j].is_some() || a.abs() <= self.opts.pivot_tol {
                continue;
            }
            let at_upper = (a > 0.0) == increase;
            let src = if at_upper {
                self.upper_src[j]
            } else {
                self.lower_src[j]
            };
            out.extend(src);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn pivot_and_update(&mut self, r: usize, j: usize, target: f64) {
        let b = self.basis[r];
        let a_rj = self.rows[r][j];
        let theta = (target - self.value[b]) / a_rj;
        self.value[j] += theta;
        for k in 0..self.rows.len() {
            if k != r {
                let a = self.rows[k][j];
                if a != 0.0 {
                    self.value[self.basis[k]] += a * theta;
                }
            }
        }
        self.value[b] = target;

        // Solve row r for x_j.
        let mut pivot_row = std::mem::take(&mut self.rows[r]);
        let inv = 1.0 / a_rj;
        for a in pivot_row.iter_mut() {
            *a *= -inv;
        }
        pivot_row[j] = 0.0;
        pivot_row[b] = inv;
        for k in 0..self.rows.len() {
            if k == r {
                continue;
            }
            let a = self.rows[k][j];
            if a == 0.0 {
                continue;
            }
            let row = &mut self.rows[k];
            row[j] = 0.0;
            for (dst, &p) in row.iter_mut().zip(&pivot_row) {
                if p != 0.0 {
                    *dst += a * p;
                }
            }
        }
        self.rows[r] = pivot_row;
        self.basis[r] = j;
        self.row_of[j] = Some(r);
        self.row_of[b] = None;
    }
}

fn flip(rel: Relation) -> Relation {
    match rel {
        Relation::Le => Relation::Ge,
        Relation::Ge => Relation::Le,
        Relation::Lt => Relation::Gt,
        Relation::Gt => Relation::Lt,
        Relation::Eq => Relation::Eq,
    }
}
