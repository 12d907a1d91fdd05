//! Feasibility of a set of activation literals, the one query shared by the
//! search, core minimization and proof replay.
//!
//! `check(d, S)` solves the base system of disjunct `d` together with the
//! literals `S`, where every other root-unstable neuron is either fixed (its
//! bounds refreshed under `S` decide its sign) or relaxed with those refreshed
//! bounds. The feasible region shrinks as `S` grows, so deletion-based core
//! minimization is sound.

use std::time::{Duration, Instant};

use crate::bounds::{interval_propagate, refresh_under_assumptions, BoundsMap};
use crate::encoder::{self, ActivationLiteral, Tag, VarMap};
use crate::error::{Error, Result};
use crate::lp::{ConstraintSystem, FeasibilityResult};
use crate::property::{Comparison, Inequality, VerificationProblem};

/// Resource limits of one solve or reverify call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub wall_clock: Duration,
    pub max_lp_calls: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            wall_clock: Duration::from_secs(60),
            max_lp_calls: 100_000,
        }
    }
}

impl Budget {
    pub fn new(wall_clock: Duration, max_lp_calls: u64) -> Result<Self> {
        if wall_clock.is_zero() || max_lp_calls == 0 {
            return Err(Error::InvalidInput("budget must be positive".into()));
        }
        Ok(Self {
            wall_clock,
            max_lp_calls,
        })
    }

    /// A budget limited by LP calls only, for reproducible runs.
    pub fn lp_calls(max_lp_calls: u64) -> Self {
        Self {
            wall_clock: Duration::from_secs(365 * 24 * 3600),
            max_lp_calls,
        }
    }
}

/// Counts LP calls and watches the deadline.
#[derive(Debug, Clone)]
pub struct Meter {
    start: Instant,
    lp_calls: u64,
    budget: Budget,
}

impl Meter {
    pub fn new(budget: Budget) -> Self {
        Self {
            start: Instant::now(),
            lp_calls: 0,
            budget,
        }
    }

    pub fn lp_calls(&self) -> u64 {
        self.lp_calls
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    pub fn is_exhausted(&self) -> bool {
        self.lp_calls >= self.budget.max_lp_calls || self.elapsed() >= self.budget.wall_clock
    }

    /// Books one LP call; false when the budget is spent.
    fn charge(&mut self) -> bool {
        if self.is_exhausted() {
            return false;
        }
        self.lp_calls += 1;
        true
    }
}

#[derive(Debug, Clone)]
pub struct NodeWitness {
    /// Values of every encoding variable.
    pub assignment: Vec<f64>,
    /// Bounds under the node's literals.
    pub refreshed: BoundsMap,
}

#[derive(Debug, Clone)]
pub enum CheckResult {
    /// `conflict` lists the literals whose constraints appear in the LP's
    /// infeasible subset, in the order of the query.
    Infeasible { conflict: Vec<ActivationLiteral> },
    Feasible(NodeWitness),
    /// The LP backend gave no trustworthy answer.
    Failed(String),
    Exhausted,
}

impl CheckResult {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, CheckResult::Infeasible { .. })
    }
}

/// Literal-set feasibility oracle for one problem.
#[derive(Debug)]
pub struct PathChecker<'p> {
    problem: &'p VerificationProblem,
    vars: VarMap,
    root: BoundsMap,
    disjuncts: Vec<Vec<Inequality>>,
    bases: Vec<Option<ConstraintSystem<Tag>>>,
    meter: Meter,
}

impl<'p> PathChecker<'p> {
    pub fn new(problem: &'p VerificationProblem, budget: Budget) -> Result<Self> {
        let root = interval_propagate(problem.network(), problem.input_box())?;
        let disjuncts = problem.negated_disjuncts();
        Ok(Self {
            problem,
            vars: VarMap::new(problem.network()),
            root,
            bases: vec![None; disjuncts.len()],
            disjuncts,
            meter: Meter::new(budget),
        })
    }

    pub fn problem(&self) -> &'p VerificationProblem {
        self.problem
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }

    pub fn root_bounds(&self) -> &BoundsMap {
        &self.root
    }

    pub fn num_disjuncts(&self) -> usize {
        self.disjuncts.len()
    }

    pub fn disjunct(&self, d: usize) -> &[Inequality] {
        &self.disjuncts[d]
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    /// Solves `base(d) ∧ S`.
    pub fn check(&mut self, d: usize, literals: &[ActivationLiteral]) -> Result<CheckResult> {
        self.check_inner(d, literals, None)
    }

    /// Like [`check`](Self::check) but with the property rows of `d` pushed
    /// `margin` into their interior, for witnesses that sit on a boundary.
    pub fn check_with_margin(&mut self, d: usize, literals: &[ActivationLiteral], margin: f64) -> Result<CheckResult> {
        self.check_inner(d, literals, Some(margin))
    }

    fn check_inner(&mut self, d: usize, literals: &[ActivationLiteral], margin: Option<f64>) -> Result<CheckResult> {
        if d >= self.disjuncts.len() {
            return Err(Error::ContractViolation(format!("no disjunct {d}")));
        }
        if let Some(bad) = literals.iter().find(|l| !self.problem.network().contains(l.neuron)) {
            return Err(Error::ContractViolation(format!("literal on unknown neuron {}", bad.neuron)));
        }
        let net = self.problem.network();
        let refreshed = match refresh_under_assumptions(net, self.problem.input_box(), literals) {
            Ok(b) => b,
            Err(Error::InconsistentAssumption(id)) => {
                let conflict = literals.iter().filter(|l| l.neuron == id).copied().collect();
                return Ok(CheckResult::Infeasible { conflict });
            }
            Err(e) => return Err(e),
        };
        if refreshed.conflict().is_some() {
            return Ok(CheckResult::Infeasible {
                conflict: literals.to_vec(),
            });
        }
        if !self.meter.charge() {
            return Ok(CheckResult::Exhausted);
        }
        let node = encoder::node_constraints(&self.vars, &self.root, &refreshed, literals)?;
        let outcome = match margin {
            None => {
                if self.bases[d].is_none() {
                    self.bases[d] = Some(encoder::encode_base(self.problem, &self.root, d)?);
                }
                let base = self.bases[d].as_mut().expect("base built above");
                base.push_scope();
                let asserted = base.assert_all(node);
                let outcome = asserted.and_then(|_| base.check_feasible());
                base.pop_scope()?;
                outcome
            }
            Some(m) => {
                let rows: Vec<Inequality> = self.disjuncts[d].iter().map(|q| tighten(q, m)).collect();
                let mut sys = ConstraintSystem::new(self.vars.num_vars());
                sys.assert_all(encoder::structural_constraints(self.problem, &rows))?;
                for (id, b) in self.root.iter() {
                    if let Some(p) = b.stability.phase() {
                        sys.assert_all(encoder::stable_constraints(&self.vars, id, p))?;
                    }
                }
                sys.assert_all(node)?;
                sys.check_feasible()
            }
        };
        match outcome {
            Ok(FeasibilityResult::Feasible { witness }) => Ok(CheckResult::Feasible(NodeWitness {
                assignment: witness,
                refreshed,
            })),
            Ok(FeasibilityResult::Infeasible { conflict }) => {
                let conflict = literals
                    .iter()
                    .filter(|l| conflict.iter().any(|t| t.literal() == Some(**l)))
                    .copied()
                    .collect();
                Ok(CheckResult::Infeasible { conflict })
            }
            Err(Error::SolverFailure(msg)) => Ok(CheckResult::Failed(msg)),
            Err(e) => Err(e),
        }
    }
}

fn tighten(q: &Inequality, margin: f64) -> Inequality {
    let (rel, rhs) = match q.rel {
        Comparison::Le | Comparison::Lt => (Comparison::Lt, q.rhs - margin),
        Comparison::Ge | Comparison::Gt => (Comparison::Gt, q.rhs + margin),
    };
    Inequality::new(q.coeffs.clone(), rel, rhs)
}
