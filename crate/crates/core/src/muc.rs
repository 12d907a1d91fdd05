//! Unsat cores over activation literals and their deletion-based
//! minimization.

use crate::check::{CheckResult, PathChecker};
use crate::encoder::ActivationLiteral;
use crate::error::{Error, Result};

/// A set of literals that is infeasible together with the base system of
/// disjunct `disjunct`. Literals keep the order in which they were decided.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Core {
    pub literals: Vec<ActivationLiteral>,
    /// Every one-literal deletion is known to be feasible.
    pub minimal: bool,
    pub disjunct: usize,
}

impl Core {
    pub fn new(literals: Vec<ActivationLiteral>, disjunct: usize) -> Self {
        Self {
            literals,
            minimal: false,
            disjunct,
        }
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    /// Whether every literal of the core occurs in `path`.
    pub fn is_subset_of(&self, path: &[ActivationLiteral]) -> bool {
        self.literals.iter().all(|l| path.contains(l))
    }

    /// Whether the core applies to the subtree below `path` in disjunct `d`.
    pub fn covers(&self, d: usize, path: &[ActivationLiteral]) -> bool {
        self.disjunct == d && self.is_subset_of(path)
    }
}

/// Outcome of replaying a core on a (possibly different) network.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreCheck {
    StillUnsat,
    /// The core's literals admit an LP solution. `witness` is the full LP
    /// assignment, `None` when the core does not apply to the network.
    NowFeasible { witness: Option<Vec<f64>> },
    /// Budget or solver failure.
    Undecided,
}

/// Core of an infeasible path. `conflict` is the literal part of the LP's
/// infeasible subset for `path`, when known; otherwise the path is
/// re-checked. The filtered set is re-verified and replaced by the whole path
/// if it turns out feasible.
pub fn extract_core(
    checker: &mut PathChecker<'_>,
    d: usize,
    path: &[ActivationLiteral],
    conflict: Option<&[ActivationLiteral]>,
) -> Result<Core> {
    let conflict = match conflict {
        Some(c) => c.to_vec(),
        None => match checker.check(d, path)? {
            CheckResult::Infeasible { conflict } => conflict,
            CheckResult::Feasible(_) => {
                return Err(Error::ContractViolation("core extraction on a feasible path".into()))
            }
            CheckResult::Failed(_) | CheckResult::Exhausted => path.to_vec(),
        },
    };
    let candidate: Vec<ActivationLiteral> = path.iter().filter(|l| conflict.contains(l)).copied().collect();
    if candidate.len() == path.len() {
        return Ok(Core::new(candidate, d));
    }
    match checker.check(d, &candidate)? {
        CheckResult::Infeasible { .. } => Ok(Core::new(candidate, d)),
        _ => Ok(Core::new(path.to_vec(), d)),
    }
}

/// Deletion loop, latest literal first. A literal stays only if dropping it
/// makes the set feasible. If the budget runs out midway the partially
/// reduced (still infeasible) core is returned with `minimal == false`.
pub fn minimize(checker: &mut PathChecker<'_>, core: Core) -> Result<Core> {
    let d = core.disjunct;
    let mut lits = core.literals;
    let mut i = lits.len();
    while i > 0 {
        i -= 1;
        let mut trial = lits.clone();
        trial.remove(i);
        match checker.check(d, &trial)? {
            CheckResult::Infeasible { .. } => lits = trial,
            CheckResult::Feasible(_) => {}
            CheckResult::Failed(_) | CheckResult::Exhausted => {
                return Ok(Core {
                    literals: lits,
                    minimal: false,
                    disjunct: d,
                })
            }
        }
    }
    Ok(Core {
        literals: lits,
        minimal: true,
        disjunct: d,
    })
}

/// Replays `core` on the checker's problem, whose network may be a
/// compressed copy of the one the core came from.
pub fn check_core(checker: &mut PathChecker<'_>, core: &Core) -> Result<CoreCheck> {
    let net = checker.problem().network();
    if core.disjunct >= checker.num_disjuncts() || core.literals.iter().any(|l| !net.contains(l.neuron)) {
        return Ok(CoreCheck::NowFeasible { witness: None });
    }
    Ok(match checker.check(core.disjunct, &core.literals)? {
        CheckResult::Infeasible { .. } => CoreCheck::StillUnsat,
        CheckResult::Feasible(w) => CoreCheck::NowFeasible {
            witness: Some(w.assignment),
        },
        CheckResult::Failed(_) | CheckResult::Exhausted => CoreCheck::Undecided,
    })
}
