//! Case-splitting search over neuron phases.
//!
//! Every unstable neuron starts relaxed. A node whose LP is infeasible is
//! closed with a minimized core; a feasible node whose witness is a real
//! counterexample ends the search; otherwise the neuron whose relaxation the
//! witness exploits most is split, the witness's own phase first. Nodes whose
//! literal set contains a known core are closed without an LP call.

use crate::bounds::{BoundsMap, NeuronBounds};
use crate::check::{Budget, CheckResult, NodeWitness, PathChecker};
use crate::encoder::{ActivationLiteral, Phase};
use crate::error::{Error, Result};
use crate::muc::{check_core, extract_core, minimize, Core, CoreCheck};
use crate::network::{Network, NeuronId};
use crate::proof::{ProofArtifact, SatCore, SearchPath, Stats, UncheckedPath, Verdict};
use crate::property::VerificationProblem;

/// Gap between `x̂` and `max(0, x)` above which a witness exploits the
/// relaxation of a neuron.
pub const RELU_VIOLATION_TOL: f64 = 1e-6;
/// Shift applied to property rows when re-solving a boundary witness.
pub const BOUNDARY_MARGIN: f64 = 1e-7;

/// `|u + l| / (u + |l|)` for an unstable neuron; 0 means perfectly balanced.
pub fn score_neuron(bounds: NeuronBounds) -> Result<f64> {
    let (l, u) = (bounds.lower, bounds.upper);
    if !(l < 0.0 && u > 0.0) {
        return Err(Error::ContractViolation(format!("score of a stable neuron [{l}, {u}]")));
    }
    Ok((u + l).abs() / (u + l.abs()))
}

/// Candidate with the smallest score, ties by `(layer, pos)`.
pub fn select_branch_neuron(candidates: &[NeuronId], bounds: &BoundsMap) -> Result<NeuronId> {
    let mut best: Option<(f64, NeuronId)> = None;
    for &id in candidates {
        let s = score_neuron(bounds.get(id))?;
        let better = match best {
            None => true,
            Some((bs, bid)) => s < bs || (s == bs && id < bid),
        };
        if better {
            best = Some((s, id));
        }
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| Error::ContractViolation("no branching candidates".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    /// Close nodes that contain a known core without solving them.
    pub core_pruning: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { core_pruning: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HintStatus {
    Pending,
    Valid,
    Failed,
}

/// A core from another run, validated the first time it would prune a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Hint {
    pub core: Core,
    pub status: HintStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionOutcome {
    /// Every node below the prefix was closed or recorded as unchecked.
    Closed,
    Sat,
    /// The budget ran out; the open nodes were recorded as unchecked.
    Stopped,
}

enum Leaf {
    Sat(Vec<f64>),
    Split(NeuronId, Phase),
    Unknown,
    Exhausted,
}

/// Search state shared across the regions explored in one call.
#[derive(Debug)]
pub struct Search<'p> {
    checker: PathChecker<'p>,
    config: SearchConfig,
    cores: Vec<Core>,
    hints: Vec<Hint>,
    unchecked: Vec<UncheckedPath>,
    sat: Option<SatCore>,
    stopped: bool,
}

impl<'p> Search<'p> {
    pub fn new(problem: &'p VerificationProblem, budget: Budget, hints: Vec<Core>, config: SearchConfig) -> Result<Self> {
        Ok(Self {
            checker: PathChecker::new(problem, budget)?,
            config,
            cores: Vec::new(),
            hints: hints
                .into_iter()
                .map(|core| Hint {
                    core,
                    status: HintStatus::Pending,
                })
                .collect(),
            unchecked: Vec::new(),
            sat: None,
            stopped: false,
        })
    }

    pub fn checker(&mut self) -> &mut PathChecker<'p> {
        &mut self.checker
    }

    pub fn problem(&self) -> &'p VerificationProblem {
        self.checker.problem()
    }

    pub fn hints(&self) -> &[Hint] {
        &self.hints
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn sat_core(&self) -> Option<&SatCore> {
        self.sat.as_ref()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn num_disjuncts(&self) -> usize {
        self.checker.num_disjuncts()
    }

    /// Records a region as undecided without exploring it.
    pub fn defer(&mut self, d: usize, prefix: SearchPath) {
        self.unchecked.push(UncheckedPath { path: prefix, disjunct: d });
    }

    /// Adds a core, keeping the list free of supersets within a disjunct.
    pub fn add_core(&mut self, core: Core) {
        if self.cores.iter().any(|c| c.disjunct == core.disjunct && c.is_subset_of(&core.literals)) {
            return;
        }
        self.cores
            .retain(|c| !(c.disjunct == core.disjunct && core.is_subset_of(&c.literals)));
        self.cores.push(core);
    }

    /// Validates hint `i` against this problem if that has not happened yet.
    pub fn validate_hint(&mut self, i: usize) -> Result<HintStatus> {
        if self.hints[i].status != HintStatus::Pending {
            return Ok(self.hints[i].status);
        }
        let core = self.hints[i].core.clone();
        if !constant_literals(self.problem().network(), &core).is_empty() {
            self.hints[i].status = HintStatus::Failed;
            return Ok(HintStatus::Failed);
        }
        let status = match check_core(&mut self.checker, &core)? {
            CoreCheck::StillUnsat => HintStatus::Valid,
            CoreCheck::NowFeasible { .. } => HintStatus::Failed,
            CoreCheck::Undecided => HintStatus::Pending,
        };
        self.hints[i].status = status;
        if status == HintStatus::Valid {
            self.add_core(Core::new(core.literals, core.disjunct));
        }
        Ok(status)
    }

    fn covered(&mut self, d: usize, path: &[ActivationLiteral]) -> Result<bool> {
        if !self.config.core_pruning {
            return Ok(false);
        }
        if self.cores.iter().any(|c| c.covers(d, path)) {
            return Ok(true);
        }
        for i in 0..self.hints.len() {
            if self.hints[i].status != HintStatus::Failed
                && self.hints[i].core.covers(d, path)
                && self.validate_hint(i)? == HintStatus::Valid
            {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Decides the subtree of disjunct `d` below `prefix`.
    pub fn explore(&mut self, d: usize, prefix: SearchPath) -> Result<RegionOutcome> {
        if self.stopped {
            self.defer(d, prefix);
            return Ok(RegionOutcome::Stopped);
        }
        let mut stack = vec![prefix];
        while let Some(path) = stack.pop() {
            if self.covered(d, path.literals())? {
                continue;
            }
            let result = self.checker.check(d, path.literals())?;
            match result {
                CheckResult::Exhausted => return Ok(self.stop(d, path, stack)),
                CheckResult::Failed(_) => self.defer(d, path),
                CheckResult::Infeasible { conflict } => {
                    let core = extract_core(&mut self.checker, d, path.literals(), Some(&conflict))?;
                    let core = minimize(&mut self.checker, core)?;
                    self.add_core(core);
                }
                CheckResult::Feasible(w) => match self.analyze(d, path.literals(), &w)? {
                    Leaf::Sat(x) => {
                        self.sat = Some(SatCore {
                            witness: x,
                            path,
                            disjunct: d,
                        });
                        for open in stack {
                            self.defer(d, open);
                        }
                        return Ok(RegionOutcome::Sat);
                    }
                    Leaf::Split(id, first) => {
                        stack.push(path.child(ActivationLiteral::new(id, first.flipped())));
                        stack.push(path.child(ActivationLiteral::new(id, first)));
                    }
                    Leaf::Unknown => self.defer(d, path),
                    Leaf::Exhausted => return Ok(self.stop(d, path, stack)),
                },
            }
        }
        Ok(RegionOutcome::Closed)
    }

    fn stop(&mut self, d: usize, path: SearchPath, stack: Vec<SearchPath>) -> RegionOutcome {
        self.stopped = true;
        // deepest-first order on the stack; keep them in exploration order
        self.defer(d, path);
        for open in stack.into_iter().rev() {
            self.defer(d, open);
        }
        RegionOutcome::Stopped
    }

    fn analyze(&mut self, d: usize, path: &[ActivationLiteral], w: &NodeWitness) -> Result<Leaf> {
        let problem = self.checker.problem();
        let vars = self.checker.vars().clone();
        let x = problem.input_box().clamp(vars.input_slice(&w.assignment));
        if problem.is_counterexample(&x) {
            return Ok(Leaf::Sat(x));
        }
        let open: Vec<NeuronId> = self
            .checker
            .root_bounds()
            .unstable_neurons()
            .filter(|id| !path.iter().any(|l| l.neuron == *id))
            .collect();
        let mut best: Option<(f64, f64, NeuronId)> = None;
        for &id in &open {
            let pre = w.assignment[vars.pre(id)];
            let post = w.assignment[vars.post(id)];
            let gap = (post - pre.max(0.0)).abs();
            if gap <= RELU_VIOLATION_TOL {
                continue;
            }
            let b = w.refreshed.get(id);
            let score = if b.is_unstable() { score_neuron(b)? } else { f64::INFINITY };
            let better = match best {
                None => true,
                Some((bg, bs, bid)) => gap > bg || (gap == bg && (score < bs || (score == bs && id < bid))),
            };
            if better {
                best = Some((gap, score, id));
            }
        }
        if let Some((_, _, id)) = best {
            return Ok(Leaf::Split(id, Phase::of_value(w.assignment[vars.pre(id)])));
        }
        // The witness is exact but misses the property on a boundary.
        match self.checker.check_with_margin(d, path, BOUNDARY_MARGIN)? {
            CheckResult::Feasible(w2) => {
                let x2 = problem.input_box().clamp(vars.input_slice(&w2.assignment));
                if problem.is_counterexample(&x2) {
                    return Ok(Leaf::Sat(x2));
                }
            }
            CheckResult::Exhausted => return Ok(Leaf::Exhausted),
            _ => {}
        }
        let candidates: Vec<NeuronId> =
            open.into_iter().filter(|id| w.refreshed.get(*id).is_unstable()).collect();
        if candidates.is_empty() {
            return Ok(Leaf::Unknown);
        }
        let id = select_branch_neuron(&candidates, &w.refreshed)?;
        Ok(Leaf::Split(id, Phase::of_value(w.assignment[vars.pre(id)])))
    }

    /// Proof of everything explored so far.
    pub fn finish(self) -> ProofArtifact {
        let verdict = if self.sat.is_some() {
            Verdict::Sat
        } else if self.unchecked.is_empty() {
            Verdict::Unsat
        } else {
            Verdict::Unk
        };
        let meter = self.checker.meter();
        ProofArtifact {
            verdict,
            fingerprint: self.checker.problem().fingerprint().clone(),
            mucs: self.cores,
            sat_core: self.sat,
            unchecked: self.unchecked,
            stats: Stats {
                lp_calls: meter.lp_calls(),
                wall_time: meter.elapsed().as_secs_f64(),
            },
        }
    }

    /// Explores every disjunct root; once one is SAT or the budget is spent
    /// the remaining roots are deferred.
    pub fn run_all(&mut self) -> Result<()> {
        for d in 0..self.num_disjuncts() {
            if self.sat.is_some() || self.stopped {
                self.defer(d, SearchPath::root());
            } else {
                self.explore(d, SearchPath::root())?;
            }
        }
        Ok(())
    }
}

/// Literals of `core` on neurons whose incoming edges are all masked (or
/// zero) in `net`, so their pre-activation is the constant bias.
pub fn constant_literals(net: &Network, core: &Core) -> Vec<ActivationLiteral> {
    core.literals
        .iter()
        .filter(|l| net.contains(l.neuron) && net.is_constant_neuron(l.neuron))
        .copied()
        .collect()
}

/// Decides `problem` within `budget`, pruning with validated `hints`.
pub fn solve(problem: &VerificationProblem, budget: Budget, hints: &[Core]) -> Result<ProofArtifact> {
    solve_with(problem, budget, hints, SearchConfig::default())
}

pub fn solve_with(
    problem: &VerificationProblem,
    budget: Budget,
    hints: &[Core],
    config: SearchConfig,
) -> Result<ProofArtifact> {
    let mut search = Search::new(problem, budget, hints.to_vec(), config)?;
    search.run_all()?;
    Ok(search.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::interval_propagate;
    use crate::network::Layer;
    use crate::property::{Comparison, InputBox, OutputProperty};

    #[test]
    fn score_examples() {
        assert_eq!(score_neuron(NeuronBounds::new(-1.0, 1.0)).unwrap(), 0.0);
        assert!((score_neuron(NeuronBounds::new(-1.0, 3.0)).unwrap() - 0.5).abs() < 1e-12);
        assert!((score_neuron(NeuronBounds::new(-3.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        assert!(score_neuron(NeuronBounds::new(0.0, 1.0)).is_err());
        assert!(score_neuron(NeuronBounds::new(-1.0, 0.0)).is_err());
    }

    fn three_wide() -> (Network, InputBox) {
        // first-layer bounds over x in [-1,1]: [-1,3] (0.5), [-1,1] (0), [-0.05,1.95] (~0.95)
        let net = Network::new(
            1,
            vec![
                Layer::new(vec![vec![2.0], vec![1.0], vec![1.0]], vec![1.0, 0.0, 0.95]).unwrap(),
                Layer::new(vec![vec![1.0, 1.0, 1.0]], vec![0.0]).unwrap(),
            ],
        )
        .unwrap();
        (net, InputBox::new(vec![-1.0], vec![1.0]).unwrap())
    }

    #[test]
    fn selection_prefers_balanced() {
        let (net, b) = three_wide();
        let bounds = interval_propagate(&net, &b).unwrap();
        let all: Vec<_> = bounds.unstable_neurons().collect();
        assert_eq!(all.len(), 3);
        assert_eq!(select_branch_neuron(&all, &bounds).unwrap(), NeuronId::new(1, 2));
        assert_eq!(select_branch_neuron(&all[..1], &bounds).unwrap(), all[0]);
        assert!(select_branch_neuron(&[], &bounds).is_err());
    }

    #[test]
    fn ties_go_to_lower_position() {
        let net = Network::new(
            1,
            vec![
                Layer::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap(),
                Layer::new(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
            ],
        )
        .unwrap();
        let bounds = interval_propagate(&net, &InputBox::new(vec![-1.0], vec![1.0]).unwrap()).unwrap();
        let c = [NeuronId::new(1, 2), NeuronId::new(1, 1)];
        assert_eq!(select_branch_neuron(&c, &bounds).unwrap(), NeuronId::new(1, 1));
    }

    fn identity(q: OutputProperty) -> VerificationProblem {
        let net = Network::new(1, vec![Layer::new(vec![vec![1.0]], vec![0.0]).unwrap()]).unwrap();
        VerificationProblem::new(net, InputBox::new(vec![0.0], vec![1.0]).unwrap(), q).unwrap()
    }

    #[test]
    fn identity_unsat_at_root() {
        let p = identity(OutputProperty::atom(vec![1.0], Comparison::Ge, 0.0));
        let proof = solve(&p, Budget::default(), &[]).unwrap();
        assert_eq!(proof.verdict, Verdict::Unsat);
        assert_eq!(proof.stats.lp_calls, 1);
        assert_eq!(proof.mucs.len(), 1);
        assert!(proof.mucs[0].is_empty());
    }

    #[test]
    fn identity_sat_with_witness() {
        let p = identity(OutputProperty::atom(vec![1.0], Comparison::Gt, 0.5));
        let proof = solve(&p, Budget::default(), &[]).unwrap();
        assert_eq!(proof.verdict, Verdict::Sat);
        let w = &proof.sat_core.unwrap().witness;
        assert!((0.0..=0.5).contains(&w[0]));
        assert!(p.is_counterexample(w));
    }

    #[test]
    fn abs_network_needs_a_split() {
        // y = relu(x) + relu(-x) = |x| on [-1,1]; Q: y >= 0.1 fails near 0
        let net = Network::new(
            1,
            vec![
                Layer::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap(),
                Layer::new(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
            ],
        )
        .unwrap();
        let b = InputBox::new(vec![-1.0], vec![1.0]).unwrap();
        let sat = VerificationProblem::new(net.clone(), b.clone(), OutputProperty::atom(vec![1.0], Comparison::Ge, 0.1))
            .unwrap();
        let proof = solve(&sat, Budget::default(), &[]).unwrap();
        assert_eq!(proof.verdict, Verdict::Sat);
        assert!(sat.is_counterexample(&proof.sat_core.unwrap().witness));

        // Q: y >= -0.5 holds; the relaxation alone already proves it
        let unsat =
            VerificationProblem::new(net.clone(), b.clone(), OutputProperty::atom(vec![1.0], Comparison::Ge, -0.5)).unwrap();
        assert_eq!(solve(&unsat, Budget::default(), &[]).unwrap().verdict, Verdict::Unsat);

        let tight =
            VerificationProblem::new(net, b, OutputProperty::atom(vec![1.0], Comparison::Le, 1.0)).unwrap();
        let proof = solve(&tight, Budget::default(), &[]).unwrap();
        assert_eq!(proof.verdict, Verdict::Unsat);
        assert!(proof.mucs.iter().all(|c| c.minimal));
    }

    #[test]
    fn tiny_budget_gives_unk() {
        // y = relu(x1 + x2) + relu(x1 - x2) <= 2 on [-1,1]^2, the triangle allows 3
        let net = Network::new(
            2,
            vec![
                Layer::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0]).unwrap(),
                Layer::new(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
            ],
        )
        .unwrap();
        let b = InputBox::new(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let p = VerificationProblem::new(net, b, OutputProperty::atom(vec![1.0], Comparison::Le, 2.5)).unwrap();
        assert_eq!(solve(&p, Budget::default(), &[]).unwrap().verdict, Verdict::Unsat);
        let proof = solve(&p, Budget::lp_calls(1), &[]).unwrap();
        assert_eq!(proof.verdict, Verdict::Unk);
        assert!(!proof.unchecked.is_empty());
        proof.validate().unwrap();
    }
}
