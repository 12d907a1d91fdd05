//! Re-verification of a compressed network `f'` guided by the proof of `f`.
//!
//! The old proof partitions each disjunct's phase space into core regions,
//! unchecked prefixes and the SAT path. Replaying it means re-checking core
//! regions (one LP call each) and searching only the regions whose status may
//! have changed: the SAT path, the unchecked prefixes nearest to it first, and
//! the cores that no longer hold.

use std::time::{Duration, Instant};

use crate::check::Budget;
use crate::encoder::ActivationLiteral;
use crate::error::{Error, Result};
use crate::network::{diff_classify, DiffClass, Network};
use crate::proof::{validity_ratio, ProofArtifact, SearchPath, Stats, UncheckedPath, Verdict};
use crate::property::VerificationProblem;
use crate::search::{constant_literals, solve, HintStatus, RegionOutcome, Search, SearchConfig};

/// Node cap for the coverage check before falling back to a fresh solve.
const COVERAGE_NODE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReuseReport {
    pub verdict: Verdict,
    pub cores_reused: usize,
    pub cores_failed: usize,
    pub branches_reopened: usize,
    /// `cores_reused / (cores_reused + cores_failed)`; `None` when no core
    /// was checked.
    pub validity: Option<f64>,
    pub time: Duration,
    pub lp_calls: u64,
    /// The stored witness was still a counterexample.
    pub fast_path: bool,
    /// The old proof did not cover the phase space and a fresh solve ran.
    pub fell_back: bool,
}

#[derive(Debug, Clone)]
pub struct ReverifyOutcome {
    pub verdict: Verdict,
    pub proof: ProofArtifact,
    pub report: ReuseReport,
}

/// Re-verifies `(f', P, Q)` from the proof of `problem_of_f`.
pub fn reverify(
    f_prime: &Network,
    problem_of_f: &VerificationProblem,
    proof: &ProofArtifact,
    budget: Budget,
) -> Result<ReverifyOutcome> {
    if proof.fingerprint != *problem_of_f.fingerprint() {
        return Err(Error::FingerprintMismatch(format!(
            "proof {} was not produced for {}",
            proof.fingerprint,
            problem_of_f.fingerprint()
        )));
    }
    if diff_classify(problem_of_f.network(), f_prime) == DiffClass::Incompatible {
        return Err(Error::Incompatible("f' is neither a quantized nor a pruned copy of f".into()));
    }
    let compressed = problem_of_f.with_network(f_prime.clone())?;
    replay(&compressed, proof, budget)
}

/// Variant for when only `f'` is at hand: the proof must agree with
/// `compressed` on architecture, input box and property.
pub fn reverify_compressed(
    compressed: &VerificationProblem,
    proof: &ProofArtifact,
    budget: Budget,
) -> Result<ReverifyOutcome> {
    let fp = compressed.fingerprint();
    if proof.fingerprint.architecture != fp.architecture || !proof.fingerprint.same_specification(fp) {
        return Err(Error::FingerprintMismatch(format!(
            "proof {} does not match {}",
            proof.fingerprint, fp
        )));
    }
    replay(compressed, proof, budget)
}

fn replay(problem: &VerificationProblem, proof: &ProofArtifact, budget: Budget) -> Result<ReverifyOutcome> {
    let start = Instant::now();
    let disjuncts = problem.negated_disjuncts().len();
    if !covers_phase_space(proof, disjuncts) {
        let fresh = solve(problem, budget, &[])?;
        let report = ReuseReport {
            verdict: fresh.verdict,
            cores_reused: 0,
            cores_failed: 0,
            branches_reopened: 0,
            validity: None,
            time: start.elapsed(),
            lp_calls: fresh.stats.lp_calls,
            fast_path: false,
            fell_back: true,
        };
        return Ok(ReverifyOutcome {
            verdict: fresh.verdict,
            proof: fresh,
            report,
        });
    }

    if let Some(sc) = proof.sat_core.as_ref().filter(|_| proof.verdict == Verdict::Sat) {
        if problem.is_counterexample(&sc.witness) {
            return Ok(fast_path(problem, proof, start));
        }
    }

    let mut search = Search::new(problem, budget, proof.mucs.clone(), SearchConfig::default())?;
    let mut regions: Vec<(usize, SearchPath)> = Vec::new();
    let sat_path = match (&proof.sat_core, proof.verdict) {
        (Some(sc), Verdict::Sat) => {
            regions.push((sc.disjunct, sc.path.clone()));
            Some(sc.path.clone())
        }
        _ => None,
    };
    let mut unchecked: Vec<&UncheckedPath> = proof.unchecked.iter().collect();
    unchecked.sort_by_key(|u| match &sat_path {
        Some(p) => u.path.distance(p),
        None => u.path.len(),
    });
    regions.extend(unchecked.into_iter().map(|u| (u.disjunct, u.path.clone())));

    let mut sat = false;
    for (d, path) in regions {
        if sat {
            search.defer(d, path);
            continue;
        }
        sat = search.explore(d, path)? == RegionOutcome::Sat;
    }

    let mut reopened = 0;
    for i in 0..search.hints().len() {
        let core = search.hints()[i].core.clone();
        if sat || search.is_stopped() {
            if search.hints()[i].status != HintStatus::Valid {
                search.defer(core.disjunct, SearchPath::new(core.literals)?);
            }
            continue;
        }
        match search.validate_hint(i)? {
            HintStatus::Valid => {}
            HintStatus::Pending => search.defer(core.disjunct, SearchPath::new(core.literals)?),
            HintStatus::Failed => {
                reopened += 1;
                let dropped = constant_literals(problem.network(), &core);
                let prefix: Vec<ActivationLiteral> =
                    core.literals.into_iter().filter(|l| !dropped.contains(l)).collect();
                sat = search.explore(core.disjunct, SearchPath::new(prefix)?)? == RegionOutcome::Sat;
            }
        }
    }

    let reused = search.hints().iter().filter(|h| h.status == HintStatus::Valid).count();
    let failed = search.hints().iter().filter(|h| h.status == HintStatus::Failed).count();
    let new_proof = search.finish();
    let report = ReuseReport {
        verdict: new_proof.verdict,
        cores_reused: reused,
        cores_failed: failed,
        branches_reopened: reopened,
        validity: validity_ratio(reused, reused + failed),
        time: start.elapsed(),
        lp_calls: new_proof.stats.lp_calls,
        fast_path: false,
        fell_back: false,
    };
    Ok(ReverifyOutcome {
        verdict: new_proof.verdict,
        proof: new_proof,
        report,
    })
}

/// The stored counterexample still works: the SAT path keeps it and every
/// other region of the old proof becomes unchecked.
fn fast_path(problem: &VerificationProblem, proof: &ProofArtifact, start: Instant) -> ReverifyOutcome {
    let mut unchecked = proof.unchecked.clone();
    unchecked.extend(proof.mucs.iter().map(|c| UncheckedPath {
        path: SearchPath::new(c.literals.clone()).expect("cores have distinct neurons"),
        disjunct: c.disjunct,
    }));
    let time = start.elapsed();
    let new_proof = ProofArtifact {
        verdict: Verdict::Sat,
        fingerprint: problem.fingerprint().clone(),
        mucs: Vec::new(),
        sat_core: proof.sat_core.clone(),
        unchecked,
        stats: Stats {
            lp_calls: 0,
            wall_time: time.as_secs_f64(),
        },
    };
    ReverifyOutcome {
        verdict: Verdict::Sat,
        proof: new_proof,
        report: ReuseReport {
            verdict: Verdict::Sat,
            cores_reused: 0,
            cores_failed: 0,
            branches_reopened: 0,
            validity: None,
            time,
            lp_calls: 0,
            fast_path: true,
            fell_back: false,
        },
    }
}

/// Whether, for every disjunct, each complete phase assignment extends one
/// of the proof's regions (cores, unchecked prefixes, the SAT path).
pub fn covers_phase_space(proof: &ProofArtifact, disjuncts: usize) -> bool {
    let mut nodes = COVERAGE_NODE_LIMIT;
    (0..disjuncts).all(|d| {
        let mut regions: Vec<&[ActivationLiteral]> = proof
            .mucs
            .iter()
            .filter(|c| c.disjunct == d)
            .map(|c| c.literals.as_slice())
            .chain(proof.unchecked.iter().filter(|u| u.disjunct == d).map(|u| u.path.literals()))
            .collect();
        if let Some(sc) = proof.sat_core.as_ref().filter(|s| s.disjunct == d) {
            regions.push(sc.path.literals());
        }
        covered(&mut Vec::new(), &regions, &mut nodes)
    })
}

fn covered(prefix: &mut Vec<ActivationLiteral>, regions: &[&[ActivationLiteral]], nodes: &mut usize) -> bool {
    if *nodes == 0 {
        return false;
    }
    *nodes -= 1;
    if regions.iter().any(|r| r.iter().all(|l| prefix.contains(l))) {
        return true;
    }
    let compatible: Vec<&[ActivationLiteral]> = regions
        .iter()
        .filter(|r| !r.iter().any(|l| prefix.contains(&l.negated())))
        .copied()
        .collect();
    let Some(next) = compatible
        .iter()
        .flat_map(|r| r.iter())
        .find(|l| !prefix.contains(l))
        .copied()
    else {
        return false;
    };
    for lit in [next, next.negated()] {
        prefix.push(lit);
        let ok = covered(prefix, &compatible, nodes);
        prefix.pop();
        if !ok {
            return false;
        }
    }
    true
}
