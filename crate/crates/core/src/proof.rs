//! The proof `p(f, P, Q)` left behind by a solve: minimal unsat cores, the
//! SAT core, and prefixes the search never finished.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::check::{Budget, PathChecker};
use crate::encoder::ActivationLiteral;
use crate::error::{Error, Result};
use crate::muc::{check_core, Core, CoreCheck};
use crate::property::{Fingerprint, VerificationProblem};

pub const PROOF_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Sat,
    Unsat,
    Unk,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Sat => "SAT",
            Verdict::Unsat => "UNSAT",
            Verdict::Unk => "UNK",
        })
    }
}

/// Literals from the root of the search tree, in decision order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchPath(Vec<ActivationLiteral>);

impl SearchPath {
    pub fn new(literals: Vec<ActivationLiteral>) -> Result<Self> {
        for (i, l) in literals.iter().enumerate() {
            if literals[..i].iter().any(|m| m.neuron == l.neuron) {
                return Err(Error::InvalidInput(format!("neuron {} appears twice on a path", l.neuron)));
            }
        }
        Ok(Self(literals))
    }

    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn literals(&self) -> &[ActivationLiteral] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The path extended by one decision.
    pub fn child(&self, lit: ActivationLiteral) -> Self {
        debug_assert!(!self.0.iter().any(|l| l.neuron == lit.neuron));
        let mut v = self.0.clone();
        v.push(lit);
        Self(v)
    }

    /// Size of the symmetric difference of the two literal sets.
    pub fn distance(&self, other: &SearchPath) -> usize {
        let only_self = self.0.iter().filter(|l| !other.0.contains(l)).count();
        let only_other = other.0.iter().filter(|l| !self.0.contains(l)).count();
        only_self + only_other
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatCore {
    pub witness: Vec<f64>,
    pub path: SearchPath,
    pub disjunct: usize,
}

/// A subtree of disjunct `disjunct` that the search did not decide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UncheckedPath {
    pub path: SearchPath,
    pub disjunct: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stats {
    pub lp_calls: u64,
    /// Seconds.
    pub wall_time: f64,
}

impl Stats {
    pub fn wall_duration(&self) -> Duration {
        Duration::from_secs_f64(self.wall_time.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProofArtifact {
    pub verdict: Verdict,
    pub fingerprint: Fingerprint,
    pub mucs: Vec<Core>,
    pub sat_core: Option<SatCore>,
    pub unchecked: Vec<UncheckedPath>,
    pub stats: Stats,
}

impl ProofArtifact {
    /// Checks the verdict/field invariants and that no core of a disjunct
    /// contains another core of the same disjunct.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        match self.verdict {
            Verdict::Sat if self.sat_core.is_none() => return bad("SAT proof without a SAT core"),
            Verdict::Unsat if !self.unchecked.is_empty() => return bad("UNSAT proof with unchecked paths"),
            Verdict::Unsat if self.sat_core.is_some() => return bad("UNSAT proof with a SAT core"),
            Verdict::Unk if self.unchecked.is_empty() => return bad("UNK proof without unchecked paths"),
            _ => {}
        }
        for (i, a) in self.mucs.iter().enumerate() {
            for (j, b) in self.mucs.iter().enumerate() {
                if i != j && a.disjunct == b.disjunct && b.is_subset_of(&a.literals) && (a.len() > b.len() || i > j) {
                    return bad("core list contains a superset of another core");
                }
            }
            SearchPath::new(a.literals.clone())?;
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let file = ProofFile {
            version: PROOF_VERSION,
            verdict: self.verdict,
            fingerprint: self.fingerprint.to_string(),
            mucs: self.mucs.iter().map(|c| c.literals.clone()).collect(),
            muc_disjuncts: Some(self.mucs.iter().map(|c| c.disjunct).collect()),
            muc_minimal: Some(self.mucs.iter().map(|c| c.minimal).collect()),
            sat_core: self.sat_core.as_ref().map(|s| SatCoreFile {
                witness: s.witness.clone(),
                path: s.path.clone(),
                disjunct: s.disjunct,
            }),
            unchecked: self.unchecked.iter().map(|u| u.path.clone()).collect(),
            unchecked_disjuncts: Some(self.unchecked.iter().map(|u| u.disjunct).collect()),
            stats: StatsFile {
                lp_calls: self.stats.lp_calls,
                wall_time: self.stats.wall_time,
            },
        };
        serde_json::to_string_pretty(&file).expect("proof serializes")
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(PROOF_VERSION) => {}
            Some(v) => return Err(Error::VersionMismatch(format!("{origin}: version {v}"))),
            None => return Err(Error::VersionMismatch(format!("{origin}: missing version"))),
        }
        let file: ProofFile = serde_json::from_value(value).map_err(|e| Error::parse(origin, e))?;
        let fingerprint: Fingerprint = file.fingerprint.parse().map_err(|e| Error::parse(origin, e))?;
        let muc_disjuncts = file.muc_disjuncts.unwrap_or_else(|| vec![0; file.mucs.len()]);
        let unchecked_disjuncts = file.unchecked_disjuncts.unwrap_or_else(|| vec![0; file.unchecked.len()]);
        let muc_minimal = file.muc_minimal.unwrap_or_else(|| vec![false; file.mucs.len()]);
        if muc_disjuncts.len() != file.mucs.len() || muc_minimal.len() != file.mucs.len() || unchecked_disjuncts.len() != file.unchecked.len() {
            return Err(Error::parse(origin, "disjunct index lists do not match their paths"));
        }
        let mucs = file
            .mucs
            .into_iter()
            .zip(muc_disjuncts)
            .zip(muc_minimal)
            .map(|((literals, disjunct), minimal)| Core {
                literals,
                minimal,
                disjunct,
            })
            .collect();
        let unchecked = file
            .unchecked
            .into_iter()
            .zip(unchecked_disjuncts)
            .map(|(path, disjunct)| UncheckedPath { path, disjunct })
            .collect();
        let proof = ProofArtifact {
            verdict: file.verdict,
            fingerprint,
            mucs,
            sat_core: file.sat_core.map(|s| SatCore {
                witness: s.witness,
                path: s.path,
                disjunct: s.disjunct,
            }),
            unchecked,
            stats: Stats {
                lp_calls: file.stats.lp_calls,
                wall_time: file.stats.wall_time,
            },
        };
        let paths = proof
            .unchecked
            .iter()
            .map(|u| &u.path)
            .chain(proof.sat_core.as_ref().map(|s| &s.path));
        for p in paths {
            SearchPath::new(p.literals().to_vec()).map_err(|e| Error::parse(origin, e))?;
        }
        proof.validate().map_err(|e| Error::parse(origin, e))?;
        Ok(proof)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProofFile {
    version: u64,
    verdict: Verdict,
    fingerprint: String,
    mucs: Vec<Vec<ActivationLiteral>>,
    #[serde(default)]
    muc_disjuncts: Option<Vec<usize>>,
    #[serde(default)]
    muc_minimal: Option<Vec<bool>>,
    sat_core: Option<SatCoreFile>,
    unchecked: Vec<SearchPath>,
    #[serde(default)]
    unchecked_disjuncts: Option<Vec<usize>>,
    stats: StatsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SatCoreFile {
    witness: Vec<f64>,
    path: SearchPath,
    #[serde(default)]
    disjunct: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsFile {
    lp_calls: u64,
    wall_time: f64,
}

/// Replays every core of `proof` on `problem` (typically the compressed
/// network with the original box and property).
pub fn core_checks(proof: &ProofArtifact, problem: &VerificationProblem, budget: Budget) -> Result<Vec<CoreCheck>> {
    if !proof.fingerprint.same_specification(problem.fingerprint())
        || proof.fingerprint.architecture != problem.fingerprint().architecture
    {
        return Err(Error::FingerprintMismatch(format!(
            "proof {} does not belong to {}",
            proof.fingerprint,
            problem.fingerprint()
        )));
    }
    let mut checker = PathChecker::new(problem, budget)?;
    proof.mucs.iter().map(|c| check_core(&mut checker, c)).collect()
}

/// Fraction of the proof's cores that are still infeasible on `problem`.
/// `None` when the proof has no cores; undecided checks count as failures.
pub fn proof_validity(proof: &ProofArtifact, problem: &VerificationProblem) -> Result<Option<f64>> {
    let checks = core_checks(proof, problem, Budget::lp_calls(u64::MAX))?;
    Ok(validity_ratio(
        checks.iter().filter(|c| **c == CoreCheck::StillUnsat).count(),
        checks.len(),
    ))
}

pub fn validity_ratio(still_unsat: usize, checked: usize) -> Option<f64> {
    (checked > 0).then(|| still_unsat as f64 / checked as f64)
}

/// `t_scratch / t_incremental`.
pub fn speedup(t_scratch: Duration, t_incremental: Duration) -> Result<f64> {
    if t_scratch.is_zero() || t_incremental.is_zero() {
        return Err(Error::InvalidInput("speedup needs positive durations".into()));
    }
    Ok(t_scratch.as_secs_f64() / t_incremental.as_secs_f64())
}
