//! Linear encodings of a verification problem.
//!
//! Variables are laid out as inputs, then for every hidden layer its
//! pre-activations `x` followed by its post-activations `x̂`, then the output
//! pre-activations. The layout depends only on the layer widths, so a network
//! and any quantized or pruned copy of it share variable identifiers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsMap, NeuronBounds, Stability};
use crate::error::{Error, Result};
use crate::lp::{ConstraintSystem, LinearConstraint, Relation};
use crate::network::{diff_classify, DiffClass, Network, NeuronId};
use crate::property::{Comparison, Inequality, VerificationProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Active,
    Inactive,
}

impl Phase {
    pub fn flipped(self) -> Self {
        match self {
            Phase::Active => Phase::Inactive,
            Phase::Inactive => Phase::Active,
        }
    }

    /// Phase of a concrete pre-activation value. Zero counts as active.
    pub fn of_value(x: f64) -> Self {
        if x >= 0.0 {
            Phase::Active
        } else {
            Phase::Inactive
        }
    }
}

/// Assertion that a hidden neuron is active (`x >= 0, x̂ = x`) or inactive
/// (`x < 0, x̂ = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "LiteralRepr", into = "LiteralRepr")]
pub struct ActivationLiteral {
    pub neuron: NeuronId,
    pub phase: Phase,
}

impl ActivationLiteral {
    pub fn new(neuron: NeuronId, phase: Phase) -> Self {
        Self { neuron, phase }
    }

    pub fn negated(&self) -> Self {
        Self::new(self.neuron, self.phase.flipped())
    }

    /// Whether the pre-activation value `x` lies in this literal's phase.
    pub fn admits(&self, x: f64) -> bool {
        Phase::of_value(x) == self.phase
    }
}

impl fmt::Display for ActivationLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.phase {
            Phase::Active => write!(f, "{}>=0", self.neuron),
            Phase::Inactive => write!(f, "{}<0", self.neuron),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LiteralRepr {
    layer: usize,
    pos: usize,
    phase: Phase,
}

impl From<LiteralRepr> for ActivationLiteral {
    fn from(r: LiteralRepr) -> Self {
        ActivationLiteral::new(NeuronId::new(r.layer, r.pos), r.phase)
    }
}

impl From<ActivationLiteral> for LiteralRepr {
    fn from(l: ActivationLiteral) -> Self {
        LiteralRepr {
            layer: l.neuron.layer,
            pos: l.neuron.pos,
            phase: l.phase,
        }
    }
}

/// Variable numbering shared by every network with the same layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarMap {
    input_dim: usize,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    output_offset: usize,
    output_dim: usize,
}

impl VarMap {
    pub fn new(net: &Network) -> Self {
        let widths: Vec<usize> = net.hidden_layers().iter().map(|l| l.width()).collect();
        let mut offsets = Vec::with_capacity(widths.len());
        let mut next = net.input_dim();
        for &w in &widths {
            offsets.push(next);
            next += 2 * w;
        }
        Self {
            input_dim: net.input_dim(),
            widths,
            offsets,
            output_offset: next,
            output_dim: net.output_dim(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.output_offset + self.output_dim
    }

    pub fn input(&self, i: usize) -> usize {
        i
    }

    pub fn pre(&self, id: NeuronId) -> usize {
        self.offsets[id.layer_index()] + id.pos_index()
    }

    pub fn post(&self, id: NeuronId) -> usize {
        self.offsets[id.layer_index()] + self.widths[id.layer_index()] + id.pos_index()
    }

    pub fn output(&self, k: usize) -> usize {
        self.output_offset + k
    }

    /// Variable holding the value fed into layer `layer_index` (0-based over
    /// all affine layers) at position `i`.
    fn layer_input(&self, layer_index: usize, i: usize) -> usize {
        if layer_index == 0 {
            self.input(i)
        } else {
            self.post(NeuronId::new(layer_index, i + 1))
        }
    }

    /// Variable produced by affine layer `layer_index` at position `j`.
    fn layer_output(&self, layer_index: usize, j: usize) -> usize {
        if layer_index == self.widths.len() {
            self.output(j)
        } else {
            self.pre(NeuronId::new(layer_index + 1, j + 1))
        }
    }

    pub fn input_slice<'a>(&self, assignment: &'a [f64]) -> &'a [f64] {
        &assignment[..self.input_dim]
    }
}

/// Origin of a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    InputLower(usize),
    InputUpper(usize),
    /// Affine row of layer `layer` (1-based over all affine layers), output `pos` (1-based).
    Affine { layer: usize, pos: usize },
    /// Phase fix of a neuron whose bounds decide its sign.
    Stable { neuron: NeuronId, part: u8 },
    Literal { neuron: NeuronId, phase: Phase, part: u8 },
    Relax { neuron: NeuronId, face: u8 },
    Property(usize),
}

impl Tag {
    pub fn literal(&self) -> Option<ActivationLiteral> {
        match *self {
            Tag::Literal { neuron, phase, .. } => Some(ActivationLiteral::new(neuron, phase)),
            _ => None,
        }
    }
}

pub type Constraint = LinearConstraint<Tag>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronMode {
    /// Marked for a case split, still encoded by its relaxation.
    SplitPending,
    Relaxed,
    Fixed(Phase),
}

/// Per-neuron encoding choice for one search node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingMode {
    modes: BTreeMap<NeuronId, NeuronMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnrelaxDirective {
    /// The search must branch on this neuron.
    Split(NeuronId),
    /// The neuron is already split or fixed; nothing to do.
    NoOp,
}

impl EncodingMode {
    /// Root mode: stable neurons fixed, unstable ones relaxed.
    pub fn from_bounds(bounds: &BoundsMap) -> Self {
        let modes = bounds
            .iter()
            .map(|(id, b)| {
                let mode = match b.stability.phase() {
                    Some(p) => NeuronMode::Fixed(p),
                    None => NeuronMode::Relaxed,
                };
                (id, mode)
            })
            .collect();
        Self { modes }
    }

    /// Mode of a node: path literals and newly stable neurons are fixed.
    pub fn for_path(refreshed: &BoundsMap, path: &[ActivationLiteral]) -> Self {
        let mut mode = Self::from_bounds(refreshed);
        for lit in path {
            mode.modes.insert(lit.neuron, NeuronMode::Fixed(lit.phase));
        }
        mode
    }

    pub fn get(&self, id: NeuronId) -> Option<NeuronMode> {
        self.modes.get(&id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NeuronId, NeuronMode)> + '_ {
        self.modes.iter().map(|(&k, &v)| (k, v))
    }

    pub fn relaxed(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.iter()
            .filter(|(_, m)| matches!(m, NeuronMode::Relaxed | NeuronMode::SplitPending))
            .map(|(id, _)| id)
    }

    /// Restoring exactness of a relaxed neuron is a case split on its two
    /// phases; the implications `x>=0 ⇒ x̂<=x` and `x<0 ⇒ x̂<=0` hold on both
    /// branches.
    pub fn unrelax(&mut self, id: NeuronId) -> UnrelaxDirective {
        match self.modes.get_mut(&id) {
            Some(m @ NeuronMode::Relaxed) => {
                *m = NeuronMode::SplitPending;
                UnrelaxDirective::Split(id)
            }
            _ => UnrelaxDirective::NoOp,
        }
    }

    pub fn fix(&mut self, lit: ActivationLiteral) {
        self.modes.insert(lit.neuron, NeuronMode::Fixed(lit.phase));
    }
}

fn relation(c: Comparison) -> Relation {
    match c {
        Comparison::Le => Relation::Le,
        Comparison::Lt => Relation::Lt,
        Comparison::Ge => Relation::Ge,
        Comparison::Gt => Relation::Gt,
    }
}

/// Input box, affine layers and property rows.
pub fn structural_constraints(problem: &VerificationProblem, disjunct: &[Inequality]) -> Vec<Constraint> {
    let net = problem.network();
    let vars = VarMap::new(net);
    let b = problem.input_box();
    let mut out = Vec::new();
    for i in 0..net.input_dim() {
        out.push(Constraint::new(vec![(vars.input(i), 1.0)], Relation::Ge, b.lower()[i], Tag::InputLower(i)));
        out.push(Constraint::new(vec![(vars.input(i), 1.0)], Relation::Le, b.upper()[i], Tag::InputUpper(i)));
    }
    for (li, layer) in net.layers().iter().enumerate() {
        for j in 0..layer.width() {
            let mut coeffs = vec![(vars.layer_output(li, j), 1.0)];
            for i in 0..layer.fan_in() {
                let w = layer.effective_weight(j, i);
                if w != 0.0 {
                    coeffs.push((vars.layer_input(li, i), -w));
                }
            }
            out.push(Constraint::new(
                coeffs,
                Relation::Eq,
                layer.bias()[j],
                Tag::Affine { layer: li + 1, pos: j + 1 },
            ));
        }
    }
    for (k, ineq) in disjunct.iter().enumerate() {
        let coeffs = ineq
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(o, &c)| (vars.output(o), c))
            .collect();
        out.push(Constraint::new(coeffs, relation(ineq.rel), ineq.rhs, Tag::Property(k)));
    }
    out
}

/// Non-strict phase fix for a neuron whose sign is decided by its bounds.
pub fn stable_constraints(vars: &VarMap, neuron: NeuronId, phase: Phase) -> Vec<Constraint> {
    let (x, xh) = (vars.pre(neuron), vars.post(neuron));
    match phase {
        Phase::Active => vec![
            Constraint::new(vec![(x, 1.0)], Relation::Ge, 0.0, Tag::Stable { neuron, part: 0 }),
            Constraint::new(vec![(xh, 1.0), (x, -1.0)], Relation::Eq, 0.0, Tag::Stable { neuron, part: 1 }),
        ],
        Phase::Inactive => vec![
            Constraint::new(vec![(x, 1.0)], Relation::Le, 0.0, Tag::Stable { neuron, part: 0 }),
            Constraint::new(vec![(xh, 1.0)], Relation::Eq, 0.0, Tag::Stable { neuron, part: 1 }),
        ],
    }
}

/// Base system for one ¬Q disjunct: box, affine layers (masked weights),
/// stable phase fixes and the disjunct's rows. Unstable neurons carry no
/// ReLU constraint yet.
pub fn encode_base(
    problem: &VerificationProblem,
    bounds: &BoundsMap,
    disjunct: usize,
) -> Result<ConstraintSystem<Tag>> {
    let disjuncts = problem.negated_disjuncts();
    let d = disjuncts.get(disjunct).ok_or_else(|| {
        Error::ContractViolation(format!(
            "disjunct {disjunct} out of range ({} disjuncts)",
            disjuncts.len()
        ))
    })?;
    let vars = VarMap::new(problem.network());
    let mut sys = ConstraintSystem::new(vars.num_vars());
    sys.assert_all(structural_constraints(problem, d))?;
    for (id, b) in bounds.iter() {
        if let Some(phase) = b.stability.phase() {
            sys.assert_all(stable_constraints(&vars, id, phase))?;
        }
    }
    Ok(sys)
}

/// Triangle relaxation of an unstable neuron with bounds `l < 0 < u`:
/// `x̂ >= 0`, `x̂ >= x`, `x̂ <= u/(u-l)·(x-l)`.
pub fn relax_neuron_constraints(vars: &VarMap, neuron: NeuronId, bounds: NeuronBounds) -> Result<Vec<Constraint>> {
    if bounds.stability != Stability::Unstable {
        return Err(Error::ContractViolation(format!(
            "relaxing stable neuron {neuron} with bounds [{}, {}]",
            bounds.lower, bounds.upper
        )));
    }
    let (x, xh) = (vars.pre(neuron), vars.post(neuron));
    let (l, u) = (bounds.lower, bounds.upper);
    let slope = u / (u - l);
    Ok(vec![
        Constraint::new(vec![(xh, 1.0)], Relation::Ge, 0.0, Tag::Relax { neuron, face: 0 }),
        Constraint::new(vec![(xh, 1.0), (x, -1.0)], Relation::Ge, 0.0, Tag::Relax { neuron, face: 1 }),
        Constraint::new(vec![(xh, 1.0), (x, -slope)], Relation::Le, -slope * l, Tag::Relax { neuron, face: 2 }),
    ])
}

/// Exact constraints of one phase of a neuron.
pub fn literal_constraints(vars: &VarMap, lit: ActivationLiteral) -> Vec<Constraint> {
    let neuron = lit.neuron;
    let (x, xh) = (vars.pre(neuron), vars.post(neuron));
    let tag = |part| Tag::Literal { neuron, phase: lit.phase, part };
    match lit.phase {
        Phase::Active => vec![
            Constraint::new(vec![(x, 1.0)], Relation::Ge, 0.0, tag(0)),
            Constraint::new(vec![(xh, 1.0), (x, -1.0)], Relation::Eq, 0.0, tag(1)),
        ],
        Phase::Inactive => vec![
            Constraint::new(vec![(x, 1.0)], Relation::Lt, 0.0, tag(0)),
            Constraint::new(vec![(xh, 1.0)], Relation::Eq, 0.0, tag(1)),
        ],
    }
}

/// Constraints a search node adds on top of the base system.
///
/// `root` are the bounds the base was built from, `refreshed` the bounds under
/// the node's literals. Root-unstable neurons are fixed by a literal, fixed as
/// stable when the refreshed bounds decide them, or relaxed with the refreshed
/// bounds. Literals on root-stable neurons are asserted as well.
pub fn node_constraints(
    vars: &VarMap,
    root: &BoundsMap,
    refreshed: &BoundsMap,
    path: &[ActivationLiteral],
) -> Result<Vec<Constraint>> {
    let mode = EncodingMode::for_path(refreshed, path);
    let mut out = Vec::new();
    for lit in path {
        out.extend(literal_constraints(vars, *lit));
    }
    for (id, b) in root.iter() {
        if !b.is_unstable() || path.iter().any(|l| l.neuron == id) {
            continue;
        }
        match mode.get(id) {
            Some(NeuronMode::Fixed(p)) => out.extend(stable_constraints(vars, id, p)),
            _ => out.extend(relax_neuron_constraints(vars, id, refreshed.get(id))?),
        }
    }
    Ok(out)
}

/// Base system of a compressed network `f'` (carried by `problem`) that must
/// be related to `original` by quantization or pruning. Bounds are recomputed
/// for `f'`; variable numbering matches `original`.
pub fn encode_for_compressed(
    original: &Network,
    problem: &VerificationProblem,
    disjunct: usize,
) -> Result<(ConstraintSystem<Tag>, BoundsMap)> {
    if diff_classify(original, problem.network()) == DiffClass::Incompatible {
        return Err(Error::Incompatible(
            "compressed network does not match the original architecture".into(),
        ));
    }
    let bounds = crate::bounds::interval_propagate(problem.network(), problem.input_box())?;
    let sys = encode_base(problem, &bounds, disjunct)?;
    Ok((sys, bounds))
}
