//! Exhaustive reference verifier: enumerates activation patterns layer by
//! layer and decides each one with the exact simplex in `rational`.
//!
//! Parameters are read as the decimal they print as (`0.1` is 1/10), which is
//! how every test network here is written down.

use std::collections::HashMap;

use num::{One, Zero};
use reluver::{ActivationLiteral, Comparison, NeuronId, Phase, VerificationProblem};

use super::rational::{feasible_point, to_f64, Rel, Row, Q};

/// Affine form over the inputs: coefficients then constant.
type Form = (Vec<Q>, Q);

pub fn dec(v: f64) -> Q {
    let text = format!("{v:e}");
    let (mant, exp) = text.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent");
    let (neg, digits) = match mant.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mant),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let all: num::BigInt = format!("{int}{frac}").parse().expect("digits");
    let scale = exp - frac.len() as i32;
    let ten = num::BigInt::from(10);
    let mut r = Q::from_integer(all);
    if scale >= 0 {
        r *= Q::from_integer(num::pow(ten, scale as usize));
    } else {
        r /= Q::from_integer(num::pow(ten, (-scale) as usize));
    }
    if neg {
        -r
    } else {
        r
    }
}

fn row_of(form: &Form, rel: Rel, rhs: Q) -> Row {
    Row {
        coeffs: form.0.iter().cloned().enumerate().filter(|(_, c)| !c.is_zero()).collect(),
        rel,
        rhs: rhs - form.1.clone(),
    }
}

fn rel_of(c: Comparison) -> Rel {
    match c {
        Comparison::Le => Rel::Le,
        Comparison::Lt => Rel::Lt,
        Comparison::Ge => Rel::Ge,
        Comparison::Gt => Rel::Gt,
    }
}

struct Enumerator<'a> {
    problem: &'a VerificationProblem,
    fixed: HashMap<NeuronId, Phase>,
    disjuncts: Vec<usize>,
    n: usize,
    patterns: u64,
}

impl Enumerator<'_> {
    fn layer_forms(&self, layer: usize, prev: &[Form]) -> Vec<Form> {
        let l = &self.problem.network().layers()[layer];
        (0..l.width())
            .map(|j| {
                let mut coeffs = vec![Q::zero(); self.n];
                let mut constant = dec(l.bias()[j]);
                for (i, (pc, pk)) in prev.iter().enumerate() {
                    let w = l.effective_weight(j, i);
                    if w == 0.0 {
                        continue;
                    }
                    let w = dec(w);
                    for (c, p) in coeffs.iter_mut().zip(pc) {
                        *c += w.clone() * p.clone();
                    }
                    constant += w * pk.clone();
                }
                (coeffs, constant)
            })
            .collect()
    }

    /// DFS over the neurons of hidden layer `layer`, position `pos`.
    fn dfs(&mut self, layer: usize, pos: usize, pre: Vec<Form>, post: Vec<Form>, rows: &mut Vec<Row>) -> Option<Vec<f64>> {
        let net = self.problem.network();
        let hidden = net.depth() - 1;
        if layer == hidden {
            self.patterns += 1;
            let out = self.layer_forms(layer, &post);
            let disjuncts = self.problem.negated_disjuncts();
            for &d in &self.disjuncts {
                let mut all = rows.clone();
                for ineq in &disjuncts[d] {
                    let mut coeffs = vec![Q::zero(); self.n];
                    let mut constant = Q::zero();
                    for (k, c) in ineq.coeffs.iter().enumerate() {
                        let c = dec(*c);
                        for (acc, v) in coeffs.iter_mut().zip(&out[k].0) {
                            *acc += c.clone() * v.clone();
                        }
                        constant += c * out[k].1.clone();
                    }
                    all.push(row_of(&(coeffs, constant), rel_of(ineq.rel), dec(ineq.rhs)));
                }
                if let Some(p) = feasible_point(self.n, &all) {
                    return Some(p.iter().map(to_f64).collect());
                }
            }
            return None;
        }
        if pos == pre.len() {
            if layer + 1 == hidden {
                return self.dfs(hidden, 0, Vec::new(), post, rows);
            }
            let next = self.layer_forms(layer + 1, &post);
            return self.dfs(layer + 1, 0, next, Vec::new(), rows);
        }
        let id = NeuronId::new(layer + 1, pos + 1);
        let phases: Vec<(Phase, Rel)> = match self.fixed.get(&id) {
            Some(Phase::Active) => vec![(Phase::Active, Rel::Ge)],
            Some(Phase::Inactive) => vec![(Phase::Inactive, Rel::Lt)],
            None => vec![(Phase::Active, Rel::Ge), (Phase::Inactive, Rel::Le)],
        };
        for (phase, rel) in phases {
            rows.push(row_of(&pre[pos], rel, Q::zero()));
            if feasible_point(self.n, rows).is_some() {
                let mut post2 = post.clone();
                post2.push(match phase {
                    Phase::Active => pre[pos].clone(),
                    Phase::Inactive => (vec![Q::zero(); self.n], Q::zero()),
                });
                if let Some(x) = self.dfs(layer, pos + 1, pre.clone(), post2, rows) {
                    rows.pop();
                    return Some(x);
                }
            }
            rows.pop();
        }
        None
    }
}

/// Whether some input in the box, consistent with `fixed`, violates the
/// property (restricted to one negated disjunct when given). Returns the
/// exact witness rounded to `f64`.
pub fn exists_counterexample(
    problem: &VerificationProblem,
    fixed: &[ActivationLiteral],
    disjunct: Option<usize>,
) -> Option<Vec<f64>> {
    let n = problem.network().input_dim();
    let total = problem.negated_disjuncts().len();
    let mut e = Enumerator {
        problem,
        fixed: fixed.iter().map(|l| (l.neuron, l.phase)).collect(),
        disjuncts: match disjunct {
            Some(d) => vec![d],
            None => (0..total).collect(),
        },
        n,
        patterns: 0,
    };
    let mut rows = Vec::new();
    let b = problem.input_box();
    for i in 0..n {
        let mut unit = vec![Q::zero(); n];
        unit[i] = Q::one();
        rows.push(row_of(&(unit.clone(), Q::zero()), Rel::Ge, dec(b.lower()[i])));
        rows.push(row_of(&(unit, Q::zero()), Rel::Le, dec(b.upper()[i])));
    }
    let inputs: Vec<Form> = (0..n)
        .map(|i| {
            let mut unit = vec![Q::zero(); n];
            unit[i] = Q::one();
            (unit, Q::zero())
        })
        .collect();
    if problem.network().depth() == 1 {
        // no hidden layer: the output is affine in the input
        let mut e2 = e;
        return e2.dfs(0, 0, Vec::new(), inputs, &mut rows);
    }
    let first = e.layer_forms(0, &inputs);
    e.dfs(0, 0, first, Vec::new(), &mut rows)
}

/// Exact verdict: `true` when the property holds on the whole box.
pub fn holds(problem: &VerificationProblem) -> bool {
    exists_counterexample(problem, &[], None).is_none()
}
