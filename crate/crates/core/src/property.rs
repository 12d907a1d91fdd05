//! Input boxes, linear output properties and their negation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Le,
    Lt,
    Ge,
    Gt,
}

impl Comparison {
    /// The comparison that holds exactly when `self` fails.
    pub fn negated(self) -> Self {
        match self {
            Comparison::Le => Comparison::Gt,
            Comparison::Lt => Comparison::Ge,
            Comparison::Ge => Comparison::Lt,
            Comparison::Gt => Comparison::Le,
        }
    }

    pub fn is_strict(self) -> bool {
        matches!(self, Comparison::Lt | Comparison::Gt)
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Le => lhs <= rhs,
            Comparison::Lt => lhs < rhs,
            Comparison::Ge => lhs >= rhs,
            Comparison::Gt => lhs > rhs,
        }
    }
}

/// `coeffs · y  rel  rhs` over the output vector `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inequality {
    pub coeffs: Vec<f64>,
    pub rel: Comparison,
    pub rhs: f64,
}

impl Inequality {
    pub fn new(coeffs: Vec<f64>, rel: Comparison, rhs: f64) -> Self {
        Self { coeffs, rel, rhs }
    }

    pub fn negated(&self) -> Self {
        Self {
            coeffs: self.coeffs.clone(),
            rel: self.rel.negated(),
            rhs: self.rhs,
        }
    }

    pub fn lhs(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    pub fn holds(&self, y: &[f64]) -> bool {
        self.rel.holds(self.lhs(y), self.rhs)
    }
}

/// Disjunction of conjunctions of output inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputProperty {
    clauses: Vec<Vec<Inequality>>,
}

impl OutputProperty {
    pub fn new(clauses: Vec<Vec<Inequality>>) -> Result<Self> {
        if clauses.is_empty() || clauses.iter().any(Vec::is_empty) {
            return Err(Error::InvalidInput(
                "property needs at least one non-empty clause".into(),
            ));
        }
        if clauses
            .iter()
            .flatten()
            .any(|q| !q.rhs.is_finite() || q.coeffs.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidInput("non-finite property coefficient".into()));
        }
        Ok(Self { clauses })
    }

    /// Single-inequality property.
    pub fn atom(coeffs: Vec<f64>, rel: Comparison, rhs: f64) -> Self {
        Self {
            clauses: vec![vec![Inequality::new(coeffs, rel, rhs)]],
        }
    }

    pub fn clauses(&self) -> &[Vec<Inequality>] {
        &self.clauses
    }

    /// Number of outputs the coefficients refer to, if consistent.
    fn arity(&self) -> Option<usize> {
        let n = self.clauses[0][0].coeffs.len();
        self.clauses
            .iter()
            .flatten()
            .all(|q| q.coeffs.len() == n)
            .then_some(n)
    }
}

/// De Morgan negation, distributed back into disjunctive form.
pub fn negate(q: &OutputProperty) -> OutputProperty {
    let mut disjuncts: Vec<Vec<Inequality>> = vec![Vec::new()];
    for clause in &q.clauses {
        let mut next = Vec::with_capacity(disjuncts.len() * clause.len());
        for partial in &disjuncts {
            for ineq in clause {
                let mut d = partial.clone();
                d.push(ineq.negated());
                next.push(d);
            }
        }
        disjuncts = next;
    }
    OutputProperty { clauses: disjuncts }
}

/// True iff some clause has all of its inequalities satisfied by `y`.
pub fn eval_property(q: &OutputProperty, y: &[f64]) -> Result<bool> {
    if let Some(bad) = q.clauses.iter().flatten().find(|i| i.coeffs.len() != y.len()) {
        return Err(Error::DimensionMismatch(format!(
            "property has {} coefficients, output has {} entries",
            bad.coeffs.len(),
            y.len()
        )));
    }
    Ok(q.clauses.iter().any(|c| c.iter().all(|i| i.holds(y))))
}

/// Axis-aligned input region `l <= x <= u`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} lower bounds, {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::InvalidInput(format!(
                    "input {} has invalid bounds [{l}, {u}]",
                    j + 1
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Projects `x` onto the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }
}

/// Content hash of a verification problem, split into components so that a
/// proof can be matched against a compressed network of the same family.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    pub architecture: String,
    pub network: String,
    pub input_box: String,
    pub property: String,
}

impl Fingerprint {
    pub fn of(network: &Network, input_box: &InputBox, property: &OutputProperty) -> Self {
        Self {
            architecture: architecture_hash(network),
            network: network_hash(network),
            input_box: digest(|h| {
                for v in input_box.lower.iter().chain(&input_box.upper) {
                    h.update(v.to_bits().to_le_bytes());
                }
            }),
            property: digest(|h| {
                for clause in &property.clauses {
                    h.update(b"(");
                    for q in clause {
                        for c in &q.coeffs {
                            h.update(c.to_bits().to_le_bytes());
                        }
                        h.update([q.rel as u8]);
                        h.update(q.rhs.to_bits().to_le_bytes());
                    }
                    h.update(b")");
                }
            }),
        }
    }

    /// Same input box and property; architecture may be compared separately.
    pub fn same_specification(&self, other: &Fingerprint) -> bool {
        self.input_box == other.input_box && self.property == other.property
    }
}

fn digest(feed: impl FnOnce(&mut Sha256)) -> String {
    let mut h = Sha256::new();
    feed(&mut h);
    let bytes = h.finalize();
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn architecture_hash(net: &Network) -> String {
    digest(|h| {
        for d in net.dims() {
            h.update((d as u64).to_le_bytes());
        }
    })
}

fn network_hash(net: &Network) -> String {
    digest(|h| {
        for d in net.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for layer in net.layers() {
            for (row, mask) in layer.weights().iter().zip(layer.prune_mask()) {
                for (w, m) in row.iter().zip(mask) {
                    h.update(w.to_bits().to_le_bytes());
                    h.update([*m as u8]);
                }
            }
            for b in layer.bias() {
                h.update(b.to_bits().to_le_bytes());
            }
        }
    })
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "arch:{};net:{};box:{};prop:{}",
            self.architecture, self.network, self.input_box, self.property
        )
    }
}

impl FromStr for Fingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = [None, None, None, None];
        for piece in s.split(';') {
            let (key, value) = piece
                .split_once(':')
                .ok_or_else(|| Error::parse("fingerprint", format!("bad component {piece:?}")))?;
            let slot = match key {
                "arch" => 0,
                "net" => 1,
                "box" => 2,
                "prop" => 3,
                _ => return Err(Error::parse("fingerprint", format!("unknown key {key:?}"))),
            };
            parts[slot] = Some(value.to_string());
        }
        let [Some(a), Some(n), Some(b), Some(p)] = parts else {
            return Err(Error::parse("fingerprint", "missing component"));
        };
        Ok(Self {
            architecture: a,
            network: n,
            input_box: b,
            property: p,
        })
    }
}

/// A network together with the input region P and the output property Q.
#[derive(Debug, Clone)]
pub struct VerificationProblem {
    network: Network,
    input_box: InputBox,
    property: OutputProperty,
    fingerprint: Fingerprint,
}

impl VerificationProblem {
    pub fn new(network: Network, input_box: InputBox, property: OutputProperty) -> Result<Self> {
        if input_box.dim() != network.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input box has {} dimensions, network takes {}",
                input_box.dim(),
                network.input_dim()
            )));
        }
        if property.arity() != Some(network.output_dim()) {
            return Err(Error::DimensionMismatch(format!(
                "property coefficients do not match {} network outputs",
                network.output_dim()
            )));
        }
        let fingerprint = Fingerprint::of(&network, &input_box, &property);
        Ok(Self {
            network,
            input_box,
            property,
            fingerprint,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    pub fn property(&self) -> &OutputProperty {
        &self.property
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    /// Same box and property over a different network.
    pub fn with_network(&self, network: Network) -> Result<Self> {
        Self::new(network, self.input_box.clone(), self.property.clone())
    }

    /// Disjuncts of ¬Q, each a conjunction solved as its own branch.
    pub fn negated_disjuncts(&self) -> Vec<Vec<Inequality>> {
        negate(&self.property).clauses
    }

    /// True when `x` lies in the box and `f(x)` violates Q.
    pub fn is_counterexample(&self, x: &[f64]) -> bool {
        if !self.input_box.contains(x) {
            return false;
        }
        match self.network.forward(x) {
            Ok(y) => !eval_property(&self.property, &y).unwrap_or(true),
            Err(_) => false,
        }
    }
}

/// On-disk property document: the box P and the property Q.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyFile {
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub output_property: OutputProperty,
}

impl PropertyFile {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: PropertyFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
        file.split().map_err(|e| Error::parse(origin, e))?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("property serializes")
    }

    /// Validated box and property.
    pub fn split(&self) -> Result<(InputBox, OutputProperty)> {
        let input_box = InputBox::new(self.input_lower.clone(), self.input_upper.clone())?;
        let property = OutputProperty::new(self.output_property.clauses.clone())?;
        Ok((input_box, property))
    }

    pub fn from_parts(input_box: &InputBox, property: &OutputProperty) -> Self {
        Self {
            input_lower: input_box.lower.clone(),
            input_upper: input_box.upper.clone(),
            output_property: property.clone(),
        }
    }

    pub fn into_problem(&self, network: Network) -> Result<VerificationProblem> {
        let (b, q) = self.split()?;
        VerificationProblem::new(network, b, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ineq(coeffs: &[f64], rel: Comparison, rhs: f64) -> Inequality {
        Inequality::new(coeffs.to_vec(), rel, rhs)
    }

    #[test]
    fn negate_single_literal() {
        let q = OutputProperty::atom(vec![1.0], Comparison::Gt, 0.0);
        let n = negate(&q);
        assert_eq!(n.clauses(), &[vec![ineq(&[1.0], Comparison::Le, 0.0)]]);
    }

    #[test]
    fn negate_conjunction_gives_disjunction() {
        // y1 >= y2 and y1 >= y3
        let q = OutputProperty::new(vec![vec![
            ineq(&[1.0, -1.0, 0.0], Comparison::Ge, 0.0),
            ineq(&[1.0, 0.0, -1.0], Comparison::Ge, 0.0),
        ]])
        .unwrap();
        let n = negate(&q);
        assert_eq!(
            n.clauses(),
            &[
                vec![ineq(&[1.0, -1.0, 0.0], Comparison::Lt, 0.0)],
                vec![ineq(&[1.0, 0.0, -1.0], Comparison::Lt, 0.0)],
            ]
        );
    }

    #[test]
    fn strict_boundary() {
        let q = OutputProperty::atom(vec![1.0], Comparison::Gt, 0.0);
        assert!(eval_property(&q, &[1.0]).unwrap());
        assert!(!eval_property(&q, &[0.0]).unwrap());
        assert!(eval_property(&q, &[1.0, 2.0]).is_err());
    }

    fn random_property(rng: &mut ChaCha8Rng, dim: usize) -> OutputProperty {
        let rels = [Comparison::Le, Comparison::Lt, Comparison::Ge, Comparison::Gt];
        // double negation is exponential, keep formulas small
        let clauses = (0..rng.gen_range(1..3))
            .map(|_| {
                (0..rng.gen_range(1..4))
                    .map(|_| {
                        // small integer data so boundary cases actually occur
                        let coeffs = (0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect();
                        ineq_vec(coeffs, rels[rng.gen_range(0..4)], rng.gen_range(-2..=2) as f64)
                    })
                    .collect()
            })
            .collect();
        OutputProperty::new(clauses).unwrap()
    }

    fn ineq_vec(coeffs: Vec<f64>, rel: Comparison, rhs: f64) -> Inequality {
        Inequality::new(coeffs, rel, rhs)
    }

    /// Truth-table re-evaluation, written independently of `eval_property`.
    #[allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
    fn truth_table(q: &OutputProperty, y: &[f64]) -> bool {
        let mut any = false;
        for clause in q.clauses() {
            let mut all = true;
            for i in clause {
                let mut lhs = 0.0;
                for k in 0..y.len() {
                    lhs += i.coeffs[k] * y[k];
                }
                let ok = match i.rel {
                    Comparison::Le => !(lhs > i.rhs),
                    Comparison::Lt => lhs < i.rhs,
                    Comparison::Ge => !(lhs < i.rhs),
                    Comparison::Gt => lhs > i.rhs,
                };
                all &= ok;
            }
            any |= all;
        }
        any
    }

    #[test]
    fn eval_agrees_with_truth_table_and_double_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let q = random_property(&mut rng, 3);
            let nn = negate(&negate(&q));
            let n = negate(&q);
            for _ in 0..20 {
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2..=2) as f64).collect();
                let v = eval_property(&q, &y).unwrap();
                assert_eq!(v, truth_table(&q, &y));
                assert_eq!(v, eval_property(&nn, &y).unwrap());
                assert!(v ^ eval_property(&n, &y).unwrap());
            }
        }
    }

    #[test]
    fn box_validation() {
        assert!(InputBox::new(vec![0.0], vec![1.0]).is_ok());
        assert!(InputBox::new(vec![2.0], vec![1.0]).is_err());
        assert!(InputBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        let b = InputBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(b.clamp(&[2.0, -3.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn property_file_parses() {
        let text = r#"{"input_lower": [0.0], "input_upper": [1.0],
            "output_property": [[{"coeffs": [1.0], "rel": "gt", "rhs": 0.5}]]}"#;
        let file = PropertyFile::from_json_str(text, "p.json").unwrap();
        let (b, q) = file.split().unwrap();
        assert_eq!(b.upper(), &[1.0]);
        assert_eq!(q.clauses()[0][0].rel, Comparison::Gt);
        let bad = r#"{"input_lower": [0.0], "input_upper": [1.0], "output_property": []}"#;
        assert!(PropertyFile::from_json_str(bad, "p.json").is_err());
        let bad_rel = r#"{"input_lower": [0.0], "input_upper": [1.0],
            "output_property": [[{"coeffs": [1.0], "rel": "eq", "rhs": 0.5}]]}"#;
        assert!(PropertyFile::from_json_str(bad_rel, "p.json").is_err());
    }

    #[test]
    fn fingerprint_round_trips_through_text() {
        let net = Network::new(
            1,
            vec![crate::network::Layer::new(vec![vec![1.0]], vec![0.0]).unwrap()],
        )
        .unwrap();
        let p = VerificationProblem::new(
            net,
            InputBox::new(vec![0.0], vec![1.0]).unwrap(),
            OutputProperty::atom(vec![1.0], Comparison::Ge, 0.0),
        )
        .unwrap();
        let text = p.fingerprint().to_string();
        assert_eq!(text.parse::<Fingerprint>().unwrap(), *p.fingerprint());
        assert!("arch:1;net:2".parse::<Fingerprint>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn property_xor_negation(seed in 0u64..1000, y in proptest::collection::vec(-3.0f64..3.0, 2)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = random_property(&mut rng, 2);
                let a = eval_property(&q, &y).unwrap();
                let b = eval_property(&negate(&q), &y).unwrap();
                prop_assert!(a ^ b);
            }
        }
    }
}
