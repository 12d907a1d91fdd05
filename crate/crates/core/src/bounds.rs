//! Interval bounds on hidden pre-activations and neuron stability.
//!
//! Bounds come from forward interval propagation: affine layers map boxes to
//! boxes, ReLU clips the post-activation interval at zero. Fixing a neuron's
//! phase clamps its interval before the clip, which keeps the bounds sound for
//! every input that respects the fixed phases.

use std::collections::BTreeMap;

use crate::encoder::{ActivationLiteral, Phase};
use crate::error::{Error, Result};
use crate::network::{Network, NeuronId};
use crate::property::InputBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stability {
    StableActive,
    StableInactive,
    Unstable,
}

impl Stability {
    pub fn classify(lower: f64, upper: f64) -> Self {
        if upper <= 0.0 {
            Stability::StableInactive
        } else if lower >= 0.0 {
            Stability::StableActive
        } else {
            Stability::Unstable
        }
    }

    /// Phase implied by a stable classification.
    pub fn phase(self) -> Option<Phase> {
        match self {
            Stability::StableActive => Some(Phase::Active),
            Stability::StableInactive => Some(Phase::Inactive),
            Stability::Unstable => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBounds {
    pub lower: f64,
    pub upper: f64,
    pub stability: Stability,
}

impl NeuronBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            stability: Stability::classify(lower, upper),
        }
    }

    pub fn is_unstable(&self) -> bool {
        self.stability == Stability::Unstable
    }

    /// Interval of `max(0, x)`.
    fn post(&self) -> (f64, f64) {
        (self.lower.max(0.0), self.upper.max(0.0))
    }
}

/// Bounds for every hidden neuron plus the output pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMap {
    hidden: Vec<Vec<NeuronBounds>>,
    output: Vec<(f64, f64)>,
    conflict: Option<NeuronId>,
}

impl BoundsMap {
    pub fn get(&self, id: NeuronId) -> NeuronBounds {
        self.hidden[id.layer_index()][id.pos_index()]
    }

    pub fn hidden(&self) -> &[Vec<NeuronBounds>] {
        &self.hidden
    }

    pub fn output(&self) -> &[(f64, f64)] {
        &self.output
    }

    /// A fixed phase that the intervals already rule out, if any. When set the
    /// assumptions admit no input and downstream intervals are not meaningful.
    pub fn conflict(&self) -> Option<NeuronId> {
        self.conflict
    }

    pub fn unstable_neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.iter().filter(|(_, b)| b.is_unstable()).map(|(id, _)| id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NeuronId, NeuronBounds)> + '_ {
        self.hidden.iter().enumerate().flat_map(|(k, layer)| {
            layer
                .iter()
                .enumerate()
                .map(move |(j, b)| (NeuronId::new(k + 1, j + 1), *b))
        })
    }
}

/// Sound pre-activation bounds over `input_box`.
pub fn interval_propagate(net: &Network, input_box: &InputBox) -> Result<BoundsMap> {
    propagate(net, input_box, &BTreeMap::new())
}

/// Recomputes bounds with the given phases fixed.
pub fn refresh_under_assumptions(
    net: &Network,
    input_box: &InputBox,
    fixed: &[ActivationLiteral],
) -> Result<BoundsMap> {
    let mut phases = BTreeMap::new();
    for lit in fixed {
        if !net.contains(lit.neuron) {
            return Err(Error::InvalidInput(format!(
                "{} is not a hidden neuron",
                lit.neuron
            )));
        }
        if let Some(prev) = phases.insert(lit.neuron, lit.phase) {
            if prev != lit.phase {
                return Err(Error::InconsistentAssumption(lit.neuron));
            }
        }
    }
    propagate(net, input_box, &phases)
}

fn propagate(
    net: &Network,
    input_box: &InputBox,
    phases: &BTreeMap<NeuronId, Phase>,
) -> Result<BoundsMap> {
    if input_box.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "box has {} dimensions, network takes {}",
            input_box.dim(),
            net.input_dim()
        )));
    }
    let mut lo: Vec<f64> = input_box.lower().to_vec();
    let mut hi: Vec<f64> = input_box.upper().to_vec();
    let mut hidden = Vec::new();
    let mut output = Vec::new();
    let mut conflict = None;
    let depth = net.depth();
    for (k, layer) in net.layers().iter().enumerate() {
        let mut pre = Vec::with_capacity(layer.width());
        for j in 0..layer.width() {
            let mut l = layer.bias()[j];
            let mut u = l;
            for i in 0..layer.fan_in() {
                let w = layer.effective_weight(j, i);
                if w >= 0.0 {
                    l += w * lo[i];
                    u += w * hi[i];
                } else {
                    l += w * hi[i];
                    u += w * lo[i];
                }
            }
            pre.push((l, u));
        }
        if k + 1 == depth {
            output = pre;
            break;
        }
        let mut layer_bounds = Vec::with_capacity(pre.len());
        for (j, (l, u)) in pre.into_iter().enumerate() {
            let id = NeuronId::new(k + 1, j + 1);
            let b = match phases.get(&id) {
                None => NeuronBounds::new(l, u),
                Some(Phase::Active) => {
                    if u < 0.0 {
                        conflict.get_or_insert(id);
                        NeuronBounds::new(l, u)
                    } else {
                        NeuronBounds::new(l.max(0.0), u)
                    }
                }
                Some(Phase::Inactive) => {
                    if l > 0.0 {
                        conflict.get_or_insert(id);
                        NeuronBounds::new(l, u)
                    } else {
                        NeuronBounds::new(l, u.min(0.0))
                    }
                }
            };
            layer_bounds.push(b);
        }
        lo = layer_bounds.iter().map(|b| b.post().0).collect();
        hi = layer_bounds.iter().map(|b| b.post().1).collect();
        hidden.push(layer_bounds);
    }
    Ok(BoundsMap {
        hidden,
        output,
        conflict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_hidden() -> Network {
        Network::new(
            1,
            vec![
                Layer::new(vec![vec![2.0]], vec![-1.0]).unwrap(),
                Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> Network {
        let layers = dims
            .windows(2)
            .map(|w| {
                Layer::new(
                    (0..w[1])
                        .map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect(),
                    (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                )
                .unwrap()
            })
            .collect();
        Network::new(dims[0], layers).unwrap()
    }

    #[test]
    fn single_neuron_bounds_cover_grid() {
        let net = single_hidden();
        let b = InputBox::new(vec![0.0], vec![1.0]).unwrap();
        let map = interval_propagate(&net, &b).unwrap();
        let nb = map.get(NeuronId::new(1, 1));
        assert_eq!((nb.lower, nb.upper), (-1.0, 1.0));
        assert_eq!(nb.stability, Stability::Unstable);
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let pre = net.forward_trace(&[x]).unwrap()[0][0];
            assert!(nb.lower <= pre && pre <= nb.upper);
        }
    }

    #[test]
    fn zero_weights_give_point_bounds() {
        for (bias, stab) in [
            (0.7, Stability::StableActive),
            (-0.3, Stability::StableInactive),
            (0.0, Stability::StableInactive),
        ] {
            let net = Network::new(
                2,
                vec![
                    Layer::new(vec![vec![0.0, 0.0]], vec![bias]).unwrap(),
                    Layer::new(vec![vec![1.0]], vec![0.0]).unwrap(),
                ],
            )
            .unwrap();
            let b = InputBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
            let nb = interval_propagate(&net, &b).unwrap().get(NeuronId::new(1, 1));
            assert_eq!((nb.lower, nb.upper, nb.stability), (bias, bias, stab));
        }
    }

    #[test]
    fn stability_ties() {
        assert_eq!(Stability::classify(-1.0, 0.0), Stability::StableInactive);
        assert_eq!(Stability::classify(0.0, 2.0), Stability::StableActive);
        assert_eq!(Stability::classify(-1.0, 2.0), Stability::Unstable);
    }

    #[test]
    fn deep_net_soundness_by_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let net = random_net(&mut rng, &[3, 5, 4, 4, 2]);
            let b = InputBox::new(vec![-1.0, -0.5, 0.0], vec![1.0, 0.5, 0.5]).unwrap();
            let map = interval_propagate(&net, &b).unwrap();
            for _ in 0..20_000 {
                let x: Vec<f64> = (0..3)
                    .map(|j| rng.gen_range(b.lower()[j]..=b.upper()[j]))
                    .collect();
                let trace = net.forward_trace(&x).unwrap();
                for (id, nb) in map.iter() {
                    let v = trace[id.layer_index()][id.pos_index()];
                    assert!(nb.lower <= v && v <= nb.upper);
                    match nb.stability {
                        Stability::StableActive => assert!(v >= 0.0),
                        Stability::StableInactive => assert!(v <= 0.0),
                        Stability::Unstable => {}
                    }
                }
                for (o, (l, u)) in map.output().iter().enumerate() {
                    let v = trace.last().unwrap()[o];
                    assert!(*l <= v && v <= *u);
                }
            }
        }
    }

    #[test]
    fn empty_assumptions_leave_bounds_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = random_net(&mut rng, &[2, 4, 3, 1]);
        let b = InputBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(
            interval_propagate(&net, &b).unwrap(),
            refresh_under_assumptions(&net, &b, &[]).unwrap()
        );
    }

    #[test]
    fn fixing_inactive_shrinks_downstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = InputBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let mut checked = 0;
        for _ in 0..20 {
            let net = random_net(&mut rng, &[2, 4, 3, 2]);
            let base = interval_propagate(&net, &b).unwrap();
            let Some(target) = base.unstable_neurons().find(|id| id.layer == 1) else {
                continue;
            };
            let lit = ActivationLiteral::new(target, Phase::Inactive);
            let refreshed = refresh_under_assumptions(&net, &b, &[lit]).unwrap();
            for ((_, old), (_, new)) in base.iter().zip(refreshed.iter()) {
                assert!(new.lower >= old.lower - 1e-12 && new.upper <= old.upper + 1e-12);
            }
            // inputs that really keep the neuron inactive stay inside the refreshed bounds
            for _ in 0..2000 {
                let x = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
                let trace = net.forward_trace(&x).unwrap();
                if trace[0][target.pos_index()] >= 0.0 {
                    continue;
                }
                for (id, nb) in refreshed.iter() {
                    let v = trace[id.layer_index()][id.pos_index()];
                    assert!(nb.lower <= v + 1e-12 && v <= nb.upper + 1e-12);
                }
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn contradictory_literals_rejected() {
        let net = single_hidden();
        let b = InputBox::new(vec![0.0], vec![1.0]).unwrap();
        let id = NeuronId::new(1, 1);
        let err = refresh_under_assumptions(
            &net,
            &b,
            &[
                ActivationLiteral::new(id, Phase::Active),
                ActivationLiteral::new(id, Phase::Inactive),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconsistentAssumption(n) if n == id));
    }

    #[test]
    fn phase_against_stable_bounds_is_flagged() {
        let net = single_hidden();
        let b = InputBox::new(vec![0.75], vec![1.0]).unwrap();
        let id = NeuronId::new(1, 1);
        let map =
            refresh_under_assumptions(&net, &b, &[ActivationLiteral::new(id, Phase::Inactive)])
                .unwrap();
        assert_eq!(map.conflict(), Some(id));
    }
}
