//! Fully connected ReLU networks, forward evaluation and the two compression
//! transforms (grid quantization and edge pruning).
//!
//! A network with `L` layers applies `x_k = W_k x̂_{k-1} + b_k` per layer and
//! `x̂_k = max(0, x_k)` after every layer except the last. Row `j` of `W_k`
//! holds the incoming weights of neuron `j` in layer `k`.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer plus its per-edge prune mask (`true` = edge removed).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    prune_mask: Vec<Vec<bool>>,
}

impl Layer {
    /// Builds a layer with an all-zero prune mask.
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let mask = weights.iter().map(|row| vec![false; row.len()]).collect();
        Self::with_mask(weights, bias, mask)
    }

    pub fn with_mask(
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        prune_mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("layer has no neurons".into()));
        }
        if weights.len() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight rows but {} biases",
                weights.len(),
                bias.len()
            )));
        }
        let fan_in = weights[0].len();
        if fan_in == 0 {
            return Err(Error::InvalidInput("layer has no inputs".into()));
        }
        if weights.iter().any(|row| row.len() != fan_in) {
            return Err(Error::DimensionMismatch("ragged weight matrix".into()));
        }
        if prune_mask.len() != weights.len() || prune_mask.iter().any(|r| r.len() != fan_in) {
            return Err(Error::DimensionMismatch(
                "prune mask shape differs from weight shape".into(),
            ));
        }
        if weights.iter().flatten().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(Self {
            weights,
            bias,
            prune_mask,
        })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn prune_mask(&self) -> &[Vec<bool>] {
        &self.prune_mask
    }

    /// Number of neurons in this layer.
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn fan_in(&self) -> usize {
        self.weights[0].len()
    }

    /// Weight of edge `input -> neuron`, zero when the edge is pruned.
    #[inline]
    pub fn effective_weight(&self, neuron: usize, input: usize) -> f64 {
        if self.prune_mask[neuron][input] {
            0.0
        } else {
            self.weights[neuron][input]
        }
    }

    /// True when every incoming edge of `neuron` is masked.
    pub fn is_disconnected(&self, neuron: usize) -> bool {
        self.prune_mask[neuron].iter().all(|&m| m)
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        (0..self.width())
            .map(|j| {
                let dot: f64 = (0..self.fan_in())
                    .map(|i| self.effective_weight(j, i) * input[i])
                    .sum();
                dot + self.bias[j]
            })
            .collect()
    }
}

/// Identifies a hidden neuron. Both fields are 1-based: `layer` ranges over
/// `1..=L-1` and `pos` over `1..=n_layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub pos: usize,
}

impl NeuronId {
    pub fn new(layer: usize, pos: usize) -> Self {
        Self { layer, pos }
    }

    /// Zero-based index of the hidden layer.
    #[inline]
    pub fn layer_index(&self) -> usize {
        self.layer - 1
    }

    /// Zero-based index within the layer.
    #[inline]
    pub fn pos_index(&self) -> usize {
        self.pos - 1
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x[{},{}]", self.layer, self.pos)
    }
}

/// A feed-forward ReLU network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        let mut prev = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.fan_in() != prev {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} expects {} inputs, previous layer has {}",
                    k + 1,
                    layer.fan_in(),
                    prev
                )));
            }
            prev = layer.width();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::width).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of affine layers `L` (hidden layers plus the output layer).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    /// Layer widths including the input: `[n_0, n_1, ..., n_L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::width))
            .collect()
    }

    /// All hidden neurons in (layer, pos) order.
    pub fn hidden_neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.hidden_layers()
            .iter()
            .enumerate()
            .flat_map(|(k, l)| (1..=l.width()).map(move |p| NeuronId::new(k + 1, p)))
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_layers().iter().map(Layer::width).sum()
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        id.layer >= 1
            && id.layer < self.layers.len()
            && id.pos >= 1
            && id.pos <= self.layers[id.layer_index()].width()
    }

    /// True when all incoming edges of a hidden neuron are pruned, so its
    /// pre-activation is the constant bias.
    pub fn is_constant_neuron(&self, id: NeuronId) -> bool {
        self.contains(id) && self.layers[id.layer_index()].is_disconnected(id.pos_index())
    }

    /// Exact masked-affine + ReLU composition; the last layer is affine only.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.pop().unwrap_or_default())
    }

    /// Pre-activation values of every layer `1..=L`.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.affine(&current);
            if k + 1 < self.layers.len() {
                current = pre.iter().map(|&v| v.max(0.0)).collect();
            }
            trace.push(pre);
        }
        Ok(trace)
    }

    fn map_params(&self, f: impl Fn(f64) -> f64) -> Network {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: l
                    .weights
                    .iter()
                    .map(|row| row.iter().map(|&w| f(w)).collect())
                    .collect(),
                bias: l.bias.iter().map(|&b| f(b)).collect(),
                prune_mask: l.prune_mask.clone(),
            })
            .collect();
        Network {
            input_dim: self.input_dim,
            layers,
        }
    }

    /// Reads the textual network format.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
        file.into_network().map_err(|e| Error::parse(origin, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::of(self, false)).expect("network serializes")
    }

    /// Like [`Network::to_json_string`] but writes every layer's mask, even
    /// an all-zero one.
    pub fn to_json_string_with_masks(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::of(self, true)).expect("network serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn save_with_masks(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string_with_masks() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Free-function form of [`Network::forward`].
pub fn forward_eval(net: &Network, input: &[f64]) -> Result<Vec<f64>> {
    net.forward(input)
}

/// What a compression step does to a network.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressionSpec {
    /// Snap every parameter to the grid `step * Z`.
    Quantize { step: f64 },
    /// Mask the given edges, one boolean matrix per layer.
    Prune { masks: Vec<Vec<Vec<bool>>> },
}

impl CompressionSpec {
    pub fn apply(&self, net: &Network) -> Result<Network> {
        match self {
            CompressionSpec::Quantize { step } => quantize(net, *step),
            CompressionSpec::Prune { masks } => prune(net, masks),
        }
    }
}

/// Rounds `value` to the nearest multiple of `step`, ties away from zero.
pub fn quantize_value(value: f64, step: f64) -> f64 {
    let units = (value / step).round();
    if units == 0.0 {
        return 0.0;
    }
    // Steps like 0.1 are reciprocals of integers; dividing by the integer
    // lands on the nearest double to the decimal grid point.
    let inv = 1.0 / step;
    let inv_round = inv.round();
    if inv_round >= 1.0 && (inv - inv_round).abs() <= 1e-9 * inv_round {
        units / inv_round
    } else {
        units * step
    }
}

/// Snaps every weight and bias to the `step` grid. Masks and shapes are kept.
pub fn quantize(net: &Network, step: f64) -> Result<Network> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidStep(step));
    }
    Ok(net.map_params(|w| quantize_value(w, step)))
}

/// Unions `masks` into the network's prune masks.
pub fn prune(net: &Network, masks: &[Vec<Vec<bool>>]) -> Result<Network> {
    if masks.len() != net.layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} masks for {} layers",
            masks.len(),
            net.layers.len()
        )));
    }
    let mut layers = net.layers.clone();
    for (k, (layer, mask)) in layers.iter_mut().zip(masks).enumerate() {
        if mask.len() != layer.width() || mask.iter().any(|r| r.len() != layer.fan_in()) {
            return Err(Error::DimensionMismatch(format!(
                "mask for layer {} has wrong shape",
                k + 1
            )));
        }
        for (row, mrow) in layer.prune_mask.iter_mut().zip(mask) {
            for (m, &new) in row.iter_mut().zip(mrow) {
                *m |= new;
            }
        }
    }
    Ok(Network {
        input_dim: net.input_dim,
        layers,
    })
}

/// Masks every incoming and outgoing edge of a hidden neuron. The bias is kept.
pub fn node_prune_mask(net: &Network, id: NeuronId) -> Result<Vec<Vec<Vec<bool>>>> {
    if !net.contains(id) {
        return Err(Error::InvalidInput(format!("{id} is not a hidden neuron")));
    }
    let mut masks: Vec<Vec<Vec<bool>>> = net
        .layers
        .iter()
        .map(|l| vec![vec![false; l.fan_in()]; l.width()])
        .collect();
    let k = id.layer_index();
    masks[k][id.pos_index()].iter_mut().for_each(|m| *m = true);
    for row in masks[k + 1].iter_mut() {
        row[id.pos_index()] = true;
    }
    Ok(masks)
}

/// Masks the `ratio` fraction of all edges with smallest effective |weight|,
/// ties broken by (layer, row, col) ascending. Already-pruned edges count as
/// weight zero.
pub fn prune_by_magnitude(net: &Network, ratio: f64) -> Result<Network> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!(
            "prune ratio {ratio} outside [0, 1)"
        )));
    }
    let mut edges: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (k, layer) in net.layers.iter().enumerate() {
        for j in 0..layer.width() {
            for i in 0..layer.fan_in() {
                edges.push((layer.effective_weight(j, i).abs(), k, j, i));
            }
        }
    }
    let count = ((ratio * edges.len() as f64) + 1e-9).floor() as usize;
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });
    let mut masks: Vec<Vec<Vec<bool>>> = net
        .layers
        .iter()
        .map(|l| vec![vec![false; l.fan_in()]; l.width()])
        .collect();
    for &(_, k, j, i) in edges.iter().take(count) {
        masks[k][j][i] = true;
    }
    prune(net, &masks)
}

/// Relationship of a candidate compressed network to its original.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffClass {
    Identical,
    QuantizedLike,
    PrunedLike,
    Incompatible,
}

/// Classifies `f_prime` relative to `f`.
pub fn diff_classify(f: &Network, f_prime: &Network) -> DiffClass {
    if f.dims() != f_prime.dims() {
        return DiffClass::Incompatible;
    }
    if f == f_prime {
        return DiffClass::Identical;
    }
    let masks_equal = f
        .layers
        .iter()
        .zip(&f_prime.layers)
        .all(|(a, b)| a.prune_mask == b.prune_mask);
    if masks_equal {
        return DiffClass::QuantizedLike;
    }
    let mut superset = true;
    let mut values_equal = true;
    for (a, b) in f.layers.iter().zip(&f_prime.layers) {
        if a.bias != b.bias {
            values_equal = false;
        }
        for j in 0..a.width() {
            for i in 0..a.fan_in() {
                if a.prune_mask[j][i] && !b.prune_mask[j][i] {
                    superset = false;
                }
                if !b.prune_mask[j][i] && a.weights[j][i] != b.weights[j][i] {
                    values_equal = false;
                }
            }
        }
    }
    if superset && values_equal {
        DiffClass::PrunedLike
    } else {
        DiffClass::Incompatible
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prune_mask: Option<Vec<Vec<u8>>>,
}

impl NetworkFile {
    fn into_network(self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, lf) in self.layers.into_iter().enumerate() {
            let layer = match lf.prune_mask {
                None => Layer::new(lf.weights, lf.bias),
                Some(mask) => {
                    let mask = mask
                        .into_iter()
                        .map(|row| {
                            row.into_iter()
                                .map(|v| match v {
                                    0 => Ok(false),
                                    1 => Ok(true),
                                    other => Err(Error::InvalidInput(format!(
                                        "prune_mask entry {other} is not 0 or 1"
                                    ))),
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Layer::with_mask(lf.weights, lf.bias, mask)
                }
            }
            .map_err(|e| Error::InvalidInput(format!("layer {}: {e}", k + 1)))?;
            layers.push(layer);
        }
        Network::new(self.input_dim, layers)
    }
}

impl NetworkFile {
    /// Masks are written when some edge is pruned, or always with `all_masks`.
    fn of(net: &Network, all_masks: bool) -> Self {
        NetworkFile {
            input_dim: net.input_dim,
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                    prune_mask: (all_masks || l.prune_mask.iter().flatten().any(|&m| m)).then(|| {
                        l.prune_mask
                            .iter()
                            .map(|r| r.iter().map(|&m| m as u8).collect())
                            .collect()
                    }),
                })
                .collect(),
        }
    }
}
