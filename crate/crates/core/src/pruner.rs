//! Structural pruning: dependency-group discovery, Taylor importance, and
//! removal of the least important groups.
//!
//! Neurons are addressed by `(layer, unit)` where layer 0 is the input layer.
//! An edge `i → j` couples two neurons into one group when `j` has in-degree 1
//! (the forward trigger) or `i` has out-degree 1 (its mirror). Groups are the
//! connected components of those couplings over prunable neurons.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MixqError, Result};
use crate::matrix::Matrix;
use crate::workbench::{accumulate_sample, Activation, Grads, Sample, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

impl NeuronId {
    pub fn new(layer: usize, unit: usize) -> Self {
        Self { layer, unit }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NeuronGraph {
    prunable: BTreeMap<NeuronId, bool>,
    outgoing: BTreeMap<NeuronId, BTreeSet<NeuronId>>,
    incoming: BTreeMap<NeuronId, BTreeSet<NeuronId>>,
}

impl NeuronGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph of a dense MLP: hidden units are prunable, inputs and outputs are not.
    pub fn from_model(model: &ToyModel) -> Self {
        let widths = model.widths();
        let mut g = Self::new();
        let last = widths.len() - 1;
        for (l, &w) in widths.iter().enumerate() {
            for u in 0..w {
                g.add_node(NeuronId::new(l, u), l != 0 && l != last);
            }
        }
        for (l, w) in model.weights().iter().enumerate() {
            for j in 0..w.rows() {
                for i in 0..w.cols() {
                    g.add_edge(NeuronId::new(l, i), NeuronId::new(l + 1, j));
                }
            }
        }
        g
    }

    pub fn add_node(&mut self, id: NeuronId, prunable: bool) {
        self.prunable.insert(id, prunable);
        self.outgoing.entry(id).or_default();
        self.incoming.entry(id).or_default();
    }

    pub fn add_edge(&mut self, from: NeuronId, to: NeuronId) {
        for id in [from, to] {
            if !self.prunable.contains_key(&id) {
                self.add_node(id, false);
            }
        }
        self.outgoing.entry(from).or_default().insert(to);
        self.incoming.entry(to).or_default().insert(from);
    }

    pub fn in_degree(&self, id: NeuronId) -> usize {
        self.incoming.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn out_degree(&self, id: NeuronId) -> usize {
        self.outgoing.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn is_prunable(&self, id: NeuronId) -> bool {
        self.prunable.get(&id).copied().unwrap_or(false)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.prunable.keys().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.outgoing.values().map(BTreeSet::len).sum()
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<NeuronId, usize> = self.nodes().map(|n| (n, self.in_degree(n))).collect();
        let mut queue: VecDeque<NeuronId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut seen = 0;
        while let Some(n) = queue.pop_front() {
            seen += 1;
            for m in &self.outgoing[&n] {
                let d = indeg.get_mut(m).expect("node exists");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(*m);
                }
            }
        }
        seen == self.prunable.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    /// Row of `weights[layer]`: the unit's incoming weights.
    Row,
    /// Column of `weights[layer]`: the unit's outgoing weights.
    Column,
    /// Entry of `biases[layer]`.
    Bias,
}

/// A slice of one linear layer's parameters, removed together with its neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightSlice {
    pub layer: usize,
    pub kind: SliceKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneGroup {
    pub id: usize,
    pub neurons: Vec<NeuronId>,
    pub weight_slices: Vec<WeightSlice>,
    pub importance: f64,
}

impl PruneGroup {
    /// Builds a group from neurons, deriving the incident weight slices.
    pub fn from_neurons(id: usize, mut neurons: Vec<NeuronId>) -> Self {
        neurons.sort_unstable();
        neurons.dedup();
        let mut slices = BTreeSet::new();
        for n in &neurons {
            if n.layer > 0 {
                slices.insert(WeightSlice { layer: n.layer - 1, kind: SliceKind::Row, index: n.unit });
                slices.insert(WeightSlice { layer: n.layer - 1, kind: SliceKind::Bias, index: n.unit });
            }
            slices.insert(WeightSlice { layer: n.layer, kind: SliceKind::Column, index: n.unit });
        }
        Self {
            id,
            neurons,
            weight_slices: slices.into_iter().collect(),
            importance: 0.0,
        }
    }

    /// Distinct parameter coordinates `(layer, is_bias, row, col)` covered by the slices.
    fn coordinates(&self, model: &ToyModel) -> BTreeSet<(usize, bool, usize, usize)> {
        let mut out = BTreeSet::new();
        for s in &self.weight_slices {
            let Some(w) = model.weights().get(s.layer) else { continue };
            match s.kind {
                SliceKind::Row if s.index < w.rows() => {
                    out.extend((0..w.cols()).map(|c| (s.layer, false, s.index, c)));
                }
                SliceKind::Column if s.index < w.cols() => {
                    out.extend((0..w.rows()).map(|r| (s.layer, false, r, s.index)));
                }
                SliceKind::Bias if s.index < w.rows() => {
                    out.insert((s.layer, true, s.index, 0));
                }
                _ => {}
            }
        }
        out
    }

    /// Number of distinct parameters the group covers in `model`.
    pub fn parameter_count(&self, model: &ToyModel) -> usize {
        self.coordinates(model).len()
    }
}

/// Partitions the prunable neurons into dependency groups (ordered by their smallest neuron).
pub fn discover_groups(graph: &NeuronGraph) -> Vec<PruneGroup> {
    let mut assigned = BTreeSet::new();
    let mut groups = Vec::new();
    for seed in graph.nodes().filter(|&n| graph.is_prunable(n)) {
        if assigned.contains(&seed) {
            continue;
        }
        let mut members = vec![seed];
        assigned.insert(seed);
        let mut queue = VecDeque::from([seed]);
        while let Some(n) = queue.pop_front() {
            // forward trigger: n → j with Deg⁻(j) = 1
            let forward = graph.outgoing[&n].iter().copied().filter(|&j| graph.in_degree(j) == 1);
            // mirror: i → n where n is i's only consumer, plus the reverse of a forward trigger
            let backward = graph.incoming[&n]
                .iter()
                .copied()
                .filter(|&i| graph.out_degree(i) == 1 || graph.in_degree(n) == 1);
            let next: Vec<NeuronId> = forward.chain(backward).collect();
            for m in next {
                if graph.is_prunable(m) && assigned.insert(m) {
                    members.push(m);
                    queue.push_back(m);
                }
            }
        }
        groups.push(PruneGroup::from_neurons(groups.len(), members));
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceOrder {
    /// `Σ |g·w|`
    Element1,
    /// `Σ |g·w − ½ Σⱼ (gⱼ·w)²|` with per-sample gradients `gⱼ`.
    Element2,
}

/// Mean-loss gradient plus the per-sample sum of squared gradients.
#[derive(Debug, Clone)]
pub struct GradientStats {
    full: Grads,
    sum_sq: Grads,
}

pub fn gradient_stats(model: &ToyModel, data: &[Sample]) -> Result<GradientStats> {
    if data.is_empty() {
        return Err(MixqError::InvalidArgument("importance dataset is empty".into()));
    }
    let mut full = Grads::zeros_like(model.weights());
    let mut sum_sq = Grads::zeros_like(model.weights());
    let scale = 1.0 / data.len() as f64;
    for s in data {
        let mut one = Grads::zeros_like(model.weights());
        accumulate_sample(model.weights(), model.biases(), model.activation(), s, 1.0, &mut one);
        for l in 0..model.layer_count() {
            for ((f, q), g) in full.w[l]
                .as_mut_slice()
                .iter_mut()
                .zip(sum_sq.w[l].as_mut_slice())
                .zip(one.w[l].as_slice())
            {
                *f += scale * g;
                *q += g * g;
            }
            for ((f, q), g) in full.b[l].iter_mut().zip(sum_sq.b[l].iter_mut()).zip(&one.b[l]) {
                *f += scale * g;
                *q += g * g;
            }
        }
    }
    full.check_finite()?;
    sum_sq.check_finite()?;
    Ok(GradientStats { full, sum_sq })
}

/// Importance of `group` from precomputed gradient statistics.
pub fn importance_from_stats(
    group: &PruneGroup,
    model: &ToyModel,
    stats: &GradientStats,
    order: ImportanceOrder,
) -> f64 {
    group
        .coordinates(model)
        .into_iter()
        .map(|(l, is_bias, r, c)| {
            let (w, g, sq) = if is_bias {
                (model.biases()[l][r], stats.full.b[l][r], stats.sum_sq.b[l][r])
            } else {
                (model.weights()[l].get(r, c), stats.full.w[l].get(r, c), stats.sum_sq.w[l].get(r, c))
            };
            match order {
                ImportanceOrder::Element1 => (g * w).abs(),
                ImportanceOrder::Element2 => (g * w - 0.5 * sq * w * w).abs(),
            }
        })
        .sum()
}

/// Taylor-expansion importance of one group on `data`.
pub fn group_importance(
    group: &PruneGroup,
    model: &ToyModel,
    data: &[Sample],
    order: ImportanceOrder,
) -> Result<f64> {
    let stats = gradient_stats(model, data)?;
    Ok(importance_from_stats(group, model, &stats, order))
}

/// Scores every group in place, sharing one gradient pass.
pub fn score_groups(
    groups: &mut [PruneGroup],
    model: &ToyModel,
    data: &[Sample],
    order: ImportanceOrder,
) -> Result<()> {
    let stats = gradient_stats(model, data)?;
    groups
        .par_iter_mut()
        .for_each(|g| g.importance = importance_from_stats(g, model, &stats, order));
    Ok(())
}

/// A compacted model plus the map back to the original unit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedModel {
    model: ToyModel,
    original_widths: Vec<usize>,
    /// Retained original unit indices per neuron layer (inputs and outputs are complete).
    retained: Vec<Vec<usize>>,
    removed_groups: Vec<usize>,
    removed_fraction: f64,
    target_rate: f64,
    rate_reached: bool,
}

/// Parameters incident to prunable units: every weight plus hidden biases.
fn prunable_pool(widths: &[usize]) -> usize {
    let weights: usize = widths.windows(2).map(|p| p[0] * p[1]).sum();
    let hidden_biases: usize = widths[1..widths.len() - 1].iter().sum();
    weights + hidden_biases
}

impl PrunedModel {
    /// The unpruned model wrapped as a pruning result.
    pub fn unpruned(model: ToyModel) -> Self {
        let widths = model.widths();
        Self {
            retained: widths.iter().map(|&w| (0..w).collect()).collect(),
            original_widths: widths,
            model,
            removed_groups: Vec::new(),
            removed_fraction: 0.0,
            target_rate: 0.0,
            rate_reached: true,
        }
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    pub fn into_model(self) -> ToyModel {
        self.model
    }

    pub fn widths(&self) -> Vec<usize> {
        self.model.widths()
    }

    pub fn original_widths(&self) -> &[usize] {
        &self.original_widths
    }

    pub fn retained(&self) -> &[Vec<usize>] {
        &self.retained
    }

    pub fn removed_groups(&self) -> &[usize] {
        &self.removed_groups
    }

    /// Share of the prunable parameter pool (all weights plus hidden biases) removed.
    pub fn removed_fraction(&self) -> f64 {
        self.removed_fraction
    }

    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    /// `false` when the one-unit-per-layer floor stopped pruning short of the target.
    pub fn rate_reached(&self) -> bool {
        self.rate_reached
    }

    /// Adapter-bearing layer count.
    pub fn layer_count(&self) -> usize {
        self.model.layer_count()
    }

    /// `(d_out, d_in)` of each linear layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.model.weights().iter().map(Matrix::shape).collect()
    }

    pub fn manifest(&self) -> PrunedManifest {
        PrunedManifest {
            activation: self.model.activation(),
            original_widths: self.original_widths.clone(),
            widths: self.widths(),
            retained: self.retained.clone(),
            removed_groups: self.removed_groups.clone(),
            removed_fraction: self.removed_fraction,
            target_rate: self.target_rate,
            rate_reached: self.rate_reached,
        }
    }

    /// Weights then biases of each layer, row-major little-endian `f64`.
    pub fn to_arrays(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (w, b) in self.model.weights().iter().zip(self.model.biases()) {
            for v in w.as_slice().iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_manifest(manifest: &PrunedManifest, arrays: &[u8]) -> Result<Self> {
        let widths = &manifest.widths;
        if widths.len() < 2 || manifest.retained.len() != widths.len() {
            return Err(MixqError::Corrupt("manifest widths and retained maps disagree".into()));
        }
        for (l, (r, &w)) in manifest.retained.iter().zip(widths).enumerate() {
            let orig = manifest.original_widths.get(l).copied().unwrap_or(0);
            if r.len() != w || r.windows(2).any(|p| p[0] >= p[1]) || r.iter().any(|&i| i >= orig) {
                return Err(MixqError::Corrupt(format!("retained map of layer {l} is invalid")));
            }
        }
        let expected: usize = widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>() * 8;
        if arrays.len() != expected {
            return Err(MixqError::Corrupt(format!(
                "array blob has {} bytes, expected {expected}",
                arrays.len()
            )));
        }
        let mut vals = arrays.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for p in widths.windows(2) {
            let w: Vec<f64> = vals.by_ref().take(p[0] * p[1]).collect();
            weights.push(Matrix::new(p[1], p[0], w)?);
            biases.push(vals.by_ref().take(p[1]).collect());
        }
        Ok(Self {
            model: ToyModel::new(weights, biases, manifest.activation)?,
            original_widths: manifest.original_widths.clone(),
            retained: manifest.retained.clone(),
            removed_groups: manifest.removed_groups.clone(),
            removed_fraction: manifest.removed_fraction,
            target_rate: manifest.target_rate,
            rate_reached: manifest.rate_reached,
        })
    }
}

/// Text-serializable description of a [`PrunedModel`]; the weights travel separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedManifest {
    pub activation: Activation,
    pub original_widths: Vec<usize>,
    pub widths: Vec<usize>,
    pub retained: Vec<Vec<usize>>,
    pub removed_groups: Vec<usize>,
    pub removed_fraction: f64,
    pub target_rate: f64,
    pub rate_reached: bool,
}

/// Removes the least important groups (global ranking, ties by group id) until the
/// removed share of the prunable pool reaches `rate`, keeping at least one unit per
/// hidden layer. Falls short with `rate_reached() == false` when the floor binds.
pub fn prune(model: &ToyModel, groups: &[PruneGroup], rate: f64) -> Result<PrunedModel> {
    if !(0.0..1.0).contains(&rate) {
        return Err(MixqError::InvalidArgument(format!("prune rate {rate} outside [0, 1)")));
    }
    let widths = model.widths();
    let last = widths.len() - 1;
    for g in groups {
        if g.neurons.is_empty() {
            return Err(MixqError::InvalidArgument(format!("group {} is empty", g.id)));
        }
        if let Some(n) = g
            .neurons
            .iter()
            .find(|n| n.layer == 0 || n.layer >= last || n.unit >= widths[n.layer])
        {
            return Err(MixqError::InvalidArgument(format!(
                "group {} holds non-prunable neuron {n:?}",
                g.id
            )));
        }
    }
    let mut ranked: Vec<&PruneGroup> = groups.iter().collect();
    ranked.sort_by(|a, b| a.importance.total_cmp(&b.importance).then(a.id.cmp(&b.id)));

    let original_pool = prunable_pool(&widths) as f64;
    let mut current = widths.clone();
    let mut removed: BTreeSet<NeuronId> = BTreeSet::new();
    let mut removed_groups = Vec::new();
    let fraction = |w: &[usize]| 1.0 - prunable_pool(w) as f64 / original_pool;

    for g in ranked {
        if fraction(&current) >= rate {
            break;
        }
        let mut per_layer: BTreeMap<usize, usize> = BTreeMap::new();
        for n in &g.neurons {
            if !removed.contains(n) {
                *per_layer.entry(n.layer).or_default() += 1;
            }
        }
        if per_layer.iter().any(|(&l, &k)| k >= current[l]) {
            continue;
        }
        for (&l, &k) in &per_layer {
            current[l] -= k;
        }
        removed.extend(g.neurons.iter().copied());
        removed_groups.push(g.id);
    }

    let retained: Vec<Vec<usize>> = widths
        .iter()
        .enumerate()
        .map(|(l, &w)| (0..w).filter(|&u| !removed.contains(&NeuronId::new(l, u))).collect())
        .collect();
    let mut weights = Vec::with_capacity(model.layer_count());
    let mut biases = Vec::with_capacity(model.layer_count());
    for (l, (w, b)) in model.weights().iter().zip(model.biases()).enumerate() {
        let (rows, cols) = (&retained[l + 1], &retained[l]);
        weights.push(Matrix::from_fn(rows.len(), cols.len(), |i, j| w.get(rows[i], cols[j])));
        biases.push(rows.iter().map(|&r| b[r]).collect());
    }
    let removed_fraction = fraction(&current);
    Ok(PrunedModel {
        model: ToyModel::new(weights, biases, model.activation())?,
        original_widths: widths,
        retained,
        removed_groups,
        removed_fraction,
        target_rate: rate,
        rate_reached: removed_fraction >= rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_with_unit_in_degree_groups_together() {
        let mut g = NeuronGraph::new();
        let (n1, n2) = (NeuronId::new(1, 0), NeuronId::new(2, 0));
        g.add_node(NeuronId::new(0, 0), false);
        g.add_node(n1, true);
        g.add_node(n2, true);
        g.add_node(NeuronId::new(3, 0), false);
        g.add_edge(NeuronId::new(0, 0), n1);
        g.add_edge(n1, n2);
        g.add_edge(n2, NeuronId::new(3, 0));
        let groups = discover_groups(&g);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].neurons, vec![n1, n2]);
        assert!(g.is_acyclic());
    }

    #[test]
    fn in_degree_two_blocks_forward_trigger() {
        let mut g = NeuronGraph::new();
        let (a, b, n1, n2) = (
            NeuronId::new(0, 0),
            NeuronId::new(0, 1),
            NeuronId::new(1, 0),
            NeuronId::new(2, 0),
        );
        let n1b = NeuronId::new(1, 1);
        let out = NeuronId::new(3, 0);
        g.add_node(a, false);
        g.add_node(b, false);
        for n in [n1, n1b, n2] {
            g.add_node(n, true);
        }
        g.add_edge(a, n1);
        g.add_edge(b, n1b);
        // n2 has in-degree 2; n1 and n1b each feed two consumers
        g.add_edge(n1, n2);
        g.add_edge(n1b, n2);
        g.add_edge(n1, out);
        g.add_edge(n1b, out);
        g.add_edge(n2, out);
        let groups = discover_groups(&g);
        let of_n1 = groups.iter().find(|gr| gr.neurons.contains(&n1)).unwrap();
        assert!(!of_n1.neurons.contains(&n2));
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn rejects_bad_rate() {
        let model = ToyModel::new(
            vec![Matrix::zeros(2, 2), Matrix::zeros(2, 2)],
            vec![vec![0.0; 2]; 2],
            Activation::Relu,
        )
        .unwrap();
        assert!(prune(&model, &[], 1.0).is_err());
        assert!(prune(&model, &[], -0.1).is_err());
    }
}
