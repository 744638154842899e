//! Builds the pruned base a search runs on: task, dense pretraining, grouping,
//! importance scoring, and pruning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pruner::{discover_groups, prune, score_groups, ImportanceOrder, NeuronGraph, PruneGroup, PrunedModel};
use crate::workbench::{make_task, train_dense, Activation, Task, TaskSpec, ToyModel, TrainHyper, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 32, 32, 16],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSpec {
    pub model: ModelSpec,
    pub task: TaskSpec,
    pub prune_rate: f64,
    pub importance: ImportanceOrder,
    /// Hyperparameters of the full-precision pretraining run.
    pub pretrain: TrainHyper,
}

impl Default for PrepareSpec {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            task: TaskSpec::default(),
            prune_rate: 0.0,
            importance: ImportanceOrder::Element1,
            pretrain: TrainHyper::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub task: Task,
    pub dense: ToyModel,
    pub pretrain: TrainReport,
    /// Scored groups, ascending by importance (ties by id).
    pub groups: Vec<PruneGroup>,
    pub pruned: PrunedModel,
}

/// Derived sub-seeds so task data, init, and pretraining shuffles are independent.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand::RngCore::next_u64(&mut rng)
}

pub fn prepare(spec: &PrepareSpec, seed: u64) -> Result<Prepared> {
    let task = make_task(&spec.task, sub_seed(seed, 1))?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
    let mut dense = ToyModel::random(&spec.model.widths, spec.model.activation, &mut init_rng)?;
    let hyper = TrainHyper {
        seed: sub_seed(seed, 3),
        ..spec.pretrain.clone()
    };
    let pretrain = train_dense(&mut dense, &task, &hyper)?;
    let mut groups = discover_groups(&NeuronGraph::from_model(&dense));
    score_groups(&mut groups, &dense, &task.train, spec.importance)?;
    let pruned = prune(&dense, &groups, spec.prune_rate)?;
    groups.sort_by(|a, b| a.importance.total_cmp(&b.importance).then(a.id.cmp(&b.id)));
    Ok(Prepared {
        task,
        dense,
        pretrain,
        groups,
        pruned,
    })
}
