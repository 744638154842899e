//! Desk-scale stand-in for LLM fine-tuning: a seeded MLP, synthetic tasks,
//! an adapter-only trainer over a quantized frozen base, and the evaluator
//! that produces the performance score `P(q)`.

mod assembled;
mod model;
mod nn;
mod task;
mod train;

pub use assembled::{assemble, effective_rank, AdaptedLayer, AdapterInit, AssembleOptions, AssembledModel};
pub use model::{Activation, Predictor, ToyModel};
pub use nn::{mean_loss, metric};
pub use task::{make_task, Sample, Split, SplitSizes, Target, Task, TaskKind, TaskSpec};
pub use train::{evaluate, train_adapters, train_dense, TrainHyper, TrainReport};

pub(crate) use nn::{accumulate_sample, Grads};
