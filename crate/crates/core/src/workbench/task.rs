use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{Activation, Predictor, ToyModel};
use crate::error::{MixqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BlobsClassify,
    TeacherRegress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 512,
            val: 256,
            test: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub input_dim: usize,
    /// Classes for `BlobsClassify`, regression targets for `TeacherRegress`.
    pub output_dim: usize,
    pub sizes: SplitSizes,
    /// Typical distance between blob centers, in units of the blob std.
    pub separation: f64,
    /// Std of the additive target noise for `TeacherRegress`.
    pub noise: f64,
    /// Hidden width of the teacher network.
    pub teacher_hidden: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::BlobsClassify,
            input_dim: 16,
            output_dim: 16,
            sizes: SplitSizes::default(),
            separation: 10.0,
            noise: 0.05,
            teacher_hidden: 32,
        }
    }
}

/// Synthetic task with disjoint train/val/test splits, fully determined by its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    teacher: Option<ToyModel>,
}

impl Task {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// The generating network of a `TeacherRegress` task.
    pub fn teacher(&self) -> Option<&ToyModel> {
        self.teacher.as_ref()
    }

    pub fn is_classification(&self) -> bool {
        self.spec.kind == TaskKind::BlobsClassify
    }
}

pub fn make_task(spec: &TaskSpec, seed: u64) -> Result<Task> {
    let s = &spec.sizes;
    if spec.input_dim == 0 || spec.output_dim == 0 || s.train == 0 || s.val == 0 || s.test == 0 {
        return Err(MixqError::InvalidArgument(format!(
            "task dimensions and split sizes must be positive: {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.input_dim;
    match spec.kind {
        TaskKind::BlobsClassify => {
            let k = spec.output_dim;
            // Centers on a sphere of radius separation/√2: random pairs sit ≈ separation apart.
            let radius = spec.separation / std::f64::consts::SQRT_2;
            let centers: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    z.iter().map(|v| v * radius / norm).collect()
                })
                .collect();
            let mut blobs = |n: usize| {
                let mut out: Vec<Sample> = (0..n)
                    .map(|i| {
                        let c = i % k;
                        let x = centers[c]
                            .iter()
                            .map(|m| {
                                let e: f64 = StandardNormal.sample(&mut rng);
                                m + e
                            })
                            .collect();
                        Sample {
                            x,
                            target: Target::Class(c),
                        }
                    })
                    .collect();
                out.shuffle(&mut rng);
                out
            };
            let train = blobs(s.train);
            let val = blobs(s.val);
            let test = blobs(s.test);
            Ok(Task {
                spec: spec.clone(),
                seed,
                train,
                val,
                test,
                teacher: None,
            })
        }
        TaskKind::TeacherRegress => {
            let teacher = ToyModel::random(
                &[d, spec.teacher_hidden.max(1), spec.output_dim],
                Activation::Tanh,
                &mut rng,
            )?;
            let noise = spec.noise;
            let mut draw = |n: usize| -> Vec<Sample> {
                (0..n)
                    .map(|_| {
                        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let y = teacher
                            .predict(&x)
                            .into_iter()
                            .map(|v| {
                                let e: f64 = StandardNormal.sample(&mut rng);
                                v + noise * e
                            })
                            .collect();
                        Sample {
                            x,
                            target: Target::Values(y),
                        }
                    })
                    .collect()
            };
            let train = draw(s.train);
            let val = draw(s.val);
            let test = draw(s.test);
            Ok(Task {
                spec: spec.clone(),
                seed,
                train,
                val,
                test,
                teacher: Some(teacher),
            })
        }
    }
}
