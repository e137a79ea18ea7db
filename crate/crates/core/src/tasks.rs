//! Task identities, specifier tokens and the shared output vocabulary.

use crate::data::{DatasetSpec, Generator};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    TokenErrorRate,
}

/// One task: identity, specifier token (its row in the task-embedding table),
/// the slice of the shared vocabulary holding its labels, and its data.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub specifier: usize,
    pub kind: TaskKind,
    pub label_offset: usize,
    pub label_count: usize,
    pub metric: Metric,
    pub dataset: DatasetSpec,
}

impl TaskSpec {
    pub fn labels(&self) -> std::ops::Range<usize> {
        self.label_offset..self.label_offset + self.label_count
    }

    /// Scores where larger is better: accuracy, or `1 - TER`.
    pub fn higher_is_better(&self, score: f64) -> f64 {
        match self.metric {
            Metric::Accuracy => score,
            Metric::TokenErrorRate => 1.0 - score,
        }
    }
}

/// Ordered set of tasks sharing one vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRegistry {
    tasks: Vec<TaskSpec>,
}

/// Blueprint for a registry entry before vocabulary offsets are assigned.
#[derive(Clone, Debug)]
pub struct TaskBlueprint {
    pub id: &'static str,
    pub generator: Generator,
    pub noise: f64,
    pub train_size: usize,
    pub eval_size: usize,
    pub continual_size: usize,
}

pub const INPUT_DIM: usize = 16;
pub const MIN_LEN: usize = 4;
pub const MAX_LEN: usize = 8;

pub fn three_task_blueprints() -> Vec<TaskBlueprint> {
    vec![
        TaskBlueprint {
            id: "CLS-A",
            generator: Generator::Classification { num_classes: 4 },
            noise: 0.65,
            train_size: 120,
            eval_size: 1000,
            continual_size: 400,
        },
        TaskBlueprint {
            id: "CLS-B",
            generator: Generator::Classification { num_classes: 12 },
            noise: 0.55,
            train_size: 1200,
            eval_size: 1000,
            continual_size: 1200,
        },
        TaskBlueprint {
            id: "SEQ",
            generator: Generator::Transduction { alphabet: 16 },
            noise: 0.25,
            train_size: 80,
            eval_size: 400,
            continual_size: 400,
        },
    ]
}

pub fn seven_task_blueprints() -> Vec<TaskBlueprint> {
    let mut v = three_task_blueprints();
    v.extend([
        TaskBlueprint {
            id: "CLS-C",
            generator: Generator::Classification { num_classes: 24 },
            noise: 0.45,
            train_size: 1200,
            eval_size: 400,
            continual_size: 400,
        },
        TaskBlueprint {
            id: "CLS-D",
            generator: Generator::Classification { num_classes: 6 },
            noise: 0.6,
            train_size: 300,
            eval_size: 300,
            continual_size: 300,
        },
        TaskBlueprint {
            id: "TAG",
            generator: Generator::Tagging { tags: 4, fillers: 12 },
            noise: 0.25,
            train_size: 600,
            eval_size: 300,
            continual_size: 600,
        },
        TaskBlueprint {
            id: "CLS-E",
            generator: Generator::Classification { num_classes: 12 },
            noise: 0.55,
            train_size: 1200,
            eval_size: 400,
            continual_size: 400,
        },
    ]);
    v
}

impl TaskRegistry {
    /// Lays tasks out in order, giving each a disjoint slice of the vocabulary.
    /// Dataset seeds depend on the run seed and the task id only.
    pub fn from_blueprints(blueprints: &[TaskBlueprint], seed: u64) -> Result<Self> {
        let mut offset = 0;
        let mut tasks = Vec::with_capacity(blueprints.len());
        for (i, bp) in blueprints.iter().enumerate() {
            if tasks.iter().any(|t: &TaskSpec| t.id == bp.id) {
                return Err(Error::Config(format!("duplicate task id `{}`", bp.id)));
            }
            let (kind, metric) = match bp.generator {
                Generator::Classification { .. } => (TaskKind::Classification, Metric::Accuracy),
                _ => (TaskKind::Sequence, Metric::TokenErrorRate),
            };
            let count = bp.generator.label_count();
            let dataset = DatasetSpec {
                task_id: bp.id.to_string(),
                generator: bp.generator,
                label_offset: offset,
                input_dim: INPUT_DIM,
                train_size: bp.train_size,
                eval_size: bp.eval_size,
                continual_size: bp.continual_size,
                min_len: MIN_LEN,
                max_len: MAX_LEN,
                noise: bp.noise,
                seed: seed::derive(seed, bp.id),
                continual_shift: false,
            };
            dataset.validate()?;
            tasks.push(TaskSpec {
                id: bp.id.to_string(),
                specifier: i,
                kind,
                label_offset: offset,
                label_count: count,
                metric,
                dataset,
            });
            offset += count;
        }
        if tasks.is_empty() {
            return Err(Error::Config("empty task registry".into()));
        }
        Ok(Self { tasks })
    }

    pub fn three(seed: u64) -> Self {
        Self::from_blueprints(&three_task_blueprints(), seed).expect("built-in registry is valid")
    }

    pub fn seven(seed: u64) -> Self {
        Self::from_blueprints(&seven_task_blueprints(), seed).expect("built-in registry is valid")
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.tasks.iter().map(|t| t.label_count).sum()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::Data(format!("unknown task `{id}`")))
    }

    pub fn get(&self, id: &str) -> Result<&TaskSpec> {
        self.index_of(id).map(|i| &self.tasks[i])
    }

    pub fn dataset_mut(&mut self, id: &str) -> Result<&mut DatasetSpec> {
        let i = self.index_of(id)?;
        Ok(&mut self.tasks[i].dataset)
    }

    pub fn set_continual_shift(&mut self, shift: bool) {
        for t in &mut self.tasks {
            t.dataset.continual_shift = shift;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_slices_are_disjoint() {
        let r = TaskRegistry::seven(0);
        let mut seen = vec![false; r.vocab_size()];
        for t in r.tasks() {
            for id in t.labels() {
                assert!(!seen[id]);
                seen[id] = true;
            }
        }
        assert!(seen.into_iter().all(|b| b));
        let specs: Vec<_> = r.tasks().iter().map(|t| t.specifier).collect();
        assert_eq!(specs, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn shared_tasks_have_identical_data_in_both_registries() {
        let (a, b) = (TaskRegistry::three(4), TaskRegistry::seven(4));
        assert_eq!(a.get("SEQ").unwrap().dataset.seed, b.get("SEQ").unwrap().dataset.seed);
        assert!(a.get("NOPE").is_err());
    }
}
