use crate::autodiff::{adam_step, OptimizerState, WarmupSchedule};
use crate::data::{generate_all, upsample, BatchCursor, Dataset, TaskData};
use crate::error::{Error, Result};
use crate::model::{Batch, ModelConfig, TaskModel};
use crate::params::ParameterStore;
use crate::pruning::{apply_mask, mask_gradients, MaskSet, PruningMask};
use crate::tasks::{TaskRegistry, TaskSpec};
use crate::tensor::Real;

use super::config::{RegistryChoice, RunConfig};

/// Environment variable capping evaluation fan-out across tasks.
pub const THREADS_ENV: &str = "SUBNET_FORGE_THREADS";

/// Everything a pipeline needs: config, model definition and per-task data.
#[derive(Clone, Debug)]
pub struct Suite {
    pub config: RunConfig,
    pub model: TaskModel,
    pub data: Vec<TaskData>,
    /// Training split after upsampling, per task.
    pub train: Vec<Dataset>,
}

impl Suite {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut registry = match config.tasks {
            RegistryChoice::Three => TaskRegistry::three(config.seed),
            RegistryChoice::Seven => TaskRegistry::seven(config.seed),
        };
        registry.set_continual_shift(config.continual_shift);
        Self::with_registry(config, registry)
    }

    /// Builds the suite over an explicit registry, applying the config's
    /// per-task dataset overrides to the tasks it contains.
    pub fn with_registry(config: RunConfig, mut registry: TaskRegistry) -> Result<Self> {
        config.validate()?;
        let keys = config
            .upsample
            .keys()
            .chain(config.n1_override.keys())
            .chain(config.noise.keys())
            .chain(config.train_size.keys());
        for key in keys {
            if registry.get(key).is_err() && !is_builtin_task(key) {
                return Err(Error::Config(format!("per-task setting for unknown task `{key}`")));
            }
        }
        for (id, &noise) in &config.noise {
            if let Ok(spec) = registry.dataset_mut(id) {
                spec.noise = noise;
            }
        }
        for (id, &size) in &config.train_size {
            if let Ok(spec) = registry.dataset_mut(id) {
                spec.train_size = size;
            }
        }
        let model_cfg = ModelConfig::for_registry(&registry, config.hidden_dim, config.num_trunk_layers, config.seed);
        let model = TaskModel::new(model_cfg, registry)?;
        let data = generate_all(&model.registry)?;
        let train = model
            .registry
            .tasks()
            .iter()
            .zip(&data)
            .map(|(t, d)| upsample(&d.train, config.upsample_for(&t.id)))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            model,
            data,
            train,
        })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        self.model.registry.tasks()
    }

    pub fn task_ids(&self) -> Vec<&str> {
        self.tasks().iter().map(|t| t.id.as_str()).collect()
    }

    pub fn init_params<T: Real>(&self) -> ParameterStore<T> {
        self.model.init_params()
    }

    /// Scores every task on its eval split. With `masks`, task `t` is scored
    /// with `m_t ⊙ θ`; without, with `θ` itself.
    pub fn score_all<T: Real>(&self, params: &ParameterStore<T>, masks: Option<&MaskSet>) -> Result<Vec<f64>> {
        let score = |i: usize| -> Result<f64> {
            let task = &self.tasks()[i];
            match masks {
                Some(m) => {
                    let eff = apply_mask(params, m.get(&task.id)?)?;
                    self.model.evaluate(&eff, task, &self.data[i].eval)
                }
                None => self.model.evaluate(params, task, &self.data[i].eval),
            }
        };
        let n = self.tasks().len();
        let threads = thread_cap().min(n);
        if threads <= 1 {
            return (0..n).map(score).collect();
        }
        let mut results: Vec<Option<Result<f64>>> = (0..n).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, chunk) in results.chunks_mut(n.div_ceil(threads)).enumerate() {
                let score = &score;
                let base = w * n.div_ceil(threads);
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(score(base + k));
                    }
                });
            }
        });
        results.into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}

fn is_builtin_task(id: &str) -> bool {
    crate::tasks::seven_task_blueprints().iter().any(|b| b.id == id)
}

fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// One evaluation checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub step: u64,
    /// Task being trained when the checkpoint was taken (`mixture` for dense training).
    pub trained_task: String,
    /// Scores in registry order.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainingHistory {
    pub task_ids: Vec<String>,
    pub records: Vec<HistoryRecord>,
}

impl TrainingHistory {
    pub fn new(task_ids: &[&str]) -> Self {
        Self {
            task_ids: task_ids.iter().map(|s| s.to_string()).collect(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, step: u64, trained_task: &str, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.task_ids.len() {
            return Err(Error::Data("history record must score every task".into()));
        }
        if self.records.last().is_some_and(|r| r.step >= step) {
            return Err(Error::Data(format!("history steps must increase (got {step})")));
        }
        self.records.push(HistoryRecord {
            step,
            trained_task: trained_task.to_string(),
            scores,
        });
        Ok(())
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    pub fn first(&self) -> Option<&HistoryRecord> {
        self.records.first()
    }
}

/// What a training step is allowed to change.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepMask<'a> {
    /// Forward uses `m ⊙ θ` and gradients are masked by `m`.
    pub mask: Option<&'a PruningMask>,
    /// Per store entry: false freezes the whole entry.
    pub trainable: Option<&'a [bool]>,
}

/// Optimizer plus its schedule, counting steps taken.
#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub state: OptimizerState<T>,
    pub schedule: WarmupSchedule,
    pub steps: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(params: &ParameterStore<T>, base_lr: f64, warmup: u64) -> Self {
        Self {
            state: OptimizerState::new(params),
            schedule: WarmupSchedule::new(base_lr, warmup),
            steps: 0,
        }
    }

    /// One optimizer step on one batch; returns the batch loss.
    pub fn step(
        &mut self,
        model: &TaskModel,
        params: &mut ParameterStore<T>,
        batch: &Batch<T>,
        limits: StepMask<'_>,
    ) -> Result<f64> {
        let masked;
        let eff = match limits.mask {
            Some(m) => {
                masked = apply_mask(params, m)?;
                &masked
            }
            None => &*params,
        };
        let (mut graph, loss) = model.loss_graph(eff, batch)?;
        let loss_value = graph.value(loss).item().expect("scalar").as_f64();
        let mut grads = graph.backward(loss, eff)?;
        if let Some(m) = limits.mask {
            grads = mask_gradients(&grads, m, params)?;
        }
        if let Some(trainable) = limits.trainable {
            for (e, &keep) in trainable.iter().enumerate() {
                if !keep {
                    grads.entry_mut(e).iter_mut().for_each(|g| *g = T::zero());
                }
            }
        }
        adam_step(params, &grads, &mut self.state, &self.schedule)?;
        self.steps += 1;
        Ok(loss_value)
    }
}

/// Endless seeded batches from one task's dataset.
#[derive(Clone, Debug)]
pub struct TaskStream<'a> {
    pub task: &'a TaskSpec,
    pub dataset: &'a Dataset,
    cursor: BatchCursor,
    max_seq_len: usize,
}

impl<'a> TaskStream<'a> {
    pub fn new(suite: &'a Suite, task_index: usize, dataset: &'a Dataset, label: &str) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Data(format!("task `{}` has no training data", suite.tasks()[task_index].id)));
        }
        Ok(Self {
            task: &suite.tasks()[task_index],
            dataset,
            cursor: BatchCursor::new(dataset.len(), suite.config.seed, label),
            max_seq_len: suite.model.config.max_seq_len,
        })
    }

    pub fn next_batch<T: Real>(&mut self, size: usize) -> Result<Batch<T>> {
        let idx = self.cursor.next_batch(size.min(self.dataset.len()));
        let refs: Vec<_> = idx.iter().map(|&i| &self.dataset.examples[i]).collect();
        Batch::from_examples(self.task, &refs, self.max_seq_len)
    }
}
