//! The shared multi-task network: task-embedding conditioning, a tanh trunk
//! applied per timestep, a shared tanh decoder layer, then one output
//! projection over the shared vocabulary. Classification reads it once from
//! the mean-pooled frames, sequence tasks once per frame.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::data::{Dataset, Example, Target};
use crate::error::{Error, Result};
use crate::metrics;
use crate::params::ParameterStore;
use crate::seed;
use crate::tasks::{TaskKind, TaskRegistry, TaskSpec, INPUT_DIM, MAX_LEN};
use crate::tensor::{Real, Tensor};

pub const TASK_EMBEDDING: &str = "task_embedding";
pub const HEAD: &str = "head";
pub const DECODER: &str = "decoder";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_trunk_layers: usize,
    pub vocab_size: usize,
    pub num_tasks: usize,
    pub task_embedding_dim: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn for_registry(registry: &TaskRegistry, hidden_dim: usize, num_trunk_layers: usize, seed: u64) -> Self {
        Self {
            input_dim: INPUT_DIM,
            hidden_dim,
            num_trunk_layers,
            vocab_size: registry.vocab_size(),
            num_tasks: registry.len(),
            task_embedding_dim: 8,
            max_seq_len: MAX_LEN,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.input_dim,
            self.hidden_dim,
            self.num_trunk_layers,
            self.vocab_size,
            self.num_tasks,
            self.task_embedding_dim,
            self.max_seq_len,
        ];
        if extents.contains(&0) {
            return Err(Error::Config(format!("model extents must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub fn trunk_weight(layer: usize) -> String {
    format!("trunk.{layer}.weight")
}

pub fn trunk_bias(layer: usize) -> String {
    format!("trunk.{layer}.bias")
}

/// Trunk weight matrices: the parameters trained by the encoder-only baseline.
pub fn is_trunk_weight(name: &str) -> bool {
    name.starts_with("trunk.") && name.ends_with(".weight")
}

/// A mini-batch from one task, flattened to `[rows, input_dim]`.
#[derive(Clone, Debug)]
pub struct Batch<T = f64> {
    pub task: usize,
    pub inputs: Tensor<T>,
    pub segments: Vec<Range<usize>>,
    /// One per example for classification, one per row for sequences.
    pub targets: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn from_examples(task: &TaskSpec, examples: &[&Example], max_seq_len: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let dim = examples[0].input_dim();
        let mut values = Vec::new();
        let mut segments = Vec::with_capacity(examples.len());
        let mut targets = Vec::new();
        for ex in examples {
            if ex.task != task.id {
                return Err(Error::Data(format!("example of `{}` in a `{}` batch", ex.task, task.id)));
            }
            if ex.len > max_seq_len {
                return Err(Error::Data(format!("sequence length {} exceeds max_seq_len {max_seq_len}", ex.len)));
            }
            if ex.input_dim() != dim || ex.input.len() != ex.len * dim {
                return Err(Error::shape("batch", "inconsistent frame widths"));
            }
            let start = segments.last().map_or(0, |r: &Range<usize>| r.end);
            segments.push(start..start + ex.len);
            values.extend(ex.input.iter().map(|&v| T::from_f64(v)));
            match (&ex.target, task.kind) {
                (Target::Class(c), TaskKind::Classification) => targets.push(*c),
                (Target::Tokens(t), TaskKind::Sequence) if t.len() == ex.len => targets.extend_from_slice(t),
                _ => return Err(Error::Data(format!("target does not match task `{}`", task.id))),
            }
        }
        let rows = segments.last().expect("nonempty").end;
        Ok(Self {
            task: task.specifier,
            inputs: Tensor::new(vec![rows, dim], values)?,
            segments,
            targets,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prediction {
    Class(usize),
    Tokens(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub registry: TaskRegistry,
}

impl TaskModel {
    pub fn new(config: ModelConfig, registry: TaskRegistry) -> Result<Self> {
        config.validate()?;
        if config.vocab_size < registry.vocab_size() || config.num_tasks < registry.len() {
            return Err(Error::Config("model vocabulary or task table too small for registry".into()));
        }
        if registry.tasks().iter().any(|t| t.dataset.input_dim != config.input_dim) {
            return Err(Error::Config("dataset input_dim differs from model input_dim".into()));
        }
        Ok(Self { config, registry })
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec> {
        self.registry.get(id)
    }

    /// Fresh parameters: Glorot-uniform weights, zero biases, uniform(-1, 1)
    /// task embeddings. The embedding table is the only non-prunable entry.
    pub fn init_params<T: Real>(&self) -> ParameterStore<T> {
        let c = &self.config;
        let mut rng = seed::rng(c.seed, "init");
        let mut store = ParameterStore::new();
        let mut uniform = |shape: Vec<usize>, bound: f64| {
            let n = shape.iter().product();
            let v = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
            Tensor::new(shape, v).expect("positive extents")
        };
        let emb = uniform(vec![c.num_tasks, c.task_embedding_dim], 1.0);
        store.insert(TASK_EMBEDDING, emb, false).expect("unique");
        let mut fan_in = c.input_dim + c.task_embedding_dim;
        for layer in 0..c.num_trunk_layers {
            let bound = (6.0 / (fan_in + c.hidden_dim) as f64).sqrt();
            store
                .insert(trunk_weight(layer), uniform(vec![fan_in, c.hidden_dim], bound), true)
                .expect("unique");
            store
                .insert(trunk_bias(layer), Tensor::zeros(vec![c.hidden_dim]), true)
                .expect("unique");
            fan_in = c.hidden_dim;
        }
        let bound = (3.0 / c.hidden_dim as f64).sqrt();
        store
            .insert(format!("{DECODER}.weight"), uniform(vec![c.hidden_dim, c.hidden_dim], bound), true)
            .expect("unique");
        store
            .insert(format!("{DECODER}.bias"), Tensor::zeros(vec![c.hidden_dim]), true)
            .expect("unique");
        let bound = (6.0 / (c.hidden_dim + c.vocab_size) as f64).sqrt();
        store
            .insert(format!("{HEAD}.weight"), uniform(vec![c.hidden_dim, c.vocab_size], bound), true)
            .expect("unique");
        store
            .insert(format!("{HEAD}.bias"), Tensor::zeros(vec![c.vocab_size]), true)
            .expect("unique");
        store
    }

    fn node(&self, store: &ParameterStore<impl Real>, ids: &[NodeId], name: &str) -> Result<NodeId> {
        store
            .index_of(name)
            .map(|i| ids[i])
            .ok_or_else(|| Error::Layout(format!("parameter `{name}` missing")))
    }

    /// Records the forward pass and returns the logits node: one row per
    /// example for classification, one row per frame for sequence tasks.
    pub fn forward<T: Real>(
        &self,
        graph: &mut Graph<T>,
        store: &ParameterStore<T>,
        ids: &[NodeId],
        batch: &Batch<T>,
    ) -> Result<NodeId> {
        let task = self
            .registry
            .tasks()
            .get(batch.task)
            .ok_or_else(|| Error::Data(format!("unknown task index {}", batch.task)))?;
        let rows = batch.inputs.dims2().map(|d| d.0).unwrap_or(0);
        let x = graph.constant(batch.inputs.clone())?;
        let table = self.node(store, ids, TASK_EMBEDDING)?;
        let spec = graph.embedding(table, &vec![task.specifier; rows])?;
        let mut h = graph.concat(x, spec)?;
        for layer in 0..self.config.num_trunk_layers {
            let w = self.node(store, ids, &trunk_weight(layer))?;
            let b = self.node(store, ids, &trunk_bias(layer))?;
            let z = graph.matmul(h, w)?;
            let z = graph.add_bias(z, b)?;
            h = graph.tanh(z)?;
        }
        if task.kind == TaskKind::Classification {
            h = graph.mean_pool(h, &batch.segments)?;
        }
        let w = self.node(store, ids, &format!("{DECODER}.weight"))?;
        let b = self.node(store, ids, &format!("{DECODER}.bias"))?;
        let z = graph.matmul(h, w)?;
        let z = graph.add_bias(z, b)?;
        h = graph.tanh(z)?;
        let w = self.node(store, ids, &format!("{HEAD}.weight"))?;
        let b = self.node(store, ids, &format!("{HEAD}.bias"))?;
        let z = graph.matmul(h, w)?;
        graph.add_bias(z, b)
    }

    /// Mean cross-entropy of the batch; returns `(graph, loss node)` with
    /// parameters bound as differentiable leaves.
    pub fn loss_graph<T: Real>(&self, store: &ParameterStore<T>, batch: &Batch<T>) -> Result<(Graph<T>, NodeId)> {
        let mut g = Graph::new();
        let ids = g.bind_params(store)?;
        let logits = self.forward(&mut g, store, &ids, batch)?;
        let loss = g.softmax_cross_entropy(logits, &batch.targets)?;
        Ok((g, loss))
    }

    pub fn loss_value<T: Real>(&self, store: &ParameterStore<T>, batch: &Batch<T>) -> Result<f64> {
        let (g, loss) = self.loss_graph(store, batch)?;
        Ok(g.value(loss).item().expect("scalar").as_f64())
    }

    /// Logits without recording gradients.
    pub fn logits<T: Real>(&self, store: &ParameterStore<T>, batch: &Batch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let ids = g.bind_constants(store)?;
        let z = self.forward(&mut g, store, &ids, batch)?;
        Ok(g.value(z).clone())
    }

    /// Single-example forward.
    pub fn forward_example<T: Real>(&self, store: &ParameterStore<T>, task: &str, example: &Example) -> Result<Tensor<T>> {
        let spec = self.task(task)?;
        let mut ex = example.clone();
        ex.task = spec.id.clone();
        let batch = Batch::from_examples(spec, &[&ex], self.config.max_seq_len)?;
        self.logits(store, &batch)
    }

    /// Scores `dataset` for `task` with the (already masked) parameters.
    pub fn evaluate<T: Real>(&self, store: &ParameterStore<T>, task: &TaskSpec, dataset: &Dataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Data(format!("empty evaluation set for `{}`", task.id)));
        }
        let mut refs_cls = Vec::new();
        let mut hyps_cls = Vec::new();
        let mut refs_seq = Vec::new();
        let mut hyps_seq = Vec::new();
        for chunk in dataset.examples.chunks(64) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let batch = Batch::from_examples(task, &refs, self.config.max_seq_len)?;
            let logits = self.logits(store, &batch)?;
            match task.kind {
                TaskKind::Classification => {
                    for (i, ex) in chunk.iter().enumerate() {
                        let Prediction::Class(c) = predict(logits.row(i), task) else { unreachable!() };
                        let Target::Class(t) = ex.target else { unreachable!() };
                        refs_cls.push(t);
                        hyps_cls.push(c);
                    }
                }
                TaskKind::Sequence => {
                    for (ex, seg) in chunk.iter().zip(&batch.segments) {
                        let rows: Vec<&[T]> = seg.clone().map(|r| logits.row(r)).collect();
                        let Prediction::Tokens(h) = predict_sequence(&rows, task) else { unreachable!() };
                        let Target::Tokens(t) = &ex.target else { unreachable!() };
                        refs_seq.push(t.clone());
                        hyps_seq.push(h);
                    }
                }
            }
        }
        match task.kind {
            TaskKind::Classification => metrics::accuracy(&refs_cls, &hyps_cls),
            TaskKind::Sequence => metrics::token_error_rate(&refs_seq, &hyps_seq),
        }
    }
}

/// Argmax over `labels`, ties toward the lower id.
pub fn argmax_in<T: Real>(row: &[T], labels: Range<usize>) -> usize {
    labels.fold(None, |best: Option<usize>, i| match best {
        Some(b) if row[b] >= row[i] => Some(b),
        _ => Some(i),
    })
    .expect("nonempty label range")
}

/// Classification: one logit row, argmax over the task's labels.
pub fn predict<T: Real>(row: &[T], task: &TaskSpec) -> Prediction {
    match task.kind {
        TaskKind::Classification => Prediction::Class(argmax_in(row, task.labels())),
        TaskKind::Sequence => Prediction::Tokens(vec![argmax_in(row, task.labels())]),
    }
}

/// Per-position greedy decoding.
pub fn predict_sequence<T: Real>(rows: &[&[T]], task: &TaskSpec) -> Prediction {
    Prediction::Tokens(rows.iter().map(|r| argmax_in(r, task.labels())).collect())
}
