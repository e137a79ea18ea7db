//! Seeded synthetic datasets: prototype classification, noisy-one-hot
//! denoising transduction, and alternating tag/filler transduction.
//!
//! Every example is drawn from its own counter-derived stream, so a dataset
//! is a pure function of its spec and examples could be generated in any order.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;
use crate::tasks::{TaskKind, TaskRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Classification { num_classes: usize },
    Transduction { alphabet: usize },
    /// Targets alternate a tag token and a filler token.
    Tagging { tags: usize, fillers: usize },
}

impl Generator {
    pub fn label_count(&self) -> usize {
        match *self {
            Generator::Classification { num_classes } => num_classes,
            Generator::Transduction { alphabet } => alphabet,
            Generator::Tagging { tags, fillers } => tags + fillers,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Generator::Classification { .. } => TaskKind::Classification,
            _ => TaskKind::Sequence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
    Continual,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Continual => "continual",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::Eval, Split::Continual];
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub task_id: String,
    pub generator: Generator,
    /// First vocabulary id of this task's labels.
    pub label_offset: usize,
    pub input_dim: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub continual_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise: f64,
    pub seed: u64,
    /// Draw the continual shard with 1.5x the noise.
    pub continual_shift: bool,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("{}: {m}", self.task_id)));
        match self.generator {
            Generator::Classification { num_classes } if num_classes < 2 => {
                return bad("classification needs at least 2 classes".into())
            }
            Generator::Transduction { alphabet } if alphabet < 2 => {
                return bad("transduction needs an alphabet of at least 2".into())
            }
            Generator::Tagging { tags, fillers } if tags == 0 || fillers == 0 => {
                return bad("tagging needs tags and fillers".into())
            }
            _ => {}
        }
        if !matches!(self.generator, Generator::Classification { .. })
            && self.generator.label_count() > self.input_dim
        {
            return bad(format!(
                "alphabet {} does not fit input_dim {}",
                self.generator.label_count(),
                self.input_dim
            ));
        }
        if self.input_dim == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return bad("invalid input_dim or length range".into());
        }
        if self.train_size == 0 || self.eval_size == 0 || self.continual_size == 0 {
            return bad("split sizes must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        Ok(())
    }

    pub fn size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Eval => self.eval_size,
            Split::Continual => self.continual_size,
        }
    }

    fn noise_for(&self, split: Split) -> f64 {
        if split == Split::Continual && self.continual_shift {
            self.noise * 1.5
        } else {
            self.noise
        }
    }

    /// Unit prototype direction per class, shared by all splits.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        (0..self.generator.label_count())
            .map(|c| {
                let mut rng = seed::rng_indexed(self.seed, "prototype", c as u64);
                let v: Vec<f64> = (0..self.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Tokens(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub task: String,
    /// Row-major `[len, input_dim]` features.
    pub input: Vec<f64>,
    pub len: usize,
    pub target: Target,
}

impl Example {
    pub fn input_dim(&self) -> usize {
        self.input.len() / self.len
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.input[i * d..(i + 1) * d]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        Dataset {
            examples: self.examples.iter().chain(&other.examples).cloned().collect(),
        }
    }

    /// Serializes as one tab-separated line per example:
    /// `task<TAB>frames<TAB>target`, frames separated by `|`, floats by spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&ex.task);
            out.push('\t');
            for i in 0..ex.len {
                if i > 0 {
                    out.push('|');
                }
                for (j, v) in ex.frame(i).iter().enumerate() {
                    if j > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v:?}");
                }
            }
            out.push('\t');
            match &ex.target {
                Target::Class(c) => {
                    let _ = write!(out, "{c}");
                }
                Target::Tokens(t) => {
                    let s: Vec<String> = t.iter().map(usize::to_string).collect();
                    out.push_str(&s.join(" "));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output. The task kind for each line is
    /// looked up in `registry`; labels must fall in that task's vocabulary slice.
    pub fn parse_text(text: &str, registry: &TaskRegistry) -> Result<Dataset> {
        let mut examples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse {
                line: line_no,
                message: m,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [task, frames, target] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let spec = registry.get(task).map_err(|e| err(e.to_string()))?;
            let mut input = Vec::new();
            let mut len = 0;
            let mut dim = None;
            for frame in frames.split('|') {
                let vals: Vec<f64> = frame
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|e| err(format!("bad float `{v}`: {e}"))))
                    .collect::<Result<_>>()?;
                if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
                    return Err(err("empty or non-finite frame".into()));
                }
                if *dim.get_or_insert(vals.len()) != vals.len() {
                    return Err(err("frames differ in width".into()));
                }
                input.extend(vals);
                len += 1;
            }
            if dim != Some(spec.dataset.input_dim) {
                return Err(err(format!("frames must have {} features", spec.dataset.input_dim)));
            }
            let ids: Vec<usize> = target
                .split_whitespace()
                .map(|v| v.parse::<usize>().map_err(|e| err(format!("bad label `{v}`: {e}"))))
                .collect::<Result<_>>()?;
            if let Some(bad) = ids.iter().find(|i| !spec.labels().contains(i)) {
                return Err(err(format!("label {bad} outside task `{task}` vocabulary")));
            }
            let target = match spec.kind {
                TaskKind::Classification if ids.len() == 1 => Target::Class(ids[0]),
                TaskKind::Classification => return Err(err("classification target must be one id".into())),
                TaskKind::Sequence if ids.len() == len => Target::Tokens(ids),
                TaskKind::Sequence => {
                    return Err(err(format!("{} target tokens for {len} frames", ids.len())))
                }
            };
            examples.push(Example {
                task: task.to_string(),
                input,
                len,
                target,
            });
        }
        Ok(Dataset { examples })
    }
}

/// Prototype-plus-noise classification; label `i mod C` for example `i`.
pub fn gen_classification(spec: &DatasetSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let Generator::Classification { num_classes } = spec.generator else {
        return Err(Error::Data(format!("{} is not a classification spec", spec.task_id)));
    };
    let protos = spec.prototypes();
    let sigma = spec.noise_for(split);
    let examples = (0..spec.size(split))
        .map(|i| {
            let mut rng = seed::rng_indexed(spec.seed, split.label(), i as u64);
            let class = i % num_classes;
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut input = Vec::with_capacity(len * spec.input_dim);
            for _ in 0..len {
                for &p in &protos[class] {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    input.push(p + sigma * n);
                }
            }
            Example {
                task: spec.task_id.clone(),
                input,
                len,
                target: Target::Class(spec.label_offset + class),
            }
        })
        .collect();
    Ok(Dataset { examples })
}

/// Denoising transduction: input frames are noisy one-hot codes of the target tokens.
pub fn gen_transduction(spec: &DatasetSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let sigma = spec.noise_for(split);
    let examples = (0..spec.size(split))
        .map(|i| {
            let mut rng = seed::rng_indexed(spec.seed, split.label(), i as u64);
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let local: Vec<usize> = match spec.generator {
                Generator::Transduction { alphabet } => (0..len).map(|_| rng.gen_range(0..alphabet)).collect(),
                Generator::Tagging { tags, fillers } => (0..len)
                    .map(|p| {
                        if p % 2 == 0 {
                            rng.gen_range(0..tags)
                        } else {
                            tags + rng.gen_range(0..fillers)
                        }
                    })
                    .collect(),
                Generator::Classification { .. } => unreachable!("checked by caller"),
            };
            let mut input = Vec::with_capacity(len * spec.input_dim);
            for &tok in &local {
                for d in 0..spec.input_dim {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    input.push(f64::from(u8::from(d == tok)) + sigma * n);
                }
            }
            Example {
                task: spec.task_id.clone(),
                input,
                len,
                target: Target::Tokens(local.into_iter().map(|t| spec.label_offset + t).collect()),
            }
        })
        .collect();
    Ok(Dataset { examples })
}

pub fn generate(spec: &DatasetSpec, split: Split) -> Result<Dataset> {
    match spec.generator {
        Generator::Classification { .. } => gen_classification(spec, split),
        _ => gen_transduction(spec, split),
    }
}

/// Repeats every example `factor` times. Ordering is left to the sampler.
pub fn upsample(dataset: &Dataset, factor: usize) -> Result<Dataset> {
    if factor == 0 {
        return Err(Error::Data("upsample factor must be at least 1".into()));
    }
    Ok(Dataset {
        examples: dataset
            .examples
            .iter()
            .flat_map(|e| std::iter::repeat(e).take(factor))
            .cloned()
            .collect(),
    })
}

/// Train/eval/continual splits of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub eval: Dataset,
    pub continual: Dataset,
}

impl TaskData {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        Ok(Self {
            train: generate(spec, Split::Train)?,
            eval: generate(spec, Split::Eval)?,
            continual: generate(spec, Split::Continual)?,
        })
    }

    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
            Split::Continual => &self.continual,
        }
    }
}

/// Data for every task of a registry, in registry order.
pub fn generate_all(registry: &TaskRegistry) -> Result<Vec<TaskData>> {
    registry.tasks().iter().map(|t| TaskData::generate(&t.dataset)).collect()
}

/// Cycles through a dataset in seeded shuffled epochs.
#[derive(Clone, Debug)]
pub struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl BatchCursor {
    pub fn new(len: usize, seed: u64, label: &str) -> Self {
        let mut rng = seed::rng(seed, label);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
