//! End-to-end runs: the pruning comparison table and the continual-learning
//! comparison, both driven by one `RunConfig`.

use crate::error::Result;
use crate::params::ParameterStore;
use crate::pipelines::{
    continual_learn, identify_masks, identify_masks_task_agnostic, single_task_update, train_dense, update_parameters,
    ContinualMode, MaskSearch, RewindTarget, Suite, TrainingHistory,
};
use crate::pruning::{param_percent, param_percent_one_mean, MaskSet, ParamMode};
use crate::tasks::TaskKind;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Dense,
    MultiTask,
    SingleTask,
    TaskAgnostic,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::MultiTask => "multi-task",
            Variant::SingleTask => "single-task",
            Variant::TaskAgnostic => "task-agnostic",
        }
    }
}

/// One line of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub variant: Variant,
    /// Fraction of prunable scalars removed.
    pub sparsity: f64,
    pub param_one: f64,
    pub param_all: f64,
    /// Raw metric per task, registry order.
    pub scores: Vec<f64>,
}

/// Parameters and masks of one pruned variant at one round count.
#[derive(Clone, Debug)]
pub struct PrunedModel<T: Real> {
    pub rounds: u32,
    pub masks: MaskSet,
    pub params: ParameterStore<T>,
    pub history: TrainingHistory,
}

#[derive(Clone, Debug)]
pub struct TableRun<T: Real> {
    pub init: ParameterStore<T>,
    pub dense: ParameterStore<T>,
    pub dense_history: TrainingHistory,
    pub search: MaskSearch,
    pub multi_task: Vec<PrunedModel<T>>,
    pub agnostic: Vec<PrunedModel<T>>,
    pub rows: Vec<ReportRow>,
}

impl<T: Real> TableRun<T> {
    pub fn multi_task_at(&self, rounds: u32) -> Option<&PrunedModel<T>> {
        self.multi_task.iter().find(|m| m.rounds == rounds)
    }
}

fn sparsity(masks: &MaskSet) -> f64 {
    let m = masks.iter().next().expect("nonempty mask set");
    m.sparsity()
}

/// Dense training, then every pruned variant at each configured round count.
/// Masks for all round counts come from one search of `max(report_rounds)`
/// rounds; a shorter search is a prefix of a longer one.
pub fn run_table<T: Real>(suite: &Suite, experiment: &str) -> Result<TableRun<T>> {
    let init = suite.init_params::<T>();
    let (dense, dense_history) = train_dense(suite, &init)?;
    let theta0 = match suite.config.rewind {
        RewindTarget::Init => init.clone(),
        RewindTarget::Dense => dense.clone(),
    };
    let max_rounds = *suite.config.report_rounds.iter().max().expect("validated");
    let mut search_suite = suite.clone();
    search_suite.config.q = max_rounds;
    let search = identify_masks(&search_suite, &mut theta0.clone())?;
    let agnostic_search = identify_masks_task_agnostic(&search_suite, &mut theta0.clone())?;

    let mut rows = vec![ReportRow {
        experiment: experiment.to_string(),
        variant: Variant::Dense,
        sparsity: 0.0,
        param_one: 100.0,
        param_all: 100.0,
        scores: suite.score_all(&dense, None)?,
    }];
    let mut multi_task = Vec::new();
    let mut agnostic = Vec::new();
    for &rounds in &suite.config.report_rounds {
        let masks = search.after_round(rounds)?.clone();
        let trained = update_parameters(suite, &theta0, &masks)?;
        rows.push(ReportRow {
            experiment: experiment.to_string(),
            variant: Variant::MultiTask,
            sparsity: sparsity(&masks),
            param_one: param_percent_one_mean(&masks)?,
            param_all: param_percent(&masks, &ParamMode::AllMultiTask)?,
            scores: suite.score_all(&trained.params, Some(&masks))?,
        });
        let singles = single_task_update(suite, &theta0, &masks)?;
        let mut scores = Vec::with_capacity(singles.len());
        for (t, model) in singles.iter().enumerate() {
            let task = &suite.tasks()[t];
            let eff = crate::pruning::apply_mask(&model.params, masks.get(&task.id)?)?;
            scores.push(suite.model.evaluate(&eff, task, &suite.data[t].eval)?);
        }
        rows.push(ReportRow {
            experiment: experiment.to_string(),
            variant: Variant::SingleTask,
            sparsity: sparsity(&masks),
            param_one: param_percent_one_mean(&masks)?,
            param_all: param_percent(&masks, &ParamMode::AllSingleTask)?,
            scores,
        });
        multi_task.push(PrunedModel {
            rounds,
            masks,
            params: trained.params,
            history: trained.history,
        });

        let shared = agnostic_search.after_round(rounds)?.clone();
        let trained = update_parameters(suite, &theta0, &shared)?;
        rows.push(ReportRow {
            experiment: experiment.to_string(),
            variant: Variant::TaskAgnostic,
            sparsity: sparsity(&shared),
            param_one: param_percent_one_mean(&shared)?,
            param_all: param_percent(&shared, &ParamMode::AllMultiTask)?,
            scores: suite.score_all(&trained.params, Some(&shared))?,
        });
        agnostic.push(PrunedModel {
            rounds,
            masks: shared,
            params: trained.params,
            history: trained.history,
        });
    }
    Ok(TableRun {
        init,
        dense,
        dense_history,
        search,
        multi_task,
        agnostic,
        rows,
    })
}

/// Outcome of continual learning in one mode.
#[derive(Clone, Debug)]
pub struct ContinualOutcome {
    pub mode: ContinualMode,
    pub target: String,
    pub history: TrainingHistory,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl ContinualOutcome {
    /// Improvement on the target task, higher-is-better units.
    pub fn target_gain(&self, suite: &Suite) -> f64 {
        let t = suite.model.registry.index_of(&self.target).expect("known task");
        let task = &suite.tasks()[t];
        task.higher_is_better(self.after[t]) - task.higher_is_better(self.before[t])
    }

    /// Mean score drop over the classification tasks other than the target,
    /// in accuracy points.
    pub fn forgetting(&self, suite: &Suite) -> f64 {
        let drops: Vec<f64> = suite
            .tasks()
            .iter()
            .enumerate()
            .filter(|(_, t)| t.id != self.target && t.kind == TaskKind::Classification)
            .map(|(i, _)| 100.0 * (self.before[i] - self.after[i]))
            .collect();
        if drops.is_empty() {
            0.0
        } else {
            drops.iter().sum::<f64>() / drops.len() as f64
        }
    }
}

/// Continual learning of `target` on its extra shard, starting from the
/// dense model for the dense modes and from the multi-task pruned model at
/// `rounds` for the pruned mode.
pub fn run_continual<T: Real>(
    suite: &Suite,
    table: &TableRun<T>,
    target: &str,
    rounds: u32,
    modes: &[ContinualMode],
) -> Result<Vec<ContinualOutcome>> {
    let t = suite.model.registry.index_of(target)?;
    let shard = &suite.data[t].continual;
    let pruned = table
        .multi_task_at(rounds)
        .ok_or_else(|| crate::Error::Config(format!("round count {rounds} is not in report_rounds")))?;
    modes
        .iter()
        .map(|&mode| {
            let (start, masks) = match mode {
                ContinualMode::Pruned => (&pruned.params, Some(&pruned.masks)),
                _ => (&table.dense, None),
            };
            let out = continual_learn(suite, start, masks, target, shard, mode)?;
            let before = out.history.first().expect("initial record").scores.clone();
            let after = out.history.last().expect("final record").scores.clone();
            Ok(ContinualOutcome {
                mode,
                target: target.to_string(),
                history: out.history,
                before,
                after,
            })
        })
        .collect()
}

/// Largest relative error between backward-pass gradients and central
/// finite differences (`h = 1e-5`) of the loss of a small seeded model, over
/// one batch of every task.
pub fn gradient_check(seed: u64) -> Result<f64> {
    use crate::autodiff::{fd_gradient, max_relative_error};
    use crate::data::{generate, Split};
    use crate::model::{Batch, ModelConfig, TaskModel};
    use crate::tasks::{three_task_blueprints, TaskRegistry};

    let mut blueprints = three_task_blueprints();
    for bp in &mut blueprints {
        bp.train_size = 4;
        bp.eval_size = 4;
        bp.continual_size = 4;
    }
    let registry = TaskRegistry::from_blueprints(&blueprints, seed)?;
    let mut config = ModelConfig::for_registry(&registry, 8, 2, seed);
    config.task_embedding_dim = 4;
    let model = TaskModel::new(config, registry)?;
    let params = model.init_params::<f64>();
    let mut worst = 0.0f64;
    for task in model.registry.tasks() {
        let data = generate(&task.dataset, Split::Eval)?;
        let refs: Vec<_> = data.examples.iter().take(3).collect();
        let batch = Batch::from_examples(task, &refs, model.config.max_seq_len)?;
        let (mut graph, loss) = model.loss_graph(&params, &batch)?;
        let analytic = graph.backward(loss, &params)?;
        let numeric = fd_gradient(|p| model.loss_value(p, &batch), &params, 1e-5)?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
