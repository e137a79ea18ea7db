use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::is_trunk_weight;
use crate::params::ParameterStore;
use crate::pruning::{global_magnitude_prune, MaskSet, PruningMask, AGNOSTIC};
use crate::seed;
use crate::tensor::Real;

use super::suite::{StepMask, Suite, TaskStream, Trainer, TrainingHistory};

const MIXTURE: &str = "mixture";

/// Dense multi-task training from `init` on the upsampled task mixture.
pub fn train_dense<T: Real>(suite: &Suite, init: &ParameterStore<T>) -> Result<(ParameterStore<T>, TrainingHistory)> {
    let cfg = &suite.config;
    let mut params = init.clone();
    let mut streams = (0..suite.tasks().len())
        .map(|i| TaskStream::new(suite, i, &suite.train[i], &format!("dense/{}", suite.tasks()[i].id)))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<usize> = suite.train.iter().map(Dataset::len).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Data(format!("task mixture: {e}")))?;
    let mut rng = seed::rng(cfg.seed, "dense/mixture");
    let mut trainer = Trainer::new(&params, cfg.lr_dense, cfg.warmup_dense);
    let mut history = TrainingHistory::new(&suite.task_ids());
    history.push(0, MIXTURE, suite.score_all(&params, None)?)?;
    for step in 1..=cfg.dense_steps {
        let t = pick.sample(&mut rng);
        let batch = streams[t].next_batch(cfg.batch_size)?;
        trainer.step(&suite.model, &mut params, &batch, StepMask::default())?;
        if step % cfg.eval_interval == 0 || step == cfg.dense_steps {
            history.push(step, MIXTURE, suite.score_all(&params, None)?)?;
        }
    }
    Ok((params, history))
}

/// Result of mask identification.
#[derive(Clone, Debug)]
pub struct MaskSearch {
    pub masks: MaskSet,
    /// Masks as they stood after each round, index 0 = round 1.
    pub rounds: Vec<MaskSet>,
    pub steps: u64,
}

impl MaskSearch {
    pub fn after_round(&self, round: u32) -> Result<&MaskSet> {
        round
            .checked_sub(1)
            .and_then(|r| self.rounds.get(r as usize))
            .ok_or_else(|| Error::Config(format!("no masks recorded for round {round}")))
    }
}

fn shuffled_order(suite: &Suite, label: &str, round: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..suite.tasks().len()).collect();
    order.shuffle(&mut seed::rng_indexed(suite.config.seed, label, round));
    order
}

/// Task-specific masks. Every round visits the tasks in a seeded order; each
/// visit trains `n1` steps from `theta0` under the task's mask, prunes `p` of
/// its survivors and rewinds. `params` holds `theta0` on entry and on return.
pub fn identify_masks<T: Real>(suite: &Suite, params: &mut ParameterStore<T>) -> Result<MaskSearch> {
    let cfg = &suite.config;
    cfg.validate()?;
    let theta0 = params.clone();
    let mut masks: Vec<PruningMask> = suite
        .tasks()
        .iter()
        .map(|t| PruningMask::all_ones(params, t.id.as_str()))
        .collect();
    let mut trainer = Trainer::new(params, cfg.lr_identify, cfg.warmup_identify);
    let mut rounds = Vec::with_capacity(cfg.q as usize);
    for round in 1..=cfg.q {
        for t in shuffled_order(suite, "identify/order", round as u64) {
            let id = &suite.tasks()[t].id;
            let mut stream = TaskStream::new(suite, t, &suite.train[t], &format!("identify/{round}/{id}"))?;
            for _ in 0..cfg.n1_for(id) {
                let batch = stream.next_batch(cfg.batch_size)?;
                let limits = StepMask {
                    mask: Some(&masks[t]),
                    trainable: None,
                };
                trainer.step(&suite.model, params, &batch, limits)?;
            }
            masks[t] = global_magnitude_prune(params, &masks[t], cfg.p)?;
            params.clone_from(&theta0);
            trainer.state.reset();
        }
        rounds.push(to_set(&masks)?);
    }
    Ok(MaskSearch {
        masks: to_set(&masks)?,
        rounds,
        steps: trainer.steps,
    })
}

fn to_set(masks: &[PruningMask]) -> Result<MaskSet> {
    let mut set = MaskSet::new();
    for m in masks {
        set.insert(m.clone())?;
    }
    Ok(set)
}

/// One mask shared by all tasks. Each round trains on the task mixture for
/// as many steps as a task-specific round takes in total, then prunes once
/// and rewinds. The returned sets map every task to the shared mask.
pub fn identify_masks_task_agnostic<T: Real>(suite: &Suite, params: &mut ParameterStore<T>) -> Result<MaskSearch> {
    let cfg = &suite.config;
    cfg.validate()?;
    let theta0 = params.clone();
    let ids = suite.task_ids();
    let mut mask = PruningMask::all_ones(params, AGNOSTIC);
    let weights: Vec<usize> = suite.train.iter().map(Dataset::len).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Data(format!("task mixture: {e}")))?;
    let per_round: u64 = ids.iter().map(|id| cfg.n1_for(id)).sum();
    let mut trainer = Trainer::new(params, cfg.lr_identify, cfg.warmup_identify);
    let mut rounds = Vec::with_capacity(cfg.q as usize);
    for round in 1..=cfg.q {
        let mut streams = (0..ids.len())
            .map(|i| TaskStream::new(suite, i, &suite.train[i], &format!("agnostic/{round}/{}", ids[i])))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seed::rng_indexed(cfg.seed, "agnostic/mixture", round as u64);
        for _ in 0..per_round {
            let t = pick.sample(&mut rng);
            let batch = streams[t].next_batch(cfg.batch_size)?;
            let limits = StepMask {
                mask: Some(&mask),
                trainable: None,
            };
            trainer.step(&suite.model, params, &batch, limits)?;
        }
        mask = global_magnitude_prune(params, &mask, cfg.p)?;
        params.clone_from(&theta0);
        trainer.state.reset();
        rounds.push(MaskSet::shared(&mask, &ids));
    }
    Ok(MaskSearch {
        masks: MaskSet::shared(&mask, &ids),
        rounds,
        steps: trainer.steps,
    })
}

/// Trained parameters with their evaluation history.
#[derive(Clone, Debug)]
pub struct TrainedModel<T: Real> {
    pub params: ParameterStore<T>,
    pub history: TrainingHistory,
    pub steps: u64,
}

fn check_masks<T: Real>(suite: &Suite, params: &ParameterStore<T>, masks: &MaskSet) -> Result<()> {
    for id in suite.task_ids() {
        masks.get(id)?.resolve(params)?;
    }
    Ok(())
}

/// Shared parameters from `theta0`: `r` repeats, each visiting every task in
/// a seeded order for `n2` steps with gradients restricted to that task's
/// mask. One optimizer serves all tasks.
pub fn update_parameters<T: Real>(suite: &Suite, theta0: &ParameterStore<T>, masks: &MaskSet) -> Result<TrainedModel<T>> {
    let cfg = &suite.config;
    cfg.validate()?;
    check_masks(suite, theta0, masks)?;
    let mut params = theta0.clone();
    let ids = suite.task_ids();
    let mut streams = (0..ids.len())
        .map(|i| TaskStream::new(suite, i, &suite.train[i], &format!("update/{}", ids[i])))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = Trainer::new(&params, cfg.lr_update, cfg.warmup_update);
    let mut history = TrainingHistory::new(&ids);
    history.push(0, "", suite.score_all(&params, Some(masks))?)?;
    for repeat in 1..=cfg.r {
        let mut last = "";
        for t in shuffled_order(suite, "update/order", repeat) {
            let limits = StepMask {
                mask: Some(masks.get(ids[t])?),
                trainable: None,
            };
            for _ in 0..cfg.n2 {
                let batch = streams[t].next_batch(cfg.batch_size)?;
                trainer.step(&suite.model, &mut params, &batch, limits)?;
            }
            last = ids[t];
        }
        history.push(trainer.steps, last, suite.score_all(&params, Some(masks))?)?;
    }
    Ok(TrainedModel {
        params,
        history,
        steps: trainer.steps,
    })
}

/// The same schedule run separately per task, each with its own copy of
/// `theta0` and its own optimizer. Histories score only the owning task.
pub fn single_task_update<T: Real>(
    suite: &Suite,
    theta0: &ParameterStore<T>,
    masks: &MaskSet,
) -> Result<Vec<TrainedModel<T>>> {
    let cfg = &suite.config;
    cfg.validate()?;
    check_masks(suite, theta0, masks)?;
    let mut out = Vec::with_capacity(suite.tasks().len());
    for (t, task) in suite.tasks().iter().enumerate() {
        let mask = masks.get(&task.id)?;
        let mut params = theta0.clone();
        let mut stream = TaskStream::new(suite, t, &suite.train[t], &format!("update/{}", task.id))?;
        let mut trainer = Trainer::new(&params, cfg.lr_update, cfg.warmup_update);
        let mut history = TrainingHistory::new(&[task.id.as_str()]);
        let score = |p: &ParameterStore<T>| -> Result<Vec<f64>> {
            let eff = crate::pruning::apply_mask(p, mask)?;
            Ok(vec![suite.model.evaluate(&eff, task, &suite.data[t].eval)?])
        };
        history.push(0, "", score(&params)?)?;
        let limits = StepMask {
            mask: Some(mask),
            trainable: None,
        };
        for _ in 1..=cfg.r {
            for _ in 0..cfg.n2 {
                let batch = stream.next_batch(cfg.batch_size)?;
                trainer.step(&suite.model, &mut params, &batch, limits)?;
            }
            history.push(trainer.steps, &task.id, score(&params)?)?;
        }
        out.push(TrainedModel {
            params,
            history,
            steps: trainer.steps,
        });
    }
    Ok(out)
}

/// Which parameters continual learning may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContinualMode {
    /// Only the target task's subnetwork.
    Pruned,
    /// Every parameter.
    DenseFull,
    /// Only the trunk weight matrices.
    DenseEncoderOnly,
}

impl ContinualMode {
    pub const ALL: [ContinualMode; 3] = [ContinualMode::Pruned, ContinualMode::DenseEncoderOnly, ContinualMode::DenseFull];

    pub fn as_str(self) -> &'static str {
        match self {
            ContinualMode::Pruned => "pruned",
            ContinualMode::DenseFull => "dense-full",
            ContinualMode::DenseEncoderOnly => "dense-encoder-only",
        }
    }
}

impl FromStr for ContinualMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pruned" => Ok(ContinualMode::Pruned),
            "dense-full" => Ok(ContinualMode::DenseFull),
            "dense-encoder-only" => Ok(ContinualMode::DenseEncoderOnly),
            _ => Err(Error::Config(format!(
                "mode must be pruned, dense-full or dense-encoder-only, got `{s}`"
            ))),
        }
    }
}

/// Further training of `task` on `new_data`. In pruned mode the forward pass
/// and the updates are restricted to the task's mask and every task is scored
/// through its own mask; dense modes score the raw parameters.
pub fn continual_learn<T: Real>(
    suite: &Suite,
    params: &ParameterStore<T>,
    masks: Option<&MaskSet>,
    task: &str,
    new_data: &Dataset,
    mode: ContinualMode,
) -> Result<TrainedModel<T>> {
    let cfg = &suite.config;
    cfg.validate()?;
    let t = suite.model.registry.index_of(task)?;
    if new_data.iter().any(|ex| ex.task != task) {
        return Err(Error::Data(format!("continual data must belong to `{task}`")));
    }
    let (mask, score_masks) = match (mode, masks) {
        (ContinualMode::Pruned, None) => {
            return Err(Error::Config("pruned continual learning needs masks".into()));
        }
        (ContinualMode::Pruned, Some(m)) => {
            check_masks(suite, params, m)?;
            (Some(m.get(task)?), Some(m))
        }
        _ => (None, None),
    };
    let trainable: Option<Vec<bool>> = match mode {
        ContinualMode::DenseEncoderOnly => Some(params.names().map(is_trunk_weight).collect()),
        _ => None,
    };
    let data = match cfg.continual_data {
        super::config::ContinualData::Augment => suite.train[t].concat(new_data),
        super::config::ContinualData::Replace => new_data.clone(),
    };
    let mut stream = TaskStream::new(suite, t, &data, &format!("continual/{task}"))?;
    let interval = (new_data.len().div_ceil(cfg.batch_size) as u64).max(1);
    let mut out = params.clone();
    let mut trainer = Trainer::new(&out, cfg.lr_continual, cfg.warmup_continual);
    let mut history = TrainingHistory::new(&suite.task_ids());
    history.push(0, task, suite.score_all(&out, score_masks)?)?;
    let limits = StepMask {
        mask,
        trainable: trainable.as_deref(),
    };
    for step in 1..=cfg.continual_steps {
        let batch = stream.next_batch(cfg.batch_size)?;
        trainer.step(&suite.model, &mut out, &batch, limits)?;
        if step % interval == 0 || step == cfg.continual_steps {
            history.push(step, task, suite.score_all(&out, score_masks)?)?;
        }
    }
    Ok(TrainedModel {
        params: out,
        history,
        steps: trainer.steps,
    })
}
