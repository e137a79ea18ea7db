use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use subnet_forge::checkpoint::Checkpoint;
use subnet_forge::data::Split;
use subnet_forge::experiment::{gradient_check, run_continual, run_table};
use subnet_forge::pipelines::{
    continual_learn, identify_masks, identify_masks_task_agnostic, single_task_update, train_dense, update_parameters,
    ContinualMode, Precision, RegistryChoice, RewindTarget, RunConfig, Suite,
};
use subnet_forge::pruning::{param_percent, MaskSet, ParamMode};
use subnet_forge::report::{curves_csv, emit_reports, overlap_csv, ReportInputs};
use subnet_forge::tasks::TaskKind;
use subnet_forge::{Error, ParameterStore, Real, Result};

use crate::{Command, Common};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct Run {
    common: Common,
    config: Option<RunConfig>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(common: Common) -> Self {
        Self {
            common,
            config: None,
            outputs: Vec::new(),
        }
    }

    pub fn config_hash(&self) -> Option<String> {
        self.config.as_ref().map(RunConfig::hash)
    }

    pub fn seed(&self) -> Option<u64> {
        self.config.as_ref().map(|c| c.seed).or(self.common.seed)
    }

    /// Directory that receives `runs.log`.
    pub fn manifest_dir(&self, command: &Command) -> Option<PathBuf> {
        match command {
            Command::GenData { out, .. } | Command::Report { out, .. } => Some(out.clone()),
            Command::TrainDense { out }
            | Command::FindMasks { out, .. }
            | Command::TrainSubnets { out, .. }
            | Command::Continual { out, .. }
            | Command::Analyze { out, .. } => out.parent().map(Path::to_path_buf),
            Command::Gradcheck => None,
        }
    }

    pub fn execute(&mut self, command: &Command) -> Result<()> {
        match command {
            Command::GenData { out, task } => self.gen_data(out, task.as_deref()),
            Command::TrainDense { out } => {
                let cfg = self.resolve(None)?;
                match cfg.precision {
                    Precision::F64 => self.train_dense::<f64>(cfg, out),
                    Precision::F32 => self.train_dense::<f32>(cfg, out),
                }
            }
            Command::FindMasks { init, out, mode } => {
                let ck = Checkpoint::load(init)?;
                let cfg = self.resolve(Some(&ck))?;
                let agnostic = match mode.as_str() {
                    "task-specific" => false,
                    "task-agnostic" => true,
                    other => return Err(Error::Config(format!("find-masks mode must be task-specific or task-agnostic, got `{other}`"))),
                };
                match cfg.precision {
                    Precision::F64 => self.find_masks::<f64>(cfg, &ck, out, agnostic),
                    Precision::F32 => self.find_masks::<f32>(cfg, &ck, out, agnostic),
                }
            }
            Command::TrainSubnets { masks, out, mode } => {
                let ck = Checkpoint::load(masks)?;
                let cfg = self.resolve(Some(&ck))?;
                let single = match mode.as_str() {
                    "multi-task" => false,
                    "single-task" => true,
                    other => return Err(Error::Config(format!("train-subnets mode must be multi-task or single-task, got `{other}`"))),
                };
                match cfg.precision {
                    Precision::F64 => self.train_subnets::<f64>(cfg, &ck, out, single),
                    Precision::F32 => self.train_subnets::<f32>(cfg, &ck, out, single),
                }
            }
            Command::Continual {
                init,
                masks,
                task,
                mode,
                out,
            } => {
                let mode: ContinualMode = mode.parse()?;
                let ck = Checkpoint::load(init)?;
                let cfg = self.resolve(Some(&ck))?;
                let masks = match masks {
                    Some(path) => Some(Checkpoint::load(path)?.masks()?),
                    None if mode == ContinualMode::Pruned && ck.get("masks.non_prunable_scalars").is_some() => Some(ck.masks()?),
                    None => None,
                };
                match cfg.precision {
                    Precision::F64 => self.continual::<f64>(cfg, &ck, masks.as_ref(), task, mode, out),
                    Precision::F32 => self.continual::<f32>(cfg, &ck, masks.as_ref(), task, mode, out),
                }
            }
            Command::Analyze { masks, out } => self.analyze(masks, out),
            Command::Gradcheck => self.gradcheck(),
            Command::Report { out, no_svg } => {
                let cfg = self.resolve(None)?;
                match cfg.precision {
                    Precision::F64 => self.report::<f64>(cfg, out, !no_svg),
                    Precision::F32 => self.report::<f32>(cfg, out, !no_svg),
                }
            }
        }
    }

    /// Config file if given, else the checkpoint's echo, else defaults; then
    /// the command-line overrides.
    fn resolve(&mut self, checkpoint: Option<&Checkpoint>) -> Result<RunConfig> {
        let mut cfg = match (&self.common.config, checkpoint) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            (None, Some(ck)) if ck.get("config").is_some() => ck.config()?,
            (None, _) => RunConfig::default(),
        };
        if let Some(seed) = self.common.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.common.precision {
            cfg.precision = p.parse()?;
        }
        cfg.validate()?;
        self.config = Some(cfg.clone());
        Ok(cfg)
    }

    fn write(&mut self, path: &Path, body: &str) -> Result<()> {
        std::fs::write(path, body)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn save(&mut self, ck: &Checkpoint, path: &Path) -> Result<()> {
        ck.save(path)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn gen_data(&mut self, out: &Path, task: Option<&str>) -> Result<()> {
        let cfg = self.resolve(None)?;
        let suite = Suite::new(cfg)?;
        if let Some(t) = task {
            suite.model.registry.index_of(t).map_err(|_| Error::Config(format!("unknown task `{t}`")))?;
        }
        std::fs::create_dir_all(out)?;
        for (spec, data) in suite.tasks().iter().zip(&suite.data) {
            if task.is_some_and(|t| t != spec.id) {
                continue;
            }
            for split in [Split::Train, Split::Eval, Split::Continual] {
                let ds = data.split(split);
                let path = out.join(format!("{}.{}.txt", spec.id, split.label()));
                self.write(&path, &ds.to_text())?;
                println!("{} {}: {} examples -> {}", spec.id, split.label(), ds.len(), path.display());
            }
        }
        Ok(())
    }

    fn train_dense<T: Real>(&mut self, cfg: RunConfig, out: &Path) -> Result<()> {
        let suite = Suite::new(cfg.clone())?;
        let init = suite.init_params::<T>();
        let (dense, history) = train_dense(&suite, &init)?;
        let mut ck = Checkpoint::new();
        ck.put_params("theta", &dense)?;
        ck.put_params("theta0", &init)?;
        ck.put_config(&cfg)?;
        ck.put_seed(cfg.seed)?;
        self.save(&ck, out)?;
        let curves = sibling(out, "curves_mixture.csv");
        self.write(&curves, &curves_csv(&history)?)?;
        print_scores(&suite, history.last().map(|r| r.scores.as_slice()).unwrap_or_default());
        Ok(())
    }

    fn find_masks<T: Real>(&mut self, cfg: RunConfig, init: &Checkpoint, out: &Path, agnostic: bool) -> Result<()> {
        let suite = Suite::new(cfg.clone())?;
        let theta0: ParameterStore<T> = match cfg.rewind {
            RewindTarget::Init if init.has_params("theta0") => init.params("theta0")?,
            _ => init.params("theta")?,
        };
        let mut params = theta0.clone();
        let search = if agnostic {
            identify_masks_task_agnostic(&suite, &mut params)?
        } else {
            identify_masks(&suite, &mut params)?
        };
        let mut ck = Checkpoint::new();
        ck.put_masks(&search.masks)?;
        ck.put_params("theta0", &theta0)?;
        ck.put_config(&cfg)?;
        ck.put_seed(cfg.seed)?;
        self.save(&ck, out)?;
        for m in search.masks.iter() {
            println!(
                "{}: sparsity {:.4} ({} of {} prunable scalars kept)",
                m.owner,
                m.sparsity(),
                m.surviving(),
                m.prunable_len()
            );
        }
        println!("{} training steps", search.steps);
        Ok(())
    }

    fn train_subnets<T: Real>(&mut self, cfg: RunConfig, ck_in: &Checkpoint, out: &Path, single: bool) -> Result<()> {
        let suite = Suite::new(cfg.clone())?;
        let theta0: ParameterStore<T> = ck_in.params("theta0")?;
        let masks = ck_in.masks()?;
        let mut ck = Checkpoint::new();
        ck.put_masks(&masks)?;
        ck.put_params("theta0", &theta0)?;
        ck.put_config(&cfg)?;
        ck.put_seed(cfg.seed)?;
        let mut scores = Vec::new();
        if single {
            let models = single_task_update(&suite, &theta0, &masks)?;
            for (task, model) in suite.tasks().iter().zip(&models) {
                ck.put_params(&format!("theta/{}", task.id), &model.params)?;
                scores.push(model.history.last().map_or(f64::NAN, |r| r.scores[0]));
                let curves = sibling(out, &format!("curves_{}.csv", task.id));
                self.write(&curves, &curves_csv(&model.history)?)?;
            }
        } else {
            let trained = update_parameters(&suite, &theta0, &masks)?;
            ck.put_params("theta", &trained.params)?;
            scores = trained.history.last().map(|r| r.scores.clone()).unwrap_or_default();
            let curves = sibling(out, "curves_multitask.csv");
            self.write(&curves, &curves_csv(&trained.history)?)?;
        }
        self.save(&ck, out)?;
        print_scores(&suite, &scores);
        Ok(())
    }

    fn continual<T: Real>(
        &mut self,
        cfg: RunConfig,
        ck_in: &Checkpoint,
        masks: Option<&MaskSet>,
        task: &str,
        mode: ContinualMode,
        out: &Path,
    ) -> Result<()> {
        let suite = Suite::new(cfg.clone())?;
        let t = suite
            .model
            .registry
            .index_of(task)
            .map_err(|_| Error::Config(format!("unknown task `{task}`")))?;
        let theta: ParameterStore<T> = ck_in.params("theta")?;
        let trained = continual_learn(&suite, &theta, masks, task, &suite.data[t].continual, mode)?;
        let mut ck = Checkpoint::new();
        ck.put_params("theta", &trained.params)?;
        if let Some(m) = masks {
            ck.put_masks(m)?;
        }
        ck.put_config(&cfg)?;
        ck.put_seed(cfg.seed)?;
        self.save(&ck, out)?;
        let curves = sibling(out, &format!("curves_{task}.csv"));
        self.write(&curves, &curves_csv(&trained.history)?)?;
        let before = &trained.history.first().expect("initial record").scores;
        let after = &trained.history.last().expect("final record").scores;
        for (i, spec) in suite.tasks().iter().enumerate() {
            println!("{}: {:.4} -> {:.4}", spec.id, before[i], after[i]);
        }
        Ok(())
    }

    fn analyze(&mut self, masks: &Path, out: &Path) -> Result<()> {
        let ck = Checkpoint::load(masks)?;
        if let Ok(cfg) = ck.config() {
            self.config = Some(cfg);
        }
        let set = ck.masks()?;
        self.write(out, &overlap_csv(&set)?)?;
        for owner in set.owners() {
            println!("Param(%) One {owner}: {:.1}", param_percent(&set, &ParamMode::One(owner.to_string()))?);
        }
        println!("Param(%) All multi-task: {:.1}", param_percent(&set, &ParamMode::AllMultiTask)?);
        println!("Param(%) All single-task: {:.1}", param_percent(&set, &ParamMode::AllSingleTask)?);
        Ok(())
    }

    fn gradcheck(&mut self) -> Result<()> {
        let seed = self.common.seed.unwrap_or(0);
        let err = gradient_check(seed)?;
        println!("max relative error {err:.3e} (seed {seed})");
        if err < GRADCHECK_TOLERANCE {
            Ok(())
        } else {
            Err(Error::Graph(format!(
                "gradient check failed: {err:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
            )))
        }
    }

    fn report<T: Real>(&mut self, cfg: RunConfig, out: &Path, svg: bool) -> Result<()> {
        let suite = Suite::new(cfg.clone())?;
        let experiment = match cfg.tasks {
            RegistryChoice::Three => "three-task",
            RegistryChoice::Seven => "seven-task",
        };
        let table = run_table::<T>(&suite, experiment)?;
        let ids = suite.task_ids();
        let max_rounds = *cfg.report_rounds.iter().max().expect("validated");
        let masks = table.search.after_round(max_rounds)?;
        let mut curves = vec![("mixture", &table.dense_history)];
        if let Some(m) = table.multi_task_at(max_rounds) {
            curves.push(("multitask", &m.history));
        }
        let files = emit_reports(
            out,
            ReportInputs {
                task_ids: &ids,
                rows: &table.rows,
                curves: &curves,
                masks: Some(masks),
                svg,
            },
        )?;
        self.outputs.extend(files);

        let Some(target) = suite.tasks().iter().find(|t| t.kind == TaskKind::Sequence) else {
            return Ok(());
        };
        let outcomes = run_continual(&suite, &table, &target.id, cfg.continual_rounds, &ContinualMode::ALL)?;
        let mut summary = String::from("mode,target_gain,forgetting\n");
        for o in &outcomes {
            let _ = writeln!(summary, "{},{:.4},{:.4}", o.mode.as_str(), o.target_gain(&suite), o.forgetting(&suite));
            let files = emit_reports(
                &out.join(o.mode.as_str()),
                ReportInputs {
                    task_ids: &ids,
                    rows: &[],
                    curves: &[(target.id.as_str(), &o.history)],
                    masks: None,
                    svg,
                },
            )?;
            self.outputs.extend(files);
        }
        self.write(&out.join("continual.csv"), &summary)?;
        print!("{}", std::fs::read_to_string(out.join("summary.csv"))?);
        print!("{summary}");
        Ok(())
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn print_scores(suite: &Suite, scores: &[f64]) {
    for (spec, s) in suite.tasks().iter().zip(scores) {
        let metric = match spec.kind {
            TaskKind::Classification => "accuracy",
            TaskKind::Sequence => "token error rate",
        };
        println!("{} {metric}: {s:.4}", spec.id);
    }
}
