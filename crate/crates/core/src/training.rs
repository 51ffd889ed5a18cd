//! The two-stage continual training loop.
//!
//! For each task, in this order:
//!
//! 1. grow the head with the task's relations (earlier columns become the
//!    previous group);
//! 2. snapshot the previous group;
//! 3. stage 1: train on the task's data only; the previous group uses
//!    `alpha_prev` when adversarial tuning is on, `alpha_cur` otherwise;
//! 4. select exemplars for the task's relations into the memory bank;
//! 5. stage 2: restore the previous group from the snapshot when empirical
//!    initialization is on, then train on the whole memory with every column
//!    at `alpha_cur`;
//! 6. evaluate on the test sets of every task seen so far.
//!
//! Optimizer moments are fresh at the start of each stage.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datastream::{build_tasks, Caps, Dataset, Instance, RelationId, Task};
use crate::error::{Error, Result};
use crate::eval::{accuracy_all_seen, pair_silhouette, per_relation_f1, prev_prob_mass};
use crate::memory::{update_bank, ExemplarSelection, MemoryBank};
use crate::model::{apply_head_gradients, EncoderOptim, HeadOptim, HeadSnapshot, Model};
use crate::numerics::Vector;
use crate::rng::{self, purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub alpha_cur: f64,
    pub alpha_prev: f64,
    pub alpha_enc: f64,
    /// Encoder learning rate during stage 1; `alpha_enc` when unset.
    pub alpha_enc_stage1: Option<f64>,
    pub use_empirical_init: bool,
    pub use_adversarial_tuning: bool,
    pub seed: u64,
    pub memory_size: usize,
    pub exemplar_selection: ExemplarSelection,
    pub num_tasks: usize,
    pub hidden_dim: usize,
    pub repr_dim: usize,
    /// Keep the two members of each analogous pair in different tasks.
    pub separate_pairs: bool,
    pub caps: Caps,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 10,
            epochs_stage2: 10,
            batch_size: 32,
            alpha_cur: 1e-3,
            alpha_prev: 1e-5,
            alpha_enc: 1e-5,
            alpha_enc_stage1: None,
            use_empirical_init: true,
            use_adversarial_tuning: true,
            seed: 0,
            memory_size: 10,
            exemplar_selection: ExemplarSelection::KMeans,
            num_tasks: 10,
            hidden_dim: 64,
            repr_dim: 64,
            separate_pairs: true,
            caps: Caps::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("alpha_cur", Some(self.alpha_cur)),
            ("alpha_prev", Some(self.alpha_prev)),
            ("alpha_enc", Some(self.alpha_enc)),
            ("alpha_enc_stage1", self.alpha_enc_stage1),
        ];
        for (name, rate) in rates {
            if let Some(r) = rate {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::invalid(format!("{name} must be finite and >= 0, got {r}")));
                }
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.num_tasks == 0 {
            return Err(Error::invalid("num_tasks must be at least 1"));
        }
        if self.memory_size == 0 {
            return Err(Error::invalid("memory_size must be at least 1"));
        }
        if self.hidden_dim == 0 || self.repr_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        Ok(())
    }

    /// Learning rate of the previous group during stage 1.
    pub fn stage1_prev_rate(&self) -> f64 {
        if self.use_adversarial_tuning {
            self.alpha_prev
        } else {
            self.alpha_cur
        }
    }

    pub fn stage1_encoder_rate(&self) -> f64 {
        self.alpha_enc_stage1.unwrap_or(self.alpha_enc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    One,
    Two,
}

/// Observation hooks into the training loop. Every method has a no-op
/// default; `()` implements the trait.
pub trait TrainProbe {
    /// Called before each optimizer step with the parameters it will read.
    fn before_step(&mut self, _stage: Stage, _task: usize, _step: usize, _model: &Model) {}
    fn after_step(&mut self, _stage: Stage, _task: usize, _step: usize, _loss: f64, _model: &Model) {}
    /// Called once a stage's loop finishes (stage 2: also when it ran no steps).
    fn stage_end(&mut self, _stage: Stage, _task: usize, _model: &Model) {}
}

impl TrainProbe for () {}

/// Batch losses of one stage, in step order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub losses: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    model: &mut Model,
    data: &[Instance],
    epochs: usize,
    batch_size: usize,
    order_seed: u64,
    rates: (f64, f64, f64),
    stage: Stage,
    task: usize,
    probe: &mut dyn TrainProbe,
) -> Result<StageReport> {
    let (lr_prev, lr_cur, lr_enc) = rates;
    let mut head_opt = HeadOptim::new(&model.head);
    let mut enc_opt = EncoderOptim::new(&model.encoder);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = StageReport::default();
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng::stream(order_seed, &[epoch as u64]));
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &data[i]).collect();
            probe.before_step(stage, task, step, model);
            let grads = model.batch_grads(&batch)?;
            apply_head_gradients(&mut model.head, &grads.head, &mut head_opt, lr_prev, lr_cur)?;
            enc_opt.step(&mut model.encoder, &grads.encoder, lr_enc)?;
            probe.after_step(stage, task, step, grads.loss, model);
            report.losses.push(grads.loss);
            step += 1;
        }
    }
    Ok(report)
}

/// Stage 1: the new task's training data only. The head must already include
/// the task's relations.
pub fn train_stage1(
    model: &mut Model,
    task: &Task,
    cfg: &TrainConfig,
    probe: &mut dyn TrainProbe,
) -> Result<StageReport> {
    if task.train.is_empty() {
        return Err(Error::Empty("train_stage1: task has no training data"));
    }
    if let Some(r) = task.relations.iter().find(|r| model.head.column_of(**r).is_none()) {
        return Err(Error::UnknownRelation(r.0));
    }
    let lr_prev = cfg.stage1_prev_rate();
    let frozen = (lr_prev == 0.0).then(|| model.head.previous_columns());
    let report = run_epochs(
        model,
        &task.train,
        cfg.epochs_stage1,
        cfg.batch_size,
        rng::derive_seed(cfg.seed, &[purpose::STAGE1_ORDER, task.index as u64]),
        (lr_prev, cfg.alpha_cur, cfg.stage1_encoder_rate()),
        Stage::One,
        task.index,
        probe,
    )?;
    if let Some(before) = frozen {
        if model.head.previous_columns() != before {
            return Err(Error::Invariant(
                "previous classifier columns changed during stage 1 with a zero learning rate".into(),
            ));
        }
    }
    probe.stage_end(Stage::One, task.index, model);
    Ok(report)
}

/// Stage 2: optional restore of the previous group, then training on the
/// whole memory with every column at `alpha_cur`.
pub fn train_stage2(
    model: &mut Model,
    bank: &MemoryBank,
    snapshot: Option<&HeadSnapshot>,
    task_index: usize,
    cfg: &TrainConfig,
    probe: &mut dyn TrainProbe,
) -> Result<StageReport> {
    if let Some(r) = model.head.relation_ids().iter().find(|r| !bank.contains(**r)) {
        return Err(Error::invalid(format!("memory bank has no exemplars for seen relation {r}")));
    }
    if cfg.use_empirical_init {
        let snap = snapshot.ok_or_else(|| Error::invalid("empirical initialization needs a snapshot"))?;
        model.head.restore_prev(snap)?;
    }
    let mut report = StageReport::default();
    if cfg.epochs_stage2 > 0 {
        let replay = bank.replay_set(rng::derive_seed(cfg.seed, &[purpose::STAGE2_ORDER, task_index as u64]))?;
        report = run_epochs(
            model,
            &replay,
            cfg.epochs_stage2,
            cfg.batch_size,
            rng::derive_seed(cfg.seed, &[purpose::STAGE2_ORDER, task_index as u64, 1]),
            (cfg.alpha_cur, cfg.alpha_cur, cfg.alpha_enc),
            Stage::Two,
            task_index,
            probe,
        )?;
    }
    probe.stage_end(Stage::Two, task_index, model);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSilhouette {
    pub previous: RelationId,
    pub current: RelationId,
    pub score: f64,
}

/// Everything measured for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_index: usize,
    /// Accuracy over the test sets of every task so far.
    pub accuracy: f64,
    pub seen_relations: usize,
    pub replay_size: usize,
    /// Mean one-vs-rest F1 of previous relations on their validation data at
    /// the end of stage 1 (after the restore when empirical initialization is
    /// on). `None` on the first task.
    pub prev_f1_mean: Option<f64>,
    /// Probability mass on previous relations for their validation data, at
    /// the same point as `prev_f1_mean`.
    pub prev_prob_mass: Option<f64>,
    /// Separability of analogous pairs completed by this task.
    pub pair_silhouettes: Vec<PairSilhouette>,
    #[serde(skip)]
    pub stage1_losses: Vec<f64>,
    #[serde(skip)]
    pub stage2_losses: Vec<f64>,
}

impl TaskMetrics {
    pub fn pair_silhouette(&self) -> Option<f64> {
        if self.pair_silhouettes.is_empty() {
            return None;
        }
        Some(self.pair_silhouettes.iter().map(|p| p.score).sum::<f64>() / self.pair_silhouettes.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub tasks: Vec<TaskMetrics>,
}

impl RunMetrics {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.tasks.last().map(|t| t.accuracy)
    }
}

/// State carried across tasks of one sequence.
#[derive(Debug, Clone)]
pub struct ContinualRun {
    pub model: Model,
    pub bank: MemoryBank,
    pub cfg: TrainConfig,
    pub analogous_pairs: Vec<(RelationId, RelationId)>,
    history: Vec<Task>,
}

impl ContinualRun {
    pub fn new(model: Model, cfg: TrainConfig, analogous_pairs: Vec<(RelationId, RelationId)>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            bank: MemoryBank::new(cfg.memory_size),
            cfg,
            analogous_pairs,
            history: Vec::new(),
        })
    }

    pub fn tasks_seen(&self) -> usize {
        self.history.len()
    }

    pub fn run_task(&mut self, task: &Task, probe: &mut dyn TrainProbe) -> Result<TaskMetrics> {
        if task.index != self.history.len() + 1 {
            return Err(Error::invalid(format!(
                "task index {} out of order; expected {}",
                task.index,
                self.history.len() + 1
            )));
        }
        let cfg = &self.cfg;
        let k = task.index as u64;

        self.model
            .head
            .grow(&task.relations, rng::derive_seed(cfg.seed, &[purpose::HEAD_GROW, k]))?;
        let snapshot = self.model.head.snapshot_prev();

        let stage1 = train_stage1(&mut self.model, task, cfg, probe)?;
        let (prev_f1_mean, prev_prob_mass, pair_silhouettes) = self.stage1_diagnostics(task, &snapshot)?;

        for &rel in &task.relations {
            let insts: Vec<Instance> = task.train.iter().filter(|i| i.label == rel).cloned().collect();
            let reps = represent_all(&self.model, &insts)?;
            update_bank(
                &mut self.bank,
                rel,
                &insts,
                &reps,
                rng::derive_seed(cfg.seed, &[purpose::EXEMPLARS, u64::from(rel.0)]),
                cfg.exemplar_selection,
            )?;
        }

        let stage2 = train_stage2(&mut self.model, &self.bank, Some(&snapshot), task.index, cfg, probe)?;

        self.history.push(task.clone());
        let test: Vec<Instance> = self.history.iter().flat_map(|t| t.test.iter().cloned()).collect();
        let accuracy = accuracy_all_seen(&self.model, &test)?;

        Ok(TaskMetrics {
            task_index: task.index,
            accuracy,
            seen_relations: self.model.head.num_columns(),
            replay_size: self.bank.len(),
            prev_f1_mean,
            prev_prob_mass,
            pair_silhouettes,
            stage1_losses: stage1.losses,
            stage2_losses: stage2.losses,
        })
    }

    #[allow(clippy::type_complexity)]
    fn stage1_diagnostics(
        &self,
        task: &Task,
        snapshot: &HeadSnapshot,
    ) -> Result<(Option<f64>, Option<f64>, Vec<PairSilhouette>)> {
        if self.history.is_empty() {
            return Ok((None, None, Vec::new()));
        }
        let mut view = self.model.clone();
        if self.cfg.use_empirical_init {
            view.head.restore_prev(snapshot)?;
        }
        let prev_valid: Vec<Instance> = self.history.iter().flat_map(|t| t.valid.iter().cloned()).collect();
        let prev_ids: Vec<RelationId> = view.head.previous_ids().to_vec();
        let (f1, mass) = if prev_valid.is_empty() {
            (None, None)
        } else {
            let f1 = per_relation_f1(&view, &prev_valid, &prev_ids)?;
            let mean = f1.values().sum::<f64>() / f1.len().max(1) as f64;
            (Some(mean), Some(prev_prob_mass(&view, &prev_valid)?))
        };

        let mut pairs = Vec::new();
        for &(a, b) in &self.analogous_pairs {
            let (prev, cur) = if task.relations.contains(&b) && prev_ids.contains(&a) {
                (a, b)
            } else if task.relations.contains(&a) && prev_ids.contains(&b) {
                (b, a)
            } else {
                continue;
            };
            let prev_insts: Vec<&Instance> = self
                .history
                .iter()
                .flat_map(|t| t.valid.iter())
                .filter(|i| i.label == prev)
                .collect();
            let cur_insts: Vec<&Instance> = task.valid.iter().filter(|i| i.label == cur).collect();
            if prev_insts.len() < 2 || cur_insts.len() < 2 {
                continue;
            }
            let mut reps = Vec::new();
            let mut labels = Vec::new();
            for inst in prev_insts.into_iter().chain(cur_insts) {
                reps.push(view.represent(&inst.features)?);
                labels.push(inst.label);
            }
            pairs.push(PairSilhouette {
                previous: prev,
                current: cur,
                score: pair_silhouette(&reps, &labels)?,
            });
        }
        Ok((f1, mass, pairs))
    }
}

fn represent_all(model: &Model, insts: &[Instance]) -> Result<Vec<Vector>> {
    insts.iter().map(|i| model.represent(&i.features)).collect()
}

/// A freshly initialized model for `dataset` under `cfg`.
pub fn initial_model(dataset: &Dataset, cfg: &TrainConfig) -> Model {
    Model::new(dataset.feature_dim, cfg.hidden_dim, cfg.repr_dim, cfg.seed)
}

/// Builds the task sequence for `cfg.seed` and runs every task.
pub fn run_sequence(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunMetrics> {
    Ok(run_sequence_with(dataset, cfg, &mut ())?.0)
}

/// [`run_sequence`] with a probe, also returning the final learner state.
pub fn run_sequence_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &mut dyn TrainProbe,
) -> Result<(RunMetrics, ContinualRun)> {
    cfg.validate()?;
    let tasks = build_tasks(dataset, cfg.num_tasks, cfg.seed, cfg.separate_pairs, cfg.caps)?;
    let mut run = ContinualRun::new(initial_model(dataset, cfg), cfg.clone(), dataset.analogous_pairs.clone())?;
    let mut metrics = RunMetrics {
        seed: cfg.seed,
        tasks: Vec::with_capacity(tasks.len()),
    };
    for task in &tasks {
        metrics.tasks.push(run.run_task(task, probe)?);
    }
    Ok((metrics, run))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// Per-task accuracy mean/std across runs (all runs must have equal length).
pub fn summarize_accuracy(runs: &[RunMetrics]) -> Result<Vec<MeanStd>> {
    let Some(first) = runs.first() else {
        return Err(Error::Empty("summarize_accuracy"));
    };
    let len = first.tasks.len();
    if runs.iter().any(|r| r.tasks.len() != len) {
        return Err(Error::invalid("runs have different task counts"));
    }
    Ok((0..len)
        .map(|t| {
            let xs: Vec<f64> = runs.iter().map(|r| r.tasks[t].accuracy).collect();
            MeanStd::of(&xs).expect("non-empty")
        })
        .collect())
}
