//! Contracts of the two-stage loop, observed through `TrainProbe`.

use std::collections::BTreeMap;

use decomp_core::datastream::{build_tasks, gen_synthetic, Caps, Dataset, Instance, RelationId, SyntheticSpec};
use decomp_core::model::{Checkpoint, Model};
use decomp_core::numerics::Matrix;
use decomp_core::rng::{self, purpose};
use decomp_core::training::{
    initial_model, run_sequence, run_sequence_with, train_stage1, ContinualRun, Stage, TrainConfig, TrainProbe,
};
use decomp_core::Error;
use rand::seq::SliceRandom;

fn small_dataset(seed: u64) -> Dataset {
    gen_synthetic(
        &SyntheticSpec {
            num_relations: 12,
            per_relation: 30,
            feature_dim: 8,
            analogous_pairs: vec![(0, 1), (2, 3)],
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_stage1: 3,
        epochs_stage2: 2,
        batch_size: 8,
        alpha_enc: 1e-3,
        seed,
        num_tasks: 4,
        hidden_dim: 12,
        repr_dim: 12,
        ..Default::default()
    }
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}

/// Previous-group columns at the boundaries of each stage, per task.
#[derive(Default)]
struct PrevColumns {
    before_stage1: BTreeMap<usize, Matrix>,
    after_stage1: BTreeMap<usize, Matrix>,
    first_stage2_step: BTreeMap<usize, Matrix>,
    stage2_steps: usize,
}

impl TrainProbe for PrevColumns {
    fn before_step(&mut self, stage: Stage, task: usize, step: usize, model: &Model) {
        if step == 0 {
            let cols = model.head.previous_columns();
            match stage {
                Stage::One => self.before_stage1.insert(task, cols),
                Stage::Two => self.first_stage2_step.insert(task, cols),
            };
        }
        if stage == Stage::Two {
            self.stage2_steps += 1;
        }
    }

    fn stage_end(&mut self, stage: Stage, task: usize, model: &Model) {
        if stage == Stage::One {
            self.after_stage1.insert(task, model.head.previous_columns());
        }
    }
}

#[test]
fn empirical_init_restores_previous_columns_before_stage2() {
    let data = small_dataset(11);
    for seed in 0..4 {
        for at in [true, false] {
            let cfg = TrainConfig {
                use_adversarial_tuning: at,
                ..small_config(seed)
            };
            let mut probe = PrevColumns::default();
            run_sequence_with(&data, &cfg, &mut probe).unwrap();
            assert_eq!(probe.first_stage2_step.len(), cfg.num_tasks);
            let mut moved = 0;
            for (task, snap) in &probe.before_stage1 {
                let restored = &probe.first_stage2_step[task];
                assert_eq!(bits(restored), bits(snap), "seed {seed} task {task}");
                if bits(&probe.after_stage1[task]) != bits(snap) {
                    moved += 1;
                }
            }
            // Stage 1 did move the previous group, so the restore is not vacuous.
            assert!(moved >= cfg.num_tasks - 1, "seed {seed}: moved in {moved} tasks");
        }
    }
}

#[test]
fn without_empirical_init_stage2_starts_from_stage1_columns() {
    let data = small_dataset(11);
    let cfg = TrainConfig {
        use_empirical_init: false,
        ..small_config(3)
    };
    let mut probe = PrevColumns::default();
    run_sequence_with(&data, &cfg, &mut probe).unwrap();
    for task in 2..=cfg.num_tasks {
        assert_eq!(bits(&probe.first_stage2_step[&task]), bits(&probe.after_stage1[&task]));
        assert_ne!(bits(&probe.first_stage2_step[&task]), bits(&probe.before_stage1[&task]));
    }
}

#[test]
fn zero_previous_rate_freezes_previous_columns_in_stage1() {
    let data = small_dataset(4);
    for seed in 0..4 {
        for ei in [true, false] {
            let cfg = TrainConfig {
                alpha_prev: 0.0,
                use_empirical_init: ei,
                ..small_config(seed)
            };
            let mut probe = PrevColumns::default();
            run_sequence_with(&data, &cfg, &mut probe).unwrap();
            for (task, before) in &probe.before_stage1 {
                assert_eq!(bits(before), bits(&probe.after_stage1[task]), "seed {seed} task {task}");
            }
        }
    }
}

#[test]
fn first_batch_loss_matches_hand_computation() {
    let data = small_dataset(2);
    let cfg = TrainConfig {
        batch_size: 2,
        ..small_config(5)
    };
    let tasks = build_tasks(&data, cfg.num_tasks, cfg.seed, cfg.separate_pairs, Caps::default()).unwrap();
    let task = &tasks[0];

    struct First(Option<(Model, f64)>);
    impl TrainProbe for First {
        fn before_step(&mut self, stage: Stage, _: usize, step: usize, model: &Model) {
            if stage == Stage::One && step == 0 {
                self.0 = Some((model.clone(), f64::NAN));
            }
        }
        fn after_step(&mut self, stage: Stage, _: usize, step: usize, loss: f64, _: &Model) {
            if stage == Stage::One && step == 0 {
                self.0.as_mut().unwrap().1 = loss;
            }
        }
    }

    let mut model = initial_model(&data, &cfg);
    model
        .head
        .grow(&task.relations, rng::derive_seed(cfg.seed, &[purpose::HEAD_GROW, 1]))
        .unwrap();
    let mut probe = First(None);
    train_stage1(&mut model, task, &cfg, &mut probe).unwrap();
    let (before, loss) = probe.0.unwrap();

    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let order_seed = rng::derive_seed(cfg.seed, &[purpose::STAGE1_ORDER, 1]);
    order.shuffle(&mut rng::stream(order_seed, &[0]));

    // Stage-1 loss by hand: −Σ_i log softmax(h_iᵀ W)[y_i].
    let w = before.head.weights();
    let mut expected = 0.0;
    for &i in &order[..2] {
        let inst = &task.train[i];
        let h = before.encoder.encode(&inst.features).unwrap();
        let logits: Vec<f64> = (0..w.cols())
            .map(|j| (0..w.rows()).map(|r| h[r] * w[(r, j)]).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let y = before.head.column_of(inst.label).unwrap();
        expected += lse - logits[y];
    }
    assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
}

#[test]
fn zero_stage2_epochs_leave_the_restored_stage1_model() {
    let data = small_dataset(8);
    let cfg = TrainConfig {
        epochs_stage2: 0,
        ..small_config(1)
    };
    let tasks = build_tasks(&data, cfg.num_tasks, cfg.seed, cfg.separate_pairs, Caps::default()).unwrap();

    #[derive(Default)]
    struct AfterStage1 {
        model: Option<Model>,
        stage2_steps: usize,
    }
    impl TrainProbe for AfterStage1 {
        fn before_step(&mut self, stage: Stage, _: usize, _: usize, _: &Model) {
            if stage == Stage::Two {
                self.stage2_steps += 1;
            }
        }
        fn stage_end(&mut self, stage: Stage, _: usize, model: &Model) {
            if stage == Stage::One {
                self.model = Some(model.clone());
            }
        }
    }

    let mut run = ContinualRun::new(initial_model(&data, &cfg), cfg.clone(), data.analogous_pairs.clone()).unwrap();
    run.run_task(&tasks[0], &mut ()).unwrap();
    let before_task2 = run.model.head.weights().clone();
    let mut probe = AfterStage1::default();
    run.run_task(&tasks[1], &mut probe).unwrap();

    let mut expected = probe.model.unwrap();
    let mut w = expected.head.weights().clone();
    w.set_columns(0, &before_task2).unwrap();
    *expected.head.weights_mut() = w;
    assert_eq!(run.model, expected);
    assert_eq!(probe.stage2_steps, 0);
}

fn train_accuracy(model: &Model, insts: &[Instance]) -> f64 {
    let correct = insts
        .iter()
        .filter(|i| model.head.relation_ids()[model.predict_column(&i.features).unwrap()] == i.label)
        .count();
    correct as f64 / insts.len() as f64
}

#[test]
fn separable_two_relation_toy_is_learned() {
    let data = gen_synthetic(
        &SyntheticSpec {
            num_relations: 2,
            per_relation: 50,
            feature_dim: 6,
            analogous_pairs: vec![],
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let cfg = TrainConfig {
        num_tasks: 1,
        hidden_dim: 16,
        repr_dim: 16,
        ..Default::default()
    };
    let (metrics, run) = run_sequence_with(&data, &cfg, &mut ()).unwrap();
    let tasks = build_tasks(&data, 1, cfg.seed, true, Caps::default()).unwrap();
    assert!(train_accuracy(&run.model, &tasks[0].train) >= 0.95);
    assert!(metrics.tasks[0].accuracy >= 0.95);
}

#[test]
fn single_relation_first_task_after_stage2() {
    let data = gen_synthetic(
        &SyntheticSpec {
            num_relations: 3,
            per_relation: 20,
            feature_dim: 6,
            analogous_pairs: vec![],
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        num_tasks: 3,
        hidden_dim: 8,
        repr_dim: 8,
        ..Default::default()
    };
    let tasks = build_tasks(&data, 3, cfg.seed, true, Caps::default()).unwrap();
    assert_eq!(tasks[0].relations.len(), 1);
    let mut run = ContinualRun::new(initial_model(&data, &cfg), cfg, vec![]).unwrap();
    let m = run.run_task(&tasks[0], &mut ()).unwrap();
    assert_eq!(run.bank.relations().collect::<Vec<_>>(), tasks[0].relations);
    assert!(train_accuracy(&run.model, &tasks[0].train) >= 0.95);
    assert_eq!(m.accuracy, 1.0);
}

#[test]
fn memory_and_head_sizes_grow_per_task_on_default_benchmark() {
    let data = gen_synthetic(&SyntheticSpec::default(), 2024).unwrap();
    let cfg = TrainConfig::default();
    let (metrics, run) = run_sequence_with(&data, &cfg, &mut ()).unwrap();
    assert_eq!(metrics.tasks.len(), 10);
    for (k, t) in metrics.tasks.iter().enumerate() {
        assert_eq!(t.task_index, k + 1);
        assert_eq!(t.seen_relations, 4 * (k + 1));
        assert_eq!(t.replay_size, 10 * t.seen_relations);
        assert!((0.0..=1.0).contains(&t.accuracy));
    }
    assert!(metrics.tasks[0].accuracy >= 0.95);
    assert_eq!(run.bank.replay_set(0).unwrap().len(), 400);
    for rel in run.bank.relations() {
        assert_eq!(run.bank.exemplars(rel).unwrap().len(), 10);
    }
}

#[test]
fn runs_are_deterministic() {
    let data = small_dataset(6);
    let cfg = small_config(9);
    let a = run_sequence(&data, &cfg).unwrap();
    let b = run_sequence(&data, &cfg).unwrap();
    assert_eq!(a, b);
    let (_, ra) = run_sequence_with(&data, &cfg, &mut ()).unwrap();
    let (_, rb) = run_sequence_with(&data, &cfg, &mut ()).unwrap();
    assert_eq!(ra.model, rb.model);
    let other = run_sequence(&data, &small_config(10)).unwrap();
    assert_ne!(a, other);
}

#[test]
fn tasks_must_arrive_in_order() {
    let data = small_dataset(6);
    let cfg = small_config(0);
    let tasks = build_tasks(&data, cfg.num_tasks, cfg.seed, true, Caps::default()).unwrap();
    let mut run = ContinualRun::new(initial_model(&data, &cfg), cfg, vec![]).unwrap();
    assert!(matches!(run.run_task(&tasks[1], &mut ()), Err(Error::InvalidArgument(_))));
    run.run_task(&tasks[0], &mut ()).unwrap();
    assert!(run.run_task(&tasks[0], &mut ()).is_err());
}

#[test]
fn trained_model_checkpoint_round_trips() {
    let data = small_dataset(6);
    let (_, run) = run_sequence_with(&data, &small_config(0), &mut ()).unwrap();
    let ck = Checkpoint::new(run.model.clone(), None, None);
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back.model, run.model);
    let x = &data.records[0].instance.features;
    assert_eq!(back.model.logits(x).unwrap(), run.model.logits(x).unwrap());
    let _: RelationId = back.model.head.relation_ids()[0];
}
