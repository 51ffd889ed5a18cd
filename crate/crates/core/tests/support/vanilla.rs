//! Reference learner for the equivalence check: a single undecomposed
//! classifier matrix with one Adam state, trained by the plain two-stage
//! rehearsal loop (no snapshot, no restore, one learning rate for every
//! column). It shares low-level primitives and seed derivation with the
//! library but none of the head/group machinery.

use decomp_core::datastream::{build_tasks, Dataset, Instance, RelationId};
use decomp_core::memory::{update_bank, MemoryBank};
use decomp_core::model::{init_columns, Encoder, EncoderOptim};
use decomp_core::numerics::{matvec, softmax_xent, AdamState, Matrix};
use decomp_core::rng::{self, purpose};
use decomp_core::training::{initial_model, TrainConfig};
use rand::seq::SliceRandom;

pub struct VanillaTrace {
    /// Batch losses in step order, stage 1 then stage 2, task by task.
    pub losses: Vec<f64>,
    pub weights: Matrix,
    pub labels: Vec<RelationId>,
    pub encoder: Encoder,
}

struct Learner {
    encoder: Encoder,
    w: Matrix,
    labels: Vec<RelationId>,
}

impl Learner {
    fn step_epochs(&mut self, data: &[Instance], cfg: &TrainConfig, epochs: usize, order_seed: u64, losses: &mut Vec<f64>) {
        let mut adam = AdamState::new(self.w.rows(), self.w.cols());
        let mut enc_opt = EncoderOptim::new(&self.encoder);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut rng::stream(order_seed, &[epoch as u64]));
            for chunk in order.chunks(cfg.batch_size) {
                let (rows, cols) = self.w.shape();
                let mut gw = vec![0.0; rows * cols];
                let mut genc = self.encoder.zero_grads();
                let mut loss = 0.0;
                for &i in chunk {
                    let inst = &data[i];
                    let label = self.labels.iter().position(|r| *r == inst.label).unwrap();
                    let trace = self.encoder.forward_trace(&inst.features).unwrap();
                    let logits = matvec(&self.w, &trace.h).unwrap();
                    let (l, g) = softmax_xent(&logits, label).unwrap();
                    loss += l;
                    for r in 0..rows {
                        if trace.h[r] == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            gw[r * cols + c] += trace.h[r] * g[c];
                        }
                    }
                    let grad_h = self.w.mul_vec(&g).unwrap();
                    self.encoder.backward(&inst.features, &trace, &grad_h, &mut genc).unwrap();
                }
                let gw = Matrix::from_vec(rows, cols, gw).unwrap();
                adam.step(&mut self.w, &gw, cfg.alpha_cur).unwrap();
                enc_opt.step(&mut self.encoder, &genc, cfg.alpha_enc).unwrap();
                losses.push(loss);
            }
        }
    }
}

/// Runs the whole task sequence for `cfg.seed`. The strategy flags and
/// `alpha_prev` in `cfg` are ignored.
pub fn run_vanilla(dataset: &Dataset, cfg: &TrainConfig) -> VanillaTrace {
    let tasks = build_tasks(dataset, cfg.num_tasks, cfg.seed, cfg.separate_pairs, cfg.caps).unwrap();
    let mut learner = Learner {
        encoder: initial_model(dataset, cfg).encoder,
        w: Matrix::zeros(cfg.repr_dim, 0),
        labels: Vec::new(),
    };
    let mut bank = MemoryBank::new(cfg.memory_size);
    let mut losses = Vec::new();
    for task in &tasks {
        let k = task.index as u64;
        let fresh = init_columns(
            cfg.repr_dim,
            task.relations.len(),
            rng::derive_seed(cfg.seed, &[purpose::HEAD_GROW, k]),
        );
        learner.w = learner.w.hcat(&fresh).unwrap();
        learner.labels.extend_from_slice(&task.relations);

        let s1 = rng::derive_seed(cfg.seed, &[purpose::STAGE1_ORDER, k]);
        learner.step_epochs(&task.train, cfg, cfg.epochs_stage1, s1, &mut losses);

        for &rel in &task.relations {
            let insts: Vec<Instance> = task.train.iter().filter(|i| i.label == rel).cloned().collect();
            let reps: Vec<_> = insts.iter().map(|i| learner.encoder.encode(&i.features).unwrap()).collect();
            let seed = rng::derive_seed(cfg.seed, &[purpose::EXEMPLARS, u64::from(rel.0)]);
            update_bank(&mut bank, rel, &insts, &reps, seed, cfg.exemplar_selection).unwrap();
        }

        if cfg.epochs_stage2 > 0 {
            let replay = bank
                .replay_set(rng::derive_seed(cfg.seed, &[purpose::STAGE2_ORDER, k]))
                .unwrap();
            let s2 = rng::derive_seed(cfg.seed, &[purpose::STAGE2_ORDER, k, 1]);
            learner.step_epochs(&replay, cfg, cfg.epochs_stage2, s2, &mut losses);
        }
    }
    VanillaTrace {
        losses,
        weights: learner.w,
        labels: learner.labels,
        encoder: learner.encoder,
    }
}
