//! Randomized models for gradient checks: d ≤ 16 representation dims and
//! C ≤ 8 classes split across both head groups, with 1–5 instance batches.
//! `check_case` returns the worst relative error per tensor, in
//! [`TENSORS`] order.

use decomp_core::datastream::{Instance, RelationId};
use decomp_core::model::{Activation, Encoder, Model};
use decomp_core::numerics::{finite_diff_check, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
pub const TENSORS: [&str; 5] = ["head", "w1", "b1", "w2", "b2"];

pub struct Case {
    pub model: Model,
    pub batch: Vec<Instance>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_vec((0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

/// d ≤ 16 representation dims, C ≤ 8 classes, split across two head groups.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.random_range(2..=8);
    let hidden = rng.random_range(2..=12);
    let d = rng.random_range(2..=16);
    let classes = rng.random_range(2..=8);
    let activation = if seed % 5 == 4 { Activation::Identity } else { Activation::Tanh };
    let encoder = Encoder::from_layers(
        random_matrix(&mut rng, f, hidden, 0.8),
        random_vector(&mut rng, hidden, 0.3),
        random_matrix(&mut rng, hidden, d, 0.8),
        random_vector(&mut rng, d, 0.3),
        activation,
    )
    .unwrap();
    let mut model = Model::from_parts(encoder, decomp_core::model::ClassifierHead::empty(d)).unwrap();
    let split = rng.random_range(1..classes);
    let ids: Vec<RelationId> = (0..classes as u32).map(|i| RelationId(i * 3 + 1)).collect();
    model.head.grow(&ids[..split], seed).unwrap();
    model.head.grow(&ids[split..], seed + 1).unwrap();
    *model.head.weights_mut() = random_matrix(&mut rng, d, classes, 1.0);

    let n = rng.random_range(1..=5);
    let batch = (0..n)
        .map(|_| Instance {
            features: random_vector(&mut rng, f, 1.5),
            label: ids[rng.random_range(0..classes)],
        })
        .collect();
    Case { model, batch }
}

fn loss_with(model: &Model, batch: &[Instance]) -> f64 {
    let refs: Vec<&Instance> = batch.iter().collect();
    model.batch_loss(&refs).unwrap()
}

fn vec_as_row(v: &Vector) -> Matrix {
    Matrix::from_vec(1, v.dim(), v.to_vec()).unwrap()
}

fn rebuild(enc: &Encoder, w1: &Matrix, b1: &Vector, w2: &Matrix, b2: &Vector) -> Encoder {
    Encoder::from_layers(w1.clone(), b1.clone(), w2.clone(), b2.clone(), enc.activation()).unwrap()
}

pub fn check_case(seed: u64) -> [f64; 5] {
    let Case { model, batch } = random_case(seed);
    let refs: Vec<&Instance> = batch.iter().collect();
    let grads = model.batch_grads(&refs).unwrap();
    let enc = &model.encoder;
    let (w1, w2) = enc.layer_weights();
    let (b1, b2) = enc.biases();

    let head = finite_diff_check(
        |w| {
            let mut m = model.clone();
            *m.head.weights_mut() = w.clone();
            loss_with(&m, &batch)
        },
        model.head.weights(),
        &grads.head,
        EPS,
    )
    .unwrap();

    let with_encoder = |e: Encoder| {
        let mut m = model.clone();
        m.encoder = e;
        loss_with(&m, &batch)
    };
    let gw1 = finite_diff_check(|p| with_encoder(rebuild(enc, p, b1, w2, b2)), w1, &grads.encoder.w1, EPS).unwrap();
    let gw2 = finite_diff_check(|p| with_encoder(rebuild(enc, w1, b1, p, b2)), w2, &grads.encoder.w2, EPS).unwrap();
    let gb1 = finite_diff_check(
        |p| with_encoder(rebuild(enc, w1, &Vector::from_vec(p.as_slice().to_vec()), w2, b2)),
        &vec_as_row(b1),
        &vec_as_row(&grads.encoder.b1),
        EPS,
    )
    .unwrap();
    let gb2 = finite_diff_check(
        |p| with_encoder(rebuild(enc, w1, b1, w2, &Vector::from_vec(p.as_slice().to_vec()))),
        &vec_as_row(b2),
        &vec_as_row(&grads.encoder.b2),
        EPS,
    )
    .unwrap();
    [head, gw1, gb1, gw2, gb2]
}
