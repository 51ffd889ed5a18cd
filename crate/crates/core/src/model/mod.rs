//! Encoder plus decomposed classifier head.

mod checkpoint;
mod encoder;
mod head;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{Activation, Encoder, EncoderGrads, EncoderOptim, EncoderTrace};
pub use head::{
    apply_head_gradients, init_columns, ClassifierHead, HeadOptim, HeadSnapshot, INIT_STD,
};

use serde::{Deserialize, Serialize};

use crate::datastream::Instance;
use crate::error::{Error, Result};
use crate::numerics::{softmax, softmax_xent, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

/// Summed loss and gradients over a mini-batch.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub loss: f64,
    pub head: Matrix,
    pub encoder: EncoderGrads,
}

impl Model {
    pub fn new(input_dim: usize, hidden_dim: usize, repr_dim: usize, seed: u64) -> Self {
        Self {
            encoder: Encoder::init(input_dim, hidden_dim, repr_dim, seed),
            head: ClassifierHead::empty(repr_dim),
        }
    }

    pub fn from_parts(encoder: Encoder, head: ClassifierHead) -> Result<Self> {
        if encoder.repr_dim() != head.repr_dim() {
            return Err(Error::DimensionMismatch {
                op: "encoder output vs classifier rows",
                expected: encoder.repr_dim(),
                found: head.repr_dim(),
            });
        }
        Ok(Self { encoder, head })
    }

    pub fn represent(&self, features: &[f64]) -> Result<Vector> {
        self.encoder.encode(features)
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vector> {
        self.head.logits(&self.encoder.encode(features)?)
    }

    /// Probability distribution over every column of the head.
    pub fn forward(&self, features: &[f64]) -> Result<Vector> {
        if self.head.num_columns() == 0 {
            return Err(Error::Empty("forward: classifier has no columns"));
        }
        softmax(&self.logits(features)?)
    }

    /// Column index with the highest logit; ties go to the lowest index.
    pub fn predict_column(&self, features: &[f64]) -> Result<usize> {
        let logits = self.logits(features)?;
        argmax(&logits).ok_or(Error::Empty("predict: classifier has no columns"))
    }

    /// `Σ_i −log P(y_i|x_i)` over the batch and its gradients.
    pub fn batch_grads(&self, batch: &[&Instance]) -> Result<BatchGrads> {
        let mut head = Matrix::zeros(self.head.repr_dim(), self.head.num_columns());
        let mut encoder = self.encoder.zero_grads();
        let mut loss = 0.0;
        for inst in batch {
            let label = self
                .head
                .column_of(inst.label)
                .ok_or(Error::UnknownRelation(inst.label.0))?;
            let trace = self.encoder.forward_trace(&inst.features)?;
            let logits = self.head.logits(&trace.h)?;
            let (l, g) = softmax_xent(&logits, label)?;
            loss += l;
            head.add_outer(&trace.h, &g, 1.0);
            let grad_h = self.head.weights().mul_vec(&g)?;
            self.encoder.backward(&inst.features, &trace, &grad_h, &mut encoder)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("batch loss"));
        }
        Ok(BatchGrads {
            loss,
            head,
            encoder,
        })
    }

    /// Summed loss only, for finite-difference probes.
    pub fn batch_loss(&self, batch: &[&Instance]) -> Result<f64> {
        let mut loss = 0.0;
        for inst in batch {
            let label = self
                .head
                .column_of(inst.label)
                .ok_or(Error::UnknownRelation(inst.label.0))?;
            let (l, _) = softmax_xent(&self.logits(&inst.features)?, label)?;
            loss += l;
        }
        Ok(loss)
    }
}

/// First index of the maximum; `None` on empty input.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
