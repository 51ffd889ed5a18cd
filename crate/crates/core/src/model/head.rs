use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datastream::RelationId;
use crate::error::{Error, Result};
use crate::numerics::{matvec, AdamState, Matrix, Vector};

/// Standard deviation of freshly grown classifier columns.
pub const INIT_STD: f64 = 0.02;

/// `d × C` classifier over every relation seen so far, with columns
/// `[0, boundary)` forming the previous group and the rest the current group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub(crate) w: Matrix,
    pub(crate) boundary: usize,
    pub(crate) relation_ids: Vec<RelationId>,
}

/// Frozen copy of the previous-group columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSnapshot {
    columns: Matrix,
    relation_ids: Vec<RelationId>,
}

impl HeadSnapshot {
    pub fn columns(&self) -> &Matrix {
        &self.columns
    }

    pub fn relation_ids(&self) -> &[RelationId] {
        &self.relation_ids
    }

    pub fn len(&self) -> usize {
        self.relation_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relation_ids.is_empty()
    }
}

/// Draws `repr_dim × count` columns from `N(0, INIT_STD²)`, row-major.
pub fn init_columns(repr_dim: usize, count: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let data = (0..repr_dim * count).map(|_| dist.sample(&mut rng)).collect();
    Matrix::from_vec(repr_dim, count, data).expect("shape matches")
}

impl ClassifierHead {
    /// A head with no columns.
    pub fn empty(repr_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(repr_dim, 0),
            boundary: 0,
            relation_ids: Vec::new(),
        }
    }

    pub fn from_parts(w: Matrix, boundary: usize, relation_ids: Vec<RelationId>) -> Result<Self> {
        let head = Self {
            w,
            boundary,
            relation_ids,
        };
        head.validate()?;
        Ok(head)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.relation_ids.len() != self.w.cols() {
            return Err(Error::DimensionMismatch {
                op: "classifier relation ids vs columns",
                expected: self.w.cols(),
                found: self.relation_ids.len(),
            });
        }
        if self.boundary > self.w.cols() {
            return Err(Error::invalid(format!(
                "boundary {} exceeds column count {}",
                self.boundary,
                self.w.cols()
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.relation_ids {
            if !seen.insert(*r) {
                return Err(Error::DuplicateRelation(r.0));
            }
        }
        if !self.w.is_finite() {
            return Err(Error::NonFinite("classifier weights"));
        }
        Ok(())
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.w
    }

    pub fn boundary(&self) -> usize {
        self.boundary
    }

    pub fn repr_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn num_columns(&self) -> usize {
        self.w.cols()
    }

    pub fn relation_ids(&self) -> &[RelationId] {
        &self.relation_ids
    }

    pub fn previous_ids(&self) -> &[RelationId] {
        &self.relation_ids[..self.boundary]
    }

    pub fn current_ids(&self) -> &[RelationId] {
        &self.relation_ids[self.boundary..]
    }

    pub fn column_of(&self, rel: RelationId) -> Option<usize> {
        self.relation_ids.iter().position(|&r| r == rel)
    }

    /// Copy of the previous-group columns.
    pub fn previous_columns(&self) -> Matrix {
        self.w.columns(0..self.boundary)
    }

    pub fn current_columns(&self) -> Matrix {
        self.w.columns(self.boundary..self.w.cols())
    }

    pub fn logits(&self, h: &[f64]) -> Result<Vector> {
        matvec(&self.w, h)
    }

    /// Appends one column per new relation and moves the boundary to the old
    /// column count, so every earlier relation becomes "previous".
    pub fn grow(&mut self, new_relations: &[RelationId], init_seed: u64) -> Result<()> {
        let mut seen: HashSet<RelationId> = self.relation_ids.iter().copied().collect();
        for r in new_relations {
            if !seen.insert(*r) {
                return Err(Error::DuplicateRelation(r.0));
            }
        }
        let fresh = init_columns(self.repr_dim(), new_relations.len(), init_seed);
        self.boundary = self.w.cols();
        self.w = self.w.hcat(&fresh)?;
        self.relation_ids.extend_from_slice(new_relations);
        Ok(())
    }

    pub fn snapshot_prev(&self) -> HeadSnapshot {
        HeadSnapshot {
            columns: self.previous_columns(),
            relation_ids: self.previous_ids().to_vec(),
        }
    }

    /// Overwrites the previous group with the snapshot; the current group is
    /// left untouched.
    pub fn restore_prev(&mut self, snap: &HeadSnapshot) -> Result<()> {
        if snap.len() != self.boundary {
            return Err(Error::SnapshotMismatch(format!(
                "snapshot has {} columns, head boundary is {}",
                snap.len(),
                self.boundary
            )));
        }
        if snap.relation_ids() != self.previous_ids() {
            return Err(Error::SnapshotMismatch(
                "relation ids differ from the head's previous group".into(),
            ));
        }
        if snap.columns.rows() != self.repr_dim() {
            return Err(Error::SnapshotMismatch(format!(
                "snapshot rows {} vs representation dim {}",
                snap.columns.rows(),
                self.repr_dim()
            )));
        }
        self.w.set_columns(0, &snap.columns)
    }
}

/// Separate Adam states for the previous and current column groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOptim {
    pub prev: AdamState,
    pub cur: AdamState,
}

impl HeadOptim {
    pub fn new(head: &ClassifierHead) -> Self {
        let d = head.repr_dim();
        Self {
            prev: AdamState::new(d, head.boundary),
            cur: AdamState::new(d, head.num_columns() - head.boundary),
        }
    }

    /// Resets the previous group's moments.
    pub fn reset_prev(&mut self, head: &ClassifierHead) {
        self.prev = AdamState::new(head.repr_dim(), head.boundary);
    }
}

/// Applies one Adam step to the head: the previous group with `lr_prev`, the
/// current group with `lr_cur`, each with its own optimizer state.
pub fn apply_head_gradients(
    head: &mut ClassifierHead,
    grads: &Matrix,
    optim: &mut HeadOptim,
    lr_prev: f64,
    lr_cur: f64,
) -> Result<()> {
    if grads.shape() != head.w.shape() {
        return Err(Error::ShapeMismatch {
            op: "apply_head_gradients",
            expected: head.w.shape(),
            found: grads.shape(),
        });
    }
    let (b, c) = (head.boundary, head.w.cols());
    if b > 0 {
        optim.prev.step_columns(&mut head.w, grads, 0..b, lr_prev)?;
    }
    if c > b {
        optim.cur.step_columns(&mut head.w, grads, b..c, lr_cur)?;
    }
    Ok(())
}
