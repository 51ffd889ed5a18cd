//! Evaluation metrics: accuracy over all seen relations, one-vs-rest F1,
//! probability mass on previous relations, and two-class silhouette.

use std::collections::BTreeMap;

use crate::datastream::{Instance, RelationId};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Vector;

/// Per-relation one-vs-rest counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionTally {
    counts: BTreeMap<RelationId, Counts>,
    total: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

impl ConfusionTally {
    pub fn record(&mut self, truth: RelationId, predicted: RelationId) {
        self.total += 1;
        if truth == predicted {
            self.counts.entry(truth).or_default().tp += 1;
        } else {
            self.counts.entry(truth).or_default().fn_ += 1;
            self.counts.entry(predicted).or_default().fp += 1;
        }
    }

    pub fn counts(&self, rel: RelationId) -> Counts {
        self.counts.get(&rel).copied().unwrap_or_default()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn correct(&self) -> u64 {
        self.counts.values().map(|c| c.tp).sum()
    }

    /// `2PR/(P+R)`, which equals `2TP/(2TP+FP+FN)`; 0 when there are no true
    /// positives.
    pub fn f1(&self, rel: RelationId) -> f64 {
        self.counts(rel).f1()
    }

    pub fn tally(model: &Model, instances: &[Instance]) -> Result<Self> {
        let mut t = Self::default();
        let ids = model.head.relation_ids();
        for inst in instances {
            let col = model.predict_column(&inst.features)?;
            t.record(inst.label, ids[col]);
        }
        Ok(t)
    }
}

/// Fraction of instances whose highest-scoring column (over every seen
/// relation, lowest index on ties) is their label.
pub fn accuracy_all_seen(model: &Model, instances: &[Instance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("accuracy_all_seen"));
    }
    let mut correct = 0usize;
    for inst in instances {
        let label = model
            .head
            .column_of(inst.label)
            .ok_or(Error::UnknownRelation(inst.label.0))?;
        if model.predict_column(&inst.features)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / instances.len() as f64)
}

/// One-vs-rest F1 for each relation in `subset`.
pub fn per_relation_f1(
    model: &Model,
    instances: &[Instance],
    subset: &[RelationId],
) -> Result<BTreeMap<RelationId, f64>> {
    let tally = ConfusionTally::tally(model, instances)?;
    Ok(subset.iter().map(|&r| (r, tally.f1(r))).collect())
}

/// Mean probability mass on previous-group columns, and on current-group
/// columns, over `instances`.
pub fn prob_mass_split(model: &Model, instances: &[Instance]) -> Result<(f64, f64)> {
    let b = model.head.boundary();
    if b == 0 {
        return Err(Error::invalid("probability mass on previous relations needs boundary > 0"));
    }
    if instances.is_empty() {
        return Err(Error::Empty("prev_prob_mass"));
    }
    let (mut prev, mut cur) = (0.0, 0.0);
    for inst in instances {
        let p = model.forward(&inst.features)?;
        prev += p[..b].iter().sum::<f64>();
        cur += p[b..].iter().sum::<f64>();
    }
    let n = instances.len() as f64;
    Ok((prev / n, cur / n))
}

pub fn prev_prob_mass(model: &Model, instances: &[Instance]) -> Result<f64> {
    Ok(prob_mass_split(model, instances)?.0)
}

/// Mean silhouette `(b − a)/max(a, b)` for a two-class labelling, with
/// Euclidean distances; `a` is the mean distance to the other members of the
/// point's class and `b` the mean distance to the other class.
pub fn pair_silhouette(reps: &[Vector], labels: &[RelationId]) -> Result<f64> {
    if reps.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: "pair_silhouette (reps vs labels)",
            expected: reps.len(),
            found: labels.len(),
        });
    }
    let mut classes: Vec<RelationId> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != 2 {
        return Err(Error::invalid(format!(
            "pair_silhouette needs exactly two classes, found {}",
            classes.len()
        )));
    }
    for c in &classes {
        let n = labels.iter().filter(|l| *l == c).count();
        if n < 2 {
            return Err(Error::invalid(format!("class {c} has {n} point(s); need at least 2")));
        }
    }
    let dist = |i: usize, j: usize| reps[i].squared_distance(&reps[j]).sqrt();
    let mut total = 0.0;
    for i in 0..reps.len() {
        let (mut same, mut n_same, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..reps.len() {
            if i == j {
                continue;
            }
            if labels[j] == labels[i] {
                same += dist(i, j);
                n_same += 1;
            } else {
                other += dist(i, j);
                n_other += 1;
            }
        }
        let a = same / n_same as f64;
        let b = other / n_other as f64;
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / reps.len() as f64)
}
