//! Episodic memory: a fixed number of exemplars per relation, chosen by
//! k-means over encoder representations and replayed in stage 2.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datastream::{Instance, RelationId};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Vector};
use crate::rng;

pub const DEFAULT_CAPACITY: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarSelection {
    /// Instance nearest each k-means centroid.
    #[default]
    KMeans,
    /// Uniform sample without replacement.
    Random,
}

impl std::str::FromStr for ExemplarSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kmeans" => Ok(Self::KMeans),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown exemplar selection {other:?} (kmeans|random)")),
        }
    }
}

/// Indices (ascending) of the chosen exemplars. With `k >= n` every index is
/// returned.
pub fn select_exemplar_indices(
    reps: &[Vector],
    k: usize,
    seed: u64,
    method: ExemplarSelection,
) -> Result<Vec<usize>> {
    let n = reps.len();
    if k >= n {
        return Ok((0..n).collect());
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng::stream(seed, &[rng::purpose::EXEMPLARS]);
    let mut picked = match method {
        ExemplarSelection::Random => index::sample(&mut rng, n, k).into_vec(),
        ExemplarSelection::KMeans => {
            let centroids = kmeans(reps, k, &mut rng);
            nearest_members(reps, &centroids)
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Exemplars for one relation. `reps[i]` must be the representation of
/// `instances[i]`.
pub fn select_exemplars(
    instances: &[Instance],
    reps: &[Vector],
    k: usize,
    seed: u64,
) -> Result<Vec<Instance>> {
    if instances.len() != reps.len() {
        return Err(Error::DimensionMismatch {
            op: "select_exemplars (instances vs reps)",
            expected: instances.len(),
            found: reps.len(),
        });
    }
    let idx = select_exemplar_indices(reps, k, seed, ExemplarSelection::KMeans)?;
    Ok(idx.into_iter().map(|i| instances[i].clone()).collect())
}

fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Lloyd's algorithm with k-means++ seeding. An empty cluster keeps its
/// previous centroid.
fn kmeans<R: Rng>(reps: &[Vector], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = reps.len();
    let dim = reps[0].dim();

    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = reps.iter().map(|p| squared_distance(p, &reps[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just below `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k < n")
        };
        chosen.push(next);
        for (i, p) in reps.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &reps[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| reps[i].to_vec()).collect();

    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in reps {
            let c = nearest_centroid(p, &centroids);
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(squared_distance(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    centroids
}

/// For each centroid, its closest assigned member (lowest index on ties);
/// clusters left empty take the closest not-yet-picked instance instead.
fn nearest_members(reps: &[Vector], centroids: &[Vec<f64>]) -> Vec<usize> {
    let k = centroids.len();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, p) in reps.iter().enumerate() {
        let c = nearest_centroid(p, centroids);
        let d = squared_distance(p, &centroids[c]);
        if best[c].is_none_or(|(_, bd)| d < bd) {
            best[c] = Some((i, d));
        }
    }
    let mut picked: Vec<usize> = best.iter().flatten().map(|&(i, _)| i).collect();
    for c in 0..k {
        if best[c].is_some() {
            continue;
        }
        let fill = (0..reps.len())
            .filter(|i| !picked.contains(i))
            .min_by(|&a, &b| {
                squared_distance(&reps[a], &centroids[c])
                    .total_cmp(&squared_distance(&reps[b], &centroids[c]))
                    .then(a.cmp(&b))
            })
            .expect("k < n leaves unpicked instances");
        picked.push(fill);
    }
    picked
}

/// A stored exemplar and its position in the list it was selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub source_index: usize,
    pub instance: Instance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    store: BTreeMap<RelationId, Vec<Exemplar>>,
}

impl Default for MemoryBank {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            store: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.store.keys().copied()
    }

    pub fn contains(&self, rel: RelationId) -> bool {
        self.store.contains_key(&rel)
    }

    pub fn exemplars(&self, rel: RelationId) -> Option<&[Exemplar]> {
        self.store.get(&rel).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// Stores exemplars for a relation not yet in the bank.
    pub fn update(&mut self, rel: RelationId, exemplars: Vec<Exemplar>) -> Result<()> {
        if self.store.contains_key(&rel) {
            return Err(Error::DuplicateRelation(rel.0));
        }
        if exemplars.len() > self.capacity {
            return Err(Error::invalid(format!(
                "{} exemplars exceed capacity {} for relation {rel}",
                exemplars.len(),
                self.capacity
            )));
        }
        if let Some(e) = exemplars.iter().find(|e| e.instance.label != rel) {
            return Err(Error::invalid(format!(
                "exemplar labeled {} stored under relation {rel}",
                e.instance.label
            )));
        }
        self.store.insert(rel, exemplars);
        Ok(())
    }

    /// All stored instances, shuffled by `seed`.
    pub fn replay_set(&self, seed: u64) -> Result<Vec<Instance>> {
        if self.is_empty() {
            return Err(Error::Empty("replay_set: memory bank"));
        }
        let mut all: Vec<Instance> = self
            .store
            .values()
            .flatten()
            .map(|e| e.instance.clone())
            .collect();
        all.shuffle(&mut rng::stream(seed, &[]));
        Ok(all)
    }

    /// Audit dump: `relation_id,source_index` per stored exemplar.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "relation_id,source_index")?;
        for (rel, list) in &self.store {
            for e in list {
                writeln!(out, "{rel},{}", e.source_index)?;
            }
        }
        Ok(())
    }
}

/// Selects and stores exemplars for one relation from its training
/// instances, given their current representations.
pub fn update_bank(
    bank: &mut MemoryBank,
    rel: RelationId,
    instances: &[Instance],
    reps: &[Vector],
    seed: u64,
    method: ExemplarSelection,
) -> Result<()> {
    if instances.len() != reps.len() {
        return Err(Error::DimensionMismatch {
            op: "update_bank (instances vs reps)",
            expected: instances.len(),
            found: reps.len(),
        });
    }
    let idx = select_exemplar_indices(reps, bank.capacity, seed, method)?;
    let exemplars = idx
        .into_iter()
        .map(|i| Exemplar {
            source_index: i,
            instance: instances[i].clone(),
        })
        .collect();
    bank.update(rel, exemplars)
}
