//! Labeled instances, synthetic relation clusters, task sequences and the
//! pre-encoded embedding file format.
//!
//! Embedding CSV layout (UTF-8, LF):
//!
//! ```text
//! relation_id,split,f0,f1,...,f{F-1}
//! 3,train,0.25,-1.5,...
//! ```
//!
//! `relation_id` is a non-negative integer, `split` one of `train`, `valid`,
//! `test`, and every feature a finite decimal real.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::rng::{self, purpose};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, valid or test)")),
        }
    }
}

/// A feature vector with its relation label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: Vector,
    pub label: RelationId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub instance: Instance,
    /// Fixed split assignment, if the source provides one.
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub records: Vec<Record>,
    /// Relation pairs that are deliberately close in feature space.
    pub analogous_pairs: Vec<(RelationId, RelationId)>,
}

impl Dataset {
    /// Sorted distinct labels.
    pub fn relations(&self) -> Vec<RelationId> {
        self.records
            .iter()
            .map(|r| r.instance.label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn has_fixed_splits(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.split.is_some())
    }

    pub fn by_relation(&self) -> BTreeMap<RelationId, Vec<&Record>> {
        let mut out: BTreeMap<RelationId, Vec<&Record>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.instance.label).or_default().push(r);
        }
        out
    }
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_relations: usize,
    pub per_relation: usize,
    pub feature_dim: usize,
    /// Per-coordinate standard deviation σ of every cluster.
    pub spread: f64,
    /// Relation pairs sharing a base mean.
    pub analogous_pairs: Vec<(u32, u32)>,
    /// Distance δ between the two means of an analogous pair.
    pub pair_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_relations: 40,
            per_relation: 100,
            feature_dim: 32,
            spread: 1.0,
            analogous_pairs: vec![(0, 1), (2, 3), (4, 5), (6, 7)],
            pair_offset: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_relations < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 relations"));
        }
        if self.per_relation < 5 {
            return Err(Error::invalid("synthetic data needs at least 5 instances per relation"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::invalid("spread must be > 0"));
        }
        if !self.analogous_pairs.is_empty() && !(self.pair_offset > 0.0 && self.pair_offset.is_finite()) {
            return Err(Error::invalid("pair_offset must be > 0"));
        }
        let mut used = BTreeSet::new();
        for &(a, b) in &self.analogous_pairs {
            if a == b {
                return Err(Error::invalid(format!("pair ({a},{b}) pairs a relation with itself")));
            }
            for r in [a, b] {
                if r as usize >= self.num_relations {
                    return Err(Error::invalid(format!("pair member {r} is not a relation")));
                }
                if !used.insert(r) {
                    return Err(Error::invalid(format!("relation {r} appears in two pairs")));
                }
            }
        }
        Ok(())
    }
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Gaussian clusters, one per relation. Unpaired means lie uniformly on a
/// sphere of radius `10σ`; each analogous pair straddles a shared base mean
/// on that sphere at distance `δ` apart along a random direction.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[0]);
    let radius = 10.0 * spec.spread;
    let f = spec.feature_dim;

    let mut means: Vec<Option<Vec<f64>>> = vec![None; spec.num_relations];
    for &(a, b) in &spec.analogous_pairs {
        let base: Vec<f64> = unit_vector(&mut rng, f).into_iter().map(|x| x * radius).collect();
        let dir = unit_vector(&mut rng, f);
        let half = spec.pair_offset / 2.0;
        means[a as usize] = Some(base.iter().zip(&dir).map(|(m, u)| m - half * u).collect());
        means[b as usize] = Some(base.iter().zip(&dir).map(|(m, u)| m + half * u).collect());
    }
    for m in means.iter_mut().filter(|m| m.is_none()) {
        *m = Some(unit_vector(&mut rng, f).into_iter().map(|x| x * radius).collect());
    }

    let mut records = Vec::with_capacity(spec.num_relations * spec.per_relation);
    for (r, mean) in means.into_iter().enumerate() {
        let mean = mean.expect("every relation has a mean");
        for _ in 0..spec.per_relation {
            let features = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.spread * z
                })
                .collect::<Vec<_>>();
            records.push(Record {
                instance: Instance {
                    features: Vector::from_vec(features),
                    label: RelationId(r as u32),
                },
                split: None,
            });
        }
    }
    Ok(Dataset {
        feature_dim: f,
        records,
        analogous_pairs: spec
            .analogous_pairs
            .iter()
            .map(|&(a, b)| (RelationId(a), RelationId(b)))
            .collect(),
    })
}

/// Seeded random partition of `relations` into `num_tasks` near-equal sets
/// (the first `len % num_tasks` sets get one extra).
pub fn split_tasks(relations: &[RelationId], num_tasks: usize, seed: u64) -> Result<Vec<Vec<RelationId>>> {
    split_tasks_separating(relations, num_tasks, seed, &[])
}

/// Like [`split_tasks`], additionally guaranteeing that the two members of
/// every pair in `separate` end up in different tasks.
pub fn split_tasks_separating(
    relations: &[RelationId],
    num_tasks: usize,
    seed: u64,
    separate: &[(RelationId, RelationId)],
) -> Result<Vec<Vec<RelationId>>> {
    if num_tasks == 0 {
        return Err(Error::invalid("num_tasks must be at least 1"));
    }
    if num_tasks > relations.len() {
        return Err(Error::invalid(format!(
            "cannot split {} relations into {num_tasks} tasks",
            relations.len()
        )));
    }
    let unique: BTreeSet<_> = relations.iter().collect();
    if unique.len() != relations.len() {
        return Err(Error::invalid("relation list contains duplicates"));
    }
    if !separate.is_empty() && num_tasks < 2 {
        return Err(Error::invalid("separating pairs needs at least 2 tasks"));
    }

    let mut rng = rng::stream(seed, &[purpose::TASK_SPLIT]);
    let mut order = relations.to_vec();
    order.shuffle(&mut rng);

    let base = relations.len() / num_tasks;
    let extra = relations.len() % num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    let mut it = order.into_iter();
    for t in 0..num_tasks {
        let size = base + usize::from(t < extra);
        tasks.push(it.by_ref().take(size).collect::<Vec<_>>());
    }

    if !separate.is_empty() {
        separate_pairs(&mut tasks, separate, &mut rng)?;
    }
    Ok(tasks)
}

fn separate_pairs<R: Rng>(
    tasks: &mut [Vec<RelationId>],
    pairs: &[(RelationId, RelationId)],
    rng: &mut R,
) -> Result<()> {
    let paired: BTreeSet<RelationId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let task_of = |tasks: &[Vec<RelationId>], r: RelationId| tasks.iter().position(|t| t.contains(&r));
    for &(a, b) in pairs {
        let (Some(ta), Some(tb)) = (task_of(tasks, a), task_of(tasks, b)) else {
            continue;
        };
        if ta != tb {
            continue;
        }
        // Swap `b` with an unpaired relation from another task.
        let mut candidates: Vec<(usize, usize)> = tasks
            .iter()
            .enumerate()
            .filter(|&(t, _)| t != ta)
            .flat_map(|(t, rels)| {
                rels.iter()
                    .enumerate()
                    .filter(|(_, r)| !paired.contains(r))
                    .map(move |(i, _)| (t, i))
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::invalid(format!(
                "cannot place analogous pair ({a},{b}) in different tasks"
            )));
        }
        candidates.sort_unstable();
        let (t, i) = candidates[rng.random_range(0..candidates.len())];
        let bi = tasks[ta].iter().position(|&r| r == b).expect("b is in its task");
        let other = tasks[t][i];
        tasks[t][i] = b;
        tasks[ta][bi] = other;
    }
    Ok(())
}

/// Per-relation train/valid/test lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceSplits {
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Stratified per-relation split with `ratios = [train, test, valid]`
/// (3:1:1 in the standard protocol). Test and validation sizes are
/// `floor(n · r / Σr)`; training gets the remainder.
pub fn split_instances(
    instances: &[Instance],
    ratios: [u32; 3],
    seed: u64,
) -> Result<BTreeMap<RelationId, InstanceSplits>> {
    let total: u32 = ratios.iter().sum();
    if total == 0 || ratios.contains(&0) {
        return Err(Error::invalid("split ratios must all be positive"));
    }
    let mut grouped: BTreeMap<RelationId, Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        grouped.entry(inst.label).or_default().push(inst);
    }
    let mut out = BTreeMap::new();
    for (rel, mut items) in grouped {
        let n = items.len();
        if n < total as usize {
            return Err(Error::invalid(format!(
                "relation {rel} has {n} instances; at least {total} are needed to split"
            )));
        }
        let mut rng = rng::stream(seed, &[purpose::DATA_SPLIT, u64::from(rel.0)]);
        items.shuffle(&mut rng);
        let n_test = n * ratios[1] as usize / total as usize;
        let n_valid = n * ratios[2] as usize / total as usize;
        let n_train = n - n_test - n_valid;
        let mut it = items.into_iter().cloned();
        let splits = InstanceSplits {
            train: it.by_ref().take(n_train).collect(),
            test: it.by_ref().take(n_test).collect(),
            valid: it.collect(),
        };
        out.insert(rel, splits);
    }
    Ok(out)
}

/// One step of the class-incremental stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// 1-based position in the sequence.
    pub index: usize,
    pub relations: Vec<RelationId>,
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Optional per-relation caps on training and test instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub max_train_per_relation: Option<usize>,
    pub max_test_per_relation: Option<usize>,
}

/// Builds the task sequence for one run: per-relation instance splits (taken
/// from the dataset when it carries them, otherwise a seeded 3:1:1 split) and
/// a seeded relation partition into `num_tasks` tasks.
pub fn build_tasks(
    dataset: &Dataset,
    num_tasks: usize,
    seed: u64,
    separate_pairs: bool,
    caps: Caps,
) -> Result<Vec<Task>> {
    let relations = dataset.relations();
    let mut splits: BTreeMap<RelationId, InstanceSplits> = if dataset.has_fixed_splits() {
        let mut m: BTreeMap<RelationId, InstanceSplits> = BTreeMap::new();
        for r in &dataset.records {
            let e = m.entry(r.instance.label).or_default();
            match r.split.expect("fixed splits checked") {
                Split::Train => e.train.push(r.instance.clone()),
                Split::Valid => e.valid.push(r.instance.clone()),
                Split::Test => e.test.push(r.instance.clone()),
            }
        }
        m
    } else {
        let all: Vec<Instance> = dataset.records.iter().map(|r| r.instance.clone()).collect();
        split_instances(&all, [3, 1, 1], seed)?
    };
    for s in splits.values_mut() {
        if let Some(cap) = caps.max_train_per_relation {
            s.train.truncate(cap);
        }
        if let Some(cap) = caps.max_test_per_relation {
            s.test.truncate(cap);
        }
    }
    let pairs: Vec<_> = if separate_pairs {
        dataset.analogous_pairs.clone()
    } else {
        Vec::new()
    };
    let groups = split_tasks_separating(&relations, num_tasks, seed, &pairs)?;
    let tasks = groups
        .into_iter()
        .enumerate()
        .map(|(i, rels)| {
            let mut task = Task {
                index: i + 1,
                relations: rels.clone(),
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            };
            for r in &rels {
                let s = &splits[r];
                task.train.extend(s.train.iter().cloned());
                task.valid.extend(s.valid.iter().cloned());
                task.test.extend(s.test.iter().cloned());
            }
            task
        })
        .collect();
    Ok(tasks)
}

/// Parses embedding CSV text. `origin` names the source in error messages.
pub fn parse_embeddings(text: &str, origin: &str) -> Result<Dataset> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "relation_id" || &header[1] != "split" {
        return Err(parse_err(
            1,
            "header must be relation_id,split,f0,f1,... with at least one feature".into(),
        ));
    }
    let feature_dim = header.len() - 2;
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_err(1, format!("expected column f{k}, found {name:?}")));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != feature_dim + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", feature_dim + 2, row.len()),
            ));
        }
        let label: u32 = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("relation_id {:?} is not a non-negative integer", &row[0])))?;
        let split: Split = row[1].trim().parse().map_err(|e| parse_err(line, e))?;
        let mut features = Vec::with_capacity(feature_dim);
        for (k, cell) in row.iter().skip(2).enumerate() {
            let x: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("f{k}: {cell:?} is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(line, format!("f{k}: non-finite value {cell:?}")));
            }
            features.push(x);
        }
        records.push(Record {
            instance: Instance {
                features: Vector::from_vec(features),
                label: RelationId(label),
            },
            split: Some(split),
        });
    }
    Ok(Dataset {
        feature_dim,
        records,
        analogous_pairs: Vec::new(),
    })
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string())
}

/// Serializes a dataset whose records all carry a split.
pub fn write_embeddings<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let to_err = |e: csv::Error| Error::io("<embedding writer>", e.into());
    let mut header = vec!["relation_id".to_string(), "split".to_string()];
    header.extend((0..dataset.feature_dim).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(to_err)?;
    for r in &dataset.records {
        let split = r
            .split
            .ok_or_else(|| Error::invalid("every record needs a split to be written"))?;
        if r.instance.features.dim() != dataset.feature_dim {
            return Err(Error::DimensionMismatch {
                op: "write_embeddings",
                expected: dataset.feature_dim,
                found: r.instance.features.dim(),
            });
        }
        let mut row = vec![r.instance.label.to_string(), split.as_str().to_string()];
        row.extend(r.instance.features.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<embedding writer>", e))?;
    Ok(())
}
