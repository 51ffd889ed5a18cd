//! Multi-seed runs, the four-way ablation and the `alpha_prev` sweep.
//!
//! Seeds (and variants, and sweep points) run on a rayon pool. Each job owns
//! its model and RNG streams, and results are collected in job order, so the
//! outputs do not depend on scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use decomp_core::datastream::Dataset;
use decomp_core::training::{run_sequence, MeanStd, RunMetrics, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const SWEEP_CSV: &str = "sweep.csv";

const ACCURACY_SCHEMA: &str = "# decomp accuracy v1";
const ABLATION_SCHEMA: &str = "# decomp ablation v1";
const SWEEP_SCHEMA: &str = "# decomp sweep v1";

/// Runs one sequence per seed in parallel; results are in `seeds` order.
pub fn run_seeds(dataset: &Dataset, base: &TrainConfig, seeds: &[u64]) -> Result<Vec<RunMetrics>, CliError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..base.clone() };
            run_sequence(dataset, &cfg).map_err(CliError::from)
        })
        .collect()
}

fn final_accuracy(run: &RunMetrics) -> f64 {
    run.final_accuracy().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub task_index: usize,
    pub accuracy: MeanStd,
    pub prev_f1_mean: Option<MeanStd>,
    pub prev_prob_mass: Option<MeanStd>,
    pub pair_silhouette: Option<MeanStd>,
}

/// Per-task mean and sample standard deviation across runs. Optional
/// diagnostics are averaged over the runs that report them.
pub fn summarize(runs: &[RunMetrics]) -> Vec<TaskSummary> {
    let len = runs.iter().map(|r| r.tasks.len()).min().unwrap_or(0);
    (0..len)
        .map(|t| {
            let pick = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Option<MeanStd> {
                let xs: Vec<f64> = runs.iter().filter_map(f).collect();
                MeanStd::of(&xs)
            };
            TaskSummary {
                task_index: runs[0].tasks[t].task_index,
                accuracy: pick(&|r| Some(r.tasks[t].accuracy)).expect("at least one run"),
                prev_f1_mean: pick(&|r| r.tasks[t].prev_f1_mean),
                prev_prob_mass: pick(&|r| r.tasks[t].prev_prob_mass),
                pair_silhouette: pick(&|r| r.tasks[t].pair_silhouette()),
            }
        })
        .collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes a CSV whose first line is a schema comment.
fn write_csv(path: &Path, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    writeln!(buf, "{schema}").expect("write to memory");
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(header).map_err(|e| CliError::Runtime(e.to_string()))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    write_file(path, &buf)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<TaskSummary>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    /// Mean accuracy (%) on all seen relations after each task.
    pub fn table_row(&self) -> String {
        let cells: Vec<String> = self
            .summary
            .iter()
            .map(|t| format!("{:.1}", t.accuracy.mean * 100.0))
            .collect();
        format!("accuracy (%), mean of {} seeds: {}", self.runs.len(), cells.join(" "))
    }
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    format: &'static str,
    version: u32,
    config: &'a ExperimentConfig,
    final_accuracy: Option<MeanStd>,
    tasks: &'a [TaskSummary],
}

/// `run`: one sequence per seed; writes `accuracy.csv` and `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let dataset = cfg.dataset()?;
    let runs = run_seeds(&dataset, &cfg.train_config(0), &cfg.seeds)?;
    let summary = summarize(&runs);

    create_out_dir(&cfg.out_dir)?;
    let rows: Vec<Vec<String>> = runs
        .iter()
        .flat_map(|r| {
            r.tasks.iter().map(move |t| {
                vec![
                    r.seed.to_string(),
                    t.task_index.to_string(),
                    t.accuracy.to_string(),
                    fmt_opt(t.prev_f1_mean),
                    fmt_opt(t.prev_prob_mass),
                    fmt_opt(t.pair_silhouette()),
                ]
            })
        })
        .collect();
    let csv_path = cfg.out_dir.join(ACCURACY_CSV);
    write_csv(
        &csv_path,
        ACCURACY_SCHEMA,
        &["seed", "task_index", "accuracy", "prev_f1_mean", "prev_prob_mass", "pair_silhouette"],
        &rows,
    )?;

    let finals: Vec<f64> = runs.iter().map(final_accuracy).collect();
    let json_path = cfg.out_dir.join(SUMMARY_JSON);
    write_json(
        &json_path,
        &SummaryDoc {
            format: "decomp-summary",
            version: 1,
            config: cfg,
            final_accuracy: MeanStd::of(&finals),
            tasks: &summary,
        },
    )?;

    Ok(RunReport {
        runs,
        summary,
        files: vec![csv_path, json_path],
    })
}

/// The four strategy combinations of the ablation, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Full,
    NoEmpiricalInit,
    NoAdversarialTuning,
    NoBoth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoEmpiricalInit,
        Variant::NoAdversarialTuning,
        Variant::NoBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEmpiricalInit => "no_ei",
            Variant::NoAdversarialTuning => "no_at",
            Variant::NoBoth => "no_both",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Full => (true, true),
            Variant::NoEmpiricalInit => (false, true),
            Variant::NoAdversarialTuning => (true, false),
            Variant::NoBoth => (false, false),
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let (ei, at) = self.flags();
        TrainConfig {
            use_empirical_init: ei,
            use_adversarial_tuning: at,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub name: &'static str,
    /// Final-task accuracy per seed, in config seed order.
    pub final_accuracy: Vec<f64>,
    pub summary: MeanStd,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
    /// Per-seed full − w/o-both, mean and sample std.
    pub delta_full_vs_none: MeanStd,
    pub runs: Vec<(Variant, Vec<RunMetrics>)>,
    pub files: Vec<PathBuf>,
}

impl AblationReport {
    pub fn variant(&self, v: Variant) -> &VariantResult {
        self.variants.iter().find(|r| r.variant == v).expect("all variants present")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for r in &self.variants {
            out += &format!(
                "{:<8} {:6.2} ± {:.2}\n",
                r.name,
                r.summary.mean * 100.0,
                r.summary.std * 100.0
            );
        }
        out += &format!(
            "full - no_both: {:+.2} ± {:.2} points\n",
            self.delta_full_vs_none.mean * 100.0,
            self.delta_full_vs_none.std * 100.0
        );
        out
    }
}

#[derive(Serialize)]
struct AblationDoc<'a> {
    format: &'static str,
    version: u32,
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    variants: &'a [VariantResult],
    delta_full_vs_no_both: MeanStd,
}

/// `ablation`: all four flag combinations on the same seeds and data.
pub fn cmd_ablation(cfg: &ExperimentConfig) -> Result<AblationReport, CliError> {
    let dataset = cfg.dataset()?;
    let base = cfg.train_config(0);
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<RunMetrics> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let tc = TrainConfig { seed, ..v.apply(&base) };
            run_sequence(&dataset, &tc).map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;

    let n = cfg.seeds.len();
    let runs: Vec<(Variant, Vec<RunMetrics>)> = Variant::ALL
        .iter()
        .zip(results.chunks(n))
        .map(|(&v, chunk)| (v, chunk.to_vec()))
        .collect();
    let variants: Vec<VariantResult> = runs
        .iter()
        .map(|(v, rs)| {
            let finals: Vec<f64> = rs.iter().map(final_accuracy).collect();
            VariantResult {
                variant: *v,
                name: v.name(),
                summary: MeanStd::of(&finals).expect("at least one seed"),
                final_accuracy: finals,
            }
        })
        .collect();
    let full = &variants[0].final_accuracy;
    let none = &variants[3].final_accuracy;
    let deltas: Vec<f64> = full.iter().zip(none).map(|(a, b)| a - b).collect();
    let delta = MeanStd::of(&deltas).expect("at least one seed");

    create_out_dir(&cfg.out_dir)?;
    let mut header: Vec<String> = vec!["variant".into(), "use_empirical_init".into(), "use_adversarial_tuning".into()];
    header.extend(cfg.seeds.iter().map(|s| format!("seed_{s}")));
    header.extend(["mean".to_string(), "std".to_string()]);
    let rows: Vec<Vec<String>> = variants
        .iter()
        .map(|r| {
            let (ei, at) = r.variant.flags();
            let mut row = vec![r.name.to_string(), ei.to_string(), at.to_string()];
            row.extend(r.final_accuracy.iter().map(|x| x.to_string()));
            row.extend([r.summary.mean.to_string(), r.summary.std.to_string()]);
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv_path = cfg.out_dir.join(ABLATION_CSV);
    write_csv(&csv_path, ABLATION_SCHEMA, &header_refs, &rows)?;
    let json_path = cfg.out_dir.join(ABLATION_JSON);
    write_json(
        &json_path,
        &AblationDoc {
            format: "decomp-ablation",
            version: 1,
            config: cfg,
            seeds: &cfg.seeds,
            variants: &variants,
            delta_full_vs_no_both: delta,
        },
    )?;

    Ok(AblationReport {
        seeds: cfg.seeds.clone(),
        variants,
        delta_full_vs_none: delta,
        runs,
        files: vec![csv_path, json_path],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha_prev: f64,
    pub final_accuracy: Vec<f64>,
    pub summary: MeanStd,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub files: Vec<PathBuf>,
}

impl SweepReport {
    pub fn table(&self) -> String {
        self.points
            .iter()
            .map(|p| format!("alpha_prev={:<8} {:6.2} ± {:.2}\n", p.alpha_prev, p.summary.mean * 100.0, p.summary.std * 100.0))
            .collect()
    }
}

/// `sweep`: one multi-seed run per `alpha_prev` value. A value of 0 runs
/// with the stage-1 freeze check armed (a moved previous column is an error).
pub fn cmd_sweep(cfg: &ExperimentConfig, values: &[f64]) -> Result<SweepReport, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(CliError::Config(format!("sweep value {v} must be finite and >= 0")));
    }
    let dataset = cfg.dataset()?;
    let base = cfg.train_config(0);
    let jobs: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<RunMetrics> = jobs
        .par_iter()
        .map(|&(alpha_prev, seed)| {
            let tc = TrainConfig {
                seed,
                alpha_prev,
                ..base.clone()
            };
            run_sequence(&dataset, &tc).map_err(CliError::from)
        })
        .collect::<Result<_, _>>()?;

    let points: Vec<SweepPoint> = values
        .iter()
        .zip(results.chunks(cfg.seeds.len()))
        .map(|(&alpha_prev, rs)| {
            let finals: Vec<f64> = rs.iter().map(final_accuracy).collect();
            SweepPoint {
                alpha_prev,
                summary: MeanStd::of(&finals).expect("at least one seed"),
                final_accuracy: finals,
            }
        })
        .collect();

    create_out_dir(&cfg.out_dir)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.alpha_prev.to_string(),
                p.summary.mean.to_string(),
                p.summary.std.to_string(),
            ]
        })
        .collect();
    let csv_path = cfg.out_dir.join(SWEEP_CSV);
    write_csv(
        &csv_path,
        SWEEP_SCHEMA,
        &["alpha_prev", "mean_final_accuracy", "std_final_accuracy"],
        &rows,
    )?;
    Ok(SweepReport {
        points,
        files: vec![csv_path],
    })
}
