//! Cell execution and grid orchestration.
//!
//! A cell is one (experiment, fold, seed) triple. Cells are pure given
//! their config: the seed derives sub-seeds per component, so reruns
//! reproduce results bit for bit. The grid runner executes cells in
//! parallel, isolates failures, and aggregates survivors: per metric,
//! fold means are taken per seed, then mean and sample standard
//! deviation across seeds.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::CompType;
use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::memory::EpisodicMemory;
use crate::metrics::{evaluate, forget, per_type_table, probe_accuracy, EvalReport, PerTypeTable};
use crate::model::{Layout, ModelParams, Vocab, HEAD_N, HEAD_V};
use crate::optim::Adam;
use crate::split::{ninefold_split, Split};
use crate::stream::{build_curriculum_stage, build_stream, Stream, Supervision};
use crate::synth::{canonical_probes, generate_dataset, PrimitivePair};
use crate::trainer::{StageSnapshot, TrainLog, Trainer};
use crate::util::{fnv1a64, mix_seed};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Everything a finished cell leaves behind in memory.
pub struct CellData {
    pub report: EvalReport,
    pub log: TrainLog,
    pub params: ModelParams,
    pub vocab: Vocab,
}

/// The full training stream for one cell: the regime stages, the
/// optional trailing curriculum stage (whose index is returned), and
/// the primitive-supervision downgrade when configured.
pub fn build_cell_stream(
    cfg: &ExperimentConfig,
    split: &Split,
    seed: u64,
) -> Result<(Stream, Option<usize>)> {
    let mut stream = build_stream(split, cfg.regime, cfg.order, &cfg.stream, seed)?;
    let curriculum_idx = cfg.curriculum.order.map(|order| {
        stream
            .stages
            .push(build_curriculum_stage(split, order, cfg.curriculum.prim_first, &cfg.stream));
        stream.stages.len() - 1
    });
    if !cfg.supervise_primitives {
        for stage in &mut stream.stages {
            for block in &mut stage.blocks {
                if block.supervision == Supervision::Full {
                    block.supervision = Supervision::CompOnly;
                }
            }
        }
    }
    Ok((stream, curriculum_idx))
}

/// Train and evaluate one (fold, seed) cell.
pub fn execute_cell(cfg: &ExperimentConfig, fold: usize, seed: u64) -> Result<CellData> {
    let fold_type = CompType::from_index(fold)
        .ok_or_else(|| Error::Config(format!("fold index {fold} out of range")))?;
    let (lex, data) = generate_dataset(
        &cfg.lexicon,
        &cfg.counts_per_type,
        cfg.nli_surfaces_per_label,
        seed,
    )?;
    let split = ninefold_split(&data, fold_type)?;
    let vocab = Vocab::from_dataset(&data);
    let (stream, curriculum_idx) = build_cell_stream(cfg, &split, seed)?;

    // Retention probes: the primitives the first stage trains on.
    // Snapshots track this fixed set across stages so forgetting is
    // measured on knowledge the model actually acquired.
    let s1_verbs: BTreeSet<String> = stream.stages[0]
        .instances()
        .map(|i| i.ver.key.clone())
        .collect();
    let s1_pairs: BTreeSet<String> = stream.stages[0]
        .instances()
        .map(|i| i.nli.key.clone())
        .collect();
    let (ver_probes, nli_probes) = canonical_probes(&lex);
    let retain_v: Vec<PrimitivePair> = ver_probes
        .into_iter()
        .filter(|p| s1_verbs.contains(&p.key))
        .collect();
    let retain_n: Vec<PrimitivePair> = nli_probes
        .into_iter()
        .filter(|p| s1_pairs.contains(&p.key))
        .collect();

    let layout = Layout::new(vocab.len(), cfg.nn.d_emb, cfg.nn.hidden);
    let mut params = ModelParams::init(layout, cfg.nn.init_range, seed);
    let mut opt = Adam::new(layout.total);
    let mut memory = EpisodicMemory::new(cfg.memory_capacity, cfg.strategy.kind.memory_policy());
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "train"));

    let lex_for_eval = cfg.compactness.then_some(&lex);
    let mut snapshot = |p: &ModelParams, name: &str| -> Result<StageSnapshot> {
        let r = evaluate(p, &vocab, &split, lex_for_eval)?;
        Ok(StageSnapshot {
            stage: name.to_string(),
            acc_v: r.acc_v,
            acc_n: r.acc_n,
            acc_vn: r.acc_vn,
            acc_ci: r.acc_ci,
            retained_v: Some(probe_accuracy(p, &vocab, &retain_v, HEAD_V)?),
            retained_n: Some(probe_accuracy(p, &vocab, &retain_n, HEAD_N)?),
            compactness: r.compactness,
        })
    };

    let start = Instant::now();
    let mut log = TrainLog::new(seed);
    for (stage_idx, stage) in stream.stages.iter().enumerate() {
        if Some(stage_idx) == curriculum_idx && cfg.curriculum.reset_memory {
            memory = EpisodicMemory::new(cfg.memory_capacity, cfg.strategy.kind.memory_policy());
        }
        let mut trainer = Trainer {
            params: &mut params,
            opt: &mut opt,
            memory: &mut memory,
            strategy: &cfg.strategy,
            nn: &cfg.nn,
            rng: &mut rng,
        };
        trainer.train_stage(stage, stage_idx, &vocab, &mut log, &mut snapshot)?;
    }
    log.wall_ms = start.elapsed().as_millis() as u64;

    let mut report = evaluate(&params, &vocab, &split, lex_for_eval)?;
    if stream.stages.len() > 1 {
        let first = &log.snapshots[0];
        report.forget_v = forget(first.acc_v, report.acc_v);
        report.forget_n = forget(first.acc_n, report.acc_n);
    }
    Ok(CellData {
        report,
        log,
        params,
        vocab,
    })
}

/// Stable directory name for a cell, derived from its narrowed config.
pub fn cell_dir_name(cfg: &ExperimentConfig, fold: usize, seed: u64) -> String {
    let cell = cfg.cell(fold, seed);
    let json = serde_json::to_string(&cell).expect("config serializes");
    format!("cell-{:016x}", fnv1a64(json.as_bytes()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Persist one finished cell under `dir`.
pub fn write_cell(dir: &Path, cfg_cell: &ExperimentConfig, data: &CellData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("config.json"), cfg_cell)?;
    write_json(&dir.join("trainlog.json"), &data.log)?;
    write_json(&dir.join("eval.json"), &data.report)?;
    let config_json = serde_json::to_string(cfg_cell).expect("config serializes");
    checkpoint::save(
        &dir.join("checkpoint.bin"),
        &data.params,
        data.log.seed,
        data.log.steps,
        &config_json,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRecord {
    pub fold: usize,
    pub seed: u64,
    /// Directory name under the output root.
    pub dir: String,
    pub ok: bool,
    pub error: Option<String>,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (n - 1); a single value has
/// deviation zero.
pub fn mean_std(values: &[f64]) -> MeanStd {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateReport {
    pub acc_v: MeanStd,
    pub acc_n: MeanStd,
    pub acc_vn: MeanStd,
    pub acc_ci: MeanStd,
    pub forget_v: Option<MeanStd>,
    pub forget_n: Option<MeanStd>,
    pub n_cells: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsReport {
    pub cells: Vec<CellRecord>,
    /// Absent when every cell failed.
    pub aggregate: Option<AggregateReport>,
    /// Present when all nine folds ran and succeeded.
    pub per_type: Option<PerTypeTable>,
}

/// Per-seed fold means of one metric, then mean/std across seeds.
fn aggregate_metric(
    cells: &[CellRecord],
    seeds: &[u64],
    metric: impl Fn(&EvalReport) -> Option<f64>,
) -> Option<MeanStd> {
    let mut seed_means = Vec::new();
    for &seed in seeds {
        let vals: Vec<f64> = cells
            .iter()
            .filter(|c| c.seed == seed)
            .filter_map(|c| c.eval.as_ref())
            .filter_map(&metric)
            .collect();
        if !vals.is_empty() {
            seed_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    if seed_means.is_empty() {
        None
    } else {
        Some(mean_std(&seed_means))
    }
}

/// Build the results tree for a set of finished cells. `cfg` supplies
/// the seed and fold lists the aggregation runs over.
pub fn aggregate(cfg: &ExperimentConfig, cells: &[CellRecord]) -> ResultsReport {
    let n_failed = cells.iter().filter(|c| !c.ok).count();
    let aggregate = if n_failed == cells.len() {
        None
    } else {
        Some(AggregateReport {
            acc_v: aggregate_metric(cells, &cfg.seeds, |e| Some(e.acc_v)).unwrap(),
            acc_n: aggregate_metric(cells, &cfg.seeds, |e| Some(e.acc_n)).unwrap(),
            acc_vn: aggregate_metric(cells, &cfg.seeds, |e| Some(e.acc_vn)).unwrap(),
            acc_ci: aggregate_metric(cells, &cfg.seeds, |e| Some(e.acc_ci)).unwrap(),
            forget_v: aggregate_metric(cells, &cfg.seeds, |e| e.forget_v),
            forget_n: aggregate_metric(cells, &cfg.seeds, |e| e.forget_n),
            n_cells: cells.len(),
            n_failed,
        })
    };
    let per_type = if n_failed == 0 && {
        let mut f = cfg.folds.clone();
        f.sort_unstable();
        f == (1..=9).collect::<Vec<_>>()
    } {
        let entries: Vec<(usize, f64, usize)> = cfg
            .folds
            .iter()
            .map(|&fold| {
                let evals: Vec<&EvalReport> = cells
                    .iter()
                    .filter(|c| c.fold == fold)
                    .filter_map(|c| c.eval.as_ref())
                    .collect();
                let acc = evals.iter().map(|e| e.acc_ci).sum::<f64>() / evals.len() as f64;
                (fold, acc, evals[0].n_test)
            })
            .collect();
        per_type_table(&entries).ok()
    } else {
        None
    };
    ResultsReport {
        cells: cells.to_vec(),
        aggregate,
        per_type,
    }
}

/// Run the whole grid into `out_root`, `jobs` cells at a time (0 =
/// rayon's default). Every cell writes its own directory; failures are
/// recorded and do not stop the grid.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_root: &Path,
    jobs: usize,
) -> Result<ResultsReport> {
    cfg.validate()?;
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let pairs: Vec<(usize, u64)> = cfg
        .folds
        .iter()
        .flat_map(|&f| cfg.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells: Vec<CellRecord> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(fold, seed)| {
                let dir_name = cell_dir_name(cfg, fold, seed);
                let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<EvalReport> {
                    let data = execute_cell(cfg, fold, seed)?;
                    write_cell(&out_root.join(&dir_name), &cfg.cell(fold, seed), &data)?;
                    Ok(data.report)
                }));
                let (ok, error, eval) = match outcome {
                    Ok(Ok(report)) => (true, None, Some(report)),
                    Ok(Err(e)) => (false, Some(e.to_string()), None),
                    Err(panic) => {
                        let msg = panic
                            .downcast_ref::<String>()
                            .map(String::as_str)
                            .or_else(|| panic.downcast_ref::<&str>().copied())
                            .unwrap_or("panic");
                        (false, Some(format!("panicked: {msg}")), None)
                    }
                };
                CellRecord {
                    fold,
                    seed,
                    dir: dir_name,
                    ok,
                    error,
                    eval,
                }
            })
            .collect()
    });
    let report = aggregate(cfg, &cells);
    write_json(&out_root.join("aggregate.json"), &report)?;
    Ok(report)
}

/// Output directory precedence: the environment override beats the CLI
/// flag, which beats the config file, which beats `out`.
pub fn resolve_out_dir(
    env_value: Option<&str>,
    cli_value: Option<&str>,
    config_value: Option<&str>,
) -> PathBuf {
    PathBuf::from(
        env_value
            .filter(|s| !s.is_empty())
            .or(cli_value)
            .or(config_value)
            .unwrap_or("out"),
    )
}
