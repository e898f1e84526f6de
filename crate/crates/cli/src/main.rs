//! `c2gen` command line: dataset and stream emission, single-cell
//! training, full grid runs, report emission over finished cells, and
//! built-in consistency checks.
//!
//! Exit codes: 0 = everything succeeded, 2 = one or more cells failed
//! (the report still exists), 1 = configuration or I/O error.

mod selfcheck;

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use c2gen_core::algebra::CompType;
use c2gen_core::config::ExperimentConfig;
use c2gen_core::io::{write_jsonl, write_stream};
use c2gen_core::metrics::EvalReport;
use c2gen_core::report::{emit, write_report, ReportFormat};
use c2gen_core::runner::{
    aggregate, build_cell_stream, cell_dir_name, execute_cell, resolve_out_dir, run_experiment,
    write_cell, CellRecord, ResultsReport,
};
use c2gen_core::split::ninefold_split;
use c2gen_core::synth::generate_dataset;

#[derive(Parser)]
#[command(name = "c2gen", version, about = "Continual compositional generalization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. C2GEN_OUT overrides this; the config supplies
    /// a fallback.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> ReportFormat {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Md => ReportFormat::Md,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthesized dataset and per-fold training streams.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train and evaluate one (fold, seed) cell.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Held-out type index (1..=9); defaults to the config's first fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Run every (fold, seed) cell of the config and aggregate.
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        /// Cells to run in parallel (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Format echoed to stdout; json, csv, and md files are always
        /// written next to the cells.
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
    /// Re-aggregate finished cell directories into a report.
    Report {
        /// Directory holding cell-*/ outputs or an aggregate.json.
        #[arg(long)]
        out: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
    /// Run the built-in oracle and statistical consistency checks.
    Selfcheck,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn out_dir(cli_out: Option<&str>, cfg_out: Option<&str>) -> PathBuf {
    let env_out = env::var("C2GEN_OUT").ok();
    resolve_out_dir(env_out.as_deref(), cli_out, cfg_out)
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(common: &CommonArgs) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let out = out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
    for &seed in &cfg.seeds {
        let (lex, data) = generate_dataset(
            &cfg.lexicon,
            &cfg.counts_per_type,
            cfg.nli_surfaces_per_label,
            seed,
        )?;
        let sdir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&sdir).with_context(|| format!("creating {}", sdir.display()))?;
        write_pretty(&sdir.join("lexicon.json"), &lex)?;
        write_jsonl(&sdir.join("dataset.jsonl"), &data)?;
        for &fold in &cfg.folds {
            let ftype = CompType::from_index(fold).expect("validated fold index");
            let split = ninefold_split(&data, ftype)?;
            let (stream, _) = build_cell_stream(&cfg, &split, seed)?;
            let fdir = sdir.join(format!("fold-{fold}"));
            fs::create_dir_all(&fdir).with_context(|| format!("creating {}", fdir.display()))?;
            write_stream(&fdir, &stream)?;
            write_jsonl(&fdir.join("test.jsonl"), &split.test)?;
        }
        println!(
            "seed {seed}: {} instances, {} fold streams -> {}",
            data.len(),
            cfg.folds.len(),
            sdir.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(common: &CommonArgs, fold: Option<usize>) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let fold = fold.unwrap_or(cfg.folds[0]);
    if !(1..=9).contains(&fold) {
        bail!("fold index {fold} out of range (1..=9)");
    }
    let seed = cfg.seeds[0];
    let out = out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
    let dir = out.join(cell_dir_name(&cfg, fold, seed));
    match execute_cell(&cfg, fold, seed) {
        Ok(data) => {
            write_cell(&dir, &cfg.cell(fold, seed), &data)?;
            println!("{}", serde_json::to_string_pretty(&data.report)?);
            eprintln!("cell written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("cell fold {fold} seed {seed} failed: {e}");
            Ok(ExitCode::from(2))
        }
    }
}

fn cmd_grid(common: &CommonArgs, jobs: usize, format: Format) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let out = out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
    let report = run_experiment(&cfg, &out, jobs)?;
    for f in ReportFormat::all() {
        write_report(&out, &report, f)?;
    }
    print!("{}", emit(&report, format.into()));
    let failed = report.cells.iter().filter(|c| !c.ok).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.cells.len());
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

/// Rebuild a results tree from cell directories on disk. Falls back to
/// scanning when no aggregate.json is present (for example after a
/// partial or interrupted grid).
fn load_or_scan(dir: &Path) -> Result<ResultsReport> {
    let agg = dir.join("aggregate.json");
    if agg.exists() {
        let text = fs::read_to_string(&agg)?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", agg.display()));
    }
    let mut records: Vec<CellRecord> = Vec::new();
    let mut cell_cfgs: Vec<ExperimentConfig> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with("cell-") || !entry.path().is_dir() {
            continue;
        }
        let cfg_text = fs::read_to_string(entry.path().join("config.json"))
            .with_context(|| format!("cell {name} lacks config.json"))?;
        let cell_cfg: ExperimentConfig = serde_json::from_str(&cfg_text)?;
        let (fold, seed) = (cell_cfg.folds[0], cell_cfg.seeds[0]);
        let eval: Option<EvalReport> = fs::read_to_string(entry.path().join("eval.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        records.push(CellRecord {
            fold,
            seed,
            dir: name,
            ok: eval.is_some(),
            error: eval.is_none().then(|| "missing or unreadable eval.json".into()),
            eval,
        });
        cell_cfgs.push(cell_cfg);
    }
    if records.is_empty() {
        bail!("no aggregate.json and no cell directories under {}", dir.display());
    }
    records.sort_by_key(|r| (r.fold, r.seed));
    let mut grid_cfg = cell_cfgs[0].clone();
    grid_cfg.folds = records.iter().map(|r| r.fold).collect();
    grid_cfg.folds.sort_unstable();
    grid_cfg.folds.dedup();
    grid_cfg.seeds = records.iter().map(|r| r.seed).collect();
    grid_cfg.seeds.sort_unstable();
    grid_cfg.seeds.dedup();
    Ok(aggregate(&grid_cfg, &records))
}

fn cmd_report(out: Option<&str>, format: Format) -> Result<ExitCode> {
    let dir = out_dir(out, None);
    let report = load_or_scan(&dir)?;
    write_report(&dir, &report, format.into())?;
    print!("{}", emit(&report, format.into()));
    let failed = report.cells.iter().filter(|c| !c.ok).count();
    if failed > 0 {
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate { common } => cmd_generate(&common),
        Command::Train { common, fold } => cmd_train(&common, fold),
        Command::Grid {
            common,
            jobs,
            format,
        } => cmd_grid(&common, jobs, format),
        Command::Report { out, format } => cmd_report(out.as_deref(), format),
        Command::Selfcheck => Ok(selfcheck::run()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
