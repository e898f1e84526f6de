//! Experiment configuration: one JSON document fixes a whole run, and
//! every field has a default so an empty object is a valid experiment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::LexiconConfig;
use crate::model::NnConfig;
use crate::strategy::StrategyConfig;
use crate::stream::{CurriculumOrder, Regime, StageOrder, StreamConfig};
use crate::synth::{DEFAULT_COUNTS_PER_TYPE, DEFAULT_NLI_SURFACES_PER_LABEL};

/// Optional third training stage ordered by function-type difficulty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Absent = no curriculum stage.
    pub order: Option<CurriculumOrder>,
    /// Start the stage with a primitive-only warmup block, leaving the
    /// ordered blocks composition-only.
    pub prim_first: bool,
    /// Enter the stage with an empty episodic memory instead of the one
    /// carried over from the previous stage.
    pub reset_memory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub lexicon: LexiconConfig,
    pub counts_per_type: [usize; 9],
    pub nli_surfaces_per_label: usize,
    pub regime: Regime,
    /// Stage order; required exactly when the regime is staged.
    pub order: Option<StageOrder>,
    pub strategy: StrategyConfig,
    pub curriculum: CurriculumConfig,
    /// Held-out type indices (1..=9) to run; default all nine.
    pub folds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub nn: NnConfig,
    pub stream: StreamConfig,
    pub memory_capacity: usize,
    /// Record silhouette scores in snapshots and final evaluations.
    pub compactness: bool,
    /// Supervise the primitive heads on every instance; switching this
    /// off trains composition-only except in primitive-only blocks.
    pub supervise_primitives: bool,
    pub out_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            lexicon: LexiconConfig::default(),
            counts_per_type: DEFAULT_COUNTS_PER_TYPE,
            nli_surfaces_per_label: DEFAULT_NLI_SURFACES_PER_LABEL,
            regime: Regime::CGen,
            order: None,
            strategy: StrategyConfig::default(),
            curriculum: CurriculumConfig::default(),
            folds: (1..=9).collect(),
            seeds: vec![1, 2, 3],
            nn: NnConfig::default(),
            stream: StreamConfig::default(),
            memory_capacity: 100,
            compactness: false,
            supervise_primitives: true,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.lexicon.validate()?;
        self.strategy.validate(self.memory_capacity)?;
        match (self.regime, self.order) {
            (Regime::C2Gen, None) => {
                return Err(Error::Config(
                    "a staged regime requires a stage order".into(),
                ));
            }
            (Regime::CGen, Some(_)) => {
                return Err(Error::Config(
                    "the offline regime takes no stage order".into(),
                ));
            }
            _ => {}
        }
        if self.curriculum.order.is_some() && self.regime != Regime::C2Gen {
            return Err(Error::Config(
                "a curriculum stage requires the staged regime".into(),
            ));
        }
        if self.curriculum.order.is_none()
            && (self.curriculum.prim_first || self.curriculum.reset_memory)
        {
            return Err(Error::Config(
                "curriculum flags are set but no curriculum order is".into(),
            ));
        }
        if self.folds.is_empty() {
            return Err(Error::Config("folds must be nonempty".into()));
        }
        let mut folds = self.folds.clone();
        folds.sort_unstable();
        folds.dedup();
        if folds.len() != self.folds.len() {
            return Err(Error::Config("duplicate fold indices".into()));
        }
        if folds.iter().any(|f| !(1..=9).contains(f)) {
            return Err(Error::Config("fold indices must be in 1..=9".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if self.counts_per_type.iter().any(|&c| c == 0) {
            return Err(Error::Config("every type needs at least one instance".into()));
        }
        if self.nli_surfaces_per_label == 0 {
            return Err(Error::Config("nli_surfaces_per_label must be positive".into()));
        }
        if self.nn.batch == 0 || self.nn.d_emb == 0 || self.nn.hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.nn.lr.is_finite() && self.nn.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.stream.stage_size == 0 || self.stream.epochs == 0 {
            return Err(Error::Config("stage size and epochs must be positive".into()));
        }
        if self.memory_capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    /// The same experiment narrowed to a single (fold, seed) cell.
    pub fn cell(&self, fold: usize, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.folds = vec![fold];
        c.seeds = vec![seed];
        c.out_dir = None;
        c
    }
}
