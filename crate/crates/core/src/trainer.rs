//! The staged trainer: epochs of shuffled batches per block, strategy
//! hooks around each optimizer step, and an evaluation snapshot at every
//! stage boundary.
//!
//! Strategies only act from the second stage onward; during the first
//! stage there is nothing to protect, so every run starts as vanilla
//! multi-task training (memory insertion still runs so the reservoir
//! spans the full stream). Blocks inside a stage are hard boundaries:
//! all epochs of a block finish before the next block starts.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::memory::EpisodicMemory;
use crate::metrics::Compactness;
use crate::model::{
    accumulate_ce, accumulate_kd, batch_grad, instance_logits, prepare, ModelParams, NnConfig,
    Prepared, Vocab,
};
use crate::optim::Adam;
use crate::strategy::{agem_project, select_mir, AgemOutcome, StrategyConfig, StrategyKind};
use crate::stream::{Stage, Stream, Supervision};
use crate::util::fnv1a64;

/// Accuracy snapshot taken when a stage finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSnapshot {
    pub stage: String,
    pub acc_v: f64,
    pub acc_n: f64,
    pub acc_vn: f64,
    pub acc_ci: f64,
    /// Canonical-probe accuracy over the verbs the first stage trained
    /// on. Retention of exactly this set across later stages is what
    /// forgetting means; test-set accuracy conflates it with transfer.
    pub retained_v: Option<f64>,
    /// Same, over the first stage's concept pairs.
    pub retained_n: Option<f64>,
    pub compactness: Option<Compactness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainLog {
    pub seed: u64,
    /// Total loss per optimizer step, in step order across all stages.
    pub losses: Vec<f64>,
    pub snapshots: Vec<StageSnapshot>,
    /// Per-stage hash over the source indices consumed, in order; equal
    /// digests mean a stage saw exactly the same instance sequence.
    pub stage_digests: Vec<String>,
    pub agem_degenerate_events: usize,
    pub steps: u64,
    pub wall_ms: u64,
}

impl TrainLog {
    pub fn new(seed: u64) -> TrainLog {
        TrainLog {
            seed,
            losses: Vec::new(),
            snapshots: Vec::new(),
            stage_digests: Vec::new(),
            agem_degenerate_events: 0,
            steps: 0,
            wall_ms: 0,
        }
    }

    pub fn snapshot_for(&self, stage: &str) -> Option<&StageSnapshot> {
        self.snapshots.iter().find(|s| s.stage == stage)
    }
}

/// Everything a training run owns exclusively.
pub struct Trainer<'a> {
    pub params: &'a mut ModelParams,
    pub opt: &'a mut Adam,
    pub memory: &'a mut EpisodicMemory,
    pub strategy: &'a StrategyConfig,
    pub nn: &'a NnConfig,
    pub rng: &'a mut ChaCha20Rng,
}

fn ce_scale(sum_reduction: bool, denom: usize) -> f64 {
    if sum_reduction {
        1.0
    } else {
        1.0 / denom.max(1) as f64
    }
}

impl Trainer<'_> {
    /// One optimizer step over the current batch plus whatever the
    /// active strategy contributes. Returns the step's total loss.
    fn step(
        &mut self,
        batch: &[&Prepared],
        supervision: Supervision,
        active: bool,
        log: &mut TrainLog,
    ) -> f64 {
        let n = self.params.layout.total;
        let mut grad = vec![0.0; n];
        let kind = if active { self.strategy.kind } else { StrategyKind::None };
        let loss = match kind {
            StrategyKind::None => {
                batch_grad(self.params, batch, supervision, self.nn.sum_reduction, &mut grad).total
            }
            StrategyKind::ErRes | StrategyKind::ErBuff | StrategyKind::ErMir => {
                let replay = if kind == StrategyKind::ErMir {
                    select_mir(self.params, batch, self.memory, self.strategy, self.nn, self.rng)
                } else {
                    self.memory.sample_indices(self.strategy.replay_batch, self.rng)
                };
                // Replayed items join the batch; one shared reduction.
                let scale = ce_scale(self.nn.sum_reduction, batch.len() + replay.len());
                let mut total = 0.0;
                for prep in batch {
                    total += accumulate_ce(self.params, prep, supervision, scale, Some(&mut grad))
                        .total;
                }
                for &i in &replay {
                    let prep = &self.memory.items()[i].prep;
                    total += accumulate_ce(self.params, prep, Supervision::Full, scale, Some(&mut grad))
                        .total;
                }
                total
            }
            StrategyKind::Agem => {
                let loss =
                    batch_grad(self.params, batch, supervision, self.nn.sum_reduction, &mut grad)
                        .total;
                let ref_idx = self.memory.sample_indices(self.strategy.replay_batch, self.rng);
                let refs: Vec<&Prepared> =
                    ref_idx.iter().map(|&i| &self.memory.items()[i].prep).collect();
                let mut g_ref = vec![0.0; n];
                batch_grad(self.params, &refs, Supervision::Full, self.nn.sum_reduction, &mut g_ref);
                if agem_project(&mut grad, &g_ref) == AgemOutcome::DegenerateRef {
                    log.agem_degenerate_events += 1;
                }
                loss
            }
            StrategyKind::Kd => {
                let mut total =
                    batch_grad(self.params, batch, supervision, self.nn.sum_reduction, &mut grad)
                        .total;
                let kd_idx = self
                    .memory
                    .sample_with_teachers(self.strategy.replay_batch, self.rng);
                if !kd_idx.is_empty() {
                    let scale = self.strategy.kd_weight
                        * ce_scale(self.nn.sum_reduction, kd_idx.len());
                    for &i in &kd_idx {
                        let item = &self.memory.items()[i];
                        let teacher = item.teacher.as_ref().expect("sampled with teacher");
                        total += accumulate_kd(
                            self.params,
                            &item.prep,
                            teacher,
                            self.strategy.kd_temperature,
                            scale,
                            Some(&mut grad),
                        );
                    }
                }
                total
            }
        };
        self.opt.step(&mut self.params.theta, &grad, self.nn.lr);
        log.steps += 1;
        log.losses.push(loss);
        loss
    }

    /// Train one stage and record its boundary snapshot.
    pub fn train_stage(
        &mut self,
        stage: &Stage,
        stage_idx: usize,
        vocab: &Vocab,
        log: &mut TrainLog,
        snapshot: &mut dyn FnMut(&ModelParams, &str) -> Result<StageSnapshot>,
    ) -> Result<()> {
        assert!(!stage.is_empty(), "stage {} is empty", stage.name);
        let uses_memory = self.strategy.kind.uses_memory();
        if uses_memory {
            self.memory.begin_stage(stage_idx, self.rng);
            if self.strategy.kind == StrategyKind::Kd && stage_idx >= 1 {
                // Boundary teachers: the end-of-previous-stage snapshot
                // is exactly the current parameters at stage entry.
                let params = &*self.params;
                self.memory.stamp_teachers(|prep| instance_logits(params, prep));
            }
        }
        let active = stage_idx >= 1;

        let mut digest = fnv1a64(b"stage");
        let mut src_base = 0usize;
        for block in &stage.blocks {
            let preps: Vec<Prepared> = block
                .instances
                .iter()
                .enumerate()
                .map(|(i, inst)| prepare(vocab, inst, src_base + i))
                .collect::<Result<_>>()?;
            let mut order: Vec<usize> = (0..preps.len()).collect();
            for _ in 0..stage.epochs {
                if stage.shuffle_within {
                    order.shuffle(self.rng);
                }
                for chunk in order.chunks(self.nn.batch) {
                    let batch: Vec<&Prepared> = chunk.iter().map(|&i| &preps[i]).collect();
                    self.step(&batch, block.supervision, active, log);
                    for &i in chunk {
                        digest = fnv_prep(digest, &preps[i]);
                        if uses_memory {
                            self.memory.insert(preps[i].clone(), self.rng);
                        }
                    }
                }
            }
            src_base += preps.len();
        }
        log.stage_digests.push(format!("{digest:016x}"));
        log.snapshots.push(snapshot(self.params, &stage.name)?);
        Ok(())
    }

    /// Train every stage of a stream in order.
    pub fn train_stream(
        &mut self,
        stream: &Stream,
        vocab: &Vocab,
        seed: u64,
        snapshot: &mut dyn FnMut(&ModelParams, &str) -> Result<StageSnapshot>,
    ) -> Result<TrainLog> {
        let start = Instant::now();
        let mut log = TrainLog::new(seed);
        for (stage_idx, stage) in stream.stages.iter().enumerate() {
            self.train_stage(stage, stage_idx, vocab, &mut log, snapshot)?;
        }
        log.wall_ms = start.elapsed().as_millis() as u64;
        Ok(log)
    }
}

/// Fold one value into a running FNV-1a digest.
fn fnv_extend(digest: u64, value: u64) -> u64 {
    let mut h = digest;
    for b in value.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Fold one consumed instance (token ids and golds) into the digest, so
/// equal digests certify the same instance sequence by content.
fn fnv_prep(digest: u64, prep: &Prepared) -> u64 {
    let mut h = digest;
    for head in 0..3 {
        for &id in &prep.ids[head] {
            h = fnv_extend(h, id as u64);
        }
        h = fnv_extend(h, prep.golds[head].code() as u64);
    }
    h
}
