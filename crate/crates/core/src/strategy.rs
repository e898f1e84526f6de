//! Forgetting-mitigation strategies layered on the trainer.
//!
//! Five strategies share one episodic memory: three experience-replay
//! variants differing in what they keep or retrieve (reservoir, balanced
//! buffer, interference-based retrieval), gradient projection, and logit
//! distillation against end-of-stage teachers.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{EpisodicMemory, MemoryPolicy};
use crate::model::{batch_grad, batch_loss, ModelParams, NnConfig, Prepared};
use crate::stream::Supervision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    None,
    ErRes,
    ErBuff,
    ErMir,
    Agem,
    Kd,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::ErRes => "er_res",
            StrategyKind::ErBuff => "er_buff",
            StrategyKind::ErMir => "er_mir",
            StrategyKind::Agem => "agem",
            StrategyKind::Kd => "kd",
        }
    }

    pub fn all() -> [StrategyKind; 6] {
        [
            StrategyKind::None,
            StrategyKind::ErRes,
            StrategyKind::ErBuff,
            StrategyKind::ErMir,
            StrategyKind::Agem,
            StrategyKind::Kd,
        ]
    }

    /// Only the balanced-buffer strategy departs from reservoir upkeep.
    pub fn memory_policy(self) -> MemoryPolicy {
        match self {
            StrategyKind::ErBuff => MemoryPolicy::Buff,
            _ => MemoryPolicy::Res,
        }
    }

    pub fn uses_memory(self) -> bool {
        self != StrategyKind::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Items retrieved from memory per training step.
    pub replay_batch: usize,
    /// Candidate pool size for interference scoring.
    pub mir_candidates: usize,
    pub kd_temperature: f64,
    pub kd_weight: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::None,
            replay_batch: 8,
            mir_candidates: 50,
            kd_temperature: 2.0,
            kd_weight: 1.0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self, memory_capacity: usize) -> Result<()> {
        if self.replay_batch == 0 {
            return Err(Error::Config("replay_batch must be positive".into()));
        }
        if self.replay_batch > memory_capacity {
            return Err(Error::Config(format!(
                "replay_batch {} exceeds memory capacity {}",
                self.replay_batch, memory_capacity
            )));
        }
        if self.kind == StrategyKind::ErMir {
            if self.mir_candidates < self.replay_batch {
                return Err(Error::Config(format!(
                    "mir_candidates {} below replay_batch {}",
                    self.mir_candidates, self.replay_batch
                )));
            }
            if self.mir_candidates > memory_capacity {
                return Err(Error::Config(format!(
                    "mir_candidates {} exceeds memory capacity {}",
                    self.mir_candidates, memory_capacity
                )));
            }
        }
        if self.kind == StrategyKind::Kd {
            if self.kd_temperature <= 0.0 {
                return Err(Error::Config("kd_temperature must be positive".into()));
            }
            if self.kd_weight < 0.0 {
                return Err(Error::Config("kd_weight must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgemOutcome {
    /// Reference agreed with the incoming gradient; nothing changed.
    Kept,
    /// Conflicting component removed.
    Projected,
    /// Reference gradient was numerically zero under a conflict; the
    /// incoming gradient passes through and the event is reported.
    DegenerateRef,
}

/// Project `g` to remove any component conflicting with the memory
/// reference gradient: if `<g, g_ref> < 0`, subtract
/// `(<g, g_ref> / <g_ref, g_ref>) * g_ref`.
pub fn agem_project(g: &mut [f64], g_ref: &[f64]) -> AgemOutcome {
    assert_eq!(g.len(), g_ref.len());
    let dot: f64 = g.iter().zip(g_ref).map(|(a, b)| a * b).sum();
    if dot >= 0.0 {
        return AgemOutcome::Kept;
    }
    let ref_sq: f64 = g_ref.iter().map(|b| b * b).sum();
    if ref_sq < 1e-12 {
        return AgemOutcome::DegenerateRef;
    }
    let coef = dot / ref_sq;
    for (gi, ri) in g.iter_mut().zip(g_ref) {
        *gi -= coef * ri;
    }
    AgemOutcome::Projected
}

/// Interference score of each candidate memory index: the loss increase
/// it would suffer under one virtual SGD step on the incoming batch,
/// `L(theta - lr * grad(incoming), c) - L(theta, c)`.
pub fn mir_scores(
    params: &ModelParams,
    incoming: &[&Prepared],
    memory: &EpisodicMemory,
    candidates: &[usize],
    nn: &NnConfig,
) -> Vec<(usize, f64)> {
    let mut grad = vec![0.0; params.layout.total];
    batch_grad(params, incoming, Supervision::Full, nn.sum_reduction, &mut grad);
    let mut virtual_params = params.clone();
    for (t, g) in virtual_params.theta.iter_mut().zip(&grad) {
        *t -= nn.lr * g;
    }
    candidates
        .iter()
        .map(|&i| {
            let prep = &memory.items()[i].prep;
            let before = batch_loss(params, &[prep], Supervision::Full, true).total;
            let after = batch_loss(&virtual_params, &[prep], Supervision::Full, true).total;
            (i, after - before)
        })
        .collect()
}

/// Pick the `replay_batch` memory items most interfered with by the
/// incoming batch. Ties break toward the earlier memory index.
pub fn select_mir(
    params: &ModelParams,
    incoming: &[&Prepared],
    memory: &EpisodicMemory,
    cfg: &StrategyConfig,
    nn: &NnConfig,
    rng: &mut ChaCha20Rng,
) -> Vec<usize> {
    let candidates = memory.sample_indices(cfg.mir_candidates, rng);
    let mut scored = mir_scores(params, incoming, memory, &candidates, nn);
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("interference score is NaN")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(cfg.replay_batch);
    scored.into_iter().map(|(i, _)| i).collect()
}
