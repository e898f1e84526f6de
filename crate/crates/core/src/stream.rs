//! Training stream construction: the offline regime, the two-stage
//! continual regime, and the curriculum stage.
//!
//! The two continual stages are typed so that each stage teaches one
//! primitive skill with the other held (nearly) constant: the veridical
//! stage varies verbs freely but pins the lexical-relation constituent
//! to a small fixed pool, and the NLI stage does the reverse. Their type
//! sets are disjoint, so the stage multisets never overlap. Stages are
//! filled by uniform sampling with replacement up to `stage_size`; the
//! candidate pools after restriction are far smaller than the stage, so
//! repetition is intended, not an accident.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{CompType, FunctionType, Label, Signature};
use crate::error::{Error, Result};
use crate::split::Split;
use crate::synth::CompInstance;
use crate::util::mix_seed;

/// Type indices sampled by the veridical-focused stage.
pub const VER_STAGE_TYPES: [usize; 4] = [2, 5, 3, 9];
/// Type indices sampled by the NLI-focused stage.
pub const NLI_STAGE_TYPES: [usize; 4] = [4, 6, 7, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    CGen,
    C2Gen,
}

/// Which primitive-focused stage comes first in the continual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    VerThenNat,
    NatThenVer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumOrder {
    EasyToHard,
    HardToEasy,
}

impl CurriculumOrder {
    /// Block order over function types.
    pub fn blocks(self) -> [FunctionType; 3] {
        match self {
            CurriculumOrder::EasyToHard => [
                FunctionType::ConstantNeutral,
                FunctionType::Identity,
                FunctionType::Inverse,
            ],
            CurriculumOrder::HardToEasy => [
                FunctionType::Inverse,
                FunctionType::Identity,
                FunctionType::ConstantNeutral,
            ],
        }
    }
}

/// Which loss heads a block supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    Full,
    PrimOnly,
    CompOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub instances: Vec<CompInstance>,
    pub supervision: Supervision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub blocks: Vec<Block>,
    pub epochs: usize,
    pub shuffle_within: bool,
}

impl Stage {
    fn plain(name: &str, instances: Vec<CompInstance>, epochs: usize) -> Stage {
        Stage {
            name: name.to_string(),
            blocks: vec![Block {
                instances,
                supervision: Supervision::Full,
            }],
            epochs,
            shuffle_within: true,
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = &CompInstance> {
        self.blocks.iter().flat_map(|b| b.instances.iter())
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.instances.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    /// Instances per continual stage, sampled with replacement.
    pub stage_size: usize,
    /// Epochs per stage (and per curriculum block).
    pub epochs: usize,
    /// Concept pairs per label available inside the veridical stage.
    pub ver_stage_pairs_per_label: usize,
    /// Verbs per signature available inside the NLI stage.
    pub nli_stage_verbs_per_sig: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            stage_size: 4800,
            epochs: 3,
            ver_stage_pairs_per_label: 4,
            nli_stage_verbs_per_sig: 1,
        }
    }
}

fn types_from(indices: &[usize]) -> Vec<CompType> {
    indices
        .iter()
        .map(|&i| CompType::from_index(i).expect("static index"))
        .collect()
}

fn sample_stage(
    name: &str,
    pool: &[&CompInstance],
    size: usize,
    epochs: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Stage> {
    if pool.is_empty() {
        return Err(Error::Datagen(format!(
            "stage {name}: no candidate instances after restriction"
        )));
    }
    let instances = (0..size)
        .map(|_| pool[rng.gen_range(0..pool.len())].clone())
        .collect();
    Ok(Stage::plain(name, instances, epochs))
}

/// Pick `per_group` distinct keys per group, in first-seen group order.
fn pick_pool<K: Clone + Eq, G: Eq>(
    items: &[(G, K)],
    per_group: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<K> {
    let mut groups: Vec<(&G, Vec<&K>)> = Vec::new();
    for (g, k) in items {
        match groups.iter_mut().find(|(gg, _)| *gg == g) {
            Some((_, ks)) => {
                if !ks.contains(&k) {
                    ks.push(k);
                }
            }
            None => groups.push((g, vec![k])),
        }
    }
    let mut out = Vec::new();
    for (_, ks) in &mut groups {
        // Deterministic choice of the fixed pool members.
        for _ in 0..per_group.min(ks.len()) {
            let i = rng.gen_range(0..ks.len());
            out.push(ks.swap_remove(i).clone());
        }
    }
    out
}

fn veridical_stage(
    split: &Split,
    cfg: &StreamConfig,
    name: &str,
    rng: &mut ChaCha20Rng,
) -> Result<Stage> {
    let types = types_from(&VER_STAGE_TYPES);
    let candidates: Vec<&CompInstance> = split
        .train
        .iter()
        .filter(|i| types.contains(&i.ctype))
        .collect();
    let keyed: Vec<(Label, String)> = candidates
        .iter()
        .map(|i| (i.ctype.n, i.nli.key.clone()))
        .collect();
    let pool_keys = pick_pool(&keyed, cfg.ver_stage_pairs_per_label, rng);
    let pool: Vec<&CompInstance> = candidates
        .into_iter()
        .filter(|i| pool_keys.contains(&i.nli.key))
        .collect();
    sample_stage(name, &pool, cfg.stage_size, cfg.epochs, rng)
}

fn nli_stage(
    split: &Split,
    cfg: &StreamConfig,
    name: &str,
    rng: &mut ChaCha20Rng,
) -> Result<Stage> {
    let types = types_from(&NLI_STAGE_TYPES);
    let candidates: Vec<&CompInstance> = split
        .train
        .iter()
        .filter(|i| types.contains(&i.ctype))
        .collect();
    let keyed: Vec<(Signature, String)> = candidates
        .iter()
        .map(|i| (i.ctype.v, i.ver.key.clone()))
        .collect();
    let pool_keys = pick_pool(&keyed, cfg.nli_stage_verbs_per_sig, rng);
    let pool: Vec<&CompInstance> = candidates
        .into_iter()
        .filter(|i| pool_keys.contains(&i.ver.key))
        .collect();
    sample_stage(name, &pool, cfg.stage_size, cfg.epochs, rng)
}

/// Build the training stream for a split under the given regime.
/// Deterministic in `(split, regime, order, cfg, seed)`.
pub fn build_stream(
    split: &Split,
    regime: Regime,
    order: Option<StageOrder>,
    cfg: &StreamConfig,
    seed: u64,
) -> Result<Stream> {
    match regime {
        Regime::CGen => Ok(Stream {
            stages: vec![Stage::plain("S1", split.train.clone(), cfg.epochs)],
        }),
        Regime::C2Gen => {
            let order = order.ok_or_else(|| {
                Error::Config("continual regime requires a stage order".into())
            })?;
            let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "stream"));
            let stages = match order {
                StageOrder::VerThenNat => vec![
                    veridical_stage(split, cfg, "S1", &mut rng)?,
                    nli_stage(split, cfg, "S2", &mut rng)?,
                ],
                StageOrder::NatThenVer => vec![
                    nli_stage(split, cfg, "S1", &mut rng)?,
                    veridical_stage(split, cfg, "S2", &mut rng)?,
                ],
            };
            Ok(Stream { stages })
        }
    }
}

/// Build the curriculum stage S3: the compositional train data
/// partitioned into three consecutive function-type blocks. Block
/// boundaries are hard. With `prim_first`, primitive supervision moves
/// to a preceding block and the ordered blocks train the compositional
/// head only.
pub fn build_curriculum_stage(
    split: &Split,
    order: CurriculumOrder,
    prim_first: bool,
    cfg: &StreamConfig,
) -> Stage {
    let mut blocks = Vec::new();
    if prim_first {
        blocks.push(Block {
            instances: split.train.clone(),
            supervision: Supervision::PrimOnly,
        });
    }
    let comp_supervision = if prim_first {
        Supervision::CompOnly
    } else {
        Supervision::Full
    };
    for ft in order.blocks() {
        let instances: Vec<CompInstance> = split
            .train
            .iter()
            .filter(|i| i.ctype.function_type() == ft)
            .cloned()
            .collect();
        blocks.push(Block {
            instances,
            supervision: comp_supervision,
        });
    }
    Stage {
        name: "S3".to_string(),
        blocks,
        epochs: cfg.epochs,
        shuffle_within: true,
    }
}
