//! Instance synthesis: primitive inference pairs, compositional
//! instances, and the relexicalization control.
//!
//! Surface grammar. A base clause is `subject template... concept`. A
//! lexical-relation (NLI) pair swaps the concept slot:
//!
//! ```text
//! premise     subj t1 t2 c1
//! hypothesis  subj t1 t2 c2      gold = relation label of (c1, c2)
//! ```
//!
//! A compositional instance embeds the NLI premise under a matrix verb
//! with a shared subject:
//!
//! ```text
//! premise     subj VERB to t1 t2 c1
//! hypothesis  subj t1 t2 c2      gold = compose(sig(VERB), relation)
//! ```
//!
//! Its two primitive probes are the veridical pair (premise entails the
//! bare clause, gold = the signature's label image) and the NLI pair.
//!
//! Probe freshness across the nine-fold splits is arranged here, at
//! generation time: for each relation label, the pool of NLI surfaces is
//! dealt into three disjoint chunks, one per verb signature, so the
//! three types sharing a constituent label can never share a probe
//! surface. Test probes of any fold are therefore never byte-identical
//! to a train probe.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{compose, CompType, Label, Signature};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, LexiconConfig, TO};
use crate::util::{mix_seed, mix_seed_indexed};

/// One primitive inference pair: either a veridical probe (keyed by its
/// verb) or a lexical-relation probe (keyed by its ordered concept pair
/// as `"c1|c2"`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitivePair {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub gold: Label,
    pub key: String,
}

/// One compositional sample together with its decomposed primitives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompInstance {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub ctype: CompType,
    pub gold_ci: Label,
    pub ver: PrimitivePair,
    pub nli: PrimitivePair,
}

impl CompInstance {
    /// The two primitive probes (veridical, lexical-relation).
    pub fn decompose(&self) -> (&PrimitivePair, &PrimitivePair) {
        (&self.ver, &self.nli)
    }
}

pub fn pair_key(c1: &str, c2: &str) -> String {
    format!("{c1}|{c2}")
}

/// Default per-type instance counts: the reference corpus proportions
/// scaled down by 8 to desk scale.
pub const DEFAULT_COUNTS_PER_TYPE: [usize; 9] = [747, 693, 690, 747, 693, 690, 465, 432, 429];

/// Primitive surface pool per label, 16 surfaces per default pair.
pub const DEFAULT_NLI_SURFACES_PER_LABEL: usize = 576;

fn realize_nli(lex: &Lexicon, pair_idx: usize, subj_idx: usize, tmpl_idx: usize) -> PrimitivePair {
    let pair = &lex.pairs[pair_idx];
    let subj = &lex.subjects[subj_idx];
    let tmpl = &lex.templates[tmpl_idx];
    let mut premise = Vec::with_capacity(tmpl.len() + 2);
    premise.push(subj.clone());
    premise.extend(tmpl.iter().cloned());
    premise.push(pair.c1.clone());
    let mut hypothesis = Vec::with_capacity(tmpl.len() + 2);
    hypothesis.push(subj.clone());
    hypothesis.extend(tmpl.iter().cloned());
    hypothesis.push(pair.c2.clone());
    PrimitivePair {
        premise,
        hypothesis,
        gold: pair.label,
        key: pair_key(&pair.c1, &pair.c2),
    }
}

/// Generate `count_per_label` distinct lexical-relation pairs per label.
///
/// Surfaces are dealt round-robin across concept pairs so every pair is
/// exercised as evenly as the count allows. Deterministic in
/// `(lexicon, count, seed)`.
pub fn generate_primitive_nli(
    lex: &Lexicon,
    count_per_label: usize,
    seed: u64,
) -> Result<Vec<PrimitivePair>> {
    if count_per_label == 0 {
        return Err(Error::Datagen("count_per_label must be positive".into()));
    }
    let mut out = Vec::new();
    for label in Label::ALL {
        let pair_idxs: Vec<usize> = lex
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == label)
            .map(|(i, _)| i)
            .collect();
        let capacity = pair_idxs.len() * lex.subjects.len() * lex.templates.len();
        if count_per_label > capacity {
            return Err(Error::Datagen(format!(
                "requested {count_per_label} surfaces for label {label} but only {capacity} exist"
            )));
        }
        // Per-pair surface queues, individually shuffled, consumed
        // round-robin so truncation stays pair-balanced.
        let queues: Vec<Vec<(usize, usize)>> = pair_idxs
            .iter()
            .enumerate()
            .map(|(qi, _)| {
                let mut rng = ChaCha20Rng::seed_from_u64(mix_seed_indexed(
                    seed,
                    "nli-surfaces",
                    (label.code() * 64 + qi) as u64,
                ));
                let mut combos: Vec<(usize, usize)> = (0..lex.subjects.len())
                    .flat_map(|s| (0..lex.templates.len()).map(move |t| (s, t)))
                    .collect();
                combos.shuffle(&mut rng);
                combos
            })
            .collect();
        let mut taken = 0;
        let mut round = 0;
        while taken < count_per_label {
            for (qi, &pi) in pair_idxs.iter().enumerate() {
                if taken == count_per_label {
                    break;
                }
                if let Some(&(s, t)) = queues[qi].get(round) {
                    let p = realize_nli(lex, pi, s, t);
                    debug_assert_ne!(p.premise, p.hypothesis);
                    out.push(p);
                    taken += 1;
                }
            }
            round += 1;
        }
    }
    Ok(out)
}

fn assemble_one(lex: &Lexicon, verb_idx: usize, nli: &PrimitivePair) -> CompInstance {
    let verb = &lex.verbs[verb_idx];
    let subj = nli.premise[0].clone();
    let mut premise = Vec::with_capacity(nli.premise.len() + 2);
    premise.push(subj);
    premise.push(verb.form.clone());
    premise.push(TO.to_string());
    premise.extend(nli.premise[1..].iter().cloned());
    let ctype = CompType::new(verb.sig, nli.gold);
    CompInstance {
        premise: premise.clone(),
        hypothesis: nli.hypothesis.clone(),
        ctype,
        gold_ci: compose(ctype.v, ctype.n),
        ver: PrimitivePair {
            premise,
            hypothesis: nli.premise.clone(),
            gold: verb.sig.label_image(),
            key: verb.form.clone(),
        },
        nli: nli.clone(),
    }
}

/// Assemble the compositional dataset: `counts_per_type[i]` instances of
/// type index `i + 1`.
///
/// For each constituent label, the available NLI surfaces are dealt into
/// three disjoint chunks (one per signature, balanced per concept pair),
/// and a type draws only from its own chunk; see the module docs for why.
/// Within a type, selection is shuffled but coverage-first: every concept
/// pair of the chunk and every verb of the signature appears at least
/// once when the count allows it.
pub fn assemble_compositional(
    lex: &Lexicon,
    nli_pairs: &[PrimitivePair],
    counts_per_type: &[usize; 9],
    seed: u64,
) -> Result<Vec<CompInstance>> {
    // Deal each label's surfaces into per-signature chunks, round-robin
    // within each concept pair so chunks stay pair-balanced.
    let mut chunks: BTreeMap<(Label, Signature), Vec<usize>> = BTreeMap::new();
    for label in Label::ALL {
        let mut per_key: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in nli_pairs.iter().enumerate() {
            if p.gold == label {
                per_key.entry(p.key.as_str()).or_default().push(i);
            }
        }
        for surfaces in per_key.values() {
            for (j, &i) in surfaces.iter().enumerate() {
                let sig = Signature::ALL[j % 3];
                chunks.entry((label, sig)).or_default().push(i);
            }
        }
    }

    let mut out = Vec::new();
    for ct in CompType::all() {
        let k = counts_per_type[ct.index() - 1];
        if k == 0 {
            continue;
        }
        let chunk = chunks.get(&(ct.n, ct.v)).cloned().unwrap_or_default();
        let verb_idxs: Vec<usize> = lex
            .verbs
            .iter()
            .enumerate()
            .filter(|(_, v)| v.sig == ct.v)
            .map(|(i, _)| i)
            .collect();
        let mut candidates: Vec<(usize, usize)> = verb_idxs
            .iter()
            .flat_map(|&vi| chunk.iter().map(move |&ni| (vi, ni)))
            .collect();
        if candidates.len() < k {
            return Err(Error::Datagen(format!(
                "type {ct}: need {k} instances but only {} (verb, surface) combinations exist",
                candidates.len()
            )));
        }
        let mut rng =
            ChaCha20Rng::seed_from_u64(mix_seed_indexed(seed, "assemble", ct.index() as u64));
        candidates.shuffle(&mut rng);

        // Coverage-first: pick one candidate per unseen pair key, then per
        // unseen verb, then fill from the shuffled remainder.
        let mut picked: Vec<bool> = vec![false; candidates.len()];
        let mut order: Vec<usize> = Vec::with_capacity(k);
        let mut pairs_left: BTreeSet<&str> =
            chunk.iter().map(|&ni| nli_pairs[ni].key.as_str()).collect();
        let mut verbs_left: BTreeSet<usize> = verb_idxs.iter().copied().collect();
        for (ci, &(vi, ni)) in candidates.iter().enumerate() {
            if order.len() == k || pairs_left.is_empty() {
                break;
            }
            if pairs_left.remove(nli_pairs[ni].key.as_str()) {
                picked[ci] = true;
                verbs_left.remove(&vi);
                order.push(ci);
            }
        }
        for (ci, &(vi, _)) in candidates.iter().enumerate() {
            if order.len() == k || verbs_left.is_empty() {
                break;
            }
            if !picked[ci] && verbs_left.remove(&vi) {
                picked[ci] = true;
                order.push(ci);
            }
        }
        for ci in 0..candidates.len() {
            if order.len() == k {
                break;
            }
            if !picked[ci] {
                picked[ci] = true;
                order.push(ci);
            }
        }
        order.sort_unstable();
        for ci in order {
            let (vi, ni) = candidates[ci];
            out.push(assemble_one(lex, vi, &nli_pairs[ni]));
        }
    }
    Ok(out)
}

/// Full default pipeline: lexicon surfaces to compositional dataset.
pub fn generate_dataset(
    lex_cfg: &LexiconConfig,
    counts_per_type: &[usize; 9],
    nli_surfaces_per_label: usize,
    seed: u64,
) -> Result<(Lexicon, Vec<CompInstance>)> {
    let lex = crate::lexicon::build_lexicon(lex_cfg, seed)?;
    let nli = generate_primitive_nli(&lex, nli_surfaces_per_label, seed)?;
    let data = assemble_compositional(&lex, &nli, counts_per_type, seed)?;
    Ok((lex, data))
}

/// Canonical probe sets for representation diagnostics: one veridical
/// probe per verb and one NLI probe per concept pair, all realized with
/// the same fixed subject and template so only the lexical item varies.
pub fn canonical_probes(lex: &Lexicon) -> (Vec<PrimitivePair>, Vec<PrimitivePair>) {
    let nli_probes: Vec<PrimitivePair> = (0..lex.pairs.len())
        .map(|pi| realize_nli(lex, pi, 0, 0))
        .collect();
    let base = realize_nli(lex, 0, 0, 0);
    let ver_probes = lex
        .verbs
        .iter()
        .enumerate()
        .map(|(vi, _)| {
            let inst = assemble_one(lex, vi, &base);
            inst.ver
        })
        .collect();
    (ver_probes, nli_probes)
}

/// Replace every verb and concept token with a fresh pseudo-word,
/// injectively, leaving labels, types, and all structural tokens
/// (subjects, templates, markers) untouched. Returns the rewritten
/// dataset and the token map.
pub fn relexicalize(
    dataset: &[CompInstance],
    seed: u64,
) -> (Vec<CompInstance>, BTreeMap<String, String>) {
    let mut inventory: HashSet<String> = HashSet::new();
    let mut targets: BTreeSet<String> = BTreeSet::new();
    for inst in dataset {
        for seq in [
            &inst.premise,
            &inst.hypothesis,
            &inst.ver.premise,
            &inst.ver.hypothesis,
            &inst.nli.premise,
            &inst.nli.hypothesis,
        ] {
            inventory.extend(seq.iter().cloned());
        }
        targets.insert(inst.ver.key.clone());
        if let Some((c1, c2)) = inst.nli.key.split_once('|') {
            targets.insert(c1.to_string());
            targets.insert(c2.to_string());
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "relex"));
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for tok in &targets {
        use rand::Rng;
        let fresh = loop {
            let len = rng.gen_range(4..=7);
            let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            if !inventory.contains(&w) {
                inventory.insert(w.clone());
                break w;
            }
        };
        map.insert(tok.clone(), fresh);
    }

    let remap = |seq: &[String]| -> Vec<String> {
        seq.iter()
            .map(|t| map.get(t).cloned().unwrap_or_else(|| t.clone()))
            .collect()
    };
    let out = dataset
        .iter()
        .map(|inst| {
            let (c1, c2) = inst.nli.key.split_once('|').expect("nli key shape");
            CompInstance {
                premise: remap(&inst.premise),
                hypothesis: remap(&inst.hypothesis),
                ctype: inst.ctype,
                gold_ci: inst.gold_ci,
                ver: PrimitivePair {
                    premise: remap(&inst.ver.premise),
                    hypothesis: remap(&inst.ver.hypothesis),
                    gold: inst.ver.gold,
                    key: map[&inst.ver.key].clone(),
                },
                nli: PrimitivePair {
                    premise: remap(&inst.nli.premise),
                    hypothesis: remap(&inst.nli.hypothesis),
                    gold: inst.nli.gold,
                    key: pair_key(&map[c1], &map[c2]),
                },
            }
        })
        .collect();
    (out, map)
}

/// Per-type instance counts of a dataset, indexed by type index - 1.
pub fn type_histogram(dataset: &[CompInstance]) -> [usize; 9] {
    let mut h = [0usize; 9];
    for inst in dataset {
        h[inst.ctype.index() - 1] += 1;
    }
    h
}
