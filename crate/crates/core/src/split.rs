//! Nine-fold generalization splits: one compositional type held out as
//! test, the other eight as train.
//!
//! The generalization claim needs three set constraints: no type overlap
//! between train and test, every test verb seen in train, every test
//! concept pair seen in train. Probe freshness (no test probe surface
//! byte-identical to any train probe surface) is arranged by the
//! generator's chunking; this module verifies all of it and fails
//! descriptively rather than silently producing a leaky split.

use std::collections::{BTreeMap, BTreeSet};

use crate::algebra::CompType;
use crate::error::{Error, Result};
use crate::synth::{CompInstance, PrimitivePair};

#[derive(Debug, Clone)]
pub struct Split {
    pub fold: CompType,
    pub train: Vec<CompInstance>,
    pub test: Vec<CompInstance>,
    /// Deduplicated veridical probes of the test set: fresh surfaces over
    /// train-covered verbs.
    pub unseen_prim_v: Vec<PrimitivePair>,
    /// Deduplicated NLI probes of the test set: fresh surfaces over
    /// train-covered concept pairs.
    pub unseen_prim_n: Vec<PrimitivePair>,
}

fn dedup_probes<'a>(probes: impl Iterator<Item = &'a PrimitivePair>) -> Vec<PrimitivePair> {
    let mut seen: BTreeSet<(Vec<String>, Vec<String>)> = BTreeSet::new();
    let mut out = Vec::new();
    for p in probes {
        if seen.insert((p.premise.clone(), p.hypothesis.clone())) {
            out.push(p.clone());
        }
    }
    out
}

fn probe_surface(p: &PrimitivePair) -> (Vec<String>, Vec<String>) {
    (p.premise.clone(), p.hypothesis.clone())
}

/// Partition the dataset on `fold` and verify the split constraints.
pub fn ninefold_split(dataset: &[CompInstance], fold: CompType) -> Result<Split> {
    let (test, train): (Vec<CompInstance>, Vec<CompInstance>) =
        dataset.iter().cloned().partition(|i| i.ctype == fold);
    if test.is_empty() || train.is_empty() {
        return Err(Error::Datagen(format!(
            "fold {fold}: dataset does not cover both sides (train {}, test {})",
            train.len(),
            test.len()
        )));
    }

    let train_verbs: BTreeSet<&str> = train.iter().map(|i| i.ver.key.as_str()).collect();
    let train_pairs: BTreeSet<&str> = train.iter().map(|i| i.nli.key.as_str()).collect();
    for inst in &test {
        if !train_verbs.contains(inst.ver.key.as_str()) {
            return Err(Error::Datagen(format!(
                "fold {fold}: verb {:?} unseen in train",
                inst.ver.key
            )));
        }
        if !train_pairs.contains(inst.nli.key.as_str()) {
            return Err(Error::Datagen(format!(
                "fold {fold}: concept pair {:?} unseen in train",
                inst.nli.key
            )));
        }
    }

    // Freshness: no test probe surface may coincide with a train probe
    // surface, else the test probe was memorizable verbatim.
    let train_probe_surfaces: BTreeSet<(Vec<String>, Vec<String>)> = train
        .iter()
        .flat_map(|i| [probe_surface(&i.ver), probe_surface(&i.nli)])
        .collect();
    for inst in &test {
        for p in [&inst.ver, &inst.nli] {
            if train_probe_surfaces.contains(&probe_surface(p)) {
                return Err(Error::Datagen(format!(
                    "fold {fold}: test probe surface {:?} duplicates a train probe",
                    p.premise.join(" ")
                )));
            }
        }
    }

    let unseen_prim_v = dedup_probes(test.iter().map(|i| &i.ver));
    let unseen_prim_n = dedup_probes(test.iter().map(|i| &i.nli));
    Ok(Split {
        fold,
        train,
        test,
        unseen_prim_v,
        unseen_prim_n,
    })
}

/// All nine splits of one dataset.
pub fn all_folds(dataset: &[CompInstance]) -> Result<Vec<Split>> {
    CompType::all()
        .iter()
        .map(|&ct| ninefold_split(dataset, ct))
        .collect()
}

/// Histogram of train instances per type, for stream-construction checks.
pub fn train_type_counts(split: &Split) -> BTreeMap<CompType, usize> {
    let mut m = BTreeMap::new();
    for i in &split.train {
        *m.entry(i.ctype).or_insert(0) += 1;
    }
    m
}
