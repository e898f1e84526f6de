//! Measurement suite: per-task accuracies, the relative forgetting
//! ratio, the four-way primitive-vs-composition breakdown, the per-type
//! fold grid, and a silhouette score over encoder states.
//!
//! All percentages are f64 in [0, 100], computed in double precision;
//! display rounding happens at the report writers, never here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::model::{predict, predict_probe, prepare, ModelParams, Vocab, HEAD_N, HEAD_V};
use crate::split::Split;
use crate::synth::{canonical_probes, PrimitivePair};

/// Four-way breakdown of test instances by primitive correctness (both
/// heads) crossed with composition correctness. Percentages over the
/// test set; the four sum to 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pxci {
    pub both_correct: f64,
    pub prim_only: f64,
    pub comp_only: f64,
    pub neither: f64,
}

/// Mean silhouette of encoder hidden states over canonical probes,
/// grouped by gold label; one value per primitive head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compactness {
    pub ver: f64,
    pub nli: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub acc_v: f64,
    pub acc_n: f64,
    /// Instances with both primitive predictions correct.
    pub acc_vn: f64,
    pub acc_ci: f64,
    /// Filled by the runner from stage snapshots; absent until then.
    pub forget_v: Option<f64>,
    pub forget_n: Option<f64>,
    pub pxci: Pxci,
    pub compactness: Option<Compactness>,
    pub n_test: usize,
}

/// Per-instance correctness triple (veridical, lexical, compositional).
pub type Outcome = (bool, bool, bool);

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Aggregate correctness outcomes into a report. `acc_ci` is defined as
/// the sum of the two composition-correct categories so the partition
/// identity holds exactly in floating point.
pub fn report_from_outcomes(outcomes: &[Outcome]) -> EvalReport {
    assert!(!outcomes.is_empty(), "empty outcome set");
    let n = outcomes.len();
    let mut n_v = 0;
    let mut n_n = 0;
    let mut n_vn = 0;
    let mut cat = [0usize; 4];
    for &(v, l, c) in outcomes {
        n_v += v as usize;
        n_n += l as usize;
        let p_ok = v && l;
        n_vn += p_ok as usize;
        let idx = match (p_ok, c) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        cat[idx] += 1;
    }
    let pxci = Pxci {
        both_correct: pct(cat[0], n),
        prim_only: pct(cat[1], n),
        comp_only: pct(cat[2], n),
        neither: pct(cat[3], n),
    };
    EvalReport {
        acc_v: pct(n_v, n),
        acc_n: pct(n_n, n),
        acc_vn: pct(n_vn, n),
        acc_ci: pxci.both_correct + pxci.comp_only,
        forget_v: None,
        forget_n: None,
        pxci,
        compactness: None,
        n_test: n,
    }
}

/// Correctness outcomes of every test instance: the composition input
/// and both decomposed probes through their own heads.
pub fn test_outcomes(params: &ModelParams, vocab: &Vocab, split: &Split) -> Result<Vec<Outcome>> {
    split
        .test
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let prep = prepare(vocab, inst, i)?;
            let preds = predict(params, &prep);
            Ok((
                preds[0] == prep.golds[0],
                preds[1] == prep.golds[1],
                preds[2] == prep.golds[2],
            ))
        })
        .collect()
}

/// Full held-out evaluation for one fold. Pass the lexicon to include
/// the silhouette score over canonical probes.
pub fn evaluate(
    params: &ModelParams,
    vocab: &Vocab,
    split: &Split,
    lex: Option<&Lexicon>,
) -> Result<EvalReport> {
    if split.test.is_empty() {
        return Err(Error::Eval(format!(
            "fold {} has an empty test set",
            split.fold
        )));
    }
    let mut report = report_from_outcomes(&test_outcomes(params, vocab, split)?);
    if let Some(lex) = lex {
        let (ver_probes, nli_probes) = canonical_probes(lex);
        report.compactness = Some(Compactness {
            ver: probe_silhouette(params, vocab, &ver_probes)?,
            nli: probe_silhouette(params, vocab, &nli_probes)?,
        });
    }
    Ok(report)
}

/// Accuracy of one head over standalone probes.
pub fn probe_accuracy(
    params: &ModelParams,
    vocab: &Vocab,
    probes: &[PrimitivePair],
    head: usize,
) -> Result<f64> {
    assert!(head == HEAD_V || head == HEAD_N);
    if probes.is_empty() {
        return Err(Error::Eval("empty probe set".into()));
    }
    let mut correct = 0;
    for p in probes {
        let ids = vocab.input_ids(&p.premise, &p.hypothesis)?;
        if predict_probe(params, &ids, head) == p.gold {
            correct += 1;
        }
    }
    Ok(pct(correct, probes.len()))
}

/// Relative drop from `acc_s1` to `acc_s1s2` in percent; absent when the
/// reference accuracy is zero. Negative values report backward transfer.
pub fn forget(acc_s1: f64, acc_s1s2: f64) -> Option<f64> {
    if acc_s1 <= 0.0 {
        return None;
    }
    Some((acc_s1 - acc_s1s2) / acc_s1 * 100.0)
}

/// Composition accuracy per held-out fold arranged by the fold's type:
/// rows by veridical signature, columns by lexical relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerTypeTable {
    pub cells: [[f64; 3]; 3],
    pub row_avg: [f64; 3],
    pub col_avg: [f64; 3],
    /// Unweighted mean of the nine cells.
    pub grand_avg: f64,
    /// Mean weighted by each fold's test-set size.
    pub weighted_avg: f64,
}

/// Build the 3x3 fold grid from (type index 1..=9, acc_ci, n_test)
/// entries; all nine types must appear exactly once.
pub fn per_type_table(entries: &[(usize, f64, usize)]) -> Result<PerTypeTable> {
    let mut cells = [[f64::NAN; 3]; 3];
    let mut sizes = [[0usize; 3]; 3];
    for &(index, acc, n) in entries {
        if !(1..=9).contains(&index) {
            return Err(Error::Eval(format!("type index {index} out of range")));
        }
        let (r, c) = ((index - 1) / 3, (index - 1) % 3);
        if !cells[r][c].is_nan() {
            return Err(Error::Eval(format!("duplicate fold entry for type {index}")));
        }
        cells[r][c] = acc;
        sizes[r][c] = n;
    }
    for r in 0..3 {
        for c in 0..3 {
            if cells[r][c].is_nan() {
                return Err(Error::Eval(format!("missing fold entry for type {}", r * 3 + c + 1)));
            }
        }
    }
    let row_avg = [0, 1, 2].map(|r| cells[r].iter().sum::<f64>() / 3.0);
    let col_avg = [0, 1, 2].map(|c| (0..3).map(|r| cells[r][c]).sum::<f64>() / 3.0);
    let grand_avg = cells.iter().flatten().sum::<f64>() / 9.0;
    let total: usize = sizes.iter().flatten().sum();
    let weighted_avg = cells
        .iter()
        .flatten()
        .zip(sizes.iter().flatten())
        .map(|(a, &n)| a * n as f64)
        .sum::<f64>()
        / total as f64;
    Ok(PerTypeTable {
        cells,
        row_avg,
        col_avg,
        grand_avg,
        weighted_avg,
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient with Euclidean distance. Singleton
/// classes and zero-spread neighborhoods contribute 0 for the affected
/// points.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    assert!(!points.is_empty());
    let classes: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut total = 0.0;
    for i in 0..points.len() {
        let own = labels[i];
        let own_size = labels.iter().filter(|&&l| l == own).count();
        if own_size < 2 || classes.len() < 2 {
            continue; // contributes 0
        }
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for &class in &classes {
            let mut sum = 0.0;
            let mut n = 0;
            for j in 0..points.len() {
                if j != i && labels[j] == class {
                    sum += euclid(&points[i], &points[j]);
                    n += 1;
                }
            }
            if class == own {
                a = sum / n as f64;
            } else if n > 0 {
                b = b.min(sum / n as f64);
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / points.len() as f64
}

/// Silhouette of the encoder's final hidden states over probe inputs,
/// grouped by gold label.
pub fn probe_silhouette(
    params: &ModelParams,
    vocab: &Vocab,
    probes: &[PrimitivePair],
) -> Result<f64> {
    let mut points = Vec::with_capacity(probes.len());
    let mut labels = Vec::with_capacity(probes.len());
    for p in probes {
        let ids = vocab.input_ids(&p.premise, &p.hypothesis)?;
        points.push(params.encode(&ids).h2);
        labels.push(p.gold.code());
    }
    Ok(silhouette(&points, &labels))
}
