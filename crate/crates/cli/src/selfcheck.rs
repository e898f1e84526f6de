//! Fast built-in consistency checks: the label-algebra oracle, split
//! constraints, analytic gradients vs finite differences, reservoir
//! uniformity, gradient projection, distillation identity, and the
//! metric arithmetic. Scaled to finish in seconds; the integration test
//! suite runs the full-size versions.

use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use c2gen_core::algebra::{compose, function_type, Label, Signature};
use c2gen_core::lexicon::LexiconConfig;
use c2gen_core::memory::{EpisodicMemory, MemoryPolicy};
use c2gen_core::metrics::{forget, report_from_outcomes, Outcome};
use c2gen_core::model::{batch_grad, batch_loss, kd_loss, prepare, Layout, ModelParams, Prepared, Vocab};
use c2gen_core::split::all_folds;
use c2gen_core::strategy::agem_project;
use c2gen_core::stream::Supervision;
use c2gen_core::synth::{generate_dataset, DEFAULT_COUNTS_PER_TYPE, DEFAULT_NLI_SURFACES_PER_LABEL};

type Check = (&'static str, fn() -> Result<(), String>);

pub fn run() -> ExitCode {
    let checks: [Check; 8] = [
        ("compose-table", compose_table),
        ("split-constraints", split_constraints),
        ("gradient-fd", gradient_fd),
        ("reservoir-uniformity", reservoir_uniformity),
        ("agem-projection", agem_projection),
        ("kd-identity", kd_identity),
        ("forget-arithmetic", forget_arithmetic),
        ("pxci-partition", pxci_partition),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("check {name}: PASS"),
            Err(msg) => {
                failed += 1;
                println!("check {name}: FAIL ({msg})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} checks failed");
        ExitCode::FAILURE
    }
}

fn compose_table() -> Result<(), String> {
    let expected = [
        [Label::Entailment, Label::Neutral, Label::Contradiction],
        [Label::Neutral, Label::Neutral, Label::Neutral],
        [Label::Contradiction, Label::Neutral, Label::Entailment],
    ];
    for v in Signature::ALL {
        for n in Label::ALL {
            let got = compose(v, n);
            if got != expected[v.code()][n.code()] {
                return Err(format!("compose({v}, {n}) = {got}"));
            }
            if function_type(v).apply(n) != got {
                return Err(format!("function form disagrees at ({v}, {n})"));
            }
        }
    }
    Ok(())
}

fn split_constraints() -> Result<(), String> {
    let (_, data) = generate_dataset(
        &LexiconConfig::default(),
        &DEFAULT_COUNTS_PER_TYPE,
        DEFAULT_NLI_SURFACES_PER_LABEL,
        11,
    )
    .map_err(|e| e.to_string())?;
    for inst in &data {
        if inst.gold_ci != compose(inst.ctype.v, inst.ctype.n) {
            return Err(format!("instance of type {} mislabeled", inst.ctype));
        }
    }
    let folds = all_folds(&data).map_err(|e| e.to_string())?;
    for split in &folds {
        let train_verbs: std::collections::BTreeSet<&str> =
            split.train.iter().map(|i| i.ver.key.as_str()).collect();
        let train_pairs: std::collections::BTreeSet<&str> =
            split.train.iter().map(|i| i.nli.key.as_str()).collect();
        for inst in &split.test {
            if inst.ctype != split.fold {
                return Err(format!("fold {}: stray type in test", split.fold));
            }
            if !train_verbs.contains(inst.ver.key.as_str())
                || !train_pairs.contains(inst.nli.key.as_str())
            {
                return Err(format!("fold {}: uncovered primitive in test", split.fold));
            }
        }
        if split.train.iter().any(|i| i.ctype == split.fold) {
            return Err(format!("fold {}: held-out type leaked into train", split.fold));
        }
    }
    Ok(())
}

fn tiny_world() -> Result<(Vocab, Vec<Prepared>), String> {
    let lexcfg = LexiconConfig {
        verbs_plus: 2,
        verbs_neutral: 2,
        verbs_minus: 2,
        concepts: 14,
        pairs_per_label: 2,
        subjects: 2,
        templates: 2,
        ..LexiconConfig::default()
    };
    let (_, data) = generate_dataset(&lexcfg, &[4; 9], 8, 3).map_err(|e| e.to_string())?;
    let vocab = Vocab::from_dataset(&data);
    let preps = data
        .iter()
        .enumerate()
        .map(|(i, inst)| prepare(&vocab, inst, i).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((vocab, preps))
}

fn gradient_fd() -> Result<(), String> {
    let (vocab, preps) = tiny_world()?;
    let layout = Layout::new(vocab.len(), 6, 8);
    let eps = 1e-4;
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    for round in 0..2u64 {
        let params = ModelParams::init(layout, 0.5, round);
        let batch: Vec<&Prepared> = (0..4).map(|_| &preps[rng.gen_range(0..preps.len())]).collect();
        let mut grad = vec![0.0; layout.total];
        batch_grad(&params, &batch, Supervision::Full, false, &mut grad);
        for i in 0..layout.total {
            let mut plus = params.clone();
            plus.theta[i] += eps;
            let mut minus = params.clone();
            minus.theta[i] -= eps;
            let fd = (batch_loss(&plus, &batch, Supervision::Full, false).total
                - batch_loss(&minus, &batch, Supervision::Full, false).total)
                / (2.0 * eps);
            let a = grad[i];
            if a.abs() < 1e-6 && fd.abs() < 1e-6 {
                continue;
            }
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            if rel >= 1e-4 {
                return Err(format!("coord {i}: analytic {a} vs fd {fd} (rel {rel:.2e})"));
            }
        }
    }
    Ok(())
}

fn reservoir_uniformity() -> Result<(), String> {
    let (n, m, trials) = (300usize, 30usize, 3000usize);
    let mut counts = vec![0usize; n];
    for t in 0..trials {
        let mut mem = EpisodicMemory::new(m, MemoryPolicy::Res);
        let mut rng = ChaCha20Rng::seed_from_u64(t as u64);
        mem.begin_stage(0, &mut rng);
        for i in 0..n {
            let prep = Prepared {
                ids: [vec![0], vec![0], vec![0]],
                golds: [Label::Entailment; 3],
                src: i,
            };
            mem.insert(prep, &mut rng);
        }
        for item in mem.items() {
            counts[item.prep.src] += 1;
        }
    }
    let target = m as f64 / n as f64;
    let within = counts
        .iter()
        .filter(|&&c| (c as f64 / trials as f64 - target).abs() <= 0.015)
        .count();
    if (within as f64) < 0.98 * n as f64 {
        return Err(format!("only {within}/{n} items near inclusion rate {target:.3}"));
    }
    Ok(())
}

fn agem_projection() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let dim = 64;
    for k in 0..200 {
        let g0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dot0: f64 = g0.iter().zip(&r).map(|(a, b)| a * b).sum();
        let mut g = g0.clone();
        agem_project(&mut g, &r);
        let dot1: f64 = g.iter().zip(&r).map(|(a, b)| a * b).sum();
        if dot1 < -1e-9 {
            return Err(format!("pair {k}: projected dot {dot1:.3e}"));
        }
        if dot0 >= 0.0 && g != g0 {
            return Err(format!("pair {k}: non-conflicting gradient was altered"));
        }
    }
    Ok(())
}

fn kd_identity() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for k in 0..30 {
        let mut logits = [[0.0; 3]; 3];
        for row in &mut logits {
            for v in row.iter_mut() {
                *v = rng.gen_range(-4.0..4.0);
            }
        }
        for tau in [1.0, 2.0, 5.0] {
            let loss = kd_loss(&logits, &logits, tau);
            if loss.abs() > 1e-9 {
                return Err(format!("set {k} tau {tau}: self-distillation loss {loss:.3e}"));
            }
        }
    }
    Ok(())
}

fn forget_arithmetic() -> Result<(), String> {
    match forget(93.94, 71.15) {
        Some(f) if (f - 24.26).abs() <= 0.01 => {}
        other => return Err(format!("forget(93.94, 71.15) = {other:?}")),
    }
    for x in [10.0, 55.5, 100.0] {
        if forget(x, x) != Some(0.0) {
            return Err(format!("forget({x}, {x}) != 0"));
        }
    }
    if forget(0.0, 5.0).is_some() {
        return Err("forget is defined at zero baseline".into());
    }
    Ok(())
}

fn pxci_partition() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for round in 0..20 {
        let outcomes: Vec<Outcome> = (0..500)
            .map(|_| (rng.gen_bool(0.6), rng.gen_bool(0.6), rng.gen_bool(0.5)))
            .collect();
        let r = report_from_outcomes(&outcomes);
        let sum = r.pxci.both_correct + r.pxci.prim_only + r.pxci.comp_only + r.pxci.neither;
        if (sum - 100.0).abs() > 0.01 {
            return Err(format!("round {round}: categories sum to {sum}"));
        }
        if r.acc_ci != r.pxci.both_correct + r.pxci.comp_only {
            return Err(format!("round {round}: acc_ci is not the sum of its categories"));
        }
    }
    Ok(())
}
