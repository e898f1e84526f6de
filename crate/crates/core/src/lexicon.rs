//! Pseudo-word lexicon generation.
//!
//! All content words are freshly invented lowercase strings so that no
//! pretrained knowledge can leak into the task: what a verb does to its
//! complement and how two concepts relate is established purely by the
//! generated data. The lexicon is fully determined by its config and a
//! seed.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{Label, Signature};
use crate::error::{Error, Result};
use crate::util::mix_seed;

/// Token used to separate premise from hypothesis in model inputs.
pub const SEP: &str = "[SEP]";
/// Infinitive marker between a matrix verb and its complement clause.
pub const TO: &str = "to";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub form: String,
    pub sig: Signature,
}

/// An ordered concept pair with its fixed lexical inference label:
/// substituting `c2` for `c1` in a simple clause yields this label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPair {
    pub c1: String,
    pub c2: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexiconConfig {
    pub verbs_plus: usize,
    pub verbs_neutral: usize,
    pub verbs_minus: usize,
    pub concepts: usize,
    pub pairs_per_label: usize,
    pub subjects: usize,
    pub templates: usize,
    pub min_token_len: usize,
    pub max_token_len: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            verbs_plus: 8,
            verbs_neutral: 8,
            verbs_minus: 5,
            concepts: 240,
            pairs_per_label: 36,
            subjects: 12,
            templates: 16,
            min_token_len: 4,
            max_token_len: 7,
        }
    }
}

impl LexiconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.verbs_plus == 0 || self.verbs_neutral == 0 || self.verbs_minus == 0 {
            return Err(Error::Config(
                "need at least one verb per signature".into(),
            ));
        }
        if self.pairs_per_label == 0 {
            return Err(Error::Config("need at least one pair per label".into()));
        }
        if self.concepts < self.pairs_per_label * 3 * 2 {
            return Err(Error::Config(format!(
                "{} concepts cannot host {} disjoint pairs per label",
                self.concepts, self.pairs_per_label
            )));
        }
        if self.subjects == 0 || self.templates == 0 {
            return Err(Error::Config("need subjects and templates".into()));
        }
        if self.min_token_len == 0 || self.min_token_len > self.max_token_len {
            return Err(Error::Config(format!(
                "bad token length range {}..={}",
                self.min_token_len, self.max_token_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub verbs: Vec<Verb>,
    pub pairs: Vec<ConceptPair>,
    pub subjects: Vec<String>,
    /// Clause bodies; a clause is subject + template tokens + concept.
    pub templates: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn verbs_with(&self, sig: Signature) -> Vec<&Verb> {
        self.verbs.iter().filter(|v| v.sig == sig).collect()
    }

    pub fn pairs_with(&self, label: Label) -> Vec<&ConceptPair> {
        self.pairs.iter().filter(|p| p.label == label).collect()
    }

    /// Every distinct token the lexicon can emit, sorted.
    pub fn token_inventory(&self) -> Vec<String> {
        let mut set: HashSet<String> = HashSet::new();
        set.insert(SEP.to_string());
        set.insert(TO.to_string());
        for v in &self.verbs {
            set.insert(v.form.clone());
        }
        for p in &self.pairs {
            set.insert(p.c1.clone());
            set.insert(p.c2.clone());
        }
        for s in &self.subjects {
            set.insert(s.clone());
        }
        for t in &self.templates {
            for tok in t {
                set.insert(tok.clone());
            }
        }
        let mut out: Vec<String> = set.into_iter().collect();
        out.sort();
        out
    }
}

fn fresh_word(rng: &mut ChaCha20Rng, cfg: &LexiconConfig, used: &mut HashSet<String>) -> String {
    loop {
        let len = rng.gen_range(cfg.min_token_len..=cfg.max_token_len);
        let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Build a lexicon. Deterministic in `(config, seed)`.
pub fn build_lexicon(cfg: &LexiconConfig, seed: u64) -> Result<Lexicon> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "lexicon"));
    let mut used: HashSet<String> = [SEP.to_string(), TO.to_string()].into();

    let mut verbs = Vec::new();
    for (sig, count) in [
        (Signature::Plus, cfg.verbs_plus),
        (Signature::Neutral, cfg.verbs_neutral),
        (Signature::Minus, cfg.verbs_minus),
    ] {
        for _ in 0..count {
            verbs.push(Verb {
                form: fresh_word(&mut rng, cfg, &mut used),
                sig,
            });
        }
    }

    let mut concepts: Vec<String> = (0..cfg.concepts)
        .map(|_| fresh_word(&mut rng, cfg, &mut used))
        .collect();
    concepts.shuffle(&mut rng);

    // Each concept joins at most one pair, so the induced relation set is
    // conflict-free and nothing transfers between pairs.
    let mut pairs = Vec::new();
    let mut pool = concepts.into_iter();
    for label in Label::ALL {
        for _ in 0..cfg.pairs_per_label {
            let c1 = pool.next().expect("validated: enough concepts");
            let c2 = pool.next().expect("validated: enough concepts");
            pairs.push(ConceptPair { c1, c2, label });
        }
    }

    let subjects = (0..cfg.subjects)
        .map(|_| fresh_word(&mut rng, cfg, &mut used))
        .collect();

    let templates = (0..cfg.templates)
        .map(|_| {
            let len = rng.gen_range(1..=3);
            (0..len).map(|_| fresh_word(&mut rng, cfg, &mut used)).collect()
        })
        .collect();

    Ok(Lexicon {
        verbs,
        pairs,
        subjects,
        templates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = LexiconConfig::default();
        let a = build_lexicon(&cfg, 42).unwrap();
        let b = build_lexicon(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = build_lexicon(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_counts() {
        let lex = build_lexicon(&LexiconConfig::default(), 42).unwrap();
        assert_eq!(lex.verbs_with(Signature::Plus).len(), 8);
        assert_eq!(lex.verbs_with(Signature::Neutral).len(), 8);
        assert_eq!(lex.verbs_with(Signature::Minus).len(), 5);
        assert_eq!(lex.verbs.len(), 21);
        for label in Label::ALL {
            assert_eq!(lex.pairs_with(label).len(), 36);
        }
        assert_eq!(lex.subjects.len(), 12);
        assert_eq!(lex.templates.len(), 16);
    }

    #[test]
    fn tokens_are_fresh_lowercase_words() {
        let cfg = LexiconConfig::default();
        let lex = build_lexicon(&cfg, 7).unwrap();
        let inventory = lex.token_inventory();
        let mut seen = HashSet::new();
        for tok in &inventory {
            assert!(seen.insert(tok.clone()), "duplicate token {tok}");
            if tok == SEP || tok == TO {
                continue;
            }
            assert!(
                (cfg.min_token_len..=cfg.max_token_len).contains(&tok.len()),
                "token {tok} has bad length"
            );
            assert!(tok.bytes().all(|b| b.is_ascii_lowercase()));
        }
    }

    #[test]
    fn pairs_are_concept_disjoint() {
        let lex = build_lexicon(&LexiconConfig::default(), 42).unwrap();
        let mut seen = HashSet::new();
        for p in &lex.pairs {
            assert_ne!(p.c1, p.c2);
            assert!(seen.insert(p.c1.clone()), "{} reused", p.c1);
            assert!(seen.insert(p.c2.clone()), "{} reused", p.c2);
        }
    }

    #[test]
    fn rejects_impossible_configs() {
        let mut cfg = LexiconConfig::default();
        cfg.concepts = 10;
        assert!(build_lexicon(&cfg, 1).is_err());
        let mut cfg = LexiconConfig::default();
        cfg.min_token_len = 9;
        cfg.max_token_len = 4;
        assert!(build_lexicon(&cfg, 1).is_err());
        let mut cfg = LexiconConfig::default();
        cfg.verbs_minus = 0;
        assert!(build_lexicon(&cfg, 1).is_err());
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let cfg: LexiconConfig = serde_json::from_str("{\"concepts\": 100}").unwrap();
        assert_eq!(cfg.concepts, 100);
        assert_eq!(cfg.verbs_plus, 8);
        assert!(serde_json::from_str::<LexiconConfig>("{\"bogus\": 1}").is_err());
    }
}
