//! Three-valued inference label algebra.
//!
//! Everything downstream is grounded in three closed enumerations:
//! inference labels (entailment / neutral / contradiction), verb
//! veridicality signatures (positive / neutral / negative), and their
//! nine-way product, the compositional type. The composition table that
//! maps a signature and a constituent label to the compositional label
//! is the single source of ground truth for dataset golds; the derived
//! function-type view exists for analysis and curricula and is checked
//! against the table in tests.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Inference label. Integer codes are fixed (e=0, n=1, c=2) so that
/// serialized datasets and argmax tie-breaking are stable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Entailment = 0,
    Neutral = 1,
    Contradiction = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Neutral, Label::Contradiction];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Label> {
        Label::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "e",
            Label::Neutral => "n",
            Label::Contradiction => "c",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e" => Ok(Label::Entailment),
            "n" => Ok(Label::Neutral),
            "c" => Ok(Label::Contradiction),
            other => Err(Error::Parse(format!("unknown label {other:?}, expected e/n/c"))),
        }
    }
}

/// Veridicality signature of a sentence-embedding verb. Codes fixed
/// (+ = 0, o = 1, - = 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Signature {
    Plus = 0,
    Neutral = 1,
    Minus = 2,
}

impl Signature {
    pub const ALL: [Signature; 3] = [Signature::Plus, Signature::Neutral, Signature::Minus];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Signature> {
        Signature::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Signature::Plus => "+",
            Signature::Neutral => "o",
            Signature::Minus => "-",
        }
    }

    /// The label a veridical primitive carries: a positive verb entails its
    /// complement, a neutral verb leaves it undecided, a negative verb
    /// entails its negation.
    pub fn label_image(self) -> Label {
        match self {
            Signature::Plus => Label::Entailment,
            Signature::Neutral => Label::Neutral,
            Signature::Minus => Label::Contradiction,
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Signature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "+" => Ok(Signature::Plus),
            "o" => Ok(Signature::Neutral),
            "-" => Ok(Signature::Minus),
            other => Err(Error::Parse(format!(
                "unknown signature {other:?}, expected +/o/-"
            ))),
        }
    }
}

/// Compositional inference type: the (signature, constituent label) pair.
/// There are exactly nine; `index()` numbers them 1..=9 in table row order
/// (signature-major, label-minor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompType {
    pub v: Signature,
    pub n: Label,
}

impl CompType {
    pub fn new(v: Signature, n: Label) -> CompType {
        CompType { v, n }
    }

    /// All nine types in row order ①..⑨.
    pub fn all() -> [CompType; 9] {
        let mut out = [CompType::new(Signature::Plus, Label::Entailment); 9];
        let mut i = 0;
        for v in Signature::ALL {
            for n in Label::ALL {
                out[i] = CompType::new(v, n);
                i += 1;
            }
        }
        out
    }

    /// 1-based row index: ① = (+, e) .. ⑨ = (-, c).
    pub fn index(self) -> usize {
        self.v.code() * 3 + self.n.code() + 1
    }

    pub fn from_index(index: usize) -> Option<CompType> {
        if !(1..=9).contains(&index) {
            return None;
        }
        let i = index - 1;
        Some(CompType::new(
            Signature::from_code(i / 3).unwrap(),
            Label::from_code(i % 3).unwrap(),
        ))
    }

    /// The compositional gold label for this type.
    pub fn gold(self) -> Label {
        compose(self.v, self.n)
    }

    pub fn function_type(self) -> FunctionType {
        function_type(self.v)
    }
}

impl fmt::Display for CompType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.v, self.n)
    }
}

impl FromStr for CompType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let (Some(vc), Some(nc), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::Parse(format!(
                "comp type must be two characters, got {s:?}"
            )));
        };
        Ok(CompType::new(
            vc.to_string().parse()?,
            nc.to_string().parse()?,
        ))
    }
}

/// The label map a signature induces on its constituent: identity for
/// positive verbs, constant-neutral for neutral verbs, label inversion
/// (e <-> c) for negative verbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FunctionType {
    Identity,
    ConstantNeutral,
    Inverse,
}

impl FunctionType {
    pub const ALL: [FunctionType; 3] = [
        FunctionType::Identity,
        FunctionType::ConstantNeutral,
        FunctionType::Inverse,
    ];

    pub fn apply(self, n: Label) -> Label {
        match self {
            FunctionType::Identity => n,
            FunctionType::ConstantNeutral => Label::Neutral,
            FunctionType::Inverse => match n {
                Label::Entailment => Label::Contradiction,
                Label::Neutral => Label::Neutral,
                Label::Contradiction => Label::Entailment,
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionType::Identity => "identity",
            FunctionType::ConstantNeutral => "constant-neutral",
            FunctionType::Inverse => "inverse",
        }
    }
}

impl fmt::Display for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Composition rule table, indexed `[signature][constituent label]`.
/// This constant is the ground truth; `function_type` is the derived view.
const COMPOSE_TABLE: [[Label; 3]; 3] = [
    // positive: the constituent label passes through
    [Label::Entailment, Label::Neutral, Label::Contradiction],
    // neutral: everything is absorbed to neutral
    [Label::Neutral, Label::Neutral, Label::Neutral],
    // negative: entailment and contradiction swap
    [Label::Contradiction, Label::Neutral, Label::Entailment],
];

/// Compose a veridical signature with a constituent inference label.
pub fn compose(v: Signature, n: Label) -> Label {
    COMPOSE_TABLE[v.code()][n.code()]
}

/// The function type induced by a signature.
pub fn function_type(v: Signature) -> FunctionType {
    match v {
        Signature::Plus => FunctionType::Identity,
        Signature::Neutral => FunctionType::ConstantNeutral,
        Signature::Minus => FunctionType::Inverse,
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

impl Serialize for CompType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CompType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use Label::{Contradiction as C, Entailment as E, Neutral as N};
    use Signature::{Minus, Neutral as SigN, Plus};

    #[test]
    fn compose_matches_all_nine_rules() {
        let expected = [
            (Plus, E, E),
            (Plus, N, N),
            (Plus, C, C),
            (SigN, E, N),
            (SigN, N, N),
            (SigN, C, N),
            (Minus, E, C),
            (Minus, N, N),
            (Minus, C, E),
        ];
        for (v, n, out) in expected {
            assert_eq!(compose(v, n), out, "compose({v}, {n})");
        }
    }

    #[test]
    fn neutral_signature_absorbs_everything() {
        for n in Label::ALL {
            assert_eq!(compose(SigN, n), N);
        }
    }

    #[test]
    fn minus_composition_is_an_involution() {
        for n in Label::ALL {
            assert_eq!(compose(Minus, compose(Minus, n)), n);
        }
        assert_eq!(compose(Minus, N), N);
    }

    #[test]
    fn function_type_view_agrees_with_table() {
        for v in Signature::ALL {
            for n in Label::ALL {
                assert_eq!(function_type(v).apply(n), compose(v, n), "({v}, {n})");
            }
        }
    }

    #[test]
    fn function_type_examples() {
        assert_eq!(function_type(Plus), FunctionType::Identity);
        assert_eq!(FunctionType::Identity.apply(N), N);
        assert_eq!(function_type(SigN), FunctionType::ConstantNeutral);
        assert_eq!(FunctionType::ConstantNeutral.apply(E), N);
        assert_eq!(function_type(Minus), FunctionType::Inverse);
        assert_eq!(FunctionType::Inverse.apply(N), N);
    }

    #[test]
    fn label_order_is_e_n_c() {
        assert!(E < N && N < C);
        assert_eq!(Label::ALL.map(Label::code), [0, 1, 2]);
        assert_eq!(Signature::ALL.map(Signature::code), [0, 1, 2]);
    }

    #[test]
    fn comp_type_indexing_is_row_order() {
        let all = CompType::all();
        assert_eq!(all.len(), 9);
        for (i, ct) in all.iter().enumerate() {
            assert_eq!(ct.index(), i + 1);
            assert_eq!(CompType::from_index(i + 1), Some(*ct));
        }
        assert_eq!(CompType::new(Plus, E).index(), 1);
        assert_eq!(CompType::new(SigN, C).index(), 6);
        assert_eq!(CompType::new(Minus, E).index(), 7);
        assert_eq!(CompType::from_index(0), None);
        assert_eq!(CompType::from_index(10), None);
    }

    #[test]
    fn string_forms_round_trip() {
        for v in Signature::ALL {
            for n in Label::ALL {
                let ct = CompType::new(v, n);
                let s = ct.to_string();
                assert_eq!(s.len(), 2);
                assert_eq!(s.parse::<CompType>().unwrap(), ct);
            }
        }
        assert_eq!("+e".parse::<CompType>().unwrap(), CompType::new(Plus, E));
        assert_eq!("oc".parse::<CompType>().unwrap(), CompType::new(SigN, C));
        assert_eq!("-n".parse::<CompType>().unwrap(), CompType::new(Minus, N));
        assert!("xe".parse::<CompType>().is_err());
        assert!("+".parse::<CompType>().is_err());
        assert!("+ee".parse::<CompType>().is_err());
    }

    #[test]
    fn json_forms_are_bare_strings() {
        assert_eq!(serde_json::to_string(&E).unwrap(), "\"e\"");
        assert_eq!(serde_json::to_string(&Signature::Minus).unwrap(), "\"-\"");
        assert_eq!(
            serde_json::to_string(&CompType::new(SigN, C)).unwrap(),
            "\"oc\""
        );
        let back: CompType = serde_json::from_str("\"-n\"").unwrap();
        assert_eq!(back, CompType::new(Minus, N));
    }

    #[test]
    fn label_image_matches_signature_semantics() {
        assert_eq!(Plus.label_image(), E);
        assert_eq!(SigN.label_image(), N);
        assert_eq!(Minus.label_image(), C);
    }
}
