//! The six-class banking risk taxonomy.
//!
//! Every other module indexes per-class data with [`RiskLabel::index`], so the
//! canonical order defined here is also the order of every wire vector.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of classes in the taxonomy.
pub const NUM_CLASSES: usize = 6;

/// Default decision threshold applied when a config omits one.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const DEFAULT_TAXONOMY_JSON: &str = include_str!("../fixtures/taxonomy.json");

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("unknown label: {0:?}")]
    UnknownLabel(String),
    #[error("duplicate class: {0}")]
    DuplicateClass(RiskLabel),
    #[error("missing class: {0}")]
    MissingClass(RiskLabel),
    #[error("missing in-scope class: banking_related must be the only in-scope class")]
    MissingInScope,
    #[error("class {label} has scope {found}, expected {expected}")]
    WrongScope {
        label: RiskLabel,
        found: Scope,
        expected: Scope,
    },
    #[error("threshold for {label} is {value}, must be within [0, 1]")]
    ThresholdOutOfRange { label: RiskLabel, value: f64 },
    #[error("severity order must be a permutation of the five out-of-scope classes: {0}")]
    BadSeverityOrder(String),
    #[error("malformed taxonomy document: {0}")]
    Parse(String),
    #[error("reading taxonomy: {0}")]
    Io(String),
}

/// One of the six canonical class names.
///
/// Variant order is the canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskLabel {
    BankingRelated,
    Harmful,
    OffTopic,
    SystemAttack,
    Vulnerable,
    Complaint,
}

impl RiskLabel {
    /// All labels in canonical order.
    pub const ALL: [RiskLabel; NUM_CLASSES] = [
        RiskLabel::BankingRelated,
        RiskLabel::Harmful,
        RiskLabel::OffTopic,
        RiskLabel::SystemAttack,
        RiskLabel::Vulnerable,
        RiskLabel::Complaint,
    ];

    /// The five out-of-scope labels in canonical order.
    pub const OUT_OF_SCOPE: [RiskLabel; NUM_CLASSES - 1] = [
        RiskLabel::Harmful,
        RiskLabel::OffTopic,
        RiskLabel::SystemAttack,
        RiskLabel::Vulnerable,
        RiskLabel::Complaint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLabel::BankingRelated => "banking_related",
            RiskLabel::Harmful => "harmful",
            RiskLabel::OffTopic => "off_topic",
            RiskLabel::SystemAttack => "system_attack",
            RiskLabel::Vulnerable => "vulnerable",
            RiskLabel::Complaint => "complaint",
        }
    }

    /// Position in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<RiskLabel> {
        Self::ALL.get(index).copied()
    }

    pub fn scope(self) -> Scope {
        if self == RiskLabel::BankingRelated {
            Scope::InScope
        } else {
            Scope::OutOfScope
        }
    }

    pub fn is_in_scope(self) -> bool {
        self.scope() == Scope::InScope
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLabel {
    type Err = TaxonomyError;

    /// Exact, case-sensitive match on the snake_case name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RiskLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| TaxonomyError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for RiskLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RiskLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    #[serde(rename = "in-scope")]
    InScope,
    #[serde(rename = "out-of-scope")]
    OutOfScope,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::InScope => "in-scope",
            Scope::OutOfScope => "out-of-scope",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskClass {
    pub name: RiskLabel,
    pub scope: Scope,
    pub description: String,
    #[serde(default)]
    pub subtypes: Vec<String>,
}

/// Per-class values stored in canonical order, serialized as a
/// `{class_name: value}` object whose keys follow the canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerClass<T>(pub [T; NUM_CLASSES]);

impl<T: Copy> PerClass<T> {
    pub fn splat(value: T) -> Self {
        PerClass([value; NUM_CLASSES])
    }

    pub fn get(&self, label: RiskLabel) -> T {
        self.0[label.index()]
    }

    pub fn set(&mut self, label: RiskLabel, value: T) {
        self.0[label.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (RiskLabel, T)> + '_ {
        RiskLabel::ALL.into_iter().zip(self.0.iter().copied())
    }
}

impl<T: Copy + Default> Default for PerClass<T> {
    fn default() -> Self {
        PerClass::splat(T::default())
    }
}

impl<T: Serialize> Serialize for PerClass<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(NUM_CLASSES))?;
        for (label, value) in RiskLabel::ALL.iter().zip(self.0.iter()) {
            map.serialize_entry(label.as_str(), value)?;
        }
        map.end()
    }
}

/// A validated taxonomy. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    classes: Vec<RiskClass>,
    thresholds: PerClass<f64>,
    severity_order: Vec<RiskLabel>,
}

/// On-disk shape of the taxonomy config.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDocument {
    classes: Vec<RiskClass>,
    #[serde(default)]
    thresholds: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    severity_order: Option<Vec<String>>,
}

/// Default tie-break order, most severe first.
pub const DEFAULT_SEVERITY_ORDER: [RiskLabel; NUM_CLASSES - 1] = [
    RiskLabel::Harmful,
    RiskLabel::SystemAttack,
    RiskLabel::Vulnerable,
    RiskLabel::Complaint,
    RiskLabel::OffTopic,
];

impl Taxonomy {
    /// Parse and validate a JSON config document.
    pub fn load_str(document: &str) -> Result<Taxonomy, TaxonomyError> {
        let doc: TaxonomyDocument =
            serde_json::from_str(document).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::load_str(&text)
    }

    fn from_document(doc: TaxonomyDocument) -> Result<Taxonomy, TaxonomyError> {
        let mut slots: [Option<RiskClass>; NUM_CLASSES] = Default::default();
        for class in doc.classes {
            let slot = &mut slots[class.name.index()];
            if slot.is_some() {
                return Err(TaxonomyError::DuplicateClass(class.name));
            }
            *slot = Some(class);
        }

        let in_scope = slots
            .iter()
            .flatten()
            .filter(|c| c.scope == Scope::InScope)
            .count();
        match &slots[RiskLabel::BankingRelated.index()] {
            Some(c) if c.scope == Scope::InScope && in_scope == 1 => {}
            Some(c) if c.scope != Scope::InScope => return Err(TaxonomyError::MissingInScope),
            None => return Err(TaxonomyError::MissingInScope),
            _ => {}
        }
        for class in slots.iter().flatten() {
            let expected = class.name.scope();
            if class.scope != expected {
                return Err(TaxonomyError::WrongScope {
                    label: class.name,
                    found: class.scope,
                    expected,
                });
            }
        }

        let mut classes = Vec::with_capacity(NUM_CLASSES);
        for (label, slot) in RiskLabel::ALL.into_iter().zip(slots) {
            classes.push(slot.ok_or(TaxonomyError::MissingClass(label))?);
        }

        let mut thresholds = PerClass::splat(DEFAULT_THRESHOLD);
        for (name, value) in doc.thresholds {
            let label: RiskLabel = name.parse()?;
            let value = value
                .as_f64()
                .ok_or_else(|| TaxonomyError::Parse(format!("threshold for {label} is not a number")))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(TaxonomyError::ThresholdOutOfRange { label, value });
            }
            thresholds.set(label, value);
        }

        let severity_order = match doc.severity_order {
            None => DEFAULT_SEVERITY_ORDER.to_vec(),
            Some(names) => {
                let order = names
                    .iter()
                    .map(|n| n.parse())
                    .collect::<Result<Vec<RiskLabel>, _>>()?;
                validate_severity(&order)?;
                order
            }
        };

        Ok(Taxonomy {
            classes,
            thresholds,
            severity_order,
        })
    }

    /// Canonical-order classes.
    pub fn classes(&self) -> &[RiskClass] {
        &self.classes
    }

    pub fn class(&self, label: RiskLabel) -> &RiskClass {
        &self.classes[label.index()]
    }

    pub fn threshold(&self, label: RiskLabel) -> f64 {
        self.thresholds.get(label)
    }

    pub fn thresholds(&self) -> &PerClass<f64> {
        &self.thresholds
    }

    /// Out-of-scope classes, most severe first.
    pub fn severity_order(&self) -> &[RiskLabel] {
        &self.severity_order
    }

    /// Severity rank of an out-of-scope label (0 = most severe). The
    /// in-scope label ranks after every out-of-scope label.
    pub fn severity_rank(&self, label: RiskLabel) -> usize {
        self.severity_order
            .iter()
            .position(|l| *l == label)
            .unwrap_or(NUM_CLASSES - 1)
    }

    /// Look up a class by its exact canonical name.
    pub fn validate_label(&self, name: &str) -> Result<&RiskClass, TaxonomyError> {
        let label: RiskLabel = name.parse()?;
        Ok(self.class(label))
    }

    /// Return a copy with one threshold replaced.
    pub fn with_threshold(mut self, label: RiskLabel, value: f64) -> Result<Taxonomy, TaxonomyError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(TaxonomyError::ThresholdOutOfRange { label, value });
        }
        self.thresholds.set(label, value);
        Ok(self)
    }

    /// Serialize to the config document form (pretty JSON, trailing newline).
    pub fn to_json_pretty(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        out.push('\n');
        out
    }
}

fn validate_severity(order: &[RiskLabel]) -> Result<(), TaxonomyError> {
    let mut seen = [false; NUM_CLASSES];
    for label in order {
        if label.is_in_scope() {
            return Err(TaxonomyError::BadSeverityOrder(format!(
                "{label} is in-scope"
            )));
        }
        if std::mem::replace(&mut seen[label.index()], true) {
            return Err(TaxonomyError::BadSeverityOrder(format!("{label} repeated")));
        }
    }
    if order.len() != NUM_CLASSES - 1 {
        return Err(TaxonomyError::BadSeverityOrder(format!(
            "expected 5 entries, got {}",
            order.len()
        )));
    }
    Ok(())
}

impl Serialize for Taxonomy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("classes", &self.classes)?;
        map.serialize_entry("thresholds", &self.thresholds)?;
        map.serialize_entry("severity_order", &self.severity_order)?;
        map.end()
    }
}

impl Default for Taxonomy {
    /// The shipped banking taxonomy with default thresholds.
    fn default() -> Self {
        Taxonomy::load_str(DEFAULT_TAXONOMY_JSON).expect("shipped taxonomy is valid")
    }
}

/// The shipped taxonomy document, byte for byte.
pub fn default_taxonomy_document() -> &'static str {
    DEFAULT_TAXONOMY_JSON
}
