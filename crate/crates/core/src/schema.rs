//! Wellness-dimension vocabulary and the label-merging algebra.
//!
//! The six base dimensions are always ordered `PA, IA, VA, SA, SpA, EA`.
//! Coarser schemas are produced by a merge map that sends every base code
//! to exactly one schema label.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown base wellness code `{0}`")]
    UnknownBaseCode(String),
    #[error("merge map does not cover base code `{0}`")]
    IncompleteMergeMap(String),
    #[error("merge map targets `{0}`, which is not a schema label")]
    UnknownTarget(String),
    #[error("schema label `{0}` receives no base code")]
    UnusedLabel(String),
    #[error("duplicate schema label `{0}`")]
    DuplicateLabel(String),
    #[error("schema must have between 2 and 6 labels, got {0}")]
    BadSize(usize),
    #[error("unsupported label count {0}; built-in schemas exist for 4, 5 and 6")]
    UnsupportedCount(usize),
    #[error("label vector does not match schema: {0}")]
    Shape(String),
}

/// Wellness dimension codes. The first six are the base dimensions; `IVA`
/// and `SpEA` only occur in merged schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WellnessDimension {
    PA,
    IA,
    VA,
    SA,
    SpA,
    EA,
    IVA,
    SpEA,
}

impl WellnessDimension {
    pub const BASE: [WellnessDimension; 6] = [
        WellnessDimension::PA,
        WellnessDimension::IA,
        WellnessDimension::VA,
        WellnessDimension::SA,
        WellnessDimension::SpA,
        WellnessDimension::EA,
    ];

    pub fn code(self) -> &'static str {
        match self {
            WellnessDimension::PA => "PA",
            WellnessDimension::IA => "IA",
            WellnessDimension::VA => "VA",
            WellnessDimension::SA => "SA",
            WellnessDimension::SpA => "SpA",
            WellnessDimension::EA => "EA",
            WellnessDimension::IVA => "IVA",
            WellnessDimension::SpEA => "SpEA",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            WellnessDimension::PA => "Physical Aspect",
            WellnessDimension::IA => "Intellectual Aspect",
            WellnessDimension::VA => "Vocational Aspect",
            WellnessDimension::SA => "Social Aspect",
            WellnessDimension::SpA => "Spiritual Aspect",
            WellnessDimension::EA => "Emotional Aspect",
            WellnessDimension::IVA => "Intellectual and Vocational Aspect",
            WellnessDimension::SpEA => "Spiritual and Emotional Aspect",
        }
    }

    pub fn is_base(self) -> bool {
        Self::BASE.contains(&self)
    }

    /// Position in the fixed base order, `None` for merged codes.
    pub fn base_index(self) -> Option<usize> {
        Self::BASE.iter().position(|d| *d == self)
    }
}

impl fmt::Display for WellnessDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for WellnessDimension {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            WellnessDimension::PA,
            WellnessDimension::IA,
            WellnessDimension::VA,
            WellnessDimension::SA,
            WellnessDimension::SpA,
            WellnessDimension::EA,
            WellnessDimension::IVA,
            WellnessDimension::SpEA,
        ];
        all.into_iter()
            .find(|d| d.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SchemaError::UnknownBaseCode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultiLabel,
    MultiClass,
}

/// Gold or predicted labels for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelVector {
    MultiLabel { values: Vec<bool> },
    MultiClass { class: usize },
}

impl LabelVector {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            LabelVector::MultiLabel { .. } => TaskKind::MultiLabel,
            LabelVector::MultiClass { .. } => TaskKind::MultiClass,
        }
    }

    /// Checks the vector against a schema of `size` labels.
    pub fn validate(&self, size: usize) -> Result<(), SchemaError> {
        match self {
            LabelVector::MultiLabel { values } if values.len() != size => Err(SchemaError::Shape(
                format!("{} values for a {size}-label schema", values.len()),
            )),
            LabelVector::MultiClass { class } if *class >= size => Err(SchemaError::Shape(
                format!("class {class} out of range for a {size}-label schema"),
            )),
            _ => Ok(()),
        }
    }

    /// Dense 0/1 target over `size` labels (one-hot for multi-class).
    pub fn to_targets(&self, size: usize) -> Vec<f64> {
        match self {
            LabelVector::MultiLabel { values } => {
                values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
            }
            LabelVector::MultiClass { class } => {
                (0..size).map(|i| if i == *class { 1.0 } else { 0.0 }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawSchema {
    labels: Vec<String>,
    merge_map: BTreeMap<String, String>,
}

/// Ordered label set plus the total map from the six base codes onto it.
///
/// Labels are free-form codes so that user-supplied schemas (such as a
/// three-label grouping) can be declared in configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct LabelSchema {
    labels: Vec<String>,
    /// Target label index for each base dimension, in base order.
    targets: [usize; 6],
}

impl TryFrom<RawSchema> for LabelSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        let mut pairs = Vec::with_capacity(raw.merge_map.len());
        for (base, target) in &raw.merge_map {
            let dim: WellnessDimension = base.parse()?;
            if !dim.is_base() {
                return Err(SchemaError::UnknownBaseCode(base.clone()));
            }
            pairs.push((dim, target.clone()));
        }
        LabelSchema::new(raw.labels, pairs)
    }
}

impl From<LabelSchema> for RawSchema {
    fn from(schema: LabelSchema) -> Self {
        let merge_map = WellnessDimension::BASE
            .iter()
            .zip(schema.targets.iter())
            .map(|(d, &t)| (d.code().to_string(), schema.labels[t].clone()))
            .collect();
        RawSchema { labels: schema.labels, merge_map }
    }
}

impl LabelSchema {
    pub fn new(
        labels: Vec<String>,
        merge_map: impl IntoIterator<Item = (WellnessDimension, String)>,
    ) -> Result<Self, SchemaError> {
        if !(2..=6).contains(&labels.len()) {
            return Err(SchemaError::BadSize(labels.len()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(SchemaError::DuplicateLabel(l.clone()));
            }
        }
        let mut targets: [Option<usize>; 6] = [None; 6];
        for (dim, target) in merge_map {
            let base = dim
                .base_index()
                .ok_or_else(|| SchemaError::UnknownBaseCode(dim.code().to_string()))?;
            let idx = labels
                .iter()
                .position(|l| *l == target)
                .ok_or_else(|| SchemaError::UnknownTarget(target.clone()))?;
            targets[base] = Some(idx);
        }
        let mut resolved = [0usize; 6];
        for (i, t) in targets.iter().enumerate() {
            resolved[i] = t.ok_or_else(|| {
                SchemaError::IncompleteMergeMap(WellnessDimension::BASE[i].code().to_string())
            })?;
        }
        for (i, l) in labels.iter().enumerate() {
            if !resolved.contains(&i) {
                return Err(SchemaError::UnusedLabel(l.clone()));
            }
        }
        Ok(LabelSchema { labels, targets: resolved })
    }

    /// The six base dimensions mapped onto themselves.
    pub fn base() -> Self {
        Self::from_dims(&WellnessDimension::BASE, |d| d)
    }

    fn from_dims(
        labels: &[WellnessDimension],
        map: impl Fn(WellnessDimension) -> WellnessDimension,
    ) -> Self {
        let names = labels.iter().map(|d| d.code().to_string()).collect();
        let pairs = WellnessDimension::BASE.iter().map(|&d| (d, map(d).code().to_string()));
        Self::new(names, pairs).expect("built-in schema is well formed")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Schema label index receiving the given base dimension.
    pub fn target_of(&self, base: WellnessDimension) -> Option<usize> {
        base.base_index().map(|i| self.targets[i])
    }

    /// Base dimensions merged into schema label `label`.
    pub fn constituents(&self, label: usize) -> Vec<WellnessDimension> {
        WellnessDimension::BASE
            .iter()
            .zip(self.targets.iter())
            .filter(|(_, &t)| t == label)
            .map(|(d, _)| *d)
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.labels.len() == 6 && self.targets.iter().enumerate().all(|(i, &t)| i == t)
    }
}

/// Default hierarchy: 6 is the base schema, 5 merges SpA and EA into SpEA,
/// 4 additionally merges IA and VA into IVA.
pub fn schema_for(label_count: usize) -> Result<LabelSchema, SchemaError> {
    use WellnessDimension::*;
    let merge5 = |d| match d {
        SpA | EA => SpEA,
        other => other,
    };
    let merge4 = |d| match d {
        IA | VA => IVA,
        SpA | EA => SpEA,
        other => other,
    };
    match label_count {
        6 => Ok(LabelSchema::base()),
        5 => Ok(LabelSchema::from_dims(&[PA, IA, VA, SA, SpEA], merge5)),
        4 => Ok(LabelSchema::from_dims(&[PA, IVA, SA, SpEA], merge4)),
        n => Err(SchemaError::UnsupportedCount(n)),
    }
}

/// Coarsens a base-schema label vector onto `target`.
///
/// Multi-label values are OR-ed over constituents; a multi-class index is
/// sent through the merge map.
pub fn merge_labels(v: &LabelVector, target: &LabelSchema) -> Result<LabelVector, SchemaError> {
    v.validate(6)?;
    match v {
        LabelVector::MultiLabel { values } => {
            let mut merged = vec![false; target.len()];
            for (base, &present) in values.iter().enumerate() {
                merged[target.targets[base]] |= present;
            }
            Ok(LabelVector::MultiLabel { values: merged })
        }
        LabelVector::MultiClass { class } => {
            Ok(LabelVector::MultiClass { class: target.targets[*class] })
        }
    }
}
