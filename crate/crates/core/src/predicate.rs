//! Typed comparison predicates with exact satisfiability checking.
//!
//! Triggers and exchange conditions are conjunctions of comparisons over
//! named parameters. Satisfiability of a conjunction reduces to per-name
//! set intersection: integer parameters track disjoint interval lists,
//! tag parameters track include/exclude sets. This keeps the DFA
//! determinism check and invitation matching decidable and exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredicateError {
    #[error("TypeMismatch: parameter {param} mixes integer and tag constraints")]
    TypeMismatch { param: String },
    #[error("BadComparator: tags support only eq/ne, got {op} on {param}")]
    BadComparator { param: String, op: CmpOp },
}

/// An observed or constrained parameter value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Tag(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Tag(s) => write!(f, "{s}"),
        }
    }
}

/// Declared domain of a parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Integers within an inclusive range; amounts and timestamps use this.
    IntRange { min: i64, max: i64 },
    /// A finite set of tags.
    Tags(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
        };
        f.write_str(s)
    }
}

/// One comparison in a conjunction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub param: String,
    pub op: CmpOp,
    pub value: ParamValue,
}

impl Comparison {
    /// Evaluate against an observed value. Integer comparators on tags (or
    /// mixed types) are an error.
    pub fn eval(&self, observed: &ParamValue) -> Result<bool, PredicateError> {
        match (&self.value, observed) {
            (ParamValue::Int(want), ParamValue::Int(got)) => Ok(match self.op {
                CmpOp::Eq => got == want,
                CmpOp::Ne => got != want,
                CmpOp::Lt => got < want,
                CmpOp::Le => got <= want,
                CmpOp::Gt => got > want,
                CmpOp::Ge => got >= want,
            }),
            (ParamValue::Tag(want), ParamValue::Tag(got)) => match self.op {
                CmpOp::Eq => Ok(got == want),
                CmpOp::Ne => Ok(got != want),
                op => Err(PredicateError::BadComparator {
                    param: self.param.clone(),
                    op,
                }),
            },
            _ => Err(PredicateError::TypeMismatch {
                param: self.param.clone(),
            }),
        }
    }
}

/// The set of values a parameter may still take under accumulated
/// constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllowedSet {
    /// Disjoint, ascending inclusive intervals.
    Ints(Vec<(i64, i64)>),
    /// Tag constraints: `include = None` means "any tag not excluded".
    TagSet {
        include: Option<BTreeSet<String>>,
        exclude: BTreeSet<String>,
    },
}

impl AllowedSet {
    pub fn from_domain(domain: &ValueDomain) -> AllowedSet {
        match domain {
            ValueDomain::IntRange { min, max } => AllowedSet::Ints(vec![(*min, *max)]),
            ValueDomain::Tags(tags) => AllowedSet::TagSet {
                include: Some(tags.iter().cloned().collect()),
                exclude: BTreeSet::new(),
            },
        }
    }

    /// Unconstrained integer set.
    pub fn any_int() -> AllowedSet {
        AllowedSet::Ints(vec![(i64::MIN, i64::MAX)])
    }

    /// Unconstrained tag set.
    pub fn any_tag() -> AllowedSet {
        AllowedSet::TagSet {
            include: None,
            exclude: BTreeSet::new(),
        }
    }

    /// Narrow by one comparison.
    pub fn apply(&mut self, cmp: &Comparison) -> Result<(), PredicateError> {
        match (&mut *self, &cmp.value) {
            (AllowedSet::Ints(intervals), ParamValue::Int(v)) => {
                let v = *v;
                let next: Vec<(i64, i64)> = intervals
                    .iter()
                    .flat_map(|&(lo, hi)| restrict_interval(lo, hi, cmp.op, v))
                    .collect();
                *intervals = next;
                Ok(())
            }
            (AllowedSet::TagSet { include, exclude }, ParamValue::Tag(t)) => match cmp.op {
                CmpOp::Eq => {
                    let narrowed: BTreeSet<String> = match include {
                        Some(set) if set.contains(t) => [t.clone()].into_iter().collect(),
                        Some(_) => BTreeSet::new(),
                        None => [t.clone()].into_iter().collect(),
                    };
                    *include = Some(narrowed);
                    Ok(())
                }
                CmpOp::Ne => {
                    if let Some(set) = include {
                        set.remove(t);
                    } else {
                        exclude.insert(t.clone());
                    }
                    Ok(())
                }
                op => Err(PredicateError::BadComparator {
                    param: cmp.param.clone(),
                    op,
                }),
            },
            _ => Err(PredicateError::TypeMismatch {
                param: cmp.param.clone(),
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            AllowedSet::Ints(intervals) => intervals.is_empty(),
            AllowedSet::TagSet {
                include: Some(set),
                exclude,
            } => set.difference(exclude).next().is_none(),
            AllowedSet::TagSet { include: None, .. } => false,
        }
    }

    /// True when exactly one value remains.
    pub fn is_singleton(&self) -> bool {
        match self {
            AllowedSet::Ints(intervals) => intervals.len() == 1 && intervals[0].0 == intervals[0].1,
            AllowedSet::TagSet {
                include: Some(set),
                exclude,
            } => set.difference(exclude).count() == 1,
            AllowedSet::TagSet { include: None, .. } => false,
        }
    }
}

fn restrict_interval(lo: i64, hi: i64, op: CmpOp, v: i64) -> Vec<(i64, i64)> {
    let clamp = |a: i64, b: i64| if a <= b { vec![(a, b)] } else { Vec::new() };
    match op {
        CmpOp::Eq => {
            if lo <= v && v <= hi {
                vec![(v, v)]
            } else {
                Vec::new()
            }
        }
        CmpOp::Ne => {
            let mut parts = Vec::new();
            if lo <= v && v <= hi {
                if lo < v {
                    parts.push((lo, v - 1));
                }
                if v < hi {
                    parts.push((v + 1, hi));
                }
            } else {
                parts.push((lo, hi));
            }
            parts
        }
        CmpOp::Lt => {
            if v == i64::MIN {
                Vec::new()
            } else {
                clamp(lo, hi.min(v - 1))
            }
        }
        CmpOp::Le => clamp(lo, hi.min(v)),
        CmpOp::Gt => {
            if v == i64::MAX {
                Vec::new()
            } else {
                clamp(lo.max(v + 1), hi)
            }
        }
        CmpOp::Ge => clamp(lo.max(v), hi),
    }
}

/// Joint satisfiability of a conjunction over optional declared domains.
/// Parameters without a declared domain default to the full domain of the
/// type their first constraint uses.
pub fn satisfiable(
    constraints: &[&Comparison],
    domains: &BTreeMap<String, ValueDomain>,
) -> Result<bool, PredicateError> {
    Ok(joint_sets(constraints, domains)?
        .values()
        .all(|set| !set.is_empty()))
}

/// Per-parameter allowed sets after applying every constraint.
pub fn joint_sets(
    constraints: &[&Comparison],
    domains: &BTreeMap<String, ValueDomain>,
) -> Result<BTreeMap<String, AllowedSet>, PredicateError> {
    let mut sets: BTreeMap<String, AllowedSet> = BTreeMap::new();
    for cmp in constraints {
        let set = sets
            .entry(cmp.param.clone())
            .or_insert_with(|| match domains.get(&cmp.param) {
                Some(domain) => AllowedSet::from_domain(domain),
                None => match cmp.value {
                    ParamValue::Int(_) => AllowedSet::any_int(),
                    ParamValue::Tag(_) => AllowedSet::any_tag(),
                },
            });
        set.apply(cmp)?;
    }
    Ok(sets)
}
