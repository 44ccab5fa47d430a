//! Graph rewriting rules.
//!
//! A [`Rule`] is a precondition [`Pattern`] plus an [`Effect`] that retracts
//! multiplicity from matched edges and asserts new edges over the matched
//! vertices. Rules never create or destroy vertices.

mod apply;
mod lifted_apply;
mod matching;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::graph::{GraphError, Label, VertexId, VertexTable};
use crate::lifted::LiftedError;

pub use apply::{apply, find_matches, successors, Successor};
pub use lifted_apply::{
    applicability, lifted_apply, lifted_apply_capped, Applicability, LiftedSuccessor,
};
pub use matching::Match;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("rule `{rule}` is malformed: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("rule `{rule}` would drive edge `{label}` below zero")]
    NegativeMultiplicity { rule: String, label: Label },
    #[error("rule `{rule}` breaks state integrity: {source}")]
    Integrity { rule: String, source: GraphError },
    #[error("rule `{rule}` on a lifted state: {source}")]
    Lifted { rule: String, source: LiftedError },
}

/// Vertex label requirement of a pattern variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LabelMatch {
    Exact(Label),
    /// Written `*` in rule files.
    Any,
}

impl LabelMatch {
    pub fn accepts(&self, label: &Label) -> bool {
        match self {
            LabelMatch::Exact(l) => l == label,
            LabelMatch::Any => true,
        }
    }
}

impl From<&str> for LabelMatch {
    fn from(s: &str) -> Self {
        if s == "*" {
            LabelMatch::Any
        } else {
            LabelMatch::Exact(Label::new(s))
        }
    }
}

impl fmt::Display for LabelMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelMatch::Exact(l) => write!(f, "{l}"),
            LabelMatch::Any => f.write_str("*"),
        }
    }
}

impl Serialize for LabelMatch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelMatch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "*" {
            Ok(LabelMatch::Any)
        } else {
            Label::try_new(&s)
                .map(LabelMatch::Exact)
                .map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternVertex {
    pub var: String,
    pub label: LabelMatch,
    #[serde(default = "one")]
    pub multiplicity: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternEdge {
    pub label: Label,
    pub vars: Vec<String>,
    #[serde(default = "one")]
    pub multiplicity: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub vertices: Vec<PatternVertex>,
    pub edges: Vec<PatternEdge>,
}

impl Pattern {
    pub fn vertex(mut self, var: &str, label: &str, multiplicity: u64) -> Self {
        self.vertices.push(PatternVertex {
            var: var.to_string(),
            label: label.into(),
            multiplicity,
        });
        self
    }

    pub fn edge(mut self, label: &str, vars: &[&str], multiplicity: u64) -> Self {
        self.edges.push(PatternEdge {
            label: Label::new(label),
            vars: vars.iter().map(|v| v.to_string()).collect(),
            multiplicity,
        });
        self
    }
}

/// Removes `delta` multiplicity from the pattern edge with index `edge`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retraction {
    pub edge: usize,
    pub delta: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub label: Label,
    pub vars: Vec<String>,
    pub multiplicity: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effect {
    #[serde(default)]
    pub retract: Vec<Retraction>,
    #[serde(default, rename = "assert")]
    pub assert_edges: Vec<Assertion>,
}

impl Effect {
    pub fn retract(mut self, edge: usize, delta: u64) -> Self {
        self.retract.push(Retraction { edge, delta });
        self
    }

    pub fn assert(mut self, label: &str, vars: &[&str], multiplicity: u64) -> Self {
        self.assert_edges.push(Assertion {
            label: Label::new(label),
            vars: vars.iter().map(|v| v.to_string()).collect(),
            multiplicity,
        });
        self
    }
}

/// Which effect entry moves multiplicity inside a bounded-edge group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectTarget {
    Retract(usize),
    Assert(usize),
}

/// Hand-declared bound arithmetic for applying a rule to a lifted state whose
/// target edge is only known up to a group of candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftedEffect {
    pub target: EffectTarget,
    pub total_delta: i64,
    pub per_edge_upper_delta: i64,
    pub cap_to_total: bool,
}

impl LiftedEffect {
    /// New `(lower, upper)` bounds and total for a group under this effect.
    /// Lower bounds drop by the amount the total shrinks; uppers move by
    /// `per_edge_upper_delta` and are capped to the new total when requested.
    pub fn transform(&self, bounds: &[(u64, u64)], total: u64) -> Option<(Vec<(u64, u64)>, u64)> {
        let new_total = u64::try_from(total as i64 + self.total_delta).ok()?;
        let shrink = (-self.total_delta).max(0) as u64;
        let out = bounds
            .iter()
            .map(|&(lo, hi)| {
                let mut hi = (hi as i64 + self.per_edge_upper_delta).max(0) as u64;
                if self.cap_to_total {
                    hi = hi.min(new_total);
                }
                let lo = lo.saturating_sub(shrink).min(hi);
                (lo, hi)
            })
            .collect();
        Some((out, new_total))
    }
}

/// Pattern edge with variables resolved to indices.
#[derive(Debug, Clone)]
pub(crate) struct CompiledEdge {
    pub label: Label,
    pub vars: Vec<usize>,
    pub multiplicity: u64,
}

#[derive(Debug, Clone)]
pub struct Rule {
    name: String,
    lhs: Pattern,
    effect: Effect,
    lifted_effect: Option<LiftedEffect>,
    edges: Vec<CompiledEdge>,
    asserts: Vec<CompiledEdge>,
}

impl Rule {
    pub fn new(
        name: &str,
        lhs: Pattern,
        effect: Effect,
        lifted_effect: Option<LiftedEffect>,
    ) -> Result<Self, RewriteError> {
        let bad = |reason: String| RewriteError::InvalidRule {
            rule: name.to_string(),
            reason,
        };
        if name.is_empty() {
            return Err(bad("empty name".into()));
        }
        let mut vars: HashMap<&str, usize> = HashMap::new();
        for (i, v) in lhs.vertices.iter().enumerate() {
            if v.multiplicity == 0 {
                return Err(bad(format!("variable `{}` requires multiplicity 0", v.var)));
            }
            if vars.insert(v.var.as_str(), i).is_some() {
                return Err(bad(format!("variable `{}` declared twice", v.var)));
            }
        }
        let resolve = |names: &[String]| -> Result<Vec<usize>, RewriteError> {
            if names.is_empty() {
                return Err(bad("edge without variables".into()));
            }
            names
                .iter()
                .map(|n| {
                    vars.get(n.as_str())
                        .copied()
                        .ok_or_else(|| bad(format!("undeclared variable `{n}`")))
                })
                .collect()
        };
        let mut edges = Vec::with_capacity(lhs.edges.len());
        for e in &lhs.edges {
            if e.multiplicity == 0 {
                return Err(bad(format!(
                    "pattern edge `{}` requires multiplicity 0",
                    e.label
                )));
            }
            edges.push(CompiledEdge {
                label: e.label.clone(),
                vars: resolve(&e.vars)?,
                multiplicity: e.multiplicity,
            });
        }
        let mut retracted: BTreeMap<usize, u64> = BTreeMap::new();
        for r in &effect.retract {
            let Some(pe) = edges.get(r.edge) else {
                return Err(bad(format!(
                    "retraction of unknown pattern edge #{}",
                    r.edge
                )));
            };
            if r.delta == 0 {
                return Err(bad("retraction with delta 0".into()));
            }
            let sum = retracted.entry(r.edge).or_insert(0);
            *sum += r.delta;
            if *sum > pe.multiplicity {
                return Err(bad(format!(
                    "retracts {} from pattern edge #{} which only requires {}",
                    sum, r.edge, pe.multiplicity
                )));
            }
        }
        let mut asserts = Vec::with_capacity(effect.assert_edges.len());
        for a in &effect.assert_edges {
            if a.multiplicity == 0 {
                return Err(bad(format!(
                    "assertion of `{}` with multiplicity 0",
                    a.label
                )));
            }
            asserts.push(CompiledEdge {
                label: a.label.clone(),
                vars: resolve(&a.vars)?,
                multiplicity: a.multiplicity,
            });
        }
        if let Some(le) = &lifted_effect {
            let ok = match le.target {
                EffectTarget::Retract(i) => i < effect.retract.len(),
                EffectTarget::Assert(i) => i < effect.assert_edges.len(),
            };
            if !ok {
                return Err(bad("lifted effect targets a missing effect entry".into()));
            }
        }
        Ok(Self {
            name: name.to_string(),
            lhs,
            effect,
            lifted_effect,
            edges,
            asserts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lhs(&self) -> &Pattern {
        &self.lhs
    }

    pub fn effect(&self) -> &Effect {
        &self.effect
    }

    pub fn lifted_effect(&self) -> Option<&LiftedEffect> {
        self.lifted_effect.as_ref()
    }

    /// The same rule without its lifted fast path.
    pub fn without_lifted_effect(&self) -> Self {
        Self {
            lifted_effect: None,
            ..self.clone()
        }
    }

    pub fn with_lifted_effect(&self, lifted_effect: LiftedEffect) -> Result<Self, RewriteError> {
        Self::new(
            &self.name,
            self.lhs.clone(),
            self.effect.clone(),
            Some(lifted_effect),
        )
    }

    /// Every label the rule mentions, vertex labels first.
    pub fn labels(&self) -> (Vec<Label>, Vec<Label>) {
        let vertex = self
            .lhs
            .vertices
            .iter()
            .filter_map(|v| match &v.label {
                LabelMatch::Exact(l) => Some(l.clone()),
                LabelMatch::Any => None,
            })
            .collect();
        let edge = self
            .edges
            .iter()
            .chain(&self.asserts)
            .map(|e| e.label.clone())
            .collect();
        (vertex, edge)
    }

    pub(crate) fn compiled_edges(&self) -> &[CompiledEdge] {
        &self.edges
    }

    pub(crate) fn var_count(&self) -> usize {
        self.lhs.vertices.len()
    }

    /// Edge multiplicity changes a match causes, keyed by state edge.
    pub(crate) fn deltas(&self, m: &Match) -> BTreeMap<crate::graph::EdgeKey, i64> {
        let mut d = BTreeMap::new();
        for r in &self.effect.retract {
            *d.entry(m.key(&self.edges[r.edge])).or_insert(0) -= r.delta as i64;
        }
        for a in &self.asserts {
            *d.entry(m.key(a)).or_insert(0) += a.multiplicity as i64;
        }
        d.retain(|_, v| *v != 0);
        d
    }

    /// State edge and signed change of one effect entry under a match.
    pub(crate) fn target_delta(
        &self,
        m: &Match,
        target: EffectTarget,
    ) -> (crate::graph::EdgeKey, i64) {
        match target {
            EffectTarget::Retract(i) => {
                let r = &self.effect.retract[i];
                (m.key(&self.edges[r.edge]), -(r.delta as i64))
            }
            EffectTarget::Assert(i) => {
                let a = &self.asserts[i];
                (m.key(a), a.multiplicity as i64)
            }
        }
    }

    pub fn describe_match(&self, m: &Match, table: &VertexTable) -> BTreeMap<String, VertexId> {
        self.lhs
            .vertices
            .iter()
            .zip(m.assignment())
            .map(|(pv, &v)| (pv.var.clone(), table.get(v).id.clone()))
            .collect()
    }
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.lhs == other.lhs
            && self.effect == other.effect
            && self.lifted_effect == other.lifted_effect
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_undeclared_variables_and_over_retraction() {
        let p = Pattern::default()
            .vertex("a", "agent", 1)
            .edge("at", &["a", "l"], 1);
        assert!(matches!(
            Rule::new("r", p, Effect::default(), None),
            Err(RewriteError::InvalidRule { .. })
        ));
        let p = Pattern::default()
            .vertex("a", "agent", 1)
            .vertex("l", "*", 1)
            .edge("at", &["a", "l"], 1);
        let e = Effect::default().retract(0, 2);
        assert!(Rule::new("r", p, e, None).is_err());
    }

    #[test]
    fn grow_uppers_and_cap_to_total() {
        // total 4 with caps 2 and 4; one more installed at an unknown location
        let le = LiftedEffect {
            target: EffectTarget::Assert(0),
            total_delta: 1,
            per_edge_upper_delta: 1,
            cap_to_total: true,
        };
        let (bounds, total) = le.transform(&[(0, 2), (0, 4)], 4).unwrap();
        assert_eq!(total, 5);
        assert_eq!(bounds, vec![(0, 3), (0, 5)]);
        // caps never exceed the total
        let (bounds, _) = le.transform(&[(0, 1), (0, 1)], 0).unwrap();
        assert_eq!(bounds, vec![(0, 1), (0, 1)]);
    }

    #[test]
    fn consuming_one_from_a_pool() {
        let le = LiftedEffect {
            target: EffectTarget::Retract(0),
            total_delta: -1,
            per_edge_upper_delta: 0,
            cap_to_total: true,
        };
        assert_eq!(le.transform(&[(1, 1); 3], 3).unwrap(), (vec![(0, 1); 3], 2));
        assert_eq!(le.transform(&[(0, 1)], 0), None);
    }
}
