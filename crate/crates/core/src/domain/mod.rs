//! Domains: vertex universe, initial state, rules, action and observation
//! models. Stored as JSON.

mod bookshelf;
mod simulate;
mod trace;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{ActionModel, ObservationModel};
use crate::graph::{Conservation, Hyperedge, Label, Vertex};
use crate::lifted::{BoundedEdge, LiftedError, LiftedMultiHypergraph, TotalConstraint};
use crate::rewrite::{Effect, LabelMatch, LiftedEffect, Pattern, RewriteError, Rule};

pub use bookshelf::{bookshelf_domain, mini_bookshelf_domain};
pub use simulate::{generate_trace, GeneratedTrace};
pub use trace::{parse_trace, serialize_trace, AnnotationTuple, TraceError, TRACE_VERSION};

pub const DOMAIN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("domain syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported domain version {0}")]
    Version(u32),
    #[error("duplicate rule name `{0}`")]
    DuplicateRule(String),
    #[error("undeclared {kind} label `{label}` in {context}")]
    UndeclaredLabel {
        kind: &'static str,
        label: Label,
        context: String,
    },
    #[error("action model weights unknown rule `{0}`")]
    UnknownRule(String),
    #[error("initial state: {0}")]
    InitialState(#[from] LiftedError),
    #[error(transparent)]
    Rule(#[from] RewriteError),
    #[error("observation model: {0}")]
    Observation(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub vertex: BTreeSet<Label>,
    pub edge: BTreeSet<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub vertices: Vec<Vertex>,
    #[serde(default)]
    pub edges: Vec<Hyperedge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounded_edges: Vec<BoundedEdge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<TotalConstraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub pattern: Pattern,
    #[serde(default)]
    pub effect: Effect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifted_effect: Option<LiftedEffect>,
}

/// The on-disk form of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub version: u32,
    pub name: String,
    pub labels: LabelSpec,
    /// Vertex labels counted as components of the assembled object.
    #[serde(default)]
    pub entity_labels: BTreeSet<Label>,
    pub conservation: Conservation,
    pub observation: ObservationModel,
    pub initial_state: StateSpec,
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub action_model: ActionModel,
}

/// A validated domain.
#[derive(Debug, Clone)]
pub struct Domain {
    spec: DomainSpec,
    initial: LiftedMultiHypergraph,
    rules: Vec<Rule>,
}

impl Domain {
    pub fn from_spec(spec: DomainSpec) -> Result<Self, DomainError> {
        if spec.version != DOMAIN_VERSION {
            return Err(DomainError::Version(spec.version));
        }
        let labels = &spec.labels;
        let check = |kind: &'static str, set: &BTreeSet<Label>, l: &Label, ctx: &str| {
            if set.contains(l) {
                Ok(())
            } else {
                Err(DomainError::UndeclaredLabel {
                    kind,
                    label: l.clone(),
                    context: ctx.to_string(),
                })
            }
        };
        let st = &spec.initial_state;
        for v in &st.vertices {
            check("vertex", &labels.vertex, &v.label, "initial state")?;
        }
        for e in &st.edges {
            check("edge", &labels.edge, &e.label, "initial state")?;
        }
        for e in &st.bounded_edges {
            check("edge", &labels.edge, &e.label, "initial state")?;
        }
        for l in &spec.entity_labels {
            check("vertex", &labels.vertex, l, "entity labels")?;
        }
        for l in &spec.conservation.vertex_labels {
            check("vertex", &labels.vertex, l, "conservation")?;
        }
        for l in &spec.conservation.edge_labels {
            check("edge", &labels.edge, l, "conservation")?;
        }
        let obs = &spec.observation;
        check("vertex", &labels.vertex, &obs.agent, "observation")?;
        check("edge", &labels.edge, &obs.location_edge, "observation")?;
        check("edge", &labels.edge, &obs.holds_edge, "observation")?;
        for l in &obs.locations {
            check("vertex", &labels.vertex, l, "observation")?;
        }

        let mut names = BTreeSet::new();
        let mut rules = Vec::with_capacity(spec.rules.len());
        for r in &spec.rules {
            if !names.insert(r.name.as_str()) {
                return Err(DomainError::DuplicateRule(r.name.clone()));
            }
            let rule = Rule::new(
                &r.name,
                r.pattern.clone(),
                r.effect.clone(),
                r.lifted_effect.clone(),
            )?;
            let ctx = format!("rule `{}`", r.name);
            for v in &r.pattern.vertices {
                if let LabelMatch::Exact(l) = &v.label {
                    check("vertex", &labels.vertex, l, &ctx)?;
                }
            }
            for l in rule.labels().1 {
                check("edge", &labels.edge, &l, &ctx)?;
            }
            rules.push(rule);
        }
        if let ActionModel::Weighted(w) = &spec.action_model {
            if let Some(unknown) = w.keys().find(|k| !names.contains(k.as_str())) {
                return Err(DomainError::UnknownRule(unknown.clone()));
            }
        }

        let initial = LiftedMultiHypergraph::build(
            st.vertices.clone(),
            st.edges.clone(),
            st.bounded_edges.clone(),
            st.constraints.clone(),
            spec.conservation.clone(),
        )?;
        if initial.table().with_label(&obs.agent).len() != 1 {
            return Err(DomainError::Observation(format!(
                "exactly one `{}` vertex required",
                obs.agent
            )));
        }
        Ok(Self {
            spec,
            initial,
            rules,
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn initial(&self) -> &LiftedMultiHypergraph {
        &self.initial
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name() == name)
    }

    pub fn action_model(&self) -> &ActionModel {
        &self.spec.action_model
    }

    pub fn observation(&self) -> &ObservationModel {
        &self.spec.observation
    }

    /// Total multiplicity of vertices carrying an entity label.
    pub fn entity_count(&self) -> u64 {
        self.initial
            .vertices()
            .filter(|v| self.spec.entity_labels.contains(&v.label))
            .map(|v| v.multiplicity)
            .sum()
    }

    /// Same domain with a different action model.
    pub fn with_action_model(&self, am: ActionModel) -> Result<Self, DomainError> {
        let mut spec = self.spec.clone();
        spec.action_model = am;
        Self::from_spec(spec)
    }

    /// Same domain with a rule replaced by name.
    pub fn with_rule(&self, rule: RuleSpec) -> Result<Self, DomainError> {
        let mut spec = self.spec.clone();
        match spec.rules.iter_mut().find(|r| r.name == rule.name) {
            Some(r) => *r = rule,
            None => spec.rules.push(rule),
        }
        Self::from_spec(spec)
    }

    /// Label-level validity of an annotation tuple.
    pub fn check_tuple(&self, y: &AnnotationTuple) -> Result<(), String> {
        let locs = &self.spec.observation.locations;
        for l in [&y.loc_t, &y.loc_next] {
            if !locs.contains(l) {
                return Err(format!("`{l}` is not a declared location"));
            }
        }
        for l in y.held_t.keys().chain(y.held_next.keys()) {
            if !self.spec.labels.vertex.contains(l) {
                return Err(format!("`{l}` is not a declared vertex label"));
            }
        }
        Ok(())
    }
}

impl RuleSpec {
    pub fn from_rule(r: &Rule) -> Self {
        Self {
            name: r.name().to_string(),
            pattern: r.lhs().clone(),
            effect: r.effect().clone(),
            lifted_effect: r.lifted_effect().cloned(),
        }
    }
}

impl StateSpec {
    pub fn from_state(l: &LiftedMultiHypergraph) -> Self {
        let (bounded_edges, constraints) = l.bounded_edges();
        Self {
            vertices: l.vertices().cloned().collect(),
            edges: l.fixed_hyperedges(),
            bounded_edges,
            constraints,
        }
    }
}

pub fn parse_domain(text: &str) -> Result<Domain, DomainError> {
    let spec: DomainSpec = serde_json::from_str(text).map_err(|e| DomainError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Domain::from_spec(spec)
}

/// Pretty JSON with a trailing newline; byte-identical for equal domains.
pub fn serialize_domain(d: &Domain) -> String {
    let mut s = serde_json::to_string_pretty(d.spec()).expect("domains serialize");
    s.push('\n');
    s
}
