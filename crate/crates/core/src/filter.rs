//! Recursive Bayesian filtering over lifted states.
//!
//! A step turns the belief `p(x_t | y_1..t)` into the joint prediction
//! `p(x_t, a_t, x_t+1 | y_1..t)`, weights every particle by the 0/1 annotation
//! model, marginalizes `x_t` and `a_t` by summing over successors with equal
//! canonical form, and normalizes.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::CanonicalForm;
use crate::domain::{AnnotationTuple, Domain};
use crate::graph::{EdgeKey, Label, MultiHypergraph, VertexTable};
use crate::lifted::{LiftedError, LiftedMultiHypergraph, DEFAULT_ENUMERATION_CAP};
use crate::rewrite::{applicability, lifted_apply_capped, Applicability, RewriteError, Rule};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("trace inconsistent at step {step}: no state explains {tuple:?}")]
    TraceInconsistent {
        step: usize,
        tuple: Box<AnnotationTuple>,
    },
    #[error("step {step}: {message}")]
    InvalidTuple { step: usize, message: String },
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Lifted(#[from] LiftedError),
}

impl FilterError {
    pub fn is_enumeration_limit(&self) -> bool {
        matches!(
            self,
            FilterError::Lifted(LiftedError::EnumerationLimit { .. })
                | FilterError::Rewrite(RewriteError::Lifted {
                    source: LiftedError::EnumerationLimit { .. },
                    ..
                })
        )
    }
}

/// Which edges an annotation can see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationModel {
    /// Label of the single agent vertex.
    pub agent: Label,
    pub location_edge: Label,
    pub holds_edge: Label,
    pub locations: Vec<Label>,
}

/// The visible part of a state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Observed {
    /// Labels of everything the agent is at, sorted.
    pub location: Vec<Label>,
    pub held: BTreeMap<Label, u64>,
}

impl Observed {
    pub fn at(&self, loc: &Label) -> bool {
        self.location.len() == 1 && &self.location[0] == loc
    }
}

impl ObservationModel {
    fn agent_vertex(&self, table: &VertexTable) -> Option<u32> {
        table.with_label(&self.agent).first().copied()
    }

    fn is_visible(&self, key: &EdgeKey, agent: u32) -> bool {
        (key.label == self.location_edge || key.label == self.holds_edge) && key.touches(agent)
    }

    fn collect<'a>(
        &self,
        table: &VertexTable,
        edges: impl Iterator<Item = (&'a EdgeKey, u64)>,
    ) -> Observed {
        let mut obs = Observed {
            location: Vec::new(),
            held: BTreeMap::new(),
        };
        let Some(agent) = self.agent_vertex(table) else {
            return obs;
        };
        for (key, m) in edges {
            if !self.is_visible(key, agent) {
                continue;
            }
            let mut skipped = false;
            for &v in key.incidence() {
                if v == agent && !skipped {
                    skipped = true;
                    continue;
                }
                let label = table.get(v).label.clone();
                if key.label == self.location_edge {
                    obs.location.push(label);
                } else {
                    *obs.held.entry(label).or_insert(0) += m;
                }
            }
        }
        obs.location.sort();
        obs
    }

    pub fn observe_ground(&self, g: &MultiHypergraph) -> Observed {
        self.collect(g.table(), g.edges())
    }

    /// The visible part shared by all groundings, or `None` when it varies.
    pub fn observe(&self, l: &LiftedMultiHypergraph) -> Option<Observed> {
        let table = l.table();
        if let Some(agent) = self.agent_vertex(table) {
            let (bounded, _) = l.bounded_edges();
            for b in &bounded {
                let key = table.key_for(&b.label, &b.incidence).ok()?;
                if self.is_visible(&key, agent) {
                    return None;
                }
            }
        }
        Some(self.collect(table, l.fixed_edges()))
    }

    /// Whether a ground transition produces the annotation.
    pub fn explains(
        &self,
        y: &AnnotationTuple,
        before: &Observed,
        rule: &str,
        after: &Observed,
    ) -> bool {
        rule == y.action
            && before.at(&y.loc_t)
            && after.at(&y.loc_next)
            && before.held == y.held_t
            && after.held == y.held_next
    }

    pub fn explains_before(&self, y: &AnnotationTuple, before: &Observed) -> bool {
        before.at(&y.loc_t) && before.held == y.held_t
    }

    pub fn explains_after(&self, y: &AnnotationTuple, after: &Observed) -> bool {
        after.at(&y.loc_next) && after.held == y.held_next
    }
}

/// `p(a_t | x_t)`, as a function of the set of applicable rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionModel {
    #[default]
    Uniform,
    /// Applicable rules are chosen proportionally to these weights. Rules not
    /// listed weigh 1.
    Weighted(BTreeMap<String, f64>),
}

impl ActionModel {
    /// Probabilities for the applicable rules, in the given order. All zeros
    /// when no rule has positive weight.
    pub fn distribution(&self, applicable: &[&str]) -> Vec<f64> {
        let w: Vec<f64> = match self {
            ActionModel::Uniform => vec![1.0; applicable.len()],
            ActionModel::Weighted(m) => applicable
                .iter()
                .map(|r| m.get(*r).copied().unwrap_or(1.0).max(0.0))
                .collect(),
        };
        let z: f64 = w.iter().sum();
        if z <= 0.0 {
            return vec![0.0; w.len()];
        }
        w.into_iter().map(|x| x / z).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BeliefEntry {
    pub state: Arc<LiftedMultiHypergraph>,
    pub weight: f64,
}

/// `p(x_t | y_1..t)` as weighted lifted states keyed by canonical form.
#[derive(Debug, Clone, Default)]
pub struct Belief {
    entries: BTreeMap<CanonicalForm, BeliefEntry>,
}

impl Belief {
    pub fn singleton(state: LiftedMultiHypergraph) -> Self {
        Self::from_weighted([(state, 1.0)])
    }

    /// Merges by canonical form and normalizes. Non-positive weights are dropped.
    pub fn from_weighted(items: impl IntoIterator<Item = (LiftedMultiHypergraph, f64)>) -> Self {
        let mut acc = Accumulator::default();
        for (s, w) in items {
            acc.add(s.canonical_form(), Arc::new(s), w);
        }
        acc.into_belief().0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CanonicalForm, &BeliefEntry)> {
        self.entries.iter()
    }

    pub fn get(&self, form: &CanonicalForm) -> Option<&BeliefEntry> {
        self.entries.get(form)
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.values().map(|e| e.weight).sum()
    }

    /// Sum of grounding counts; the size of the ground support when entries
    /// do not overlap.
    pub fn ground_count(&self) -> u128 {
        self.entries
            .values()
            .fold(0u128, |a, e| a.saturating_add(e.state.count_groundings()))
    }
}

#[derive(Default)]
struct Accumulator {
    entries: BTreeMap<CanonicalForm, BeliefEntry>,
}

impl Accumulator {
    fn add(&mut self, form: CanonicalForm, state: Arc<LiftedMultiHypergraph>, w: f64) {
        if w <= 0.0 {
            return;
        }
        self.entries
            .entry(form)
            .or_insert(BeliefEntry { state, weight: 0.0 })
            .weight += w;
    }

    /// Normalized belief and the normalizer.
    fn into_belief(self) -> (Belief, f64) {
        let z: f64 = self.entries.values().map(|e| e.weight).sum();
        let mut entries = self.entries;
        if z > 0.0 {
            for e in entries.values_mut() {
                e.weight /= z;
            }
        }
        (Belief { entries }, z)
    }
}

/// One term of `p(x_t, a_t, x_t+1 | y_1..t)`.
#[derive(Debug, Clone)]
pub struct Particle {
    pub predecessor: CanonicalForm,
    /// What the annotation can see of the predecessor; every grounding agrees.
    pub before: Observed,
    pub rule: String,
    pub successor: Arc<LiftedMultiHypergraph>,
    pub successor_form: CanonicalForm,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct JointPrediction {
    pub particles: Vec<Particle>,
    /// Predecessor states without any applicable rule, with their mass.
    pub dead_ends: Vec<(CanonicalForm, f64)>,
}

impl JointPrediction {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FilterOptions {
    /// Largest grounding count the filter may enumerate.
    pub max_groundings: u128,
    pub parallel: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            max_groundings: DEFAULT_ENUMERATION_CAP,
            parallel: true,
        }
    }
}

/// Entries whose visible part or rule set differs between groundings are
/// split into their groundings so the action model sees a single state.
fn prepare(
    state: &Arc<LiftedMultiHypergraph>,
    weight: f64,
    rules: &[Rule],
    obs: &ObservationModel,
    cap: u128,
) -> Result<Vec<(Arc<LiftedMultiHypergraph>, CanonicalForm, f64)>, FilterError> {
    let uniform = state.is_ground()
        || (obs.observe(state).is_some()
            && rules
                .iter()
                .all(|r| applicability(r, state) != Applicability::Partial));
    if uniform {
        return Ok(vec![(state.clone(), state.canonical_form(), weight)]);
    }
    let gs = state.groundings_capped(cap)?;
    let w = weight / gs.len() as f64;
    Ok(gs
        .into_iter()
        .map(|g| {
            let l = LiftedMultiHypergraph::from_ground(&g);
            let f = l.canonical_form();
            (Arc::new(l), f, w)
        })
        .collect())
}

fn predict_entry(
    state: &Arc<LiftedMultiHypergraph>,
    form: &CanonicalForm,
    weight: f64,
    rules: &[Rule],
    am: &ActionModel,
    obs: &ObservationModel,
    cap: u128,
) -> Result<(Vec<Particle>, Option<(CanonicalForm, f64)>), FilterError> {
    let applicable: Vec<&Rule> = rules
        .iter()
        .filter(|r| applicability(r, state) == Applicability::Always)
        .collect();
    let names: Vec<&str> = applicable.iter().map(|r| r.name()).collect();
    let dist = am.distribution(&names);
    let before = obs
        .observe(state)
        .expect("prepared states have a fixed visible part");
    let mut particles = Vec::new();
    for (rule, p) in applicable.iter().zip(&dist) {
        if *p <= 0.0 {
            continue;
        }
        for s in lifted_apply_capped(rule, state, cap)? {
            particles.push(Particle {
                predecessor: form.clone(),
                before: before.clone(),
                rule: rule.name().to_string(),
                successor: Arc::new(s.state),
                successor_form: s.form,
                weight: weight * p * s.probability,
            });
        }
    }
    let dead = particles.is_empty().then(|| (form.clone(), weight));
    Ok((particles, dead))
}

/// Prediction step: one particle per (state, rule, successor class).
pub fn predict(
    b: &Belief,
    rules: &[Rule],
    am: &ActionModel,
    obs: &ObservationModel,
    opts: &FilterOptions,
) -> Result<JointPrediction, FilterError> {
    let cap = opts.max_groundings;
    let mut prepared = Vec::new();
    for e in b.entries.values() {
        prepared.extend(prepare(&e.state, e.weight, rules, obs, cap)?);
    }
    let run = |(state, form, w): &(Arc<LiftedMultiHypergraph>, CanonicalForm, f64)| {
        predict_entry(state, form, *w, rules, am, obs, cap)
    };
    let results: Vec<_> = if opts.parallel {
        prepared.par_iter().map(run).collect()
    } else {
        prepared.iter().map(run).collect()
    };
    let mut out = JointPrediction::default();
    for r in results {
        let (particles, dead) = r?;
        out.particles.extend(particles);
        if let Some((form, w)) = dead {
            warn!(
                "dead end: state {} has no applicable rule",
                form.short_hex()
            );
            out.dead_ends.push((form, w));
        }
    }
    Ok(out)
}

/// Whether some grounding of the transition explains the annotation.
pub fn consistent(
    obs: &ObservationModel,
    y: &AnnotationTuple,
    before: &LiftedMultiHypergraph,
    rule: &str,
    after: &LiftedMultiHypergraph,
) -> bool {
    if rule != y.action || !any_grounding(obs, before, |o| obs.explains_before(y, o)) {
        return false;
    }
    any_grounding(obs, after, |o| obs.explains_after(y, o))
}

fn any_grounding(
    obs: &ObservationModel,
    l: &LiftedMultiHypergraph,
    pred: impl Fn(&Observed) -> bool,
) -> bool {
    if let Some(o) = obs.observe(l) {
        return pred(&o);
    }
    let mut found = false;
    l.for_each_assignment(|a| {
        if pred(&obs.observe_ground(&l.ground(a))) {
            found = true;
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    found
}

/// The part of a lifted state consistent with what comes after the step,
/// as the fraction of groundings kept and the states covering them.
fn restrict(
    obs: &ObservationModel,
    y: &AnnotationTuple,
    l: &Arc<LiftedMultiHypergraph>,
    form: &CanonicalForm,
    cap: u128,
) -> Result<(f64, Vec<(Arc<LiftedMultiHypergraph>, CanonicalForm, f64)>), FilterError> {
    if let Some(o) = obs.observe(l) {
        let keep = obs.explains_after(y, &o);
        let states = if keep {
            vec![(l.clone(), form.clone(), 1.0)]
        } else {
            Vec::new()
        };
        return Ok((if keep { 1.0 } else { 0.0 }, states));
    }
    let count = l.count_groundings();
    if count > cap {
        return Err(LiftedError::EnumerationLimit { count, cap }.into());
    }
    let mut kept: Vec<Vec<u64>> = Vec::new();
    l.for_each_assignment(|a| {
        if obs.explains_after(y, &obs.observe_ground(&l.ground(a))) {
            kept.push(a.to_vec());
        }
        ControlFlow::Continue(())
    });
    let frac = kept.len() as f64 / count as f64;
    if kept.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    if let Some(t) = tightened(l, &kept) {
        let f = t.canonical_form();
        return Ok((frac, vec![(Arc::new(t), f, 1.0)]));
    }
    let share = 1.0 / kept.len() as f64;
    Ok((
        frac,
        kept.iter()
            .map(|a| {
                let s = LiftedMultiHypergraph::from_ground(&l.ground(a));
                let f = s.canonical_form();
                (Arc::new(s), f, share)
            })
            .collect(),
    ))
}

/// The state with bounds shrunk to the hull of `kept`, if that hull holds
/// nothing else.
fn tightened(l: &LiftedMultiHypergraph, kept: &[Vec<u64>]) -> Option<LiftedMultiHypergraph> {
    let n = l.bounded_count();
    let mut lo = vec![u64::MAX; n];
    let mut hi = vec![0u64; n];
    for a in kept {
        for i in 0..n {
            lo[i] = lo[i].min(a[i]);
            hi[i] = hi[i].max(a[i]);
        }
    }
    let (bounded, groups) = l.bounded_edges();
    let table = l.table();
    let bounds = bounded
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let key = table
                .key_for(&b.label, &b.incidence)
                .expect("own edges resolve");
            (key, lo[i], hi[i])
        })
        .collect();
    let groups = groups.into_iter().map(|g| (g.edges, g.total)).collect();
    let t = LiftedMultiHypergraph::from_parts(
        table.clone(),
        l.fixed_map().clone(),
        bounds,
        groups,
        l.conservation().clone(),
    )
    .ok()?;
    (t.count_groundings() == kept.len() as u128).then_some(t)
}

/// Update step. `step` is only used for error reporting. Returns the
/// posterior and the normalizer `p(y_t+1 | y_1..t)`.
pub fn update(
    j: &JointPrediction,
    y: &AnnotationTuple,
    obs: &ObservationModel,
    step: usize,
    opts: &FilterOptions,
) -> Result<(Belief, f64), FilterError> {
    let mut acc = Accumulator::default();
    for p in &j.particles {
        if p.rule != y.action || !obs.explains_before(y, &p.before) {
            continue;
        }
        let (frac, states) =
            restrict(obs, y, &p.successor, &p.successor_form, opts.max_groundings)?;
        for (s, f, share) in states {
            acc.add(f, s, p.weight * frac * share);
        }
    }
    let (belief, z) = acc.into_belief();
    if z <= 0.0 || belief.is_empty() {
        return Err(FilterError::TraceInconsistent {
            step,
            tuple: Box::new(y.clone()),
        });
    }
    Ok((belief, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lifted,
    Ground,
}

/// Per-step record; step 0 is the initial belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mode: Mode,
    pub step: usize,
    pub action: Option<String>,
    pub lifted_count: usize,
    pub ground_count: u128,
    pub log_z: f64,
}

/// Stepwise filter over a domain. Steps are numbered from 1; the initial
/// belief is step 0.
pub struct Filter<'d> {
    domain: &'d Domain,
    opts: FilterOptions,
    belief: Belief,
    step: usize,
    log_likelihood: f64,
}

impl<'d> Filter<'d> {
    pub fn new(domain: &'d Domain, opts: FilterOptions) -> Self {
        Self {
            domain,
            opts,
            belief: Belief::singleton(domain.initial().clone()),
            step: 0,
            log_likelihood: 0.0,
        }
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn initial_stats(&self) -> StepStats {
        StepStats {
            mode: Mode::Lifted,
            step: 0,
            action: None,
            lifted_count: self.belief.len(),
            ground_count: self.belief.ground_count(),
            log_z: 0.0,
        }
    }

    pub fn step(&mut self, y: &AnnotationTuple) -> Result<StepStats, FilterError> {
        let step = self.step + 1;
        self.domain
            .check_tuple(y)
            .map_err(|message| FilterError::InvalidTuple { step, message })?;
        let d = self.domain;
        let j = predict(
            &self.belief,
            d.rules(),
            d.action_model(),
            d.observation(),
            &self.opts,
        )?;
        let (belief, z) = update(&j, y, d.observation(), step, &self.opts)?;
        self.belief = belief;
        self.step = step;
        let log_z = z.ln();
        self.log_likelihood += log_z;
        Ok(StepStats {
            mode: Mode::Lifted,
            step,
            action: Some(y.action.clone()),
            lifted_count: self.belief.len(),
            ground_count: self.belief.ground_count(),
            log_z,
        })
    }
}

/// Beliefs for the initial state and after every tuple, with per-step stats.
pub fn filter_trace(
    domain: &Domain,
    trace: &[AnnotationTuple],
    opts: &FilterOptions,
) -> Result<(Vec<Belief>, Vec<StepStats>), FilterError> {
    let mut f = Filter::new(domain, opts.clone());
    let mut beliefs = vec![f.belief().clone()];
    let mut stats = vec![f.initial_stats()];
    for y in trace {
        stats.push(f.step(y)?);
        beliefs.push(f.belief().clone());
    }
    Ok((beliefs, stats))
}
