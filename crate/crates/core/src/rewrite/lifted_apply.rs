//! Applying rules to lifted states.
//!
//! Strategies, tried in order:
//! 1. a single rewrite when all matches change the same fixed edges alike;
//! 2. the rule's [`LiftedEffect`](super::LiftedEffect), when every match moves
//!    multiplicity inside one group and nothing else depends on the grounding;
//! 3. match-by-match rewriting of fixed edges, when matches never touch
//!    bounded edges;
//! 4. enumerating groundings and rewriting each one.

use std::collections::{BTreeMap, BTreeSet};

use crate::canon::CanonicalForm;
use crate::graph::{EdgeKey, GraphError, Label, VertexTable};
use crate::lifted::{
    count_with_bounds, EdgeStatus, LiftedError, LiftedMultiHypergraph, DEFAULT_ENUMERATION_CAP,
};

use super::apply::{apply_deltas, successors};
use super::matching::{raw_matches, Match, MatchTarget};
use super::{RewriteError, Rule};

impl MatchTarget for LiftedMultiHypergraph {
    fn table(&self) -> &VertexTable {
        LiftedMultiHypergraph::table(self)
    }

    fn edge_keys(&self) -> Vec<(EdgeKey, u64)> {
        self.fixed_edges()
            .map(|(k, m)| (k.clone(), m))
            .chain(
                self.bounds()
                    .iter()
                    .filter(|b| b.upper > 0)
                    .map(|b| (b.key.clone(), b.upper)),
            )
            .collect()
    }
}

/// Whether a rule applies in all, some or none of a lifted state's groundings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applicability {
    Never,
    Always,
    /// Some groundings, or undecided without enumerating.
    Partial,
}

struct SkeletonMatch {
    m: Match,
    /// Bounded edges the match needs, with the multiplicity it needs.
    needs: BTreeMap<usize, u64>,
}

fn skeleton(rule: &Rule, l: &LiftedMultiHypergraph) -> Vec<SkeletonMatch> {
    raw_matches(rule, l)
        .into_iter()
        .map(|m| {
            let mut needs = BTreeMap::new();
            for e in rule.compiled_edges() {
                if let EdgeStatus::Bounded(i) = l.status(&m.key(e)) {
                    let n = needs.entry(i).or_insert(0);
                    *n = (*n).max(e.multiplicity);
                }
            }
            SkeletonMatch { m, needs }
        })
        .collect()
}

fn classify(l: &LiftedMultiHypergraph, matches: &[SkeletonMatch]) -> Applicability {
    if !l.is_feasible() || matches.is_empty() {
        return Applicability::Never;
    }
    if matches.iter().any(|s| s.needs.is_empty()) {
        return Applicability::Always;
    }
    if matches.iter().any(|s| s.needs.len() != 1) {
        return Applicability::Partial;
    }
    // the rule fails exactly where every needed edge is below its requirement
    let mut need: BTreeMap<usize, u64> = BTreeMap::new();
    for s in matches {
        let (&i, &r) = s.needs.iter().next().expect("one requirement");
        let e = need.entry(i).or_insert(r);
        *e = (*e).min(r);
    }
    let bounds = l.bounds();
    let failing = count_with_bounds(l, |i| match need.get(&i) {
        Some(&r) => (bounds[i].lower, bounds[i].upper.min(r - 1)),
        None => (bounds[i].lower, bounds[i].upper),
    });
    if failing == 0 {
        Applicability::Always
    } else if failing == l.count_groundings() {
        Applicability::Never
    } else {
        Applicability::Partial
    }
}

pub fn applicability(rule: &Rule, l: &LiftedMultiHypergraph) -> Applicability {
    classify(l, &skeleton(rule, l))
}

/// One outcome class of a lifted rule application.
#[derive(Debug, Clone)]
pub struct LiftedSuccessor {
    pub state: LiftedMultiHypergraph,
    pub form: CanonicalForm,
    pub probability: f64,
}

/// Outcome distribution of the rule on a lifted state, averaged over the
/// state's groundings. Probabilities sum to the fraction of groundings in
/// which the rule applies.
pub fn lifted_apply(
    rule: &Rule,
    l: &LiftedMultiHypergraph,
) -> Result<Vec<LiftedSuccessor>, RewriteError> {
    lifted_apply_capped(rule, l, DEFAULT_ENUMERATION_CAP)
}

pub fn lifted_apply_capped(
    rule: &Rule,
    l: &LiftedMultiHypergraph,
    cap: u128,
) -> Result<Vec<LiftedSuccessor>, RewriteError> {
    if !l.is_feasible() {
        return Ok(Vec::new());
    }
    if let (Some(g), None) = (l.as_ground(), rule.lifted_effect()) {
        return Ok(successors(rule, &g)?
            .into_iter()
            .map(|s| singleton(&s.graph, s.probability))
            .collect());
    }
    let matches = skeleton(rule, l);
    let app = classify(l, &matches);
    if app == Applicability::Never {
        return Ok(Vec::new());
    }
    if app == Applicability::Always {
        if let Some(out) = same_effect_path(rule, l, &matches)? {
            return Ok(vec![out]);
        }
    }
    if app == Applicability::Always && distinguishable(l.table(), &matches) {
        if let Some(out) = fast_path(rule, l, &matches)? {
            return Ok(vec![out]);
        }
        if let Some(out) = fixed_path(rule, l, &matches)? {
            return Ok(out);
        }
    }
    enumerate(rule, l, cap)
}

fn singleton(g: &crate::graph::MultiHypergraph, probability: f64) -> LiftedSuccessor {
    let state = LiftedMultiHypergraph::from_ground(g);
    LiftedSuccessor {
        form: state.canonical_form(),
        state,
        probability,
    }
}

/// No two matches bind the same sequence of vertex labels and multiplicities,
/// so no automorphism of any grounding maps one onto another.
fn distinguishable(table: &VertexTable, matches: &[SkeletonMatch]) -> bool {
    let mut seen: BTreeSet<Vec<(&Label, u64)>> = BTreeSet::new();
    matches.iter().all(|s| {
        seen.insert(
            s.m.assignment()
                .iter()
                .map(|&v| {
                    let vx = table.get(v);
                    (&vx.label, vx.multiplicity)
                })
                .collect(),
        )
    })
}

fn lifted_err(rule: &Rule, e: LiftedError) -> RewriteError {
    match e {
        LiftedError::Graph(source @ GraphError::Conservation { .. }) => RewriteError::Integrity {
            rule: rule.name().to_string(),
            source,
        },
        source => RewriteError::Lifted {
            rule: rule.name().to_string(),
            source,
        },
    }
}

type Parts = (Vec<(EdgeKey, u64, u64)>, Vec<(Vec<usize>, u64)>);

fn parts(l: &LiftedMultiHypergraph) -> Parts {
    let bounds = l
        .bounds()
        .iter()
        .map(|b| (b.key.clone(), b.lower, b.upper))
        .collect();
    let groups = l
        .group_list()
        .iter()
        .map(|g| (g.members.clone(), g.total))
        .collect();
    (bounds, groups)
}

fn fast_path(
    rule: &Rule,
    l: &LiftedMultiHypergraph,
    matches: &[SkeletonMatch],
) -> Result<Option<LiftedSuccessor>, RewriteError> {
    let Some(le) = rule.lifted_effect() else {
        return Ok(None);
    };
    let mut rest: Option<BTreeMap<EdgeKey, i64>> = None;
    let mut targets: BTreeSet<EdgeKey> = BTreeSet::new();
    for s in matches {
        let (key, own) = rule.target_delta(&s.m, le.target);
        let mut d = rule.deltas(&s.m);
        match d.get_mut(&key) {
            Some(v) if *v == own => {
                d.remove(&key);
            }
            _ => return Ok(None),
        }
        if d.keys()
            .any(|k| matches!(l.status(k), EdgeStatus::Bounded(_)))
        {
            return Ok(None);
        }
        if rest.as_ref().is_some_and(|r| *r != d) {
            return Ok(None);
        }
        rest = Some(d);
        let target_bound = match l.status(&key) {
            EdgeStatus::Bounded(i) => Some(i),
            _ => None,
        };
        if s.needs.keys().any(|&i| Some(i) != target_bound) {
            return Ok(None);
        }
        if !targets.insert(key) {
            return Ok(None);
        }
    }
    let rest = rest.unwrap_or_default();
    if targets.iter().any(|k| rest.contains_key(k)) {
        return Ok(None);
    }

    let (mut bounds, mut groups) = parts(l);
    let mut fixed = l.fixed_map().clone();
    let statuses: Vec<EdgeStatus> = targets.iter().map(|k| l.status(k)).collect();
    let group_idx = if statuses.iter().all(|s| matches!(s, EdgeStatus::Bounded(_))) {
        let idx: BTreeSet<usize> = statuses
            .iter()
            .map(|s| match s {
                EdgeStatus::Bounded(i) => *i,
                _ => unreachable!(),
            })
            .collect();
        let Some(g) = groups
            .iter()
            .position(|(members, _)| members.iter().copied().collect::<BTreeSet<_>>() == idx)
        else {
            return Ok(None);
        };
        g
    } else if statuses
        .iter()
        .all(|s| !matches!(s, EdgeStatus::Bounded(_)))
    {
        let mut members = Vec::new();
        let mut total = 0;
        for k in &targets {
            let m = fixed.remove(k).unwrap_or(0);
            members.push(bounds.len());
            bounds.push((k.clone(), m, m));
            total += m;
        }
        groups.push((members, total));
        groups.len() - 1
    } else {
        return Ok(None);
    };

    let (members, total) = groups[group_idx].clone();
    let current: Vec<(u64, u64)> = members
        .iter()
        .map(|&i| (bounds[i].1, bounds[i].2))
        .collect();
    let Some((next, new_total)) = le.transform(&current, total) else {
        return Err(RewriteError::NegativeMultiplicity {
            rule: rule.name().to_string(),
            label: targets.first().expect("at least one match").label.clone(),
        });
    };
    for (&i, (lo, hi)) in members.iter().zip(next) {
        bounds[i].1 = lo;
        bounds[i].2 = hi;
    }
    groups[group_idx].1 = new_total;
    apply_deltas(rule, &mut fixed, &rest)?;
    let state = LiftedMultiHypergraph::from_parts(
        l.table().clone(),
        fixed,
        bounds,
        groups,
        l.conservation().clone(),
    )
    .map_err(|e| lifted_err(rule, e))?;
    Ok(Some(LiftedSuccessor {
        form: state.canonical_form(),
        state,
        probability: 1.0,
    }))
}

/// Every match changes the same fixed edges in the same way, so the outcome
/// does not depend on which match or grounding is picked.
fn same_effect_path(
    rule: &Rule,
    l: &LiftedMultiHypergraph,
    matches: &[SkeletonMatch],
) -> Result<Option<LiftedSuccessor>, RewriteError> {
    let first = rule.deltas(&matches[0].m);
    if first
        .keys()
        .any(|k| matches!(l.status(k), EdgeStatus::Bounded(_)))
        || matches[1..].iter().any(|s| rule.deltas(&s.m) != first)
    {
        return Ok(None);
    }
    let mut fixed = l.fixed_map().clone();
    apply_deltas(rule, &mut fixed, &first)?;
    let (bounds, groups) = parts(l);
    let state = LiftedMultiHypergraph::from_parts(
        l.table().clone(),
        fixed,
        bounds,
        groups,
        l.conservation().clone(),
    )
    .map_err(|e| lifted_err(rule, e))?;
    Ok(Some(LiftedSuccessor {
        form: state.canonical_form(),
        state,
        probability: 1.0,
    }))
}

fn fixed_path(
    rule: &Rule,
    l: &LiftedMultiHypergraph,
    matches: &[SkeletonMatch],
) -> Result<Option<Vec<LiftedSuccessor>>, RewriteError> {
    if matches.iter().any(|s| !s.needs.is_empty()) {
        return Ok(None);
    }
    let deltas: Vec<_> = matches.iter().map(|s| rule.deltas(&s.m)).collect();
    if deltas
        .iter()
        .flat_map(|d| d.keys())
        .any(|k| matches!(l.status(k), EdgeStatus::Bounded(_)))
    {
        return Ok(None);
    }
    let mut by_form: BTreeMap<CanonicalForm, (LiftedMultiHypergraph, usize)> = BTreeMap::new();
    for d in &deltas {
        let mut fixed = l.fixed_map().clone();
        apply_deltas(rule, &mut fixed, d)?;
        let (bounds, groups) = parts(l);
        let state = LiftedMultiHypergraph::from_parts(
            l.table().clone(),
            fixed,
            bounds,
            groups,
            l.conservation().clone(),
        )
        .map_err(|e| lifted_err(rule, e))?;
        by_form
            .entry(state.canonical_form())
            .or_insert_with(|| (state, 0))
            .1 += 1;
    }
    let n = matches.len() as f64;
    Ok(Some(
        by_form
            .into_iter()
            .map(|(form, (state, c))| LiftedSuccessor {
                state,
                form,
                probability: c as f64 / n,
            })
            .collect(),
    ))
}

fn enumerate(
    rule: &Rule,
    l: &LiftedMultiHypergraph,
    cap: u128,
) -> Result<Vec<LiftedSuccessor>, RewriteError> {
    let groundings = l.groundings_capped(cap).map_err(|e| lifted_err(rule, e))?;
    let w = 1.0 / groundings.len() as f64;
    let mut by_form: BTreeMap<CanonicalForm, LiftedSuccessor> = BTreeMap::new();
    for g in &groundings {
        for s in successors(rule, g)? {
            by_form
                .entry(s.form.clone())
                .or_insert_with(|| singleton(&s.graph, 0.0))
                .probability += w * s.probability;
        }
    }
    let mut out: Vec<LiftedSuccessor> = by_form.into_values().collect();
    out.sort_by(|a, b| a.form.cmp(&b.form));
    Ok(out)
}
