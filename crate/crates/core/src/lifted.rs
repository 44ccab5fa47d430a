//! Lifted multi-hypergraphs.
//!
//! A [`LiftedMultiHypergraph`] stands for the uniform distribution over all
//! ground graphs obtained by fixing each bounded edge multiplicity inside its
//! interval such that every group of bounded edges hits its exact total.
//! Bounded edges outside any group range freely over their interval.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{self, push_str, push_u64, CanonicalForm, ColoredHypergraph};
use crate::graph::{
    check_conservation, conserved_sums, Conservation, EdgeKey, GraphError, Hyperedge, Label,
    MultiHypergraph, Vertex, VertexId, VertexTable,
};

/// Default cap on how many groundings may be materialised at once.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiftedError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("bounded edge `{0}` has lower bound above upper bound")]
    InvertedBounds(Label),
    #[error("edge `{0}` is declared more than once")]
    DuplicateEdge(Label),
    #[error("total constraint refers to unknown bounded edge #{0}")]
    UnknownBoundedEdge(usize),
    #[error("bounded edge #{0} belongs to more than one total constraint")]
    OverlappingGroups(usize),
    #[error("conserved vertex `{0}` would get a grounding-dependent edge sum")]
    VariableConservation(VertexId),
    #[error("{count} groundings exceed the enumeration cap of {cap}")]
    EnumerationLimit { count: u128, cap: u128 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundedEdge {
    pub label: Label,
    pub incidence: Vec<VertexId>,
    pub lower: u64,
    pub upper: u64,
}

impl BoundedEdge {
    pub fn new(label: &str, incidence: &[&str], lower: u64, upper: u64) -> Self {
        Self {
            label: Label::new(label),
            incidence: incidence.iter().map(|id| VertexId::new(id)).collect(),
            lower,
            upper,
        }
    }
}

/// Exact total over a set of bounded edges, given as indices into the bounded
/// edge list passed alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TotalConstraint {
    pub edges: Vec<usize>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Bound {
    pub key: EdgeKey,
    pub lower: u64,
    pub upper: u64,
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Group {
    pub members: Vec<usize>,
    pub total: u64,
}

/// Where an edge key lives in a lifted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeStatus {
    Absent,
    Fixed(u64),
    Bounded(usize),
}

#[derive(Clone)]
pub struct LiftedMultiHypergraph {
    table: Arc<VertexTable>,
    fixed: BTreeMap<EdgeKey, u64>,
    bounded: Vec<Bound>,
    bounded_index: BTreeMap<EdgeKey, usize>,
    groups: Vec<Group>,
    conservation: Arc<Conservation>,
    feasible: bool,
}

impl LiftedMultiHypergraph {
    pub fn build(
        vertices: Vec<Vertex>,
        fixed: Vec<Hyperedge>,
        bounded: Vec<BoundedEdge>,
        constraints: Vec<TotalConstraint>,
        conservation: Conservation,
    ) -> Result<Self, LiftedError> {
        let table = Arc::new(VertexTable::new(vertices)?);
        let mut fixed_map = BTreeMap::new();
        for e in fixed {
            if e.multiplicity == 0 {
                return Err(GraphError::ZeroEdgeMultiplicity(e.label).into());
            }
            let key = table.key_for(&e.label, &e.incidence)?;
            *fixed_map.entry(key).or_insert(0) += e.multiplicity;
        }
        let mut bounds = Vec::with_capacity(bounded.len());
        for b in bounded {
            let key = table.key_for(&b.label, &b.incidence)?;
            bounds.push((key, b.lower, b.upper));
        }
        let groups = constraints
            .into_iter()
            .map(|c| (c.edges, c.total))
            .collect();
        Self::from_parts(table, fixed_map, bounds, groups, Arc::new(conservation))
    }

    pub fn from_ground(g: &MultiHypergraph) -> Self {
        Self {
            table: g.table().clone(),
            fixed: g.edge_map().clone(),
            bounded: Vec::new(),
            bounded_index: BTreeMap::new(),
            groups: Vec::new(),
            conservation: g.conservation().clone(),
            feasible: true,
        }
    }

    /// Validates, tightens and normalises. Bounded edges whose interval
    /// collapses become fixed edges (or vanish at zero).
    pub(crate) fn from_parts(
        table: Arc<VertexTable>,
        fixed: BTreeMap<EdgeKey, u64>,
        bounded: Vec<(EdgeKey, u64, u64)>,
        groups: Vec<(Vec<usize>, u64)>,
        conservation: Arc<Conservation>,
    ) -> Result<Self, LiftedError> {
        let mut lower: Vec<u64> = Vec::with_capacity(bounded.len());
        let mut upper: Vec<u64> = Vec::with_capacity(bounded.len());
        let mut keys: Vec<EdgeKey> = Vec::with_capacity(bounded.len());
        for (key, lo, hi) in bounded {
            if lo > hi {
                return Err(LiftedError::InvertedBounds(key.label));
            }
            if fixed.contains_key(&key) || keys.contains(&key) {
                return Err(LiftedError::DuplicateEdge(key.label));
            }
            keys.push(key);
            lower.push(lo);
            upper.push(hi);
        }
        let mut owner: Vec<Option<usize>> = vec![None; keys.len()];
        for (g, (members, _)) in groups.iter().enumerate() {
            for &m in members {
                if m >= keys.len() {
                    return Err(LiftedError::UnknownBoundedEdge(m));
                }
                if owner[m].replace(g).is_some() {
                    return Err(LiftedError::OverlappingGroups(m));
                }
            }
        }
        let mut totals: Vec<u64> = groups.iter().map(|(_, t)| *t).collect();
        let member_lists: Vec<Vec<usize>> = groups.into_iter().map(|(m, _)| m).collect();

        let mut feasible = true;
        for (g, members) in member_lists.iter().enumerate() {
            feasible &= tighten(members, totals[g], &mut lower, &mut upper);
        }

        let mut fixed = fixed;
        let mut out_bounds: Vec<(EdgeKey, u64, u64, Option<usize>)> = Vec::new();
        if feasible {
            for (i, key) in keys.into_iter().enumerate() {
                if lower[i] == upper[i] {
                    if let Some(g) = owner[i] {
                        totals[g] -= lower[i];
                    }
                    if lower[i] > 0 {
                        fixed.insert(key, lower[i]);
                    }
                } else {
                    out_bounds.push((key, lower[i], upper[i], owner[i]));
                }
            }
        } else {
            for (i, key) in keys.into_iter().enumerate() {
                out_bounds.push((key, lower[i], upper[i], owner[i]));
            }
        }

        // deterministic layout: bounded edges by key, groups by first member
        out_bounds.sort_by(|a, b| a.0.cmp(&b.0));
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut new_groups: Vec<Group> = Vec::new();
        let mut bounded_vec = Vec::with_capacity(out_bounds.len());
        for (i, (key, lo, hi, g)) in out_bounds.into_iter().enumerate() {
            let group = g.map(|old| {
                *remap.entry(old).or_insert_with(|| {
                    new_groups.push(Group {
                        members: Vec::new(),
                        total: totals[old],
                    });
                    new_groups.len() - 1
                })
            });
            if let Some(ng) = group {
                new_groups[ng].members.push(i);
            }
            bounded_vec.push(Bound {
                key,
                lower: lo,
                upper: hi,
                group,
            });
        }
        if !feasible {
            // keep empty-member groups of infeasible states so the totals survive
            for (old, total) in totals.iter().enumerate() {
                if !remap.contains_key(&old) && member_lists[old].is_empty() && *total > 0 {
                    new_groups.push(Group {
                        members: Vec::new(),
                        total: *total,
                    });
                }
            }
        }
        let bounded_index = bounded_vec
            .iter()
            .enumerate()
            .map(|(i, b)| (b.key.clone(), i))
            .collect();
        let state = Self {
            table,
            fixed,
            bounded: bounded_vec,
            bounded_index,
            groups: new_groups,
            conservation,
            feasible,
        };
        state.check_conservation()?;
        Ok(state)
    }

    fn check_conservation(&self) -> Result<(), LiftedError> {
        let mut sums = conserved_sums(
            &self.table,
            &self.conservation,
            self.fixed.iter().map(|(k, &m)| (k, m)),
        );
        for (v, vertex) in self.table.iter().enumerate() {
            if !self.conservation.binds_vertex(&vertex.label) {
                continue;
            }
            let v = v as u32;
            let contribution = |b: &Bound| {
                if self.conservation.binds_edge(&b.key.label) {
                    b.key.occurrences(v)
                } else {
                    0
                }
            };
            for b in self.bounded.iter().filter(|b| b.group.is_none()) {
                if contribution(b) > 0 {
                    return Err(LiftedError::VariableConservation(vertex.id.clone()));
                }
            }
            for g in &self.groups {
                let mut occ = g.members.iter().map(|&m| contribution(&self.bounded[m]));
                let first = occ.next().unwrap_or(0);
                if occ.any(|o| o != first) {
                    return Err(LiftedError::VariableConservation(vertex.id.clone()));
                }
                sums[v as usize] += first * g.total;
            }
        }
        if self.feasible {
            check_conservation(&self.table, &self.conservation, &sums)?;
        }
        Ok(())
    }

    pub fn table(&self) -> &Arc<VertexTable> {
        &self.table
    }

    pub fn conservation(&self) -> &Arc<Conservation> {
        &self.conservation
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.table.iter()
    }

    pub fn fixed_edges(&self) -> impl Iterator<Item = (&EdgeKey, u64)> {
        self.fixed.iter().map(|(k, &m)| (k, m))
    }

    pub(crate) fn fixed_map(&self) -> &BTreeMap<EdgeKey, u64> {
        &self.fixed
    }

    pub(crate) fn bounds(&self) -> &[Bound] {
        &self.bounded
    }

    pub(crate) fn group_list(&self) -> &[Group] {
        &self.groups
    }

    /// Bounded edges in public form, paired with their total constraints.
    pub fn bounded_edges(&self) -> (Vec<BoundedEdge>, Vec<TotalConstraint>) {
        let edges = self
            .bounded
            .iter()
            .map(|b| BoundedEdge {
                label: b.key.label.clone(),
                incidence: self.table.ids(&b.key),
                lower: b.lower,
                upper: b.upper,
            })
            .collect();
        let constraints = self
            .groups
            .iter()
            .map(|g| TotalConstraint {
                edges: g.members.clone(),
                total: g.total,
            })
            .collect();
        (edges, constraints)
    }

    pub fn fixed_hyperedges(&self) -> Vec<Hyperedge> {
        self.fixed
            .iter()
            .map(|(k, &m)| Hyperedge {
                label: k.label.clone(),
                incidence: self.table.ids(k),
                multiplicity: m,
            })
            .collect()
    }

    pub fn status(&self, key: &EdgeKey) -> EdgeStatus {
        if let Some(&m) = self.fixed.get(key) {
            EdgeStatus::Fixed(m)
        } else if let Some(&i) = self.bounded_index.get(key) {
            EdgeStatus::Bounded(i)
        } else {
            EdgeStatus::Absent
        }
    }

    pub fn bounded_count(&self) -> usize {
        self.bounded.len()
    }

    pub fn is_ground(&self) -> bool {
        self.feasible && self.bounded.is_empty()
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    /// The single grounding of a state without bounded edges.
    pub fn as_ground(&self) -> Option<MultiHypergraph> {
        self.is_ground().then(|| {
            MultiHypergraph::from_parts(
                self.table.clone(),
                self.fixed.clone(),
                self.conservation.clone(),
            )
            .expect("lifted state without bounds is a valid ground graph")
        })
    }

    pub fn count_groundings(&self) -> u128 {
        count_with_bounds(self, |i| (self.bounded[i].lower, self.bounded[i].upper))
    }

    /// Visits every grounding assignment (one value per bounded edge) in
    /// lexicographic order of the bounded edge list.
    pub fn for_each_assignment(&self, mut visit: impl FnMut(&[u64]) -> ControlFlow<()>) {
        if !self.feasible {
            return;
        }
        let mut order: Vec<usize> = Vec::with_capacity(self.bounded.len());
        let mut slots: Vec<Slot> = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            for (pos, &m) in g.members.iter().enumerate() {
                order.push(m);
                slots.push(Slot::Group {
                    group: gi,
                    last: pos + 1 == g.members.len(),
                });
            }
        }
        for (i, b) in self.bounded.iter().enumerate() {
            if b.group.is_none() {
                order.push(i);
                slots.push(Slot::Free);
            }
        }
        let remaining: Vec<u64> = self.groups.iter().map(|g| g.total).collect();
        // suffix sums of bounds per slot, within the slot's group
        let mut suffix_lo = vec![0u64; order.len() + 1];
        let mut suffix_hi = vec![0u64; order.len() + 1];
        for s in (0..order.len()).rev() {
            let b = &self.bounded[order[s]];
            let (nl, nh) = match slots[s] {
                Slot::Group { last: true, .. } | Slot::Free => (0, 0),
                Slot::Group { last: false, .. } => (suffix_lo[s + 1], suffix_hi[s + 1]),
            };
            suffix_lo[s] = nl + b.lower;
            suffix_hi[s] = nh + b.upper;
        }
        let mut values = vec![0u64; self.bounded.len()];
        let mut walker = Walker {
            bounds: &self.bounded,
            order: &order,
            slots: &slots,
            suffix_lo: &suffix_lo,
            suffix_hi: &suffix_hi,
            remaining,
            values: &mut values,
        };
        let _ = walker.walk(0, &mut visit);
    }

    /// Ground graph for an assignment produced by [`Self::for_each_assignment`].
    pub fn ground(&self, assignment: &[u64]) -> MultiHypergraph {
        let mut edges = self.fixed.clone();
        for (b, &x) in self.bounded.iter().zip(assignment) {
            if x > 0 {
                edges.insert(b.key.clone(), x);
            }
        }
        MultiHypergraph::from_parts(self.table.clone(), edges, self.conservation.clone())
            .expect("groundings satisfy conservation by construction")
    }

    pub fn groundings(&self) -> Result<Vec<MultiHypergraph>, LiftedError> {
        self.groundings_capped(DEFAULT_ENUMERATION_CAP)
    }

    pub fn groundings_capped(&self, cap: u128) -> Result<Vec<MultiHypergraph>, LiftedError> {
        let count = self.count_groundings();
        if count > cap {
            return Err(LiftedError::EnumerationLimit { count, cap });
        }
        let mut out = Vec::with_capacity(count as usize);
        self.for_each_assignment(|a| {
            out.push(self.ground(a));
            ControlFlow::Continue(())
        });
        Ok(out)
    }

    /// Whether some grounding is isomorphic to `g`.
    pub fn contains(&self, g: &MultiHypergraph) -> bool {
        if g.vertex_count() != self.table.len() {
            return false;
        }
        let mut mine: Vec<(&Label, u64)> = self
            .vertices()
            .map(|v| (&v.label, v.multiplicity))
            .collect();
        let mut theirs: Vec<(&Label, u64)> =
            g.vertices().map(|v| (&v.label, v.multiplicity)).collect();
        mine.sort();
        theirs.sort();
        if mine != theirs {
            return false;
        }
        let target = canon::canonical_form(g);
        let mut found = false;
        self.for_each_assignment(|a| {
            let candidate = self.ground(a);
            if candidate.edge_count() == g.edge_count()
                && canon::canonical_form(&candidate) == target
            {
                found = true;
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        found
    }

    pub fn colored(&self) -> ColoredHypergraph {
        let n = self.table.len() as u32;
        let mut vertex_colors: Vec<Vec<u8>> = self
            .vertices()
            .map(|v| {
                let mut c = vec![0u8];
                push_str(&mut c, v.label.as_str());
                push_u64(&mut c, v.multiplicity);
                c
            })
            .collect();
        for g in &self.groups {
            let mut c = vec![1u8];
            push_u64(&mut c, g.total);
            vertex_colors.push(c);
        }
        let mut edges: Vec<(Vec<u8>, Vec<u32>)> = self
            .fixed
            .iter()
            .map(|(k, &m)| {
                let mut c = vec![0u8];
                push_str(&mut c, k.label.as_str());
                push_u64(&mut c, m);
                (c, k.incidence().to_vec())
            })
            .collect();
        for b in &self.bounded {
            let mut c = vec![1u8];
            push_str(&mut c, b.key.label.as_str());
            push_u64(&mut c, b.lower);
            push_u64(&mut c, b.upper);
            let mut inc = b.key.incidence().to_vec();
            if let Some(g) = b.group {
                inc.push(n + g as u32);
            }
            edges.push((c, inc));
        }
        ColoredHypergraph {
            vertex_colors,
            edges,
        }
    }

    pub fn canonical_form(&self) -> CanonicalForm {
        canon::canonize(canon::TAG_LIFTED, &self.colored())
    }
}

enum Slot {
    Group { group: usize, last: bool },
    Free,
}

struct Walker<'a> {
    bounds: &'a [Bound],
    order: &'a [usize],
    slots: &'a [Slot],
    suffix_lo: &'a [u64],
    suffix_hi: &'a [u64],
    remaining: Vec<u64>,
    values: &'a mut Vec<u64>,
}

impl Walker<'_> {
    fn walk(
        &mut self,
        s: usize,
        visit: &mut impl FnMut(&[u64]) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if s == self.order.len() {
            return visit(self.values);
        }
        let i = self.order[s];
        let b = &self.bounds[i];
        match self.slots[s] {
            Slot::Free => {
                for x in b.lower..=b.upper {
                    self.values[i] = x;
                    self.walk(s + 1, visit)?;
                }
            }
            Slot::Group { group, last } => {
                let rem = self.remaining[group];
                let (lo, hi) = if last {
                    (rem, rem)
                } else {
                    // leave room for the rest of the group
                    let rest_lo = self.suffix_lo[s + 1];
                    let rest_hi = self.suffix_hi[s + 1];
                    (rem.saturating_sub(rest_hi), rem.saturating_sub(rest_lo))
                };
                let lo = lo.max(b.lower);
                let hi = hi.min(b.upper);
                for x in lo..=hi {
                    self.values[i] = x;
                    self.remaining[group] = rem - x;
                    let r = self.walk(s + 1, visit);
                    self.remaining[group] = rem;
                    r?;
                }
            }
        }
        ControlFlow::Continue(())
    }
}

/// Interval propagation for `sum(members) == total`. Returns false when
/// infeasible.
fn tighten(members: &[usize], total: u64, lower: &mut [u64], upper: &mut [u64]) -> bool {
    loop {
        let sum_lo: u64 = members.iter().map(|&m| lower[m]).sum();
        let sum_hi: u64 = members.iter().map(|&m| upper[m]).sum();
        if sum_lo > total || sum_hi < total {
            return false;
        }
        let mut changed = false;
        for &m in members {
            let others_hi = sum_hi - upper[m];
            let others_lo = sum_lo - lower[m];
            let lo = lower[m].max(total.saturating_sub(others_hi));
            let hi = upper[m].min(total - others_lo);
            if lo != lower[m] || hi != upper[m] {
                lower[m] = lo;
                upper[m] = hi;
                changed = true;
            }
        }
        if !changed {
            return true;
        }
    }
}

/// Number of integer vectors with `x_i` in `[lo_i, hi_i]` summing to `total`.
pub fn count_compositions(bounds: &[(u64, u64)], total: u64) -> u128 {
    let base: u64 = bounds.iter().map(|b| b.0).sum();
    if base > total || bounds.iter().any(|b| b.0 > b.1) {
        return 0;
    }
    let rest = (total - base) as usize;
    let mut ways = vec![0u128; rest + 1];
    ways[0] = 1;
    for &(lo, hi) in bounds {
        let width = (hi - lo) as usize;
        let mut prefix = vec![0u128; rest + 2];
        for r in 0..=rest {
            prefix[r + 1] = prefix[r].saturating_add(ways[r]);
        }
        for r in 0..=rest {
            let from = r.saturating_sub(width);
            ways[r] = prefix[r + 1] - prefix[from];
        }
    }
    ways[rest]
}

/// Grounding count with per-edge bounds overridden by `bounds_of`.
pub(crate) fn count_with_bounds(
    l: &LiftedMultiHypergraph,
    bounds_of: impl Fn(usize) -> (u64, u64),
) -> u128 {
    if !l.feasible {
        return 0;
    }
    let mut count: u128 = 1;
    for g in &l.groups {
        let b: Vec<(u64, u64)> = g.members.iter().map(|&m| bounds_of(m)).collect();
        count = count.saturating_mul(count_compositions(&b, g.total));
    }
    for (i, b) in l.bounded.iter().enumerate() {
        if b.group.is_none() {
            let (lo, hi) = bounds_of(i);
            count = count.saturating_mul(if lo > hi { 0 } else { (hi - lo + 1) as u128 });
        }
    }
    count
}

impl PartialEq for LiftedMultiHypergraph {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.table, &other.table) || self.table == other.table)
            && self.fixed == other.fixed
            && self.bounded == other.bounded
            && self.groups == other.groups
            && self.conservation == other.conservation
    }
}

impl std::fmt::Debug for LiftedMultiHypergraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (bounded, constraints) = self.bounded_edges();
        f.debug_struct("LiftedMultiHypergraph")
            .field("vertices", &self.table.len())
            .field("fixed", &self.fixed.len())
            .field("bounded", &bounded)
            .field("constraints", &constraints)
            .finish()
    }
}
