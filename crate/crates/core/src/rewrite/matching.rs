//! Backtracking subgraph matching of rule patterns.

use crate::graph::{EdgeKey, VertexTable};

use super::{CompiledEdge, Rule};

/// Injective assignment of pattern variables to state vertices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    assignment: Vec<u32>,
}

impl Match {
    pub(crate) fn new(assignment: Vec<u32>) -> Self {
        Self { assignment }
    }

    /// Vertex index bound to each pattern variable, in declaration order.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub(crate) fn key(&self, e: &CompiledEdge) -> EdgeKey {
        EdgeKey::new(
            e.label.clone(),
            e.vars.iter().map(|&v| self.assignment[v]).collect(),
        )
    }
}

/// What the matcher needs from a state.
pub(crate) trait MatchTarget {
    fn table(&self) -> &VertexTable;
    /// Edge keys that may be present, with the largest multiplicity they can have.
    fn edge_keys(&self) -> Vec<(EdgeKey, u64)>;
}

struct Index<'a> {
    table: &'a VertexTable,
    /// Keys sorted for binary search, with their maximum multiplicity.
    edges: Vec<(EdgeKey, u64)>,
    /// For every vertex, indices into `edges` of the keys touching it.
    incident: Vec<Vec<usize>>,
}

impl<'a> Index<'a> {
    fn new(target: &'a impl MatchTarget) -> Self {
        let table = target.table();
        let mut edges = target.edge_keys();
        edges.sort();
        let mut incident = vec![Vec::new(); table.len()];
        for (i, (k, _)) in edges.iter().enumerate() {
            let mut prev = None;
            for &v in k.incidence() {
                if prev != Some(v) {
                    incident[v as usize].push(i);
                }
                prev = Some(v);
            }
        }
        Self {
            table,
            edges,
            incident,
        }
    }

    fn capacity(&self, key: &EdgeKey) -> u64 {
        self.edges
            .binary_search_by(|(k, _)| k.cmp(key))
            .map(|i| self.edges[i].1)
            .unwrap_or(0)
    }
}

/// All matches of the rule's pattern, in lexicographic assignment order.
pub(crate) fn raw_matches(rule: &Rule, target: &impl MatchTarget) -> Vec<Match> {
    let n = rule.var_count();
    let index = Index::new(target);
    if n == 0 {
        return vec![Match::new(Vec::new())];
    }
    let order = variable_order(rule, index.table);
    let mut st = Search {
        rule,
        index: &index,
        order: &order,
        assignment: vec![u32::MAX; n],
        used: vec![false; index.table.len()],
        out: Vec::new(),
    };
    st.extend(0);
    let mut out = st.out;
    out.sort();
    out
}

/// Exact labels first by rarity, then variables adjacent to already-placed ones.
fn variable_order(rule: &Rule, table: &VertexTable) -> Vec<usize> {
    let n = rule.var_count();
    let pv = &rule.lhs().vertices;
    let domain = |v: usize| match &pv[v].label {
        super::LabelMatch::Exact(l) => table.with_label(l).len(),
        super::LabelMatch::Any => table.len() + 1,
    };
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let connected = |v: usize| {
            rule.compiled_edges()
                .iter()
                .any(|e| e.vars.contains(&v) && e.vars.iter().any(|&w| placed[w]))
        };
        let next = (0..n)
            .filter(|&v| !placed[v])
            .min_by_key(|&v| (!connected(v), domain(v), v))
            .expect("an unplaced variable remains");
        placed[next] = true;
        order.push(next);
    }
    order
}

struct Search<'a, 'b> {
    rule: &'a Rule,
    index: &'a Index<'b>,
    order: &'a [usize],
    assignment: Vec<u32>,
    used: Vec<bool>,
    out: Vec<Match>,
}

impl Search<'_, '_> {
    fn extend(&mut self, depth: usize) {
        if depth == self.order.len() {
            self.out.push(Match::new(self.assignment.clone()));
            return;
        }
        let var = self.order[depth];
        for cand in self.candidates(var) {
            if self.used[cand as usize] || !self.vertex_ok(var, cand) {
                continue;
            }
            self.assignment[var] = cand;
            self.used[cand as usize] = true;
            if self.edges_ok(var) {
                self.extend(depth + 1);
            }
            self.used[cand as usize] = false;
            self.assignment[var] = u32::MAX;
        }
    }

    fn vertex_ok(&self, var: usize, v: u32) -> bool {
        let pv = &self.rule.lhs().vertices[var];
        let vx = self.index.table.get(v);
        pv.label.accepts(&vx.label) && vx.multiplicity >= pv.multiplicity
    }

    /// Pattern edges that became fully assigned with `var` are present often enough.
    fn edges_ok(&self, var: usize) -> bool {
        self.rule.compiled_edges().iter().all(|e| {
            if !e.vars.contains(&var) || e.vars.iter().any(|&w| self.assignment[w] == u32::MAX) {
                return true;
            }
            let key = EdgeKey::new(
                e.label.clone(),
                e.vars.iter().map(|&w| self.assignment[w]).collect(),
            );
            self.index.capacity(&key) >= e.multiplicity
        })
    }

    fn candidates(&self, var: usize) -> Vec<u32> {
        // neighbours through a pattern edge shared with an assigned variable
        for e in self.rule.compiled_edges() {
            if !e.vars.contains(&var) {
                continue;
            }
            let Some(&anchor) = e.vars.iter().find(|&&w| self.assignment[w] != u32::MAX) else {
                continue;
            };
            let at = self.assignment[anchor];
            let mut out: Vec<u32> = self.index.incident[at as usize]
                .iter()
                .map(|&i| &self.index.edges[i].0)
                .filter(|k| k.label == e.label && k.incidence().len() == e.vars.len())
                .flat_map(|k| k.incidence().iter().copied())
                .collect();
            out.sort_unstable();
            out.dedup();
            return out;
        }
        match &self.rule.lhs().vertices[var].label {
            super::LabelMatch::Exact(l) => self.index.table.with_label(l).to_vec(),
            super::LabelMatch::Any => (0..self.index.table.len() as u32).collect(),
        }
    }
}
