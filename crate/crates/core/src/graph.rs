//! Ground multi-hypergraph states.
//!
//! A [`MultiHypergraph`] holds labelled vertices and labelled hyperedges, both
//! carrying positive multiplicities. Indistinguishable entities share one vertex
//! whose multiplicity is their count; a hyperedge's multiplicity counts how many
//! of those entities take part in the relation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("labels and vertex ids must be non-empty")]
    EmptyName,
    #[error("duplicate vertex id `{0}`")]
    DuplicateVertex(VertexId),
    #[error("vertex `{0}` has multiplicity 0")]
    ZeroVertexMultiplicity(VertexId),
    #[error("edge `{label}` refers to unknown vertex `{id}`")]
    DanglingIncidence { label: Label, id: VertexId },
    #[error("edge `{0}` has an empty incidence")]
    EmptyIncidence(Label),
    #[error("edge `{0}` has multiplicity 0")]
    ZeroEdgeMultiplicity(Label),
    #[error("conservation violated at vertex `{vertex}`: conserved edges sum to {actual}, vertex multiplicity is {expected}")]
    Conservation {
        vertex: VertexId,
        expected: u64,
        actual: u64,
    },
}

macro_rules! name_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            /// Panics on an empty string; use `try_new` for untrusted input.
            pub fn new(name: &str) -> Self {
                Self::try_new(name).expect("name must be non-empty")
            }

            pub fn try_new(name: &str) -> Result<Self, GraphError> {
                if name.is_empty() {
                    Err(GraphError::EmptyName)
                } else {
                    Ok(Self(Arc::from(name)))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }

        impl From<&str> for $name {
            fn from(name: &str) -> Self {
                Self::new(name)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                Self::try_new(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

name_type!(
    /// Symbolic vertex or edge label such as `eccentric`, `at` or `holds`.
    Label
);
name_type!(
    /// Opaque vertex identifier. Never part of a canonical form.
    VertexId
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VertexId,
    pub label: Label,
    pub multiplicity: u64,
}

impl Vertex {
    pub fn new(id: &str, label: &str, multiplicity: u64) -> Self {
        Self {
            id: VertexId::new(id),
            label: Label::new(label),
            multiplicity,
        }
    }
}

/// A hyperedge addressed by vertex ids. Incidence is a multiset; order is irrelevant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub label: Label,
    pub incidence: Vec<VertexId>,
    pub multiplicity: u64,
}

impl Hyperedge {
    pub fn new(label: &str, incidence: &[&str], multiplicity: u64) -> Self {
        Self {
            label: Label::new(label),
            incidence: incidence.iter().map(|id| VertexId::new(id)).collect(),
            multiplicity,
        }
    }
}

/// Per-vertex multiplicity conservation.
///
/// For every vertex whose label is in `vertex_labels`, the multiplicities of
/// incident edges whose label is in `edge_labels` must sum to the vertex
/// multiplicity. An edge that lists the vertex `k` times contributes `k` times.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub edge_labels: BTreeSet<Label>,
    pub vertex_labels: BTreeSet<Label>,
}

impl Conservation {
    pub fn new<'a>(
        edge_labels: impl IntoIterator<Item = &'a str>,
        vertex_labels: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        Self {
            edge_labels: edge_labels.into_iter().map(Label::new).collect(),
            vertex_labels: vertex_labels.into_iter().map(Label::new).collect(),
        }
    }

    pub fn binds_edge(&self, label: &Label) -> bool {
        self.edge_labels.contains(label)
    }

    pub fn binds_vertex(&self, label: &Label) -> bool {
        self.vertex_labels.contains(label)
    }
}

/// Edge identity inside one vertex table: label plus sorted vertex indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub label: Label,
    incidence: Vec<u32>,
}

impl EdgeKey {
    pub fn new(label: Label, mut incidence: Vec<u32>) -> Self {
        incidence.sort_unstable();
        Self { label, incidence }
    }

    pub fn incidence(&self) -> &[u32] {
        &self.incidence
    }

    pub fn occurrences(&self, vertex: u32) -> u64 {
        self.incidence.iter().filter(|&&v| v == vertex).count() as u64
    }

    pub fn touches(&self, vertex: u32) -> bool {
        self.incidence.binary_search(&vertex).is_ok()
    }
}

/// The immutable vertex set shared by a state and everything derived from it.
#[derive(Debug, PartialEq, Eq)]
pub struct VertexTable {
    vertices: Vec<Vertex>,
    index: HashMap<VertexId, u32>,
    by_label: BTreeMap<Label, Vec<u32>>,
}

impl VertexTable {
    pub fn new(mut vertices: Vec<Vertex>) -> Result<Self, GraphError> {
        vertices.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(vertices.len());
        let mut by_label: BTreeMap<Label, Vec<u32>> = BTreeMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if v.multiplicity == 0 {
                return Err(GraphError::ZeroVertexMultiplicity(v.id.clone()));
            }
            if index.insert(v.id.clone(), i as u32).is_some() {
                return Err(GraphError::DuplicateVertex(v.id.clone()));
            }
            by_label.entry(v.label.clone()).or_default().push(i as u32);
        }
        Ok(Self {
            vertices,
            index,
            by_label,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn get(&self, idx: u32) -> &Vertex {
        &self.vertices[idx as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter()
    }

    pub fn index_of(&self, id: &VertexId) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn with_label(&self, label: &Label) -> &[u32] {
        self.by_label.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn key_for(&self, label: &Label, incidence: &[VertexId]) -> Result<EdgeKey, GraphError> {
        if incidence.is_empty() {
            return Err(GraphError::EmptyIncidence(label.clone()));
        }
        let idx = incidence
            .iter()
            .map(|id| {
                self.index_of(id)
                    .ok_or_else(|| GraphError::DanglingIncidence {
                        label: label.clone(),
                        id: id.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EdgeKey::new(label.clone(), idx))
    }

    pub fn ids(&self, key: &EdgeKey) -> Vec<VertexId> {
        key.incidence
            .iter()
            .map(|&v| self.get(v).id.clone())
            .collect()
    }
}

/// Checks conservation for every bound vertex. `contribution` reports, per
/// vertex index, the summed conserved-edge multiplicity.
pub(crate) fn check_conservation(
    table: &VertexTable,
    conservation: &Conservation,
    contribution: &[u64],
) -> Result<(), GraphError> {
    for (i, v) in table.iter().enumerate() {
        if conservation.binds_vertex(&v.label) && contribution[i] != v.multiplicity {
            return Err(GraphError::Conservation {
                vertex: v.id.clone(),
                expected: v.multiplicity,
                actual: contribution[i],
            });
        }
    }
    Ok(())
}

pub(crate) fn conserved_sums<'a>(
    table: &VertexTable,
    conservation: &Conservation,
    edges: impl Iterator<Item = (&'a EdgeKey, u64)>,
) -> Vec<u64> {
    let mut sums = vec![0u64; table.len()];
    for (key, mult) in edges {
        if conservation.binds_edge(&key.label) {
            for &v in &key.incidence {
                sums[v as usize] += mult;
            }
        }
    }
    sums
}

/// A validated ground state.
#[derive(Clone)]
pub struct MultiHypergraph {
    table: Arc<VertexTable>,
    edges: BTreeMap<EdgeKey, u64>,
    conservation: Arc<Conservation>,
}

impl MultiHypergraph {
    /// Validates and builds a graph. Edges sharing label and incidence are merged
    /// by summing their multiplicities.
    pub fn build(
        vertices: Vec<Vertex>,
        edges: Vec<Hyperedge>,
        conservation: Conservation,
    ) -> Result<Self, GraphError> {
        let table = Arc::new(VertexTable::new(vertices)?);
        let mut map = BTreeMap::new();
        for e in edges {
            if e.multiplicity == 0 {
                return Err(GraphError::ZeroEdgeMultiplicity(e.label));
            }
            let key = table.key_for(&e.label, &e.incidence)?;
            *map.entry(key).or_insert(0) += e.multiplicity;
        }
        Self::from_parts(table, map, Arc::new(conservation))
    }

    pub fn empty(conservation: Conservation) -> Self {
        Self::build(Vec::new(), Vec::new(), conservation).expect("empty graph is valid")
    }

    pub(crate) fn from_parts(
        table: Arc<VertexTable>,
        edges: BTreeMap<EdgeKey, u64>,
        conservation: Arc<Conservation>,
    ) -> Result<Self, GraphError> {
        debug_assert!(edges.values().all(|&m| m > 0));
        let sums = conserved_sums(&table, &conservation, edges.iter().map(|(k, &m)| (k, m)));
        check_conservation(&table, &conservation, &sums)?;
        Ok(Self {
            table,
            edges,
            conservation,
        })
    }

    pub fn table(&self) -> &Arc<VertexTable> {
        &self.table
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.table.iter()
    }

    pub fn vertex_count(&self) -> usize {
        self.table.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, u64)> {
        self.edges.iter().map(|(k, &m)| (k, m))
    }

    pub(crate) fn edge_map(&self) -> &BTreeMap<EdgeKey, u64> {
        &self.edges
    }

    pub fn multiplicity(&self, key: &EdgeKey) -> u64 {
        self.edges.get(key).copied().unwrap_or(0)
    }

    /// Edges in id form, sorted by label then incidence indices.
    pub fn hyperedges(&self) -> Vec<Hyperedge> {
        self.edges
            .iter()
            .map(|(k, &m)| Hyperedge {
                label: k.label.clone(),
                incidence: self.table.ids(k),
                multiplicity: m,
            })
            .collect()
    }

    pub fn conservation(&self) -> &Arc<Conservation> {
        &self.conservation
    }

    /// Same vertex set, different edges; re-validates conservation.
    pub fn with_edges(&self, edges: BTreeMap<EdgeKey, u64>) -> Result<Self, GraphError> {
        Self::from_parts(self.table.clone(), edges, self.conservation.clone())
    }

    /// Renames vertex ids; structure is unchanged. Used to check that ids never
    /// influence canonical forms.
    pub fn relabel_ids(&self, rename: impl Fn(&VertexId) -> VertexId) -> Self {
        let vertices = self
            .vertices()
            .map(|v| Vertex {
                id: rename(&v.id),
                ..v.clone()
            })
            .collect();
        let edges = self
            .hyperedges()
            .into_iter()
            .map(|e| Hyperedge {
                incidence: e.incidence.iter().map(&rename).collect(),
                ..e
            })
            .collect();
        Self::build(vertices, edges, (*self.conservation).clone())
            .expect("renaming preserves validity")
    }
}

impl PartialEq for MultiHypergraph {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.table, &other.table) || self.table == other.table)
            && self.edges == other.edges
            && self.conservation == other.conservation
    }
}

impl Eq for MultiHypergraph {}

impl fmt::Debug for MultiHypergraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("MultiHypergraph");
        s.field(
            "vertices",
            &self
                .vertices()
                .map(|v| format!("{}:{}x{}", v.id, v.label, v.multiplicity))
                .collect::<Vec<_>>(),
        );
        s.field(
            "edges",
            &self
                .hyperedges()
                .iter()
                .map(|e| {
                    let ids: Vec<&str> = e.incidence.iter().map(VertexId::as_str).collect();
                    format!("{}({})x{}", e.label, ids.join(","), e.multiplicity)
                })
                .collect::<Vec<_>>(),
        );
        s.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eccentric_state(table_count: u64) -> Result<MultiHypergraph, GraphError> {
        MultiHypergraph::build(
            vec![
                Vertex::new("ecc", "eccentric", 6),
                Vertex::new("table", "table", 1),
                Vertex::new("bottom", "shelf_bottom", 1),
                Vertex::new("top", "shelf_top", 1),
            ],
            vec![
                Hyperedge::new("at", &["ecc", "table"], table_count),
                Hyperedge::new("at", &["ecc", "bottom"], 2),
                Hyperedge::new("at", &["ecc", "top"], 2),
            ],
            Conservation::new(["at"], ["eccentric"]),
        )
    }

    #[test]
    fn empty_graph_is_valid() {
        let g = MultiHypergraph::empty(Conservation::default());
        assert_eq!(g.vertex_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn eccentrics_spread_over_three_locations() {
        let g = eccentric_state(2).unwrap();
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn conservation_violation_names_vertex() {
        let err = eccentric_state(3).unwrap_err();
        assert_eq!(
            err,
            GraphError::Conservation {
                vertex: VertexId::new("ecc"),
                expected: 6,
                actual: 7
            }
        );
    }

    #[test]
    fn dangling_incidence_is_structural_error() {
        let err = MultiHypergraph::build(
            vec![Vertex::new("a", "agent", 1)],
            vec![Hyperedge::new("at", &["a", "nowhere"], 1)],
            Conservation::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::DanglingIncidence { .. }));
    }

    #[test]
    fn duplicate_edges_merge() {
        let g = MultiHypergraph::build(
            vec![Vertex::new("s", "screw", 3), Vertex::new("t", "table", 1)],
            vec![
                Hyperedge::new("at", &["s", "t"], 1),
                Hyperedge::new("at", &["t", "s"], 2),
            ],
            Conservation::new(["at"], ["screw"]),
        )
        .unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.hyperedges()[0].multiplicity, 3);
    }

    #[test]
    fn rejects_duplicate_ids_and_zero_multiplicity() {
        let dup = MultiHypergraph::build(
            vec![Vertex::new("a", "x", 1), Vertex::new("a", "y", 1)],
            vec![],
            Conservation::default(),
        );
        assert!(matches!(dup, Err(GraphError::DuplicateVertex(_))));
        let zero = MultiHypergraph::build(
            vec![Vertex::new("a", "x", 0)],
            vec![],
            Conservation::default(),
        );
        assert!(matches!(zero, Err(GraphError::ZeroVertexMultiplicity(_))));
        assert_eq!(Label::try_new(""), Err(GraphError::EmptyName));
    }

    #[test]
    fn repeated_incidence_counts_twice() {
        let ok = MultiHypergraph::build(
            vec![Vertex::new("p", "pair", 2)],
            vec![Hyperedge::new("bond", &["p", "p"], 1)],
            Conservation::new(["bond"], ["pair"]),
        );
        assert!(ok.is_ok());
    }
}
