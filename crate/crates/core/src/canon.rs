//! Canonical forms for coloured hypergraphs.
//!
//! Colour refinement over vertex colours and incident-edge signatures, with
//! individualisation on ties. Every branch of the search tree is explored
//! except branches that a transposition automorphism proves equivalent, and the
//! lexicographically smallest leaf certificate wins, so the form is exact.
//!
//! Byte layout (version 1): one tag byte, a `u32` vertex count followed by
//! length-prefixed vertex colour records in canonical order, then a `u32` edge
//! count followed by sorted edge records. An edge record is the length-prefixed
//! edge colour, the `u32` arity and the sorted canonical positions of its
//! incidence. All integers are big-endian.

use std::collections::HashSet;
use std::fmt;

use crate::graph::MultiHypergraph;

pub const FORMAT_VERSION: u8 = 1;
pub(crate) const TAG_GROUND: u8 = 0x10 | FORMAT_VERSION;
pub(crate) const TAG_LIFTED: u8 = 0x20 | FORMAT_VERSION;
const TAG_ROOTED: u8 = 0x30 | FORMAT_VERSION;

/// Byte string identifying an isomorphism class. Ordered and hashable.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalForm(Vec<u8>);

impl CanonicalForm {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    /// Short stable fingerprint for logs and reports.
    pub fn short_hex(&self) -> String {
        // FNV-1a, 64 bit
        let mut h: u64 = 0xcbf29ce484222325;
        for &b in &self.0 {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

impl fmt::Debug for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "CanonicalForm({}, {} bytes)",
            self.short_hex(),
            self.0.len()
        )
    }
}

/// Hypergraph with opaque byte colours on vertices and edges.
#[derive(Debug, Clone, Default)]
pub struct ColoredHypergraph {
    pub vertex_colors: Vec<Vec<u8>>,
    pub edges: Vec<(Vec<u8>, Vec<u32>)>,
}

pub(crate) fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn push_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_be_bytes());
}

impl ColoredHypergraph {
    pub fn from_ground(g: &MultiHypergraph) -> Self {
        let vertex_colors = g
            .vertices()
            .map(|v| {
                let mut c = Vec::new();
                push_str(&mut c, v.label.as_str());
                push_u64(&mut c, v.multiplicity);
                c
            })
            .collect();
        let edges = g
            .edges()
            .map(|(k, m)| {
                let mut c = Vec::new();
                push_str(&mut c, k.label.as_str());
                push_u64(&mut c, m);
                (c, k.incidence().to_vec())
            })
            .collect();
        Self {
            vertex_colors,
            edges,
        }
    }

    /// Prefixes each root's colour with its 1-based position; other vertices get 0.
    pub fn rooted(&self, roots: &[u32]) -> Self {
        let mut out = self.clone();
        for (v, c) in out.vertex_colors.iter_mut().enumerate() {
            let pos = roots
                .iter()
                .position(|&r| r as usize == v)
                .map_or(0, |p| p as u32 + 1);
            let mut nc = pos.to_be_bytes().to_vec();
            nc.append(c);
            *c = nc;
        }
        out
    }
}

pub fn canonical_form(g: &MultiHypergraph) -> CanonicalForm {
    canonize(TAG_GROUND, &ColoredHypergraph::from_ground(g))
}

pub fn is_isomorphic(g1: &MultiHypergraph, g2: &MultiHypergraph) -> bool {
    g1.vertex_count() == g2.vertex_count()
        && g1.edge_count() == g2.edge_count()
        && canonical_form(g1) == canonical_form(g2)
}

/// Canonical form of `g` with the given vertices individualised in order. Two
/// root tuples get equal forms iff an automorphism maps one onto the other.
pub fn rooted_form(g: &ColoredHypergraph, roots: &[u32]) -> CanonicalForm {
    canonize(TAG_ROOTED, &g.rooted(roots))
}

/// True when colour refinement alone separates every vertex, i.e. the only
/// automorphism is the identity.
pub fn is_rigid(g: &ColoredHypergraph) -> bool {
    let search = Search::new(g);
    let mut colors = search.initial_colors();
    search.refine(&mut colors);
    is_discrete(&colors)
}

pub fn canonize(tag: u8, g: &ColoredHypergraph) -> CanonicalForm {
    let search = Search::new(g);
    let mut colors = search.initial_colors();
    search.refine(&mut colors);
    let mut best: Option<Vec<u8>> = None;
    search.explore(colors, tag, &mut best);
    CanonicalForm(best.expect("search visits at least one leaf"))
}

fn is_discrete(colors: &[u32]) -> bool {
    let mut seen = vec![false; colors.len()];
    colors
        .iter()
        .all(|&c| !std::mem::replace(&mut seen[c as usize], true))
}

/// Replaces arbitrary sortable keys by their dense rank.
fn ranks<T: Ord>(keys: &[T]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut out = vec![0u32; keys.len()];
    let mut rank = 0u32;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            rank += 1;
        }
        out[order[w]] = rank;
    }
    out
}

struct Search<'a> {
    g: &'a ColoredHypergraph,
    edge_color: Vec<u32>,
    // per vertex: (edge index, occurrences)
    incident: Vec<Vec<(usize, u32)>>,
    edge_set: HashSet<(u32, Vec<u32>)>,
}

impl<'a> Search<'a> {
    fn new(g: &'a ColoredHypergraph) -> Self {
        let colors: Vec<&[u8]> = g.edges.iter().map(|(c, _)| c.as_slice()).collect();
        let edge_color = ranks(&colors);
        let mut incident = vec![Vec::new(); g.vertex_colors.len()];
        let mut edge_set = HashSet::with_capacity(g.edges.len());
        for (e, (_, inc)) in g.edges.iter().enumerate() {
            let mut sorted = inc.clone();
            sorted.sort_unstable();
            let mut i = 0;
            while i < sorted.len() {
                let v = sorted[i];
                let mut j = i;
                while j < sorted.len() && sorted[j] == v {
                    j += 1;
                }
                incident[v as usize].push((e, (j - i) as u32));
                i = j;
            }
            edge_set.insert((edge_color[e], sorted));
        }
        Self {
            g,
            edge_color,
            incident,
            edge_set,
        }
    }

    fn initial_colors(&self) -> Vec<u32> {
        ranks(&self.g.vertex_colors)
    }

    fn cell_count(colors: &[u32]) -> usize {
        colors.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    fn refine(&self, colors: &mut Vec<u32>) {
        let n = colors.len();
        let mut cells = Self::cell_count(colors);
        loop {
            if cells == n {
                return;
            }
            let sigs: Vec<(u32, Vec<(u32, u32, Vec<u32>)>)> = (0..n)
                .map(|v| {
                    let mut s: Vec<(u32, u32, Vec<u32>)> = self.incident[v]
                        .iter()
                        .map(|&(e, occ)| {
                            let mut members: Vec<u32> = self.g.edges[e]
                                .1
                                .iter()
                                .map(|&u| colors[u as usize])
                                .collect();
                            members.sort_unstable();
                            (self.edge_color[e], occ, members)
                        })
                        .collect();
                    s.sort_unstable();
                    (colors[v], s)
                })
                .collect();
            let next = ranks(&sigs);
            let next_cells = Self::cell_count(&next);
            *colors = next;
            if next_cells == cells {
                return;
            }
            cells = next_cells;
        }
    }

    fn certificate(&self, tag: u8, colors: &[u32]) -> Vec<u8> {
        let n = colors.len();
        let mut by_pos = vec![0usize; n];
        for (v, &c) in colors.iter().enumerate() {
            by_pos[c as usize] = v;
        }
        let mut out = vec![tag];
        out.extend_from_slice(&(n as u32).to_be_bytes());
        for &v in &by_pos {
            let c = &self.g.vertex_colors[v];
            out.extend_from_slice(&(c.len() as u32).to_be_bytes());
            out.extend_from_slice(c);
        }
        let mut records: Vec<Vec<u8>> = self
            .g
            .edges
            .iter()
            .map(|(c, inc)| {
                let mut pos: Vec<u32> = inc.iter().map(|&u| colors[u as usize]).collect();
                pos.sort_unstable();
                let mut r = Vec::with_capacity(8 + c.len() + 4 * pos.len());
                r.extend_from_slice(&(c.len() as u32).to_be_bytes());
                r.extend_from_slice(c);
                r.extend_from_slice(&(pos.len() as u32).to_be_bytes());
                for p in pos {
                    r.extend_from_slice(&p.to_be_bytes());
                }
                r
            })
            .collect();
        records.sort_unstable();
        out.extend_from_slice(&(records.len() as u32).to_be_bytes());
        for r in records {
            out.extend_from_slice(&r);
        }
        out
    }

    /// Whether swapping `u` and `v` maps the edge set onto itself.
    fn transposition_is_automorphism(&self, u: u32, v: u32) -> bool {
        let swap = |x: u32| {
            if x == u {
                v
            } else if x == v {
                u
            } else {
                x
            }
        };
        self.incident[u as usize]
            .iter()
            .chain(self.incident[v as usize].iter())
            .all(|&(e, _)| {
                let mut image: Vec<u32> = self.g.edges[e].1.iter().map(|&x| swap(x)).collect();
                image.sort_unstable();
                self.edge_set.contains(&(self.edge_color[e], image))
            })
    }

    fn explore(&self, colors: Vec<u32>, tag: u8, best: &mut Option<Vec<u8>>) {
        if is_discrete(&colors) {
            let cert = self.certificate(tag, &colors);
            if best.as_ref().is_none_or(|b| cert < *b) {
                *best = Some(cert);
            }
            return;
        }
        let n = colors.len();
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c as usize] += 1;
        }
        let target = (0..n).find(|&c| sizes[c] > 1).expect("non-discrete") as u32;
        let cell: Vec<u32> = (0..n as u32)
            .filter(|&v| colors[v as usize] == target)
            .collect();

        // one representative per class of mutually swappable vertices
        let mut reps: Vec<u32> = Vec::new();
        for &v in &cell {
            if !reps
                .iter()
                .any(|&r| self.transposition_is_automorphism(r, v))
            {
                reps.push(v);
            }
        }
        for v in reps {
            let mut child: Vec<u32> = colors
                .iter()
                .enumerate()
                .map(|(x, &c)| 2 * c + u32::from(c == target && x as u32 != v))
                .collect();
            child = ranks(&child);
            self.refine(&mut child);
            self.explore(child, tag, best);
        }
    }
}
