use std::collections::{BTreeMap, HashSet};

use crate::canon::{canonical_form, is_rigid, rooted_form, CanonicalForm, ColoredHypergraph};
use crate::graph::{EdgeKey, MultiHypergraph, VertexTable};

use super::matching::{raw_matches, Match, MatchTarget};
use super::{RewriteError, Rule};

impl MatchTarget for MultiHypergraph {
    fn table(&self) -> &VertexTable {
        MultiHypergraph::table(self)
    }

    fn edge_keys(&self) -> Vec<(EdgeKey, u64)> {
        self.edges().map(|(k, m)| (k.clone(), m)).collect()
    }
}

/// Matches of the rule in `g`, one per orbit under the automorphisms of `g`.
pub fn find_matches(rule: &Rule, g: &MultiHypergraph) -> Vec<Match> {
    let raw = raw_matches(rule, g);
    if raw.len() < 2 {
        return raw;
    }
    let colored = ColoredHypergraph::from_ground(g);
    if is_rigid(&colored) {
        return raw;
    }
    let mut seen = HashSet::new();
    raw.into_iter()
        .filter(|m| seen.insert(rooted_form(&colored, m.assignment())))
        .collect()
}

pub(crate) fn apply_deltas(
    rule: &Rule,
    edges: &mut BTreeMap<EdgeKey, u64>,
    deltas: &BTreeMap<EdgeKey, i64>,
) -> Result<(), RewriteError> {
    for (key, &d) in deltas {
        let cur = edges.get(key).copied().unwrap_or(0) as i64;
        let next = cur + d;
        if next < 0 {
            return Err(RewriteError::NegativeMultiplicity {
                rule: rule.name().to_string(),
                label: key.label.clone(),
            });
        }
        if next == 0 {
            edges.remove(key);
        } else {
            edges.insert(key.clone(), next as u64);
        }
    }
    Ok(())
}

/// Rewrites `g` at one match.
pub fn apply(rule: &Rule, g: &MultiHypergraph, m: &Match) -> Result<MultiHypergraph, RewriteError> {
    let mut edges = g.edge_map().clone();
    apply_deltas(rule, &mut edges, &rule.deltas(m))?;
    g.with_edges(edges)
        .map_err(|source| RewriteError::Integrity {
            rule: rule.name().to_string(),
            source,
        })
}

/// One isomorphism class of outcomes of a rule.
#[derive(Debug, Clone)]
pub struct Successor {
    pub graph: MultiHypergraph,
    pub form: CanonicalForm,
    /// Number of match orbits leading to this class.
    pub count: usize,
    pub probability: f64,
}

/// Outcome distribution of applying the rule at a uniformly chosen match.
/// Empty when the rule does not apply.
pub fn successors(rule: &Rule, g: &MultiHypergraph) -> Result<Vec<Successor>, RewriteError> {
    let matches = find_matches(rule, g);
    let total = matches.len();
    let mut by_form: BTreeMap<CanonicalForm, (MultiHypergraph, usize)> = BTreeMap::new();
    for m in &matches {
        let h = apply(rule, g, m)?;
        by_form
            .entry(canonical_form(&h))
            .or_insert_with(|| (h, 0))
            .1 += 1;
    }
    Ok(by_form
        .into_iter()
        .map(|(form, (graph, count))| Successor {
            graph,
            form,
            count,
            probability: count as f64 / total as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Conservation, Hyperedge, Vertex};
    use crate::rewrite::{Effect, Pattern};

    /// Two identical screws on a table, an agent that can take one.
    fn table_with_screws() -> MultiHypergraph {
        MultiHypergraph::build(
            vec![
                Vertex::new("a", "agent", 1),
                Vertex::new("t", "table", 1),
                Vertex::new("s1", "screw", 1),
                Vertex::new("s2", "screw", 1),
            ],
            vec![
                Hyperedge::new("at", &["a", "t"], 1),
                Hyperedge::new("at", &["s1", "t"], 1),
                Hyperedge::new("at", &["s2", "t"], 1),
            ],
            Conservation::new(["at", "holds"], ["screw"]),
        )
        .unwrap()
    }

    fn take() -> Rule {
        let p = Pattern::default()
            .vertex("a", "agent", 1)
            .vertex("l", "*", 1)
            .vertex("x", "screw", 1)
            .edge("at", &["a", "l"], 1)
            .edge("at", &["x", "l"], 1);
        let e = Effect::default()
            .retract(1, 1)
            .assert("holds", &["a", "x"], 1);
        Rule::new("take", p, e, None).unwrap()
    }

    #[test]
    fn symmetric_matches_collapse_to_one_orbit() {
        let g = table_with_screws();
        assert_eq!(raw_matches(&take(), &g).len(), 2);
        assert_eq!(find_matches(&take(), &g).len(), 1);
        let s = successors(&take(), &g).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].probability, 1.0);
    }

    #[test]
    fn outcomes_weighted_by_match_orbits() {
        let g = MultiHypergraph::build(
            vec![
                Vertex::new("a", "agent", 1),
                Vertex::new("t", "table", 1),
                Vertex::new("s1", "screw", 1),
                Vertex::new("s2", "screw", 1),
                Vertex::new("s3", "screw", 1),
                Vertex::new("m", "mark", 1),
            ],
            vec![
                Hyperedge::new("at", &["a", "t"], 1),
                Hyperedge::new("at", &["s1", "t"], 1),
                Hyperedge::new("at", &["s2", "t"], 1),
                Hyperedge::new("at", &["s3", "t"], 1),
                Hyperedge::new("tag", &["s3", "m"], 1),
            ],
            Conservation::new(["at", "holds"], ["screw"]),
        )
        .unwrap();
        // three matches, but s1 and s2 are one orbit
        assert_eq!(raw_matches(&take(), &g).len(), 3);
        let s = successors(&take(), &g).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s
            .iter()
            .all(|x| x.count == 1 && (x.probability - 0.5).abs() < 1e-12));
    }

    #[test]
    fn edge_multiplicity_requirement() {
        let g = table_with_screws();
        let p = Pattern::default()
            .vertex("a", "agent", 1)
            .vertex("t", "table", 1)
            .edge("at", &["a", "t"], 2);
        let r = Rule::new("r", p, Effect::default(), None).unwrap();
        assert!(find_matches(&r, &g).is_empty());
        assert!(successors(&r, &g).unwrap().is_empty());
    }

    #[test]
    fn conservation_breach_is_integrity_error() {
        let g = table_with_screws();
        let p = Pattern::default()
            .vertex("x", "screw", 1)
            .vertex("t", "table", 1)
            .edge("at", &["x", "t"], 1);
        let r = Rule::new("lose", p, Effect::default().retract(0, 1), None).unwrap();
        let m = &find_matches(&r, &g)[0];
        assert!(matches!(
            apply(&r, &g, m),
            Err(RewriteError::Integrity { ref rule, .. }) if rule == "lose"
        ));
    }

    /// Installing one of several eccentrics held by the agent on a board.
    #[test]
    fn install_rule_with_has_edge() {
        let cons = Conservation::new(["at", "holds", "has"], ["eccentric"]);
        let g = MultiHypergraph::build(
            vec![
                Vertex::new("a", "agent", 1),
                Vertex::new("e", "eccentric", 3),
                Vertex::new("top", "top", 1),
                Vertex::new("bottom", "bottom", 1),
                Vertex::new("wb", "workbench", 1),
            ],
            vec![
                Hyperedge::new("holds", &["a", "e"], 3),
                Hyperedge::new("at", &["a", "wb"], 1),
                Hyperedge::new("at", &["top", "wb"], 1),
                Hyperedge::new("at", &["bottom", "wb"], 1),
            ],
            cons,
        )
        .unwrap();
        let p = Pattern::default()
            .vertex("a", "agent", 1)
            .vertex("e", "eccentric", 1)
            .vertex("b", "*", 1)
            .vertex("l", "workbench", 1)
            .edge("holds", &["a", "e"], 1)
            .edge("at", &["a", "l"], 1)
            .edge("at", &["b", "l"], 1);
        let e = Effect::default()
            .retract(0, 1)
            .assert("has", &["b", "e"], 1);
        let r = Rule::new("install", p, e, None).unwrap();
        let s = successors(&r, &g).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| (x.probability - 0.5).abs() < 1e-12));
        let key = g
            .table()
            .key_for(&"has".into(), &["top".into(), "e".into()])
            .unwrap();
        assert!(s.iter().any(|x| x.graph.multiplicity(&key) == 1));
    }
}
