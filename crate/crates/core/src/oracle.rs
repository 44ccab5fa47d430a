//! Fully grounded reference filter.
//!
//! Uses only ground matching and rewriting, never a rule's lifted effect, so it
//! checks the lifted filter independently.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::canon::{canonical_form, CanonicalForm};
use crate::domain::{AnnotationTuple, Domain};
use crate::filter::{Belief, FilterError, FilterOptions, Mode, StepStats};
use crate::graph::MultiHypergraph;
use crate::lifted::LiftedError;
use crate::rewrite::successors;

/// `p(x_t | y_1..t)` over ground states keyed by canonical form.
#[derive(Debug, Clone, Default)]
pub struct GroundBelief {
    entries: BTreeMap<CanonicalForm, (MultiHypergraph, f64)>,
}

impl GroundBelief {
    pub fn singleton(g: MultiHypergraph) -> Self {
        let mut b = Self::default();
        b.add(canonical_form(&g), g, 1.0);
        b
    }

    fn add(&mut self, form: CanonicalForm, g: MultiHypergraph, w: f64) {
        if w > 0.0 {
            self.entries.entry(form).or_insert((g, 0.0)).1 += w;
        }
    }

    fn normalize(&mut self) -> f64 {
        let z = self.total_weight();
        if z > 0.0 {
            for e in self.entries.values_mut() {
                e.1 /= z;
            }
        }
        z
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CanonicalForm, &MultiHypergraph, f64)> {
        self.entries.iter().map(|(f, (g, w))| (f, g, *w))
    }

    pub fn weight(&self, form: &CanonicalForm) -> f64 {
        self.entries.get(form).map_or(0.0, |e| e.1)
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.values().map(|e| e.1).sum()
    }
}

/// Spreads each entry's weight uniformly over its groundings.
pub fn expand(b: &Belief, cap: u128) -> Result<GroundBelief, LiftedError> {
    let mut out = GroundBelief::default();
    for (_, e) in b.iter() {
        let gs = e.state.groundings_capped(cap)?;
        let w = e.weight / gs.len() as f64;
        for g in gs {
            out.add(canonical_form(&g), g, w);
        }
    }
    Ok(out)
}

/// One grounded predict and update.
fn ground_step(
    domain: &Domain,
    b: &GroundBelief,
    y: &AnnotationTuple,
    step: usize,
    parallel: bool,
) -> Result<(GroundBelief, f64), FilterError> {
    let obs = domain.observation();
    let am = domain.action_model();
    let run = |(g, w): &(MultiHypergraph, f64)| -> Result<Vec<(CanonicalForm, MultiHypergraph, f64)>, FilterError> {
        let mut options = Vec::new();
        for r in domain.rules() {
            let s = successors(r, g)?;
            if !s.is_empty() {
                options.push((r.name(), s));
            }
        }
        let names: Vec<&str> = options.iter().map(|o| o.0).collect();
        let dist = am.distribution(&names);
        let before = obs.observe_ground(g);
        let mut out = Vec::new();
        for ((name, succ), p) in options.into_iter().zip(dist) {
            for s in succ {
                let after = obs.observe_ground(&s.graph);
                if obs.explains(y, &before, name, &after) {
                    out.push((s.form, s.graph, w * p * s.probability));
                }
            }
        }
        Ok(out)
    };
    let states: Vec<(MultiHypergraph, f64)> = b.entries.values().cloned().collect();
    let results: Vec<_> = if parallel {
        states.par_iter().map(run).collect()
    } else {
        states.iter().map(run).collect()
    };
    let mut next = GroundBelief::default();
    for r in results {
        for (f, g, w) in r? {
            next.add(f, g, w);
        }
    }
    let z = next.normalize();
    if z <= 0.0 || next.is_empty() {
        return Err(FilterError::TraceInconsistent {
            step,
            tuple: Box::new(y.clone()),
        });
    }
    Ok((next, z))
}

/// Stepwise grounded filter, numbered like [`crate::filter::Filter`].
pub struct GroundFilter<'d> {
    domain: &'d Domain,
    opts: FilterOptions,
    belief: GroundBelief,
    step: usize,
    log_likelihood: f64,
}

impl<'d> GroundFilter<'d> {
    pub fn new(domain: &'d Domain, opts: FilterOptions) -> Result<Self, FilterError> {
        let belief = expand(
            &Belief::singleton(domain.initial().clone()),
            opts.max_groundings,
        )?;
        Ok(Self {
            domain,
            opts,
            belief,
            step: 0,
            log_likelihood: 0.0,
        })
    }

    pub fn belief(&self) -> &GroundBelief {
        &self.belief
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    fn stats(&self, action: Option<&str>, log_z: f64) -> StepStats {
        StepStats {
            mode: Mode::Ground,
            step: self.step,
            action: action.map(str::to_string),
            lifted_count: self.belief.len(),
            ground_count: self.belief.len() as u128,
            log_z,
        }
    }

    pub fn initial_stats(&self) -> StepStats {
        self.stats(None, 0.0)
    }

    pub fn step(&mut self, y: &AnnotationTuple) -> Result<StepStats, FilterError> {
        let step = self.step + 1;
        self.domain
            .check_tuple(y)
            .map_err(|message| FilterError::InvalidTuple { step, message })?;
        let (next, z) = ground_step(self.domain, &self.belief, y, step, self.opts.parallel)?;
        if next.len() as u128 > self.opts.max_groundings {
            return Err(LiftedError::EnumerationLimit {
                count: next.len() as u128,
                cap: self.opts.max_groundings,
            }
            .into());
        }
        self.belief = next;
        self.step = step;
        self.log_likelihood += z.ln();
        Ok(self.stats(Some(&y.action), z.ln()))
    }
}

/// Grounded filtering of a whole trace, with the same step numbering and
/// errors as [`crate::filter::filter_trace`].
pub fn ground_filter_trace(
    domain: &Domain,
    trace: &[AnnotationTuple],
    opts: &FilterOptions,
) -> Result<(Vec<GroundBelief>, Vec<StepStats>), FilterError> {
    let mut f = GroundFilter::new(domain, opts.clone())?;
    let mut beliefs = vec![f.belief().clone()];
    let mut stats = vec![f.initial_stats()];
    for y in trace {
        stats.push(f.step(y)?);
        beliefs.push(f.belief().clone());
    }
    Ok((beliefs, stats))
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("lifted run has {lifted} beliefs, ground run has {ground}")]
    LengthMismatch { lifted: usize, ground: usize },
    #[error(transparent)]
    Lifted(#[from] LiftedError),
}

/// Half the L1 distance between two ground beliefs.
pub fn total_variation(a: &GroundBelief, b: &GroundBelief) -> f64 {
    let mut sum = 0.0;
    for (f, (_, w)) in &a.entries {
        sum += (w - b.weight(f)).abs();
    }
    for (f, (_, w)) in &b.entries {
        if !a.entries.contains_key(f) {
            sum += w;
        }
    }
    sum / 2.0
}

/// Per-step total variation between expanded lifted beliefs and ground beliefs.
pub fn compare(
    lifted: &[Belief],
    ground: &[GroundBelief],
    cap: u128,
) -> Result<Vec<f64>, CompareError> {
    if lifted.len() != ground.len() {
        return Err(CompareError::LengthMismatch {
            lifted: lifted.len(),
            ground: ground.len(),
        });
    }
    lifted
        .iter()
        .zip(ground)
        .map(|(l, g)| Ok(total_variation(&expand(l, cap)?, g)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Conservation, Hyperedge, Vertex};
    use crate::lifted::{BoundedEdge, LiftedMultiHypergraph, TotalConstraint};

    fn eccentrics(top_hi: u64, total: u64) -> LiftedMultiHypergraph {
        LiftedMultiHypergraph::build(
            vec![
                Vertex::new("e", "eccentric", total),
                Vertex::new("top", "top", 1),
                Vertex::new("bottom", "bottom", 1),
            ],
            vec![],
            vec![
                BoundedEdge::new("at", &["e", "top"], 0, top_hi),
                BoundedEdge::new("at", &["e", "bottom"], 0, total),
            ],
            vec![TotalConstraint {
                edges: vec![0, 1],
                total,
            }],
            Conservation::new(["at"], ["eccentric"]),
        )
        .unwrap()
    }

    #[test]
    fn expansion_is_uniform_and_keeps_mass() {
        let g = expand(&Belief::singleton(eccentrics(2, 4)), 100).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|(_, _, w)| (w - 1.0 / 3.0).abs() < 1e-12));
        assert!((g.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_entries_add_up() {
        // caps 1 and 2 over the same total: {(0,4),(1,3)} and {(0,4),(1,3),(2,2)}
        let b = Belief::from_weighted([(eccentrics(1, 4), 0.5), (eccentrics(2, 4), 0.5)]);
        let g = expand(&b, 100).unwrap();
        let mut w: Vec<f64> = g.iter().map(|(_, _, w)| w).collect();
        w.sort_by(f64::total_cmp);
        let want = [1.0 / 6.0, 0.25 + 1.0 / 6.0, 0.25 + 1.0 / 6.0];
        assert!(
            w.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12),
            "{w:?}"
        );
        assert!(matches!(
            expand(&b, 2),
            Err(LiftedError::EnumerationLimit { .. })
        ));
    }

    #[test]
    fn total_variation_definition() {
        let mut a = GroundBelief::default();
        let mut b = GroundBelief::default();
        let g = |n: u64| {
            MultiHypergraph::build(
                vec![Vertex::new("x", "x", 1), Vertex::new("y", "y", 1)],
                vec![Hyperedge::new("e", &["x", "y"], n)],
                Conservation::default(),
            )
            .unwrap()
        };
        a.add(canonical_form(&g(1)), g(1), 0.5);
        a.add(canonical_form(&g(2)), g(2), 0.5);
        b.add(canonical_form(&g(1)), g(1), 0.6);
        b.add(canonical_form(&g(2)), g(2), 0.4);
        assert!((total_variation(&a, &b) - 0.1).abs() < 1e-12);
        assert_eq!(total_variation(&a, &a), 0.0);
        assert!(matches!(
            compare(&[], &[a], 10),
            Err(CompareError::LengthMismatch { .. })
        ));
    }
}
