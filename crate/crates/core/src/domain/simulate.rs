//! Forward simulation of a domain into annotation traces.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::filter::Observed;
use crate::graph::MultiHypergraph;
use crate::lifted::DEFAULT_ENUMERATION_CAP;
use crate::rewrite::{successors, RewriteError, Successor};

use super::{AnnotationTuple, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrace {
    pub tuples: Vec<AnnotationTuple>,
    /// Step (1-based) at which no rule applied, if the run stopped early.
    pub dead_end: Option<usize>,
    /// Step (1-based) whose tuple was perturbed.
    pub corrupted: Option<usize>,
}

fn tuple(rule: &str, before: &Observed, after: &Observed) -> AnnotationTuple {
    AnnotationTuple::from_maps(
        rule,
        before
            .location
            .first()
            .cloned()
            .expect("agent has a location"),
        after
            .location
            .first()
            .cloned()
            .expect("agent has a location"),
        before.held.clone(),
        after.held.clone(),
    )
}

/// Simulates `length` steps from the initial state, sampling rules with the
/// domain's action model and outcomes by their probability. With
/// `corrupt_at = Some(k)` (1-based), tuple `k` is changed so that no state
/// can explain it.
pub fn generate_trace(
    domain: &Domain,
    seed: u64,
    length: usize,
    corrupt_at: Option<usize>,
) -> Result<GeneratedTrace, RewriteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = domain.observation();
    let mut state: MultiHypergraph = match domain.initial().as_ground() {
        Some(g) => g,
        None => {
            let gs = domain
                .initial()
                .groundings_capped(DEFAULT_ENUMERATION_CAP)
                .map_err(|source| RewriteError::Lifted {
                    rule: "<initial>".to_string(),
                    source,
                })?;
            let i = WeightedIndex::new(vec![1.0; gs.len()])
                .expect("initial state has groundings")
                .sample(&mut rng);
            gs[i].clone()
        }
    };
    let mut out = GeneratedTrace {
        tuples: Vec::with_capacity(length),
        dead_end: None,
        corrupted: None,
    };
    for step in 1..=length {
        let mut options: Vec<(&str, Vec<Successor>)> = Vec::new();
        for r in domain.rules() {
            let s = successors(r, &state)?;
            if !s.is_empty() {
                options.push((r.name(), s));
            }
        }
        let names: Vec<&str> = options.iter().map(|o| o.0).collect();
        let dist = domain.action_model().distribution(&names);
        let Ok(pick) = WeightedIndex::new(&dist) else {
            out.dead_end = Some(step);
            break;
        };
        let (name, succ) = &options[pick.sample(&mut rng)];
        let probs: Vec<f64> = succ.iter().map(|s| s.probability).collect();
        let next = &succ[WeightedIndex::new(&probs)
            .expect("successor probabilities are positive")
            .sample(&mut rng)];
        let before = obs.observe_ground(&state);
        let after = obs.observe_ground(&next.graph);
        out.tuples.push(tuple(name, &before, &after));
        state = next.graph.clone();
    }
    if let Some(k) = corrupt_at {
        if let Some(t) = k.checked_sub(1).and_then(|i| out.tuples.get_mut(i)) {
            match obs.locations.iter().find(|l| **l != t.loc_t) {
                Some(other) => t.loc_t = other.clone(),
                None => {
                    let label = obs.agent.clone();
                    *t.held_t.entry(label).or_insert(0) += 1;
                }
            }
            out.corrupted = Some(k);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::mini_bookshelf_domain;

    #[test]
    fn deterministic_per_seed() {
        let d = mini_bookshelf_domain();
        let a = generate_trace(&d, 7, 15, None).unwrap();
        let b = generate_trace(&d, 7, 15, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tuples.len(), 15);
        assert!(generate_trace(&d, 7, 0, None).unwrap().tuples.is_empty());
    }

    #[test]
    fn corruption_changes_one_tuple() {
        let d = mini_bookshelf_domain();
        let clean = generate_trace(&d, 3, 10, None).unwrap();
        let bad = generate_trace(&d, 3, 10, Some(4)).unwrap();
        assert_eq!(bad.corrupted, Some(4));
        let diff: Vec<usize> = (0..10)
            .filter(|&i| clean.tuples[i] != bad.tuples[i])
            .collect();
        assert_eq!(diff, vec![3]);
    }
}
