use std::collections::{BTreeMap, VecDeque};

use mhgfilter::domain::{generate_trace, mini_bookshelf_domain};
use mhgfilter::filter::{filter_trace, FilterError, FilterOptions};
use mhgfilter::oracle::{compare, ground_filter_trace};
use mhgfilter::rewrite::successors;
use mhgfilter::{canonical_form, CanonicalForm};

fn opts() -> FilterOptions {
    FilterOptions {
        max_groundings: 100_000,
        parallel: true,
    }
}

#[test]
fn mini_reachable_space_is_small() {
    let d = mini_bookshelf_domain();
    let start = d.initial().as_ground().unwrap();
    let mut seen: BTreeMap<CanonicalForm, ()> = BTreeMap::new();
    let mut queue = VecDeque::from([start.clone()]);
    seen.insert(canonical_form(&start), ());
    while let Some(g) = queue.pop_front() {
        for r in d.rules() {
            for s in successors(r, &g).unwrap() {
                if seen.insert(s.form, ()).is_none() {
                    queue.push_back(s.graph);
                }
            }
        }
        assert!(seen.len() <= 10_000);
    }
    assert!(seen.len() > 100, "{}", seen.len());
}

#[test]
fn lifted_matches_ground_on_mini_traces() {
    let d = mini_bookshelf_domain();
    for seed in 0..8 {
        let t = generate_trace(&d, seed, 25, None).unwrap();
        let (lb, ls) = filter_trace(&d, &t.tuples, &opts()).unwrap();
        let (gb, gs) = ground_filter_trace(&d, &t.tuples, &opts()).unwrap();
        let tv = compare(&lb, &gb, 100_000).unwrap();
        let max = tv.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 1e-9, "seed {seed}: tv {max}");
        let ll: f64 = ls.iter().map(|s| s.log_z).sum();
        let gl: f64 = gs.iter().map(|s| s.log_z).sum();
        assert!((ll - gl).abs() <= 1e-9, "seed {seed}: {ll} vs {gl}");
        for (s, b) in ls.iter().zip(&lb) {
            assert!(s.lifted_count as u128 <= s.ground_count);
            assert!((b.total_weight() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn corrupted_step_is_reported_by_both_filters() {
    let d = mini_bookshelf_domain();
    for (seed, k) in [(1, 1), (2, 7), (3, 15)] {
        let t = generate_trace(&d, seed, 15, Some(k)).unwrap();
        for r in [
            filter_trace(&d, &t.tuples, &opts()).map(|_| ()),
            ground_filter_trace(&d, &t.tuples, &opts()).map(|_| ()),
        ] {
            match r {
                Err(FilterError::TraceInconsistent { step, .. }) => assert_eq!(step, k),
                other => panic!("seed {seed}: expected inconsistency at {k}, got {other:?}"),
            }
        }
    }
}

#[test]
fn shipped_domain_files_match_the_builtins() {
    use mhgfilter::domain::{bookshelf_domain, parse_domain, serialize_domain};
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../domains");
    for (file, d) in [
        ("bookshelf.json", bookshelf_domain()),
        ("bookshelf_mini.json", mini_bookshelf_domain()),
    ] {
        let text = std::fs::read_to_string(format!("{dir}/{file}")).unwrap();
        assert_eq!(text, serialize_domain(&d), "{file} is stale");
        assert_eq!(serialize_domain(&parse_domain(&text).unwrap()), text);
    }
}
