//! One PASS/FAIL line per acceptance criterion, written past the test
//! harness's output capture; the test fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;
use tempfile::TempDir;

use mhgfilter::domain::{
    bookshelf_domain, generate_trace, mini_bookshelf_domain, DomainSpec, LabelSpec, RuleSpec,
    StateSpec,
};
use mhgfilter::filter::{Belief, FilterError, FilterOptions, ObservationModel};
use mhgfilter::lifted::DEFAULT_ENUMERATION_CAP;
use mhgfilter::oracle::{compare, expand, ground_filter_trace};
use mhgfilter::rewrite::{lifted_apply, successors};
use mhgfilter::{
    canonical_form, filter_trace, AnnotationTuple, BoundedEdge, CanonicalForm, Conservation,
    Domain, Hyperedge, Label, LiftedMultiHypergraph, MultiHypergraph, TotalConstraint, Vertex,
};

type Verdict = Result<String, String>;
/// Direct writes to stdout are not captured by the test harness.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;

fn opts() -> FilterOptions {
    FilterOptions::default()
}

/// Every belief produced by the runs below, for the normalization check.
#[derive(Default)]
struct Ledger {
    beliefs: usize,
    worst: f64,
}

impl Ledger {
    fn record(&mut self, bs: &[Belief]) {
        for b in bs {
            self.beliefs += 1;
            self.worst = self.worst.max((b.total_weight() - 1.0).abs());
        }
    }
}

fn mini_oracle_equivalence(ledger: &Mutex<Ledger>) -> Verdict {
    let d = mini_bookshelf_domain();
    let start = Instant::now();
    let mut worst_tv = 0.0f64;
    let mut worst_ll = 0.0f64;
    let mut installs = 0;
    for seed in 0..20 {
        let t = generate_trace(&d, seed, 20, None).map_err(|e| e.to_string())?;
        if t.tuples.len() != 20 {
            return Err(format!("seed {seed}: trace stopped early"));
        }
        installs += t
            .tuples
            .iter()
            .filter(|y| y.action.starts_with("install"))
            .count();
        let (lb, ls) =
            filter_trace(&d, &t.tuples, &opts()).map_err(|e| format!("seed {seed}: {e}"))?;
        let (gb, gs) =
            ground_filter_trace(&d, &t.tuples, &opts()).map_err(|e| format!("seed {seed}: {e}"))?;
        let tv = compare(&lb, &gb, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
        worst_tv = tv.iter().cloned().fold(worst_tv, f64::max);
        let ll: f64 = ls.iter().map(|s| s.log_z).sum();
        let gl: f64 = gs.iter().map(|s| s.log_z).sum();
        worst_ll = worst_ll.max((ll - gl).abs());
        ledger.lock().unwrap().record(&lb);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "20 traces x 20 steps ({installs} installs), max TV {worst_tv:.1e}, max |dlogL| {worst_ll:.1e}, {secs:.1}s"
    );
    if worst_tv <= 1e-9 && worst_ll <= 1e-9 && secs < 30.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn eccentric_example() -> Verdict {
    // four eccentrics on the top or bottom board, at most two on top
    let l = LiftedMultiHypergraph::build(
        vec![
            Vertex::new("e", "eccentric", 4),
            Vertex::new("top", "top", 1),
            Vertex::new("bottom", "bottom", 1),
        ],
        vec![],
        vec![
            BoundedEdge::new("at", &["e", "top"], 0, 2),
            BoundedEdge::new("at", &["e", "bottom"], 0, 4),
        ],
        vec![TotalConstraint {
            edges: vec![0, 1],
            total: 4,
        }],
        Conservation::new(["at"], ["eccentric"]),
    )
    .map_err(|e| e.to_string())?;
    let g = expand(&Belief::singleton(l), 100).map_err(|e| e.to_string())?;

    let mut want = BTreeSet::new();
    for top in 0..=2u64 {
        for bottom in 0..=4u64 {
            if top + bottom == 4 {
                want.insert((top, bottom));
            }
        }
    }
    let mut got = BTreeSet::new();
    let mut weights = Vec::new();
    for (_, s, w) in g.iter() {
        let m = |b: &str| {
            s.hyperedges()
                .iter()
                .find(|e| e.incidence.iter().any(|v| v.as_str() == b))
                .map_or(0, |e| e.multiplicity)
        };
        got.insert((m("top"), m("bottom")));
        weights.push(w);
    }
    let detail = format!("{} groundings {got:?}, weights {weights:?}", g.len());
    let uniform = weights.iter().all(|w| (w - 1.0 / 3.0).abs() <= 1e-12);
    if got == want && want.len() == 3 && uniform {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// An agent at the workbench holding `k` eccentrics and a screwdriver, next
/// to a board with `n` open holes.
fn pool_domain(k: u64, n: usize) -> Domain {
    let mini = mini_bookshelf_domain();
    let install = RuleSpec::from_rule(mini.rule("installEccentric").unwrap());
    let mut vertices = vec![
        Vertex::new("agent", "agent", 1),
        Vertex::new("workbench", "workbench", 1),
        Vertex::new("eccentric", "eccentric", k),
        Vertex::new("screwdriver", "screwdriver", 1),
        Vertex::new("board", "board", 1),
    ];
    let mut edges = vec![
        Hyperedge::new("at", &["agent", "workbench"], 1),
        Hyperedge::new("at", &["board", "workbench"], 1),
        Hyperedge::new("holds", &["agent", "eccentric"], k),
        Hyperedge::new("holds", &["agent", "screwdriver"], 1),
    ];
    for i in 0..n {
        let h = format!("h{i}");
        vertices.push(Vertex::new(&h, &h, 1));
        edges.push(Hyperedge::new("on", &[&h, "board"], 1));
        edges.push(Hyperedge::new("fits", &[&h, "eccentric"], 1));
        edges.push(Hyperedge::new("open", &[&h], 1));
    }
    let spec = DomainSpec {
        version: mini.spec().version,
        name: "pool".to_string(),
        labels: LabelSpec {
            vertex: vertices.iter().map(|v| v.label.clone()).collect(),
            edge: ["at", "holds", "on", "fits", "open", "installed"]
                .into_iter()
                .map(Label::new)
                .collect(),
        },
        entity_labels: BTreeSet::new(),
        conservation: Conservation::new(["at", "holds", "installed"], ["eccentric", "screwdriver"]),
        observation: ObservationModel {
            agent: Label::new("agent"),
            location_edge: Label::new("at"),
            holds_edge: Label::new("holds"),
            locations: vec![Label::new("workbench")],
        },
        initial_state: StateSpec {
            vertices,
            edges,
            bounded_edges: vec![],
            constraints: vec![],
        },
        rules: vec![install],
        action_model: Default::default(),
    };
    Domain::from_spec(spec).expect("pool domain is valid")
}

fn closed_holes(g: &MultiHypergraph, n: usize) -> BTreeSet<usize> {
    let open: BTreeSet<String> = g
        .hyperedges()
        .into_iter()
        .filter(|e| e.label.as_str() == "open")
        .map(|e| e.incidence[0].as_str().to_string())
        .collect();
    (0..n)
        .filter(|i| !open.contains(&format!("h{i}")))
        .collect()
}

fn combinatorial_support(ledger: &Mutex<Ledger>) -> Verdict {
    let (k, n) = (2u64, 5usize);
    let d = pool_domain(k, n);
    let trace: Vec<AnnotationTuple> = (0..k)
        .map(|i| {
            AnnotationTuple::new(
                "installEccentric",
                "workbench",
                "workbench",
                &[("eccentric", k - i), ("screwdriver", 1)],
                &[("eccentric", k - i - 1), ("screwdriver", 1)],
            )
        })
        .collect();
    let (lb, _) = filter_trace(&d, &trace, &opts()).map_err(|e| e.to_string())?;
    ledger.lock().unwrap().record(&lb);
    let last = lb.last().unwrap();
    let support = expand(last, 1000).map_err(|e| e.to_string())?;
    let (gb, _) = ground_filter_trace(&d, &trace, &opts()).map_err(|e| e.to_string())?;

    // every way to choose which k of the n holes were used
    let mut want: BTreeSet<BTreeSet<usize>> = BTreeSet::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as u64 == k {
            want.insert((0..n).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    let got: BTreeSet<BTreeSet<usize>> =
        support.iter().map(|(_, g, _)| closed_holes(g, n)).collect();
    let detail = format!(
        "lifted entries {}, expanded support {}, ground oracle support {}, C({n},{k}) = {}",
        last.len(),
        support.len(),
        gb.last().unwrap().len(),
        want.len()
    );
    if last.len() == 1 && support.len() == 10 && got == want && gb.last().unwrap().len() == 10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn install_count(t: &[AnnotationTuple]) -> usize {
    let d = bookshelf_domain();
    t.iter()
        .filter(|y| {
            d.rule(&y.action)
                .is_some_and(|r| r.lifted_effect().is_some())
        })
        .count()
}

fn compression(ledger: &Mutex<Ledger>) -> Verdict {
    let d = bookshelf_domain();
    // the most install-heavy of twenty seeded 40-step traces
    let (seed, trace) = (0..20u64)
        .map(|s| (s, generate_trace(&d, s, 40, None).unwrap().tuples))
        .max_by_key(|(s, t)| (install_count(t), std::cmp::Reverse(*s)))
        .unwrap();
    let dir = TempDir::new().unwrap();
    let tpath = dir.path().join("trace.jsonl");
    fs::write(&tpath, mhgfilter::domain::serialize_trace(&trace)).unwrap();
    let rpath = dir.path().join("report.json");
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_mhgfilter"))
        .args(["filter", "--domain", "builtin:bookshelf", "--trace"])
        .arg(&tpath)
        .arg("--output")
        .arg(&rpath)
        .output()
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    if !o.status.success() {
        return Err(format!(
            "filter exited with {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    let r: Value = serde_json::from_str(&fs::read_to_string(&rpath).unwrap()).unwrap();
    let max_lifted = r["totals"]["max_lifted"].as_u64().unwrap();
    let max_ground = r["totals"]["max_ground"].as_u64().unwrap();
    let (lb, _) = filter_trace(&d, &trace, &opts()).map_err(|e| e.to_string())?;
    ledger.lock().unwrap().record(&lb);
    let detail = format!(
        "seed {seed}, {} installs in 40 steps: max lifted {max_lifted}, max ground {max_ground}, {secs:.1}s",
        install_count(&trace)
    );
    if max_lifted <= 5 && max_ground > 1000 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn explanation_and_rejection(ledger: &Mutex<Ledger>) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut explained = 0;
    let mut rejected = 0;
    let mut failures = Vec::new();
    for (name, d, len) in [
        ("mini", mini_bookshelf_domain(), 25usize),
        ("bookshelf", bookshelf_domain(), 25),
    ] {
        for seed in 0..50u64 {
            let t = generate_trace(&d, 1000 + seed, len, None).map_err(|e| e.to_string())?;
            match filter_trace(&d, &t.tuples, &opts()) {
                Ok((bs, _)) => {
                    explained += 1;
                    ledger.lock().unwrap().record(&bs);
                }
                Err(e) => failures.push(format!("{name} seed {seed}: {e}")),
            }
            let k = rng.gen_range(1..=t.tuples.len());
            let bad = generate_trace(&d, 1000 + seed, len, Some(k)).map_err(|e| e.to_string())?;
            match filter_trace(&d, &bad.tuples, &opts()) {
                Err(FilterError::TraceInconsistent { step, .. }) if step == k => rejected += 1,
                other => failures.push(format!(
                    "{name} seed {seed} corrupted at {k}: {:?}",
                    other.map(|_| "explained")
                )),
            }
        }
    }
    let detail =
        format!("{explained}/100 explained, {rejected}/100 rejected at the corrupted step");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

/// Plain description of a small labelled multi-hypergraph.
#[derive(Debug, Clone)]
struct Small {
    vertices: Vec<(u8, u64)>,
    edges: BTreeMap<(u8, Vec<usize>), u64>,
}

impl Small {
    fn random(rng: &mut ChaCha8Rng, max_vertices: usize, vlabels: u8, elabels: u8) -> Self {
        let n = rng.gen_range(1..=max_vertices);
        let vertices = (0..n)
            .map(|_| (rng.gen_range(0..vlabels), rng.gen_range(1..=2)))
            .collect();
        let mut edges = BTreeMap::new();
        for _ in 0..rng.gen_range(0..=n + 2) {
            let arity = rng.gen_range(1..=3);
            let mut inc: Vec<usize> = (0..arity).map(|_| rng.gen_range(0..n)).collect();
            inc.sort();
            *edges.entry((rng.gen_range(0..elabels), inc)).or_insert(0) += rng.gen_range(1..=2);
        }
        Self { vertices, edges }
    }

    /// Same graph with vertex `i` renamed to `perm[i]`.
    fn permuted(&self, perm: &[usize]) -> Self {
        let mut vertices = vec![(0, 0); self.vertices.len()];
        for (i, v) in self.vertices.iter().enumerate() {
            vertices[perm[i]] = *v;
        }
        let edges = self
            .edges
            .iter()
            .map(|((l, inc), m)| {
                let mut inc: Vec<usize> = inc.iter().map(|&v| perm[v]).collect();
                inc.sort();
                ((*l, inc), *m)
            })
            .collect();
        Self { vertices, edges }
    }

    fn to_graph(&self, rng: &mut ChaCha8Rng) -> MultiHypergraph {
        let ids: Vec<String> = (0..self.vertices.len()).map(|i| format!("v{i}")).collect();
        let mut vs: Vec<Vertex> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, (l, m))| Vertex::new(&ids[i], &format!("L{l}"), *m))
            .collect();
        let mut es: Vec<Hyperedge> = self
            .edges
            .iter()
            .map(|((l, inc), m)| {
                let inc: Vec<&str> = inc.iter().map(|&v| ids[v].as_str()).collect();
                Hyperedge::new(&format!("E{l}"), &inc, *m)
            })
            .collect();
        vs.shuffle(rng);
        es.shuffle(rng);
        MultiHypergraph::build(vs, es, Conservation::default()).expect("valid graph")
    }

    fn isomorphic_brute_force(&self, other: &Small) -> bool {
        fn extend(a: &Small, b: &Small, perm: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
            let i = perm.len();
            if i == a.vertices.len() {
                return a.permuted(perm).edges == b.edges;
            }
            for j in 0..b.vertices.len() {
                if !used[j] && a.vertices[i] == b.vertices[j] {
                    used[j] = true;
                    perm.push(j);
                    if extend(a, b, perm, used) {
                        return true;
                    }
                    perm.pop();
                    used[j] = false;
                }
            }
            false
        }
        self.vertices.len() == other.vertices.len()
            && self.edges.len() == other.edges.len()
            && extend(
                self,
                other,
                &mut Vec::new(),
                &mut vec![false; other.vertices.len()],
            )
    }
}

fn canonization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatched = 0;
    for _ in 0..1000 {
        let s = Small::random(&mut rng, 10, 3, 3);
        let mut perm: Vec<usize> = (0..s.vertices.len()).collect();
        perm.shuffle(&mut rng);
        let a = canonical_form(&s.to_graph(&mut rng));
        let b = canonical_form(&s.permuted(&perm).to_graph(&mut rng));
        if a != b {
            mismatched += 1;
        }
    }

    // few labels so that isomorphic pairs occur naturally, plus a relabelled
    // copy of every graph
    let mut corpus = Vec::new();
    for _ in 0..150 {
        let s = Small::random(&mut rng, 6, 2, 2);
        let mut perm: Vec<usize> = (0..s.vertices.len()).collect();
        perm.shuffle(&mut rng);
        corpus.push(s.permuted(&perm));
        corpus.push(s);
    }
    let forms: Vec<CanonicalForm> = corpus
        .iter()
        .map(|s| canonical_form(&s.to_graph(&mut rng)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..corpus.len())
        .flat_map(|i| (i + 1..corpus.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<(bool, bool)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            (
                forms[i] == forms[j],
                corpus[i].isomorphic_brute_force(&corpus[j]),
            )
        })
        .collect();
    let iso = results.iter().filter(|r| r.1).count();
    let disagree = results.iter().filter(|r| r.0 != r.1).count();
    let detail = format!(
        "{mismatched}/1000 permutation mismatches; {} pairs ({iso} isomorphic), {disagree} disagreements with brute force",
        pairs.len()
    );
    if mismatched == 0 && disagree == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Reachable lifted states: belief entries along seeded runs and their
/// one-step lifted successors.
fn reachable(d: &Domain, seeds: std::ops::Range<u64>, len: usize) -> Vec<LiftedMultiHypergraph> {
    let mut seen: BTreeMap<CanonicalForm, LiftedMultiHypergraph> = BTreeMap::new();
    for seed in seeds {
        let t = generate_trace(d, seed, len, None).unwrap();
        let (bs, _) = filter_trace(d, &t.tuples, &opts()).unwrap();
        for b in &bs {
            for (f, e) in b.iter() {
                seen.entry(f.clone()).or_insert_with(|| (*e.state).clone());
                for r in d.rules() {
                    for s in lifted_apply(r, &e.state).unwrap() {
                        seen.entry(s.form).or_insert(s.state);
                    }
                }
            }
        }
    }
    seen.into_values().collect()
}

fn add(map: &mut BTreeMap<CanonicalForm, f64>, g: &MultiHypergraph, w: f64) {
    *map.entry(canonical_form(g)).or_insert(0.0) += w;
}

/// TV between lifted application and grounding-then-rewriting.
fn commutation_gap(d: &Domain, l: &LiftedMultiHypergraph) -> f64 {
    let gs = l.groundings().unwrap();
    let n = gs.len() as f64;
    let mut worst = 0.0f64;
    for r in d.rules() {
        let mut ground = BTreeMap::new();
        for g in &gs {
            for s in successors(r, g).unwrap() {
                *ground.entry(s.form).or_insert(0.0) += s.probability / n;
            }
        }
        let mut lifted = BTreeMap::new();
        for s in lifted_apply(r, l).unwrap() {
            let parts = s.state.groundings().unwrap();
            for g in &parts {
                add(&mut lifted, g, s.probability / parts.len() as f64);
            }
        }
        let keys: BTreeSet<&CanonicalForm> = ground.keys().chain(lifted.keys()).collect();
        let tv: f64 = keys
            .iter()
            .map(|k| (ground.get(*k).unwrap_or(&0.0) - lifted.get(*k).unwrap_or(&0.0)).abs())
            .sum::<f64>()
            / 2.0;
        worst = worst.max(tv);
    }
    worst
}

fn normalization_and_commutation(ledger: &Mutex<Ledger>) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut parts = Vec::new();
    let mut worst_gap = 0.0f64;
    for (name, d) in [
        ("mini", mini_bookshelf_domain()),
        ("bookshelf", bookshelf_domain()),
    ] {
        let mut states = reachable(&d, 0..10, 30);
        states.shuffle(&mut rng);
        states.truncate(100);
        let lifted = states.iter().filter(|l| !l.is_ground()).count();
        let gap = states
            .par_iter()
            .map(|l| commutation_gap(&d, l))
            .reduce(|| 0.0, f64::max);
        worst_gap = worst_gap.max(gap);
        parts.push(format!(
            "{name}: {} states ({lifted} non-ground), max TV {:.1e}",
            states.len(),
            gap.abs()
        ));
        if states.len() < 100 {
            return Err(format!("{name}: only {} reachable states", states.len()));
        }
    }
    let l = ledger.lock().unwrap();
    let detail = format!(
        "{} beliefs, worst |sum - 1| {:.1e}; {}",
        l.beliefs,
        l.worst,
        parts.join("; ")
    );
    if l.worst <= 1e-12 && worst_gap <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance() {
    let ledger = Mutex::new(Ledger::default());
    let criteria: Vec<(&str, Check)> = vec![
        (
            "1 oracle equivalence",
            Box::new(|| mini_oracle_equivalence(&ledger)),
        ),
        ("2 eccentric example", Box::new(eccentric_example)),
        (
            "3 combinatorial support",
            Box::new(|| combinatorial_support(&ledger)),
        ),
        ("4 compression", Box::new(|| compression(&ledger))),
        (
            "5 explanation and rejection",
            Box::new(|| explanation_and_rejection(&ledger)),
        ),
        ("6 canonization", Box::new(canonization)),
        (
            "7 normalization and commutation",
            Box::new(|| normalization_and_commutation(&ledger)),
        ),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        let start = Instant::now();
        let verdict = check();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => report(&format!("PASS criterion {name}: {detail} [{secs:.1}s]")),
            Err(detail) => {
                report(&format!("FAIL criterion {name}: {detail} [{secs:.1}s]"));
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
