//! The built-in bookshelf assembly domain and its scaled-down variant.
//!
//! The inventory is a reconstruction: 7 boards, 40 screws of three kinds and 9
//! tools, but the split between screw kinds, the hole layout and the assembly
//! order are parameters of this file.

use std::collections::{BTreeMap, BTreeSet};

use crate::filter::{ActionModel, ObservationModel};
use crate::graph::{Conservation, Hyperedge, Label, Vertex};
use crate::rewrite::{Effect, EffectTarget, LiftedEffect, Pattern};

use super::{Domain, DomainSpec, LabelSpec, RuleSpec, StateSpec, DOMAIN_VERSION};

const LOCATIONS: [&str; 3] = ["floor", "table", "workbench"];

struct Layout<'a> {
    name: &'a str,
    boards: &'a [&'a str],
    /// (kind, count, tool that installs it, rule name)
    screws: &'a [(&'a str, u64, &'a str, &'a str)],
    extra_tools: &'a [&'a str],
    /// (board, kind, number of holes)
    holes: &'a [(&'a str, &'a str, usize)],
    /// Assembly order; each joint takes two installed eccentrics.
    joints: &'a [(&'a str, &'a str)],
    inspect: bool,
}

/// Assembly steps are more likely than fetching and walking around.
fn action_weights(layout: &Layout) -> ActionModel {
    let mut w: BTreeMap<String, f64> = [("take", 2.0), ("putDown", 1.0), ("move", 1.0)]
        .into_iter()
        .map(|(r, x)| (r.to_string(), x))
        .collect();
    for (_, _, _, name) in layout.screws {
        w.insert(name.to_string(), 6.0);
    }
    w.insert("connectBoards".to_string(), 6.0);
    if layout.inspect {
        w.insert("inspectTop".to_string(), 1.0);
    }
    ActionModel::Weighted(w)
}

fn vertex(id: &str) -> Vertex {
    Vertex::new(id, id, 1)
}

fn edge(label: &str, ids: &[&str], m: u64) -> Hyperedge {
    Hyperedge::new(label, ids, m)
}

fn rule(name: &str, pattern: Pattern, effect: Effect, lifted: Option<LiftedEffect>) -> RuleSpec {
    RuleSpec {
        name: name.to_string(),
        pattern,
        effect,
        lifted_effect: lifted,
    }
}

fn take() -> RuleSpec {
    let p = Pattern::default()
        .vertex("a", "agent", 1)
        .vertex("l", "*", 1)
        .vertex("x", "*", 1)
        .edge("at", &["a", "l"], 1)
        .edge("place", &["l"], 1)
        .edge("at", &["x", "l"], 1)
        .edge("portable", &["x"], 1);
    let e = Effect::default()
        .retract(2, 1)
        .assert("holds", &["a", "x"], 1);
    rule("take", p, e, None)
}

fn put_down() -> RuleSpec {
    let p = Pattern::default()
        .vertex("a", "agent", 1)
        .vertex("l", "*", 1)
        .vertex("x", "*", 1)
        .edge("at", &["a", "l"], 1)
        .edge("place", &["l"], 1)
        .edge("holds", &["a", "x"], 1);
    let e = Effect::default().retract(2, 1).assert("at", &["x", "l"], 1);
    rule("putDown", p, e, None)
}

fn move_to() -> RuleSpec {
    let p = Pattern::default()
        .vertex("a", "agent", 1)
        .vertex("l", "*", 1)
        .vertex("m", "*", 1)
        .edge("at", &["a", "l"], 1)
        .edge("place", &["m"], 1);
    let e = Effect::default().retract(0, 1).assert("at", &["a", "m"], 1);
    rule("move", p, e, None)
}

/// Fix one held screw of `kind` into some open hole that fits it, using `tool`.
/// Which hole is not observable.
fn install(name: &str, kind: &str, tool: &str) -> RuleSpec {
    let p = Pattern::default()
        .vertex("a", "agent", 1)
        .vertex("l", "*", 1)
        .vertex("s", kind, 1)
        .vertex("t", tool, 1)
        .vertex("h", "*", 1)
        .vertex("b", "*", 1)
        .edge("at", &["a", "l"], 1)
        .edge("holds", &["a", "s"], 1)
        .edge("holds", &["a", "t"], 1)
        .edge("fits", &["h", "s"], 1)
        .edge("open", &["h"], 1)
        .edge("on", &["h", "b"], 1)
        .edge("at", &["b", "l"], 1);
    let e = Effect::default()
        .retract(1, 1)
        .retract(4, 1)
        .assert("installed", &["s"], 1);
    // one open hole fewer, somewhere in the pool
    let lifted = LiftedEffect {
        target: EffectTarget::Retract(1),
        total_delta: -1,
        per_edge_upper_delta: 0,
        cap_to_total: true,
    };
    rule(name, p, e, Some(lifted))
}

/// Join the boards of the current assembly step with two installed eccentrics.
fn connect() -> RuleSpec {
    let p = Pattern::default()
        .vertex("a", "agent", 1)
        .vertex("l", "*", 1)
        .vertex("d", "screwdriver", 1)
        .vertex("e", "eccentric", 1)
        .vertex("j", "*", 1)
        .vertex("n", "*", 1)
        .vertex("b1", "*", 1)
        .vertex("b2", "*", 1)
        .edge("at", &["a", "l"], 1)
        .edge("holds", &["a", "d"], 1)
        .edge("current", &["j"], 1)
        .edge("next", &["j", "n"], 1)
        .edge("joint", &["j", "b1", "b2"], 1)
        .edge("at", &["b1", "l"], 1)
        .edge("at", &["b2", "l"], 1)
        .edge("installed", &["e"], 2);
    let e = Effect::default()
        .retract(2, 1)
        .retract(4, 1)
        .retract(7, 2)
        .assert("current", &["n"], 1)
        .assert("connected", &["e", "b1", "b2"], 2);
    rule("connectBoards", p, e, None)
}

/// Looks at the top shelf; only possible while one of its holes is open.
fn inspect() -> RuleSpec {
    let p = Pattern::default()
        .vertex("a", "agent", 1)
        .vertex("l", "*", 1)
        .vertex("b", "shelf_top", 1)
        .vertex("h", "*", 1)
        .edge("at", &["a", "l"], 1)
        .edge("at", &["b", "l"], 1)
        .edge("on", &["h", "b"], 1)
        .edge("open", &["h"], 1);
    rule("inspectTop", p, Effect::default(), None)
}

fn build(layout: &Layout) -> Domain {
    let mut vertices = vec![vertex("agent")];
    let mut edges = vec![edge("at", &["agent", "floor"], 1)];
    let mut vlabels: BTreeSet<Label> = BTreeSet::new();
    let mut entities: BTreeSet<Label> = BTreeSet::new();
    let mut conserved: Vec<&str> = Vec::new();

    for l in LOCATIONS {
        vertices.push(vertex(l));
        edges.push(edge("place", &[l], 1));
    }
    for b in layout.boards {
        vertices.push(vertex(b));
        edges.push(edge("at", &[b, "workbench"], 1));
        entities.insert(Label::new(b));
    }
    let mut tools: Vec<&str> = layout.screws.iter().map(|s| s.2).collect();
    tools.extend(layout.extra_tools);
    for (kind, count, _, _) in layout.screws {
        vertices.push(Vertex::new(kind, kind, *count));
        edges.push(edge("at", &[kind, "table"], *count));
        edges.push(edge("portable", &[kind], 1));
        entities.insert(Label::new(kind));
        conserved.push(kind);
    }
    for t in &tools {
        vertices.push(vertex(t));
        edges.push(edge("at", &[t, "floor"], 1));
        edges.push(edge("portable", &[t], 1));
        entities.insert(Label::new(t));
        conserved.push(t);
    }
    for (board, kind, n) in layout.holes {
        let short = &kind[..3];
        for i in 1..=*n {
            let id = format!("{board}.{short}.{i}");
            vertices.push(vertex(&id));
            edges.push(edge("on", &[&id, board], 1));
            edges.push(edge("fits", &[&id, kind], 1));
            edges.push(edge("open", &[&id], 1));
        }
    }
    for (i, (b1, b2)) in layout.joints.iter().enumerate() {
        let j = format!("joint{}", i + 1);
        let n = if i + 1 == layout.joints.len() {
            "assembled".to_string()
        } else {
            format!("joint{}", i + 2)
        };
        vertices.push(vertex(&j));
        edges.push(edge("joint", &[&j, b1, b2], 1));
        edges.push(edge("next", &[&j, &n], 1));
    }
    vertices.push(vertex("assembled"));
    edges.push(edge("current", &["joint1"], 1));
    vlabels.extend(vertices.iter().map(|v| v.label.clone()));

    let mut rules = vec![take(), put_down(), move_to()];
    for (kind, _, tool, name) in layout.screws {
        rules.push(install(name, kind, tool));
    }
    rules.push(connect());
    if layout.inspect {
        rules.push(inspect());
    }

    let edge_labels = [
        "at",
        "holds",
        "place",
        "portable",
        "fits",
        "open",
        "on",
        "installed",
        "connected",
        "joint",
        "next",
        "current",
    ];
    let spec = DomainSpec {
        version: DOMAIN_VERSION,
        name: layout.name.to_string(),
        labels: LabelSpec {
            vertex: vlabels,
            edge: edge_labels.iter().map(|l| Label::new(l)).collect(),
        },
        entity_labels: entities,
        conservation: Conservation::new(["at", "holds", "installed", "connected"], conserved),
        observation: ObservationModel {
            agent: Label::new("agent"),
            location_edge: Label::new("at"),
            holds_edge: Label::new("holds"),
            locations: LOCATIONS.iter().map(|l| Label::new(l)).collect(),
        },
        initial_state: StateSpec {
            vertices,
            edges,
            bounded_edges: Vec::new(),
            constraints: Vec::new(),
        },
        rules,
        action_model: action_weights(layout),
    };
    Domain::from_spec(spec).expect("built-in domain is valid")
}

/// Full domain: 7 boards, 16 eccentrics, 16 dowels, 8 bolts and 9 tools.
pub fn bookshelf_domain() -> Domain {
    build(&Layout {
        name: "bookshelf",
        boards: &[
            "side_left",
            "side_right",
            "shelf_top",
            "shelf_middle",
            "shelf_bottom",
            "back_panel",
            "plinth",
        ],
        screws: &[
            ("eccentric", 16, "screwdriver", "installEccentric"),
            ("dowel", 16, "hammer", "insertDowel"),
            ("bolt", 8, "allen_key", "fastenBolt"),
        ],
        extra_tools: &[
            "mallet",
            "drill",
            "wrench",
            "pliers",
            "tape_measure",
            "level",
        ],
        holes: &[
            ("shelf_top", "eccentric", 4),
            ("shelf_middle", "eccentric", 4),
            ("shelf_bottom", "eccentric", 4),
            ("plinth", "eccentric", 4),
            ("side_left", "dowel", 6),
            ("side_right", "dowel", 6),
            ("back_panel", "dowel", 4),
            ("back_panel", "bolt", 4),
            ("plinth", "bolt", 4),
        ],
        joints: &[
            ("side_left", "shelf_bottom"),
            ("side_right", "shelf_bottom"),
            ("side_left", "shelf_middle"),
            ("side_right", "shelf_middle"),
            ("side_left", "shelf_top"),
            ("side_right", "shelf_top"),
            ("plinth", "side_left"),
            ("plinth", "side_right"),
        ],
        inspect: false,
    })
}

/// Two boards, four eccentrics, one screwdriver. Small enough to filter with
/// fully grounded states.
pub fn mini_bookshelf_domain() -> Domain {
    build(&Layout {
        name: "bookshelf-mini",
        boards: &["shelf_top", "side_left"],
        screws: &[("eccentric", 4, "screwdriver", "installEccentric")],
        extra_tools: &[],
        holes: &[("shelf_top", "eccentric", 2), ("side_left", "eccentric", 2)],
        joints: &[("shelf_top", "side_left"), ("shelf_top", "side_left")],
        inspect: true,
    })
}
