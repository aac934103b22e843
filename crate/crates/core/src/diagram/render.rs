use std::fmt::Write;

use super::{Diagram, LineKind};

fn kind_name(k: LineKind) -> &'static str {
    match k {
        LineKind::Particle => "particle",
        LineKind::Hole => "hole",
        LineKind::Dashed => "dashed",
        LineKind::Free => "free",
    }
}

fn labels(d: &Diagram, lines: impl Iterator<Item = usize>) -> String {
    lines.map(|i| d.lines()[i].label.as_str()).collect::<Vec<_>>().join(",")
}

/// Plain-text description, top vertex first.
pub fn render_text(d: &Diagram) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} diagram: {} vertices, sign {:+}, weight {}, key {}",
        d.target(),
        d.n_vertices(),
        d.sign_factor(),
        d.weight_factor() * d.equivalent_line_factor(),
        d.canonical_key()
    );
    let eff = d.effective();
    let _ = writeln!(s, "  {} level {} (effective)", eff.name, eff.level);
    for v in (0..d.n_vertices()).rev() {
        let vx = &d.vertices()[v];
        let _ = writeln!(
            s,
            "  {}({};{}) level {}",
            vx.name,
            labels(d, (0..vx.rank).map(|k| d.creator_line(v, k))),
            labels(d, (0..vx.rank).map(|k| d.annihilator_line(v, k))),
            vx.level
        );
    }
    for (i, l) in d.lines().iter().enumerate() {
        let _ = writeln!(
            s,
            "  line {}: {} -> {} [{}]",
            l.label,
            d.node_name(d.node_of(l.from)),
            d.node_name(d.node_of(l.to)),
            kind_name(d.line_kind(i))
        );
    }
    s
}

/// Graphviz export. Particle and hole lines are solid, valence lines dashed
/// and free lines dotted; the effective vertex is drawn dashed.
pub fn render_dot(d: &Diagram) -> String {
    let mut s = String::from("digraph diagram {\n  rankdir=BT;\n");
    for v in 0..d.n_vertices() {
        let vx = &d.vertices()[v];
        let _ = writeln!(s, "  n{v} [label=\"{}\", shape=box];", vx.name);
    }
    let e = d.effective_node();
    let _ = writeln!(s, "  n{e} [label=\"{}\", shape=box, style=dashed];", d.effective().name);
    let mut levels: Vec<_> = (0..=e).map(|n| (d.node_level(n), n)).collect();
    levels.sort();
    for w in levels.chunk_by(|a, b| a.0 == b.0) {
        if w.len() > 1 {
            let ids: Vec<String> = w.iter().map(|(_, n)| format!("n{n}")).collect();
            let _ = writeln!(s, "  {{ rank=same; {}; }}", ids.join("; "));
        }
    }
    for (i, l) in d.lines().iter().enumerate() {
        let style = match d.line_kind(i) {
            LineKind::Particle | LineKind::Hole => "solid",
            LineKind::Dashed => "dashed",
            LineKind::Free => "dotted",
        };
        let _ = writeln!(
            s,
            "  n{} -> n{} [label=\"{}\", style={style}];",
            d.node_of(l.from),
            d.node_of(l.to),
            l.label
        );
    }
    s.push_str("}\n");
    s
}
