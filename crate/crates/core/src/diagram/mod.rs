//! Diagram data structure and its purely structural quantities.
//!
//! A diagram is a set of solid interaction vertices stacked by level (bottom
//! first) plus one dashed effective vertex. Every vertex of rank `r` has `r`
//! creator ports (the bra indices `α_k` of its tensor) and `r` annihilator
//! ports (the ket indices `β_k`). A line always runs from a creator port to an
//! annihilator port; whether it goes up or down follows from the levels of its
//! two ends.

pub mod catalog;
mod energy;
pub mod file;
mod render;
mod structure;

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

pub use energy::{DenominatorProduct, LinearForm};
pub use render::{render_dot, render_text};
pub use structure::{CanonicalKey, OpenPath};

use crate::error::{Error, Result};

/// Vertical position of a vertex. Rational so an effective vertex can share
/// the level of a transition vertex exactly.
pub type Level = Ratio<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Heff,
    Oeff,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Heff => "heff",
            Target::Oeff => "oeff",
        })
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heff" => Ok(Target::Heff),
            "oeff" => Ok(Target::Oeff),
            other => Err(Error::InvalidDiagram(format!("unknown target {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexKind {
    /// An interaction of the perturbation `V`.
    #[serde(rename = "V")]
    Perturbation,
    /// The transition operator `O`.
    #[serde(rename = "O")]
    Transition,
    /// The dashed effective vertex.
    #[serde(rename = "eff")]
    Effective,
}

impl VertexKind {
    /// One-letter code: `V`, `O` or `E`.
    pub fn code(self) -> char {
        match self {
            VertexKind::Perturbation => 'V',
            VertexKind::Transition => 'O',
            VertexKind::Effective => 'E',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub kind: VertexKind,
    pub rank: usize,
    pub level: Level,
    pub name: String,
}

/// One end of a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum End {
    Port { vertex: usize, slot: usize },
    Effective,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    /// Creator end.
    pub from: End,
    /// Annihilator end.
    pub to: End,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    /// Internal, upgoing.
    Particle,
    /// Internal, downgoing.
    Hole,
    /// External valence line to the effective vertex; enters denominators.
    Dashed,
    /// External stub at a vertex co-level with the effective vertex; carries
    /// matrix-element indices only.
    Free,
}

impl LineKind {
    pub fn is_internal(self) -> bool {
        matches!(self, LineKind::Particle | LineKind::Hole)
    }
}

/// A validated diagram.
///
/// Nodes are numbered `0..n` for the solid vertices (bottom to top) and `n`
/// for the effective vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagram {
    target: Target,
    vertices: Vec<Vertex>,
    effective: Vertex,
    lines: Vec<Line>,
    /// `ports[v] = (creator lines, annihilator lines)` indexed by slot.
    ports: Vec<(Vec<usize>, Vec<usize>)>,
}

impl Diagram {
    /// Builds and validates a diagram. Solid vertices are re-sorted by level;
    /// line endpoints refer to the order given here.
    pub fn new(target: Target, vertices: Vec<Vertex>, effective_level: Level, lines: Vec<Line>) -> Result<Self> {
        let mut order: Vec<usize> = (0..vertices.len()).collect();
        order.sort_by_key(|&i| vertices[i].level);
        let mut position = vec![0; vertices.len()];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let remap = |e: End| match e {
            End::Port { vertex, slot } => End::Port {
                vertex: position.get(vertex).copied().unwrap_or(usize::MAX),
                slot,
            },
            End::Effective => End::Effective,
        };
        let lines: Vec<Line> = lines
            .into_iter()
            .map(|l| Line {
                from: remap(l.from),
                to: remap(l.to),
                label: l.label,
            })
            .collect();
        let sorted: Vec<Vertex> = order.iter().map(|&i| vertices[i].clone()).collect();
        let m = lines.iter().filter(|l| l.to == End::Effective).count();
        let effective = Vertex {
            kind: VertexKind::Effective,
            rank: m,
            level: effective_level,
            name: match target {
                Target::Heff => "V_eff".into(),
                Target::Oeff => "O_eff".into(),
            },
        };
        let mut d = Diagram {
            target,
            vertices: sorted,
            effective,
            lines,
            ports: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&mut self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDiagram(msg));
        for w in self.vertices.windows(2) {
            if w[0].level == w[1].level {
                return bad(format!("vertices {} and {} share a level", w[0].name, w[1].name));
            }
        }
        for v in &self.vertices {
            if v.kind == VertexKind::Effective {
                return bad("only one effective vertex is allowed".into());
            }
        }
        let transitions: Vec<&Vertex> = self
            .vertices
            .iter()
            .filter(|v| v.kind == VertexKind::Transition)
            .collect();
        match self.target {
            Target::Heff => {
                if !transitions.is_empty() {
                    return bad("effective Hamiltonian diagrams have no transition vertex".into());
                }
                if self.vertices.iter().any(|v| v.level >= self.effective.level) {
                    return bad("the effective vertex must sit above every interaction".into());
                }
            }
            Target::Oeff => {
                if transitions.len() != 1 {
                    return bad(format!(
                        "effective operator diagrams need exactly one transition vertex, found {}",
                        transitions.len()
                    ));
                }
                if transitions[0].level != self.effective.level {
                    return bad("the effective vertex must share the level of the transition vertex".into());
                }
            }
        }
        let mut ports: Vec<(Vec<Option<usize>>, Vec<Option<usize>>)> = self
            .vertices
            .iter()
            .map(|v| (vec![None; v.rank], vec![None; v.rank]))
            .collect();
        let n = self.vertices.len();
        let mut out_eff = 0;
        let mut in_eff = 0;
        for (i, l) in self.lines.iter().enumerate() {
            match (l.from, l.to) {
                (End::Effective, End::Effective) => {
                    return bad(format!("line {} joins the effective vertex to itself", l.label));
                }
                (End::Port { vertex: a, .. }, End::Port { vertex: b, .. }) if a == b => {
                    return bad(format!("line {} starts and ends on one vertex", l.label));
                }
                _ => {}
            }
            for (end, creator) in [(l.from, true), (l.to, false)] {
                match end {
                    End::Effective => {
                        if creator {
                            in_eff += 1;
                        } else {
                            out_eff += 1;
                        }
                    }
                    End::Port { vertex, slot } => {
                        if vertex >= n || slot >= self.vertices[vertex].rank {
                            return bad(format!("line {} refers to a missing port", l.label));
                        }
                        let table = if creator {
                            &mut ports[vertex].0
                        } else {
                            &mut ports[vertex].1
                        };
                        if table[slot].replace(i).is_some() {
                            return bad(format!("port {slot} of {} is used twice", self.vertices[vertex].name));
                        }
                    }
                }
            }
        }
        if in_eff != out_eff {
            return bad(format!(
                "{out_eff} lines enter the effective vertex but {in_eff} leave it"
            ));
        }
        let mut resolved = Vec::with_capacity(n);
        for (v, (outs, ins)) in ports.into_iter().enumerate() {
            let name = &self.vertices[v].name;
            let outs = outs
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::InvalidDiagram(format!("{name} has an unconnected creator port")))?;
            let ins = ins
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::InvalidDiagram(format!("{name} has an unconnected annihilator port")))?;
            resolved.push((outs, ins));
        }
        self.ports = resolved;
        if self.target == Target::Heff
            && self
                .lines
                .iter()
                .enumerate()
                .any(|(i, _)| self.line_kind(i) == LineKind::Free)
        {
            return bad("effective Hamiltonian diagrams have no free lines".into());
        }
        let mut seen = BTreeMap::new();
        for l in &self.lines {
            if seen.insert(l.label.as_str(), ()).is_some() {
                return bad(format!("label {} used for two lines", l.label));
            }
        }
        Ok(())
    }

    pub fn target(&self) -> Target {
        self.target
    }

    /// Solid vertices, bottom to top.
    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn effective(&self) -> &Vertex {
        &self.effective
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Number of solid vertices.
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Node id of the effective vertex.
    pub fn effective_node(&self) -> usize {
        self.vertices.len()
    }

    /// Number of interaction vertices of kind `V`.
    pub fn order(&self) -> usize {
        self.vertices
            .iter()
            .filter(|v| v.kind == VertexKind::Perturbation)
            .count()
    }

    pub fn node_of(&self, e: End) -> usize {
        match e {
            End::Port { vertex, .. } => vertex,
            End::Effective => self.effective_node(),
        }
    }

    pub fn node_level(&self, node: usize) -> Level {
        if node == self.effective_node() {
            self.effective.level
        } else {
            self.vertices[node].level
        }
    }

    pub fn node_name(&self, node: usize) -> &str {
        if node == self.effective_node() {
            &self.effective.name
        } else {
            &self.vertices[node].name
        }
    }

    /// Line leaving creator port `slot` of vertex `v`.
    pub fn creator_line(&self, v: usize, slot: usize) -> usize {
        self.ports[v].0[slot]
    }

    /// Line arriving at annihilator port `slot` of vertex `v`.
    pub fn annihilator_line(&self, v: usize, slot: usize) -> usize {
        self.ports[v].1[slot]
    }

    pub fn line_kind(&self, i: usize) -> LineKind {
        let l = &self.lines[i];
        let a = self.node_level(self.node_of(l.from));
        let b = self.node_level(self.node_of(l.to));
        let external = l.from == End::Effective || l.to == End::Effective;
        if external {
            if a == b {
                LineKind::Free
            } else {
                LineKind::Dashed
            }
        } else if a < b {
            LineKind::Particle
        } else {
            LineKind::Hole
        }
    }

    /// Whether line `i` runs upward.
    pub fn is_upgoing(&self, i: usize) -> bool {
        let l = &self.lines[i];
        self.node_level(self.node_of(l.from)) < self.node_level(self.node_of(l.to))
    }

    pub fn internal_lines(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.lines.len()).filter(|&i| self.line_kind(i).is_internal())
    }

    pub fn external_lines(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.lines.len()).filter(|&i| !self.line_kind(i).is_internal())
    }

    /// Half the number of external lines: the rank of the output tensor.
    pub fn external_rank(&self) -> usize {
        self.effective.rank
    }

    pub fn line_index(&self, label: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.label == label)
    }

    /// Copy with vertex `v`'s creator ports permuted by `out_perm` and its
    /// annihilator ports by `in_perm` (`new slot = perm[old slot]`).
    pub fn permute_ports(&self, v: usize, out_perm: &[usize], in_perm: &[usize]) -> Self {
        let mut d = self.clone();
        for l in &mut d.lines {
            if let End::Port { vertex, slot } = &mut l.from {
                if *vertex == v {
                    *slot = out_perm[*slot];
                }
            }
            if let End::Port { vertex, slot } = &mut l.to {
                if *vertex == v {
                    *slot = in_perm[*slot];
                }
            }
        }
        for (i, l) in d.lines.iter().enumerate() {
            if let End::Port { vertex, slot } = l.from {
                if vertex == v {
                    d.ports[v].0[slot] = i;
                }
            }
            if let End::Port { vertex, slot } = l.to {
                if vertex == v {
                    d.ports[v].1[slot] = i;
                }
            }
        }
        d
    }

    /// Copy with every line label passed through `f`.
    pub fn relabel(&self, mut f: impl FnMut(&str) -> String) -> Self {
        let mut d = self.clone();
        for l in &mut d.lines {
            l.label = f(&l.label);
        }
        d
    }

    /// Copy with every solid vertex renamed by `f(index, vertex)`.
    pub fn rename_vertices(&self, mut f: impl FnMut(usize, &Vertex) -> String) -> Self {
        let mut d = self.clone();
        for (i, v) in d.vertices.iter_mut().enumerate() {
            v.name = f(i, &self.vertices[i]);
        }
        d
    }

    /// Same vertices and lines with new levels (`levels[v]` for solid vertex
    /// `v`); the effective vertex follows the transition vertex or stays on
    /// top.
    pub fn with_levels(&self, levels: &[Level]) -> Result<Self> {
        let mut vertices = self.vertices.clone();
        for (v, &l) in vertices.iter_mut().zip(levels) {
            v.level = l;
        }
        let eff = match self.target {
            Target::Heff => levels.iter().copied().max().unwrap_or_else(|| Level::from_integer(0)) + 1,
            Target::Oeff => vertices
                .iter()
                .find(|v| v.kind == VertexKind::Transition)
                .map(|v| v.level)
                .ok_or_else(|| Error::InvalidDiagram("no transition vertex".into()))?,
        };
        Diagram::new(self.target, vertices, eff, self.lines.clone())
    }
}

/// Builds diagrams from labeled vertex expressions such as `V_c(tn, ba)`.
///
/// Vertices are added bottom to top. A label used as a bra index at one
/// vertex and as a ket index at another becomes an internal line; a label
/// used once becomes an external line to the effective vertex.
#[derive(Debug, Clone)]
pub struct DiagramBuilder {
    target: Target,
    vertices: Vec<(VertexKind, String, Vec<String>, Vec<String>)>,
}

impl DiagramBuilder {
    pub fn new(target: Target) -> Self {
        Self {
            target,
            vertices: Vec::new(),
        }
    }

    pub fn vertex(mut self, kind: VertexKind, name: &str, bra: &[&str], ket: &[&str]) -> Self {
        self.vertices.push((
            kind,
            name.to_string(),
            bra.iter().map(|s| s.to_string()).collect(),
            ket.iter().map(|s| s.to_string()).collect(),
        ));
        self
    }

    pub fn push(&mut self, kind: VertexKind, name: String, bra: Vec<String>, ket: Vec<String>) {
        self.vertices.push((kind, name, bra, ket));
    }

    pub fn build(&self) -> Result<Diagram> {
        let mut creators: BTreeMap<&str, Vec<End>> = BTreeMap::new();
        let mut annihilators: BTreeMap<&str, Vec<End>> = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut order: Vec<&str> = Vec::new();
        for (v, (kind, name, bra, ket)) in self.vertices.iter().enumerate() {
            if bra.len() != ket.len() {
                return Err(Error::InvalidDiagram(format!(
                    "{name} has {} bra and {} ket indices",
                    bra.len(),
                    ket.len()
                )));
            }
            vertices.push(Vertex {
                kind: *kind,
                rank: bra.len(),
                level: Level::from_integer(v as i64 + 1),
                name: name.clone(),
            });
            for (slot, b) in bra.iter().enumerate() {
                creators.entry(b).or_default().push(End::Port { vertex: v, slot });
                order.push(b);
            }
            for (slot, k) in ket.iter().enumerate() {
                annihilators.entry(k).or_default().push(End::Port { vertex: v, slot });
                order.push(k);
            }
        }
        let mut lines = Vec::new();
        let mut done = std::collections::BTreeSet::new();
        for label in order {
            if !done.insert(label) {
                continue;
            }
            let c = creators.get(label).map(Vec::as_slice).unwrap_or(&[]);
            let a = annihilators.get(label).map(Vec::as_slice).unwrap_or(&[]);
            let (from, to) = match (c, a) {
                ([from], [to]) => (*from, *to),
                ([from], []) => (*from, End::Effective),
                ([], [to]) => (End::Effective, *to),
                _ => {
                    return Err(Error::InvalidDiagram(format!(
                        "label {label} must appear at most once as bra and once as ket"
                    )))
                }
            };
            lines.push(Line {
                from,
                to,
                label: label.to_string(),
            });
        }
        let eff = match self.target {
            Target::Heff => Level::from_integer(vertices.len() as i64 + 1),
            Target::Oeff => vertices
                .iter()
                .find(|v| v.kind == VertexKind::Transition)
                .map(|v| v.level)
                .ok_or_else(|| Error::InvalidDiagram("no transition vertex".into()))?,
        };
        Diagram::new(self.target, vertices, eff, lines)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    pub use super::catalog::*;
}
