use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;

use super::{Diagram, End, LineKind, VertexKind};

/// A line walk that leaves the effective vertex and comes back to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenPath {
    /// Line indices in walking order; the first starts at the effective
    /// vertex and the last ends there.
    pub lines: Vec<usize>,
}

impl OpenPath {
    /// Line carrying the ket index of the output coefficient.
    pub fn ket_line(&self) -> usize {
        self.lines[0]
    }

    /// Line carrying the bra index of the output coefficient.
    pub fn bra_line(&self) -> usize {
        *self.lines.last().expect("paths are never empty")
    }
}

/// Opaque structural key; equal keys mean equal diagrams up to index
/// relabeling, port permutation and horizontal rearrangement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(pub String);

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn factorial(n: usize) -> i64 {
    (1..=n as i64).product()
}

impl Diagram {
    /// Line continuing a walk after `line` enters its annihilator port: the
    /// creator port with the same slot on the same vertex.
    fn next_in_walk(&self, line: usize) -> Option<usize> {
        match self.lines()[line].to {
            End::Port { vertex, slot } => Some(self.creator_line(vertex, slot)),
            End::Effective => None,
        }
    }

    /// Open paths ordered by their starting line, and the number of closed
    /// loops.
    pub fn walks(&self) -> (Vec<OpenPath>, usize) {
        let n = self.lines().len();
        let mut seen = vec![false; n];
        let mut paths = Vec::new();
        for start in 0..n {
            if self.lines()[start].from != End::Effective {
                continue;
            }
            let mut lines = vec![start];
            seen[start] = true;
            let mut cur = start;
            while let Some(next) = self.next_in_walk(cur) {
                seen[next] = true;
                lines.push(next);
                cur = next;
            }
            paths.push(OpenPath { lines });
        }
        let mut loops = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            loops += 1;
            let mut cur = start;
            while !seen[cur] {
                seen[cur] = true;
                cur = self
                    .next_in_walk(cur)
                    .expect("closed walks never reach the effective vertex");
            }
        }
        (paths, loops)
    }

    pub fn loop_count(&self) -> usize {
        self.walks().1
    }

    /// Number of internal hole lines.
    pub fn hole_count(&self) -> usize {
        self.internal_lines()
            .filter(|&i| self.line_kind(i) == LineKind::Hole)
            .count()
    }

    /// `(−1)^(h+l)` with the output coefficient indexed so that the `k`-th bra
    /// and ket labels share an open path.
    pub fn sign_factor(&self) -> i32 {
        if (self.hole_count() + self.loop_count()).is_multiple_of(2) {
            1
        } else {
            -1
        }
    }

    /// Output index order: bra and ket line indices paired along open paths.
    pub fn external_pairing(&self) -> (Vec<usize>, Vec<usize>) {
        let (paths, _) = self.walks();
        (
            paths.iter().map(OpenPath::bra_line).collect(),
            paths.iter().map(OpenPath::ket_line).collect(),
        )
    }

    fn class_sizes(&self, lines: impl Iterator<Item = usize>) -> Vec<usize> {
        let mut classes: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for i in lines {
            let l = &self.lines()[i];
            *classes.entry((self.node_of(l.from), self.node_of(l.to))).or_insert(0) += 1;
        }
        classes.into_values().collect()
    }

    /// `(m!)² / ∏ i_k!` over classes of external lines sharing both their
    /// start and end vertex (the effective vertex counts as a vertex).
    pub fn weight_factor(&self) -> Ratio<i64> {
        let m = self.external_rank();
        let denom: i64 = self
            .class_sizes(self.external_lines())
            .into_iter()
            .map(factorial)
            .product();
        Ratio::new(factorial(m) * factorial(m), denom)
    }

    /// `1 / ∏ i_k!` over classes of internal lines joining the same ordered
    /// pair of vertices.
    pub fn equivalent_line_factor(&self) -> Ratio<i64> {
        let denom: i64 = self
            .class_sizes(self.internal_lines())
            .into_iter()
            .map(factorial)
            .product();
        Ratio::new(1, denom)
    }

    /// Whether every solid vertex lies in one connected component, with the
    /// effective vertex acting as a node joined by its external lines.
    pub fn is_linked(&self) -> bool {
        let n = self.effective_node() + 1;
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for l in self.lines() {
            let a = root(&mut parent, self.node_of(l.from));
            let b = root(&mut parent, self.node_of(l.to));
            parent[a] = b;
        }
        let first = root(&mut parent, 0);
        (1..self.n_vertices()).all(|v| root(&mut parent, v) == first)
    }

    fn encode(&self, ids: &[usize], with_levels: bool) -> String {
        // ids[node] is the position of the node in the encoding
        let mut nodes: Vec<(usize, char, usize)> = (0..self.n_vertices())
            .map(|v| (ids[v], self.vertices()[v].kind.code(), self.vertices()[v].rank))
            .collect();
        nodes.sort();
        let mut edges: Vec<(usize, usize)> = self
            .lines()
            .iter()
            .map(|l| (ids[self.node_of(l.from)], ids[self.node_of(l.to)]))
            .collect();
        edges.sort();
        let mut s = format!("{}:", self.target());
        for (_, kind, rank) in nodes {
            s.push_str(&format!("{kind}{rank}"));
        }
        if with_levels && self.target() == super::Target::Oeff {
            let o = self
                .vertices()
                .iter()
                .position(|v| v.kind == VertexKind::Transition)
                .unwrap_or(0);
            s.push_str(&format!("@{}", ids[o]));
        }
        s.push('|');
        let eff = ids[self.effective_node()];
        for (a, b) in edges {
            let name = |x: usize| if x == eff { "E".to_string() } else { x.to_string() };
            s.push_str(&format!("{}>{},", name(a), name(b)));
        }
        s
    }

    /// Key invariant under relabeling, port permutation and horizontal
    /// rearrangement.
    ///
    /// Solid vertices are totally ordered by level, so the multiset of
    /// (creator vertex, annihilator vertex) pairs over all lines is already
    /// the minimal encoding over port permutations.
    pub fn canonical_key(&self) -> CanonicalKey {
        let ids: Vec<usize> = (0..=self.effective_node()).collect();
        CanonicalKey(self.encode(&ids, true))
    }

    /// Key that forgets vertex levels, hence line types: diagrams sharing
    /// vertices, connections and directions get the same key.
    pub fn skeleton_key(&self) -> CanonicalKey {
        CanonicalKey(format!("skeleton:{}", self.skeleton_encoding().0))
    }

    /// Position of every solid vertex in the minimal skeleton encoding.
    /// Perturbation vertices come first; diagrams with equal skeleton keys
    /// get matching positions up to automorphisms of the skeleton.
    pub fn skeleton_ids(&self) -> Vec<usize> {
        self.skeleton_encoding().1
    }

    fn skeleton_encoding(&self) -> (String, Vec<usize>) {
        let n = self.n_vertices();
        let movable: Vec<usize> = (0..n)
            .filter(|&v| self.vertices()[v].kind == VertexKind::Perturbation)
            .collect();
        let fixed: Vec<usize> = (0..n)
            .filter(|&v| self.vertices()[v].kind != VertexKind::Perturbation)
            .collect();
        let mut best: Option<(String, Vec<usize>)> = None;
        crate::model::for_each_permutation(movable.len(), |perm, _| {
            let mut ids = vec![0; n + 1];
            for (i, &v) in movable.iter().enumerate() {
                ids[v] = perm[i];
            }
            for (i, &v) in fixed.iter().enumerate() {
                ids[v] = movable.len() + i;
            }
            ids[n] = n;
            let e = self.encode(&ids, false);
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, ids));
            }
        });
        let (e, mut ids) = best.unwrap_or_default();
        ids.truncate(n);
        (e, ids)
    }
}
