//! Ordering families with factorized denominators, and skeleton groups.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagram::{
    CanonicalKey, Diagram, DiagramBuilder, End, Level, Line, LineKind, LinearForm, Target, Vertex, VertexKind,
};
use crate::error::{Error, Result};
use crate::eval::{EvalContext, EvalOptions, LineRange};
use crate::model::{ModelInstance, OperatorSum, Space};
use crate::scalar::Scalar;

/// `below[u][w]`: vertex `u` must stay below `w` for every internal line to
/// keep its hole/particle type.
fn precedence(d: &Diagram) -> Vec<Vec<bool>> {
    let n = d.n_vertices();
    let mut below = vec![vec![false; n]; n];
    for i in d.internal_lines() {
        let l = &d.lines()[i];
        let (u, w) = (d.node_of(l.from), d.node_of(l.to));
        match d.line_kind(i) {
            LineKind::Particle => below[u][w] = true,
            LineKind::Hole => below[w][u] = true,
            _ => {}
        }
    }
    for k in 0..n {
        for i in 0..n {
            if below[i][k] {
                for j in 0..n {
                    if below[k][j] {
                        below[i][j] = true;
                    }
                }
            }
        }
    }
    below
}

/// All interleavings of the given chains, each kept in order.
fn shuffles(parts: &[Vec<usize>]) -> Vec<Vec<usize>> {
    fn go(parts: &[Vec<usize>], pos: &mut [usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let mut done = true;
        for p in 0..parts.len() {
            if pos[p] < parts[p].len() {
                done = false;
                cur.push(parts[p][pos[p]]);
                pos[p] += 1;
                go(parts, pos, cur, out);
                pos[p] -= 1;
                cur.pop();
            }
        }
        if done {
            out.push(cur.clone());
        }
    }
    let mut out = Vec::new();
    go(parts, &mut vec![0; parts.len()], &mut Vec::new(), &mut out);
    out
}

/// Diagrams sharing vertices, lines and line types that differ only in the
/// relative heights of mutually disconnected parts at the bottom or top.
#[derive(Debug, Clone)]
pub struct OrderingFamily {
    base: Diagram,
    /// Vertices ordered against all others, bottom to top (base indices).
    spine: Vec<usize>,
    /// Disconnected chains below the spine, each bottom to top.
    bottom: Vec<Vec<usize>>,
    /// Disconnected chains above the spine, each bottom to top.
    top: Vec<Vec<usize>>,
    members: Vec<Diagram>,
}

impl OrderingFamily {
    /// Family of all vertex orderings of `d` that keep every line type.
    pub fn from_diagram(d: &Diagram) -> Result<Self> {
        let n = d.n_vertices();
        let below = precedence(d);
        let comparable = |u: usize, w: usize| u == w || below[u][w] || below[w][u];
        let spine: Vec<usize> = (0..n).filter(|&v| (0..n).all(|w| comparable(v, w))).collect();
        let (Some(&lo), Some(&hi)) = (spine.first(), spine.last()) else {
            return Err(Error::PartsNotDisconnected(
                "no vertex is ordered against all others".into(),
            ));
        };
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for v in (0..n).filter(|v| !spine.contains(v)) {
            if below[v][lo] {
                lower.push(v);
            } else if below[hi][v] {
                upper.push(v);
            } else {
                return Err(Error::PartsNotDisconnected(format!(
                    "{} floats between vertices of fixed order",
                    d.vertices()[v].name
                )));
            }
        }
        let bottom = Self::parts(d, &below, &lower)?;
        let top = Self::parts(d, &below, &upper)?;
        let mut members = Vec::new();
        for b in shuffles(&bottom) {
            for t in shuffles(&top) {
                let order: Vec<usize> = b.iter().chain(&spine).chain(&t).copied().collect();
                let mut levels = vec![Level::from_integer(0); n];
                for (pos, &v) in order.iter().enumerate() {
                    levels[v] = Level::from_integer(pos as i64 + 1);
                }
                members.push(d.with_levels(&levels)?);
            }
        }
        Ok(Self {
            base: d.clone(),
            spine,
            bottom,
            top,
            members,
        })
    }

    /// The one-member family of `d` with every vertex on the spine.
    pub fn single(d: &Diagram) -> Self {
        Self {
            base: d.clone(),
            spine: (0..d.n_vertices()).collect(),
            bottom: Vec::new(),
            top: Vec::new(),
            members: vec![d.clone()],
        }
    }

    /// Connected components of `set` through internal lines; each must be a
    /// chain.
    fn parts(d: &Diagram, below: &[Vec<bool>], set: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut comp: BTreeMap<usize, usize> = set.iter().map(|&v| (v, v)).collect();
        fn root(c: &mut BTreeMap<usize, usize>, mut x: usize) -> usize {
            while c[&x] != x {
                x = c[&x];
            }
            x
        }
        for i in d.internal_lines() {
            let l = &d.lines()[i];
            let (u, w) = (d.node_of(l.from), d.node_of(l.to));
            if comp.contains_key(&u) && comp.contains_key(&w) {
                let (a, b) = (root(&mut comp, u), root(&mut comp, w));
                comp.insert(a.max(b), a.min(b));
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &v in set {
            let r = root(&mut comp, v);
            groups.entry(r).or_default().push(v);
        }
        let parts: Vec<Vec<usize>> = groups.into_values().collect();
        for p in &parts {
            if p.windows(2).any(|w| !below[w[0]][w[1]]) {
                let names: Vec<&str> = p.iter().map(|&v| d.vertices()[v].name.as_str()).collect();
                return Err(Error::PartsNotDisconnected(format!(
                    "part {} is not a chain",
                    names.join("")
                )));
            }
        }
        Ok(parts)
    }

    pub fn base(&self) -> &Diagram {
        &self.base
    }

    pub fn members(&self) -> &[Diagram] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Names of the disconnected parts below and above the spine.
    pub fn part_names(&self) -> (Vec<String>, Vec<String>) {
        let name = |p: &Vec<usize>| {
            p.iter()
                .map(|&v| self.base.vertices()[v].name.as_str())
                .collect::<String>()
        };
        (
            self.bottom.iter().map(name).collect(),
            self.top.iter().map(name).collect(),
        )
    }

    fn factor(&self, nodes: Vec<usize>, lower: bool) -> Factor {
        let e = self.base.e_noe(&nodes);
        let mut names: Vec<&str> = nodes
            .iter()
            .filter(|&&v| v < self.base.n_vertices())
            .map(|&v| self.base.vertices()[v].name.as_str())
            .collect();
        names.sort_unstable();
        Factor {
            name: names.concat(),
            form: if lower { -e } else { e },
            lower,
            nodes,
        }
    }

    /// Denominator of the summed family: each disconnected part contributes
    /// its own cumulative net outflow energies, the spine its usual cuts.
    ///
    /// Top parts are measured without the effective vertex, so the identity
    /// holds when the effective vertex's own net outflow energy vanishes, as
    /// it does for a degenerate valence shell.
    pub fn factorize(&self) -> FactoredDenominator {
        let mut factors = Vec::new();
        for p in &self.bottom {
            for k in 1..=p.len() {
                factors.push(self.factor(p[..k].to_vec(), true));
            }
        }
        for p in &self.top {
            for k in 0..p.len() {
                factors.push(self.factor(p[k..].to_vec(), false));
            }
        }
        let n_solid = self.base.n_vertices();
        for &s in &self.spine[..self.spine.len().saturating_sub(1)] {
            let lower = self.base.cut_nodes(s + 1);
            let upper: Vec<usize> = (0..=self.base.effective_node())
                .filter(|v| !lower.contains(v))
                .collect();
            let solid = |set: &[usize]| set.iter().filter(|&&v| v < n_solid).count();
            if solid(&lower) <= solid(&upper) {
                factors.push(self.factor(lower, true));
            } else {
                factors.push(self.factor(upper, false));
            }
        }
        factors.sort_by(|a, b| (&a.name, a.lower).cmp(&(&b.name, b.lower)));
        let sign = if factors.iter().filter(|f| f.lower).count() % 2 == 0 {
            1
        } else {
            -1
        };
        FactoredDenominator { sign, factors }
    }
}

/// One factor `±E_noe(S)` of a factored denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    /// Node set `S`, possibly including the effective vertex.
    pub nodes: Vec<usize>,
    /// `true` when `S` lies below its cut, so the factor is `−E_noe(S)`.
    pub lower: bool,
    /// Signed linear form of the factor.
    pub form: LinearForm,
    /// Sorted names of the solid vertices in `S`.
    pub name: String,
}

/// `sign · ∏ E_noe(S_k)`, with each `S_k` the smaller side of its cut.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredDenominator {
    pub sign: i32,
    pub factors: Vec<Factor>,
}

impl FactoredDenominator {
    pub fn eval<T: Scalar>(&self, mut energy: impl FnMut(&str) -> T) -> T {
        self.factors.iter().fold(T::one(), |p, f| p * f.form.eval(&mut energy))
    }

    /// Signed forms whose product is the denominator.
    pub fn forms(&self) -> Vec<LinearForm> {
        self.factors.iter().map(|f| f.form.clone()).collect()
    }

    /// Copy with the energy of line `label` entering every factor with the
    /// opposite sign, as if the line pointed the other way.
    pub fn with_reversed_line(&self, label: &str) -> Self {
        let mut out = self.clone();
        for f in &mut out.factors {
            let c = f.form.coefficient(label);
            f.form.add_term(label, -2 * c);
        }
        out
    }
}

impl fmt::Display for FactoredDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign < 0 {
            write!(f, "−")?;
        }
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for x in &self.factors {
            write!(f, "E_noe({})", x.name)?;
        }
        Ok(())
    }
}

/// Outcome of comparing a family's summed denominators with a factored form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationReport {
    pub trials: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl FactorizationReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Checks the factorization of `fam` at `trials` random energy assignments.
pub fn verify_factorization(fam: &OrderingFamily, trials: usize, seed: u64) -> FactorizationReport {
    verify_factored(fam, &fam.factorize(), trials, seed)
}

/// Compares `Σ_members 1/D` with `1/factored` at random energies: holes in
/// `[-3, -0.5]`, particles in `[0.5, 3]`, external lines at a common zero.
pub fn verify_factored(
    fam: &OrderingFamily,
    factored: &FactoredDenominator,
    trials: usize,
    seed: u64,
) -> FactorizationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = fam.base();
    let mut max_error: f64 = 0.0;
    for _ in 0..trials {
        let energies: BTreeMap<&str, f64> = (0..base.lines().len())
            .map(|i| {
                let e = match base.line_kind(i) {
                    LineKind::Particle => rng.gen_range(0.5..3.0),
                    LineKind::Hole => -rng.gen_range(0.5..3.0),
                    _ => 0.0,
                };
                (base.lines()[i].label.as_str(), e)
            })
            .collect();
        let energy = |l: &str| energies[l];
        let summed: f64 = fam
            .members()
            .iter()
            .map(|m| 1.0 / m.denominator_product().eval(energy))
            .sum();
        let direct = 1.0 / factored.eval(energy);
        let err = (summed - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
        max_error = max_error.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    FactorizationReport {
        trials,
        max_error,
        tolerance: 1e-12,
    }
}

/// Random effective-Hamiltonian family with exactly two disconnected parts
/// at the bottom or top and at most `max_vertices` vertices.
pub fn random_family(seed: u64, max_vertices: usize) -> OrderingFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_vertices = max_vertices.max(3);
    loop {
        let n = rng.gen_range(3..=max_vertices);
        let a = rng.gen_range(1..=n - 2);
        let b = rng.gen_range(1..=n - 1 - a);
        let s = n - a - b;
        let at_bottom = rng.gen_bool(0.5);
        // vertex ids 0..a: part A, a..a+b: part B, rest: spine; each bottom to top
        let part_a: Vec<usize> = (0..a).collect();
        let part_b: Vec<usize> = (a..a + b).collect();
        let spine: Vec<usize> = (a + b..n).collect();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut link = |rng: &mut ChaCha8Rng, u: usize, w: usize| {
            if rng.gen_bool(0.5) {
                edges.push((u, w));
            } else {
                edges.push((w, u));
            }
        };
        for chain in [&part_a, &part_b, &spine] {
            for w in chain.windows(2) {
                link(&mut rng, w[0], w[1]);
            }
        }
        let anchor = if at_bottom { spine[0] } else { spine[s - 1] };
        for part in [&part_a, &part_b] {
            let end = if at_bottom { part[part.len() - 1] } else { part[0] };
            link(&mut rng, end, anchor);
        }
        // a few more lines that keep the two parts apart
        for _ in 0..rng.gen_range(0..=2) {
            let u = rng.gen_range(0..n);
            let w = rng.gen_range(0..n);
            let same_part = |x: usize| {
                if x < a {
                    0
                } else if x < a + b {
                    1
                } else {
                    2
                }
            };
            if u != w && !(same_part(u) < 2 && same_part(w) < 2 && same_part(u) != same_part(w)) {
                link(&mut rng, u, w);
            }
        }
        // heights: parts shuffled together below or above the spine
        let mut mixed: Vec<usize> = Vec::new();
        let (mut ia, mut ib) = (0, 0);
        while ia < a || ib < b {
            if ib == b || (ia < a && rng.gen_bool(0.5)) {
                mixed.push(part_a[ia]);
                ia += 1;
            } else {
                mixed.push(part_b[ib]);
                ib += 1;
            }
        }
        let order: Vec<usize> = if at_bottom {
            mixed.iter().chain(&spine).copied().collect()
        } else {
            spine.iter().chain(&mixed).copied().collect()
        };
        let mut bra: Vec<Vec<String>> = vec![Vec::new(); n];
        let mut ket: Vec<Vec<String>> = vec![Vec::new(); n];
        for (k, &(u, w)) in edges.iter().enumerate() {
            bra[u].push(format!("l{k}"));
            ket[w].push(format!("l{k}"));
        }
        let mut ext = 0;
        for v in 0..n {
            while bra[v].len() < ket[v].len() {
                ext += 1;
                bra[v].push(format!("x{ext}"));
            }
            while ket[v].len() < bra[v].len() {
                ext += 1;
                ket[v].push(format!("x{ext}"));
            }
        }
        let mut shuffled_names: Vec<char> = ('a'..='z').take(n).collect();
        shuffled_names.shuffle(&mut rng);
        let mut builder = DiagramBuilder::new(Target::Heff);
        for &v in &order {
            builder.push(
                VertexKind::Perturbation,
                format!("V_{}", shuffled_names[v]),
                bra[v].clone(),
                ket[v].clone(),
            );
        }
        let Ok(d) = builder.build() else { continue };
        if let Ok(f) = OrderingFamily::from_diagram(&d) {
            if f.bottom.len() + f.top.len() == 2 {
                return f;
            }
        }
    }
}

/// Ordering notation: line walks in parentheses, then orderings in brackets.
///
/// An open line entering `V_1`, passing `V_2 … V_{n−1}` and leaving from
/// `V_n` is written `(V_n…V_2V_1)`; a closed loop through `V_1, V_2, …, V_n`
/// is written `(V_1V_n…V_2V_1)` after a `;` separating loops from open
/// lines; `[AB…]` lists vertices top to bottom, and alternatives are joined
/// with `+`. Vertex names start with an uppercase letter and contain no
/// other uppercase letters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notation {
    pub paths: Vec<Vec<String>>,
    pub loops: Vec<Vec<String>>,
    pub orderings: Vec<Vec<String>>,
}

impl Notation {
    /// Line walks of `d` without orderings.
    pub fn skeleton(d: &Diagram) -> Self {
        let name = |v: usize| d.vertices()[v].name.clone();
        let (open, _) = d.walks();
        let mut paths: Vec<Vec<String>> = open
            .iter()
            .map(|p| {
                let mut visited: Vec<String> = p.lines[..p.lines.len() - 1]
                    .iter()
                    .map(|&l| name(d.node_of(d.lines()[l].to)))
                    .collect();
                visited.reverse();
                visited
            })
            .collect();
        paths.sort();
        let mut seen = vec![false; d.lines().len()];
        for p in &open {
            for &l in &p.lines {
                seen[l] = true;
            }
        }
        let mut loops = Vec::new();
        for start in 0..d.lines().len() {
            if seen[start] {
                continue;
            }
            // vertices in travel order
            let mut cycle = Vec::new();
            let mut cur = start;
            while !seen[cur] {
                seen[cur] = true;
                let End::Port { vertex, slot } = d.lines()[cur].to else {
                    unreachable!("closed walks stay on solid vertices")
                };
                cycle.push(name(vertex));
                cur = d.creator_line(vertex, slot);
            }
            let k = cycle.len();
            let written = (0..k)
                .map(|r| {
                    (0..=k)
                        .map(|i| cycle[(r + k * 2 - i) % k].clone())
                        .collect::<Vec<String>>()
                })
                .min()
                .expect("loops have at least one vertex");
            loops.push(written);
        }
        loops.sort();
        Self {
            paths,
            loops,
            orderings: Vec::new(),
        }
    }

    /// Walks of the family base with every member ordering.
    pub fn of_family(fam: &OrderingFamily) -> Self {
        let mut n = Self::skeleton(fam.base());
        n.orderings = fam
            .members()
            .iter()
            .map(|m| m.vertices().iter().rev().map(|v| v.name.clone()).collect())
            .collect();
        n.orderings.sort();
        n.orderings.dedup();
        n
    }

    /// Rebuilds a diagram from the walks and the first ordering; `transition`
    /// names the transition vertex of an effective operator.
    pub fn to_diagram(&self, target: Target, transition: Option<&str>) -> Result<Diagram> {
        let ordering = self
            .orderings
            .first()
            .ok_or_else(|| Error::Notation("an ordering is needed to place the vertices".into()))?;
        let n = ordering.len();
        let index: BTreeMap<&str, usize> = ordering.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if index.len() != n {
            return Err(Error::Notation("repeated vertex in ordering".into()));
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Notation(format!("vertex {s} missing from the ordering")))
        };
        let mut slots = vec![0usize; n];
        let mut lines = Vec::new();
        let mut label = 0;
        let mut push = |from: End, to: End, lines: &mut Vec<Line>| {
            label += 1;
            lines.push(Line {
                from,
                to,
                label: format!("l{label}"),
            });
        };
        for path in &self.paths {
            let travel: Vec<usize> = path.iter().rev().map(|s| lookup(s)).collect::<Result<_>>()?;
            let mut prev = End::Effective;
            for &v in &travel {
                let slot = slots[v];
                slots[v] += 1;
                push(prev, End::Port { vertex: v, slot }, &mut lines);
                prev = End::Port { vertex: v, slot };
            }
            push(prev, End::Effective, &mut lines);
        }
        for lp in &self.loops {
            if lp.len() < 2 || lp.first() != lp.last() {
                return Err(Error::Notation("a loop must start and end on one vertex".into()));
            }
            let travel: Vec<usize> = lp[..lp.len() - 1]
                .iter()
                .rev()
                .map(|s| lookup(s))
                .collect::<Result<_>>()?;
            // travel = v1, vn, …, v2 reversed → starts at v2; rotate to v1
            let mut travel = travel;
            travel.rotate_right(1);
            let ports: Vec<End> = travel
                .iter()
                .map(|&v| {
                    let slot = slots[v];
                    slots[v] += 1;
                    End::Port { vertex: v, slot }
                })
                .collect();
            for i in 0..ports.len() {
                push(ports[i], ports[(i + 1) % ports.len()], &mut lines);
            }
        }
        // ordering lists the top first
        let vertices: Vec<Vertex> = ordering
            .iter()
            .enumerate()
            .map(|(i, s)| Vertex {
                kind: if Some(s.as_str()) == transition {
                    VertexKind::Transition
                } else {
                    VertexKind::Perturbation
                },
                rank: slots[i],
                level: Level::from_integer((n - i) as i64),
                name: s.clone(),
            })
            .collect();
        let eff = match target {
            Target::Heff => Level::from_integer(n as i64 + 1),
            Target::Oeff => vertices
                .iter()
                .find(|v| v.kind == VertexKind::Transition)
                .map(|v| v.level)
                .ok_or_else(|| Error::Notation("no transition vertex named".into()))?,
        };
        Diagram::new(target, vertices, eff, lines)
    }
}

impl fmt::Display for Notation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.paths {
            write!(f, "({})", p.concat())?;
        }
        if !self.loops.is_empty() {
            write!(f, ";")?;
            for l in &self.loops {
                write!(f, "({})", l.concat())?;
            }
        }
        if !self.orderings.is_empty() {
            let alts: Vec<String> = self.orderings.iter().map(|o| o.concat()).collect();
            write!(f, "[{}]", alts.join("+"))?;
        }
        Ok(())
    }
}

fn split_names(s: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for c in s.chars() {
        if c.is_ascii_uppercase() {
            out.push(c.to_string());
        } else if let Some(last) = out.last_mut() {
            last.push(c);
        } else {
            return Err(Error::Notation(format!(
                "vertex name must start with an uppercase letter in {s:?}"
            )));
        }
    }
    Ok(out)
}

impl FromStr for Notation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Notation(format!("{msg} in {s:?}"));
        let mut rest: &str = s.trim();
        let mut n = Notation {
            paths: Vec::new(),
            loops: Vec::new(),
            orderings: Vec::new(),
        };
        let mut in_loops = false;
        while let Some(c) = rest.chars().next() {
            match c {
                '(' => {
                    let end = rest.find(')').ok_or_else(|| bad("unclosed '('"))?;
                    let names = split_names(&rest[1..end])?;
                    if names.is_empty() {
                        return Err(bad("empty walk"));
                    }
                    if in_loops {
                        n.loops.push(names);
                    } else {
                        n.paths.push(names);
                    }
                    rest = &rest[end + 1..];
                }
                ';' if !in_loops => {
                    in_loops = true;
                    rest = &rest[1..];
                }
                '[' => {
                    let end = rest.find(']').ok_or_else(|| bad("unclosed '['"))?;
                    for alt in rest[1..end].split('+') {
                        n.orderings.push(split_names(alt.trim())?);
                    }
                    rest = rest[end + 1..].trim_start();
                    if !rest.is_empty() {
                        return Err(bad("text after the ordering"));
                    }
                }
                _ => return Err(bad(&format!("unexpected {c:?}"))),
            }
        }
        if in_loops && n.loops.is_empty() {
            return Err(bad("';' without loops"));
        }
        Ok(n)
    }
}

/// One typed member of a skeleton group: an ordering family with its signs.
#[derive(Debug, Clone)]
pub struct GroupMember {
    pub family: OrderingFamily,
    pub denominator: FactoredDenominator,
    /// `(−1)^h` from internal hole lines.
    pub eta1: i32,
    /// Sign of the factored denominator relative to `∏ E_noe`.
    pub eta2: i32,
    pub notation: Notation,
}

/// Diagrams sharing vertices, connections and directions.
#[derive(Debug, Clone)]
pub struct SkeletonGroup {
    pub key: CanonicalKey,
    pub members: Vec<GroupMember>,
}

impl SkeletonGroup {
    /// Representative diagram; its internal lines stand for either type.
    pub fn skeleton(&self) -> &Diagram {
        self.members[0].family.base()
    }

    pub fn notation(&self) -> Notation {
        Notation::skeleton(self.skeleton())
    }

    /// Number of individual diagrams across all members.
    pub fn diagram_count(&self) -> usize {
        self.members.iter().map(|m| m.family.len()).sum()
    }

    pub fn eta1(&self) -> Vec<i32> {
        self.members.iter().map(|m| m.eta1).collect()
    }

    pub fn eta2(&self) -> Vec<i32> {
        self.members.iter().map(|m| m.eta2).collect()
    }
}

/// Partitions diagrams by skeleton and, within a skeleton, into ordering
/// families. A family is used only when every ordering it generates is one
/// of the given diagrams and no two orderings coincide; otherwise the
/// diagram stands alone.
pub fn group_skeletons(diagrams: &[Diagram]) -> Vec<SkeletonGroup> {
    let keys: Vec<CanonicalKey> = diagrams.iter().map(Diagram::canonical_key).collect();
    let mut by_skeleton: BTreeMap<CanonicalKey, Vec<usize>> = BTreeMap::new();
    for (i, d) in diagrams.iter().enumerate() {
        by_skeleton.entry(d.skeleton_key()).or_default().push(i);
    }
    by_skeleton
        .into_iter()
        .map(|(key, idxs)| {
            let index: BTreeMap<&CanonicalKey, usize> = idxs.iter().map(|&i| (&keys[i], i)).collect();
            let mut assigned = BTreeSet::new();
            let mut members = Vec::new();
            for &i in &idxs {
                if assigned.contains(&i) {
                    continue;
                }
                let d = &diagrams[i];
                let family = OrderingFamily::from_diagram(d)
                    .ok()
                    .and_then(|mut f| {
                        let found: Vec<usize> = f
                            .members
                            .iter()
                            .filter_map(|m| index.get(&m.canonical_key()).copied())
                            .collect();
                        let distinct: BTreeSet<usize> = found.iter().copied().collect();
                        let fits = found.len() == f.members.len()
                            && distinct.len() == found.len()
                            && distinct.iter().all(|j| !assigned.contains(j));
                        fits.then(|| {
                            f.members = found.iter().map(|&j| diagrams[j].clone()).collect();
                            assigned.extend(found);
                            f
                        })
                    })
                    .unwrap_or_else(|| {
                        assigned.insert(i);
                        OrderingFamily::single(d)
                    });
                let denominator = family.factorize();
                members.push(GroupMember {
                    eta1: if family.base().hole_count().is_multiple_of(2) {
                        1
                    } else {
                        -1
                    },
                    eta2: denominator.sign,
                    notation: Notation::of_family(&family),
                    denominator,
                    family,
                });
            }
            members.sort_by_cached_key(|m| (m.family.base().hole_count(), m.notation.to_string()));
            SkeletonGroup { key, members }
        })
        .collect()
}

fn valence_degenerate<T: Scalar>(m: &ModelInstance<T>) -> bool {
    let e: Vec<T> = m
        .orbitals
        .iter()
        .filter(|o| o.space == Space::Valence)
        .map(|o| o.energy)
        .collect();
    e.windows(2).all(|w| w[0] == w[1])
}

/// Value of a whole group. With core/virtual line ranges, multi-member
/// families are evaluated once with their factored denominator; otherwise
/// member diagrams are summed.
pub fn evaluate_group<T: Scalar>(g: &SkeletonGroup, m: &ModelInstance<T>, opts: EvalOptions) -> Result<OperatorSum<T>> {
    let ctx = EvalContext::new(m, opts)?;
    evaluate_group_with(g, &ctx, valence_degenerate(m))
}

/// [`evaluate_group`] with a prepared context; `degenerate_valence` allows
/// factoring parts above the spine of an effective Hamiltonian.
pub fn evaluate_group_with<T: Scalar>(
    g: &SkeletonGroup,
    ctx: &EvalContext<T>,
    degenerate_valence: bool,
) -> Result<OperatorSum<T>> {
    let opts = ctx.options();
    let mut total = OperatorSum::zero(0, 0);
    let mut first = true;
    for member in &g.members {
        let fam = &member.family;
        let top_ok = fam.top.is_empty() || fam.base().target() == Target::Oeff || degenerate_valence;
        let factored =
            fam.len() > 1 && opts.lines == LineRange::CoreVirtual && !opts.drop_exclusion_violating && top_ok;
        let values = if factored {
            vec![
                ctx.evaluate_factored(fam.base(), 1, &member.denominator.forms())?
                    .tensor,
            ]
        } else {
            fam.members()
                .iter()
                .map(|d| ctx.evaluate(d).map(|v| v.tensor))
                .collect::<Result<Vec<_>>>()?
        };
        for v in values {
            if first {
                total = v;
                first = false;
            } else {
                total.accumulate(&v)?;
            }
        }
    }
    Ok(total)
}

/// Weight shared by all members of a group.
pub fn group_weight(g: &SkeletonGroup) -> Ratio<i64> {
    let d = g.skeleton();
    d.weight_factor() * d.equivalent_line_factor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::catalog::{factorizable, ladder_ring, transition_chain};
    use crate::gen::{enumerate_heff_with_ranks, enumerate_oeff_with_ranks};
    use crate::model::random_model;

    fn all_orderings(d: &Diagram) -> Vec<Diagram> {
        let n = d.n_vertices();
        let mut out = Vec::new();
        crate::model::for_each_permutation(n, |perm, _| {
            let levels: Vec<Level> = perm.iter().map(|&p| Level::from_integer(p as i64 + 1)).collect();
            out.push(d.with_levels(&levels).unwrap());
        });
        out
    }

    #[test]
    fn disconnected_parts_factorize() {
        let fam = OrderingFamily::from_diagram(&factorizable()).unwrap();
        assert_eq!(fam.len(), 6);
        assert_eq!(
            fam.part_names(),
            (vec!["V_f".into(), "V_e".into()], vec!["V_cV_b".into(), "V_a".into()])
        );
        let f = fam.factorize();
        assert_eq!(f.to_string(), "E_noe(V_a)E_noe(V_b)E_noe(V_bV_c)E_noe(V_e)E_noe(V_f)");
        let report = verify_factorization(&fam, 100, 1);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn reversed_line_breaks_the_identity() {
        let fam = OrderingFamily::from_diagram(&factorizable()).unwrap();
        let wrong = fam.factorize().with_reversed_line("a");
        assert!(!verify_factored(&fam, &wrong, 20, 2).passed());
    }

    #[test]
    fn single_member_keeps_its_denominator() {
        let d = ladder_ring();
        let fam = OrderingFamily::from_diagram(&d).unwrap();
        assert_eq!(fam.len(), 1);
        let f = fam.factorize();
        let energy = |l: &str| 0.3 + l.as_bytes()[0] as f64 * 0.17;
        let direct = d.denominator_product().eval(energy);
        assert!((f.eval(energy) - direct).abs() < 1e-12 * direct.abs());
        assert!(verify_factorization(&OrderingFamily::single(&d), 10, 3).passed());
    }

    #[test]
    fn random_families_factorize() {
        for seed in 0..40 {
            let fam = random_family(seed, 6);
            assert!(fam.base().n_vertices() <= 6);
            let report = verify_factorization(&fam, 20, seed);
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn chain_group_signs() {
        let groups = group_skeletons(&all_orderings(&transition_chain()));
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        let notes: Vec<String> = g.members.iter().map(|m| m.notation.to_string()).collect();
        assert_eq!(notes, ["(VDW)[VDW]", "(VDW)[DVW+DWV]", "(VDW)[VWD+WVD]", "(VDW)[WDV]"]);
        assert_eq!(g.eta1(), [1, -1, -1, 1]);
        assert_eq!(g.eta2(), [-1, 1, 1, -1]);
        assert_eq!(g.notation().to_string(), "(VDW)");
        assert_eq!(g.diagram_count(), 6);
    }

    #[test]
    fn notation_round_trips() {
        for d in enumerate_heff_with_ranks(3, &[1, 2]).unwrap() {
            let fam = OrderingFamily::single(&d);
            let n = Notation::of_family(&fam);
            let text = n.to_string();
            assert_eq!(text.parse::<Notation>().unwrap(), n, "{text}");
            let back = n.to_diagram(Target::Heff, None).unwrap();
            assert_eq!(back.canonical_key(), d.canonical_key(), "{text}");
        }
        for d in enumerate_oeff_with_ranks(2, &[1, 2], &[1]).unwrap() {
            let n = Notation::of_family(&OrderingFamily::single(&d));
            let back = n
                .to_string()
                .parse::<Notation>()
                .unwrap()
                .to_diagram(Target::Oeff, Some("O"))
                .unwrap();
            assert_eq!(back.canonical_key(), d.canonical_key());
        }
        assert!("(VD".parse::<Notation>().is_err());
        assert!("(vD)".parse::<Notation>().is_err());
        assert!("(VD)[VD]x".parse::<Notation>().is_err());
    }

    #[test]
    fn grouping_partitions_enumerations() {
        let ds = enumerate_heff_with_ranks(3, &[1, 2]).unwrap();
        let groups = group_skeletons(&ds);
        assert_eq!(groups.iter().map(SkeletonGroup::diagram_count).sum::<usize>(), ds.len());
        assert!(groups.len() < ds.len());
        for g in &groups {
            let ext = g.skeleton().external_rank();
            for m in &g.members {
                for d in m.family.members() {
                    assert_eq!(d.skeleton_key(), g.key);
                    assert_eq!(d.external_rank(), ext);
                }
            }
        }
    }

    #[test]
    fn grouped_value_is_member_sum() {
        let m = random_model::<f64>(8, 2, 2, 2, 1);
        for order in 2..=3 {
            let ds = crate::gen::enumerate_heff(order, &m).unwrap();
            let opts = EvalOptions::core_virtual();
            let ctx = EvalContext::new(&m, opts).unwrap();
            let groups = group_skeletons(&ds);
            if order == 3 {
                assert!(groups.iter().any(|g| g.members.iter().any(|x| x.family.len() > 1)));
            }
            for g in groups {
                let grouped = evaluate_group(&g, &m, opts).unwrap();
                let mut sum = OperatorSum::zero(m.n_orbitals(), 0);
                for d in g.members.iter().flat_map(|x| x.family.members()) {
                    sum.accumulate(&ctx.evaluate(d).unwrap().tensor).unwrap();
                }
                let scale = sum.max_abs().max(1e-12);
                let mut diff = grouped.scale(-1.0);
                diff.accumulate(&sum).unwrap();
                assert!(diff.max_abs() <= 1e-12 * scale, "{}", g.notation());
            }
        }
    }

    #[test]
    fn chain_group_matches_unrestricted_sum() {
        let m = random_model::<f64>(5, 2, 2, 2, 1);
        let g = &group_skeletons(&all_orderings(&transition_chain()))[0];
        let value = evaluate_group(g, &m, EvalOptions::core_virtual()).unwrap();
        let v = m.normal_ordered_perturbation().unwrap();
        let o = m.normal_ordered_transition().unwrap();
        let (v1, d1) = (v.part(1).unwrap(), o.part(1).unwrap());
        let e = m.energies();
        let inner: Vec<usize> = m.core().into_iter().chain(m.virtuals()).collect();
        let t = value.part(1).unwrap();
        let mut checked = 0;
        for &a in &m.valence() {
            for &b in &m.valence() {
                let mut expect = 0.0;
                for &i in &inner {
                    for &j in &inner {
                        expect += v1.coefficient(&[a], &[i]).unwrap()
                            * d1.coefficient(&[i], &[j]).unwrap()
                            * v1.coefficient(&[j], &[b]).unwrap()
                            / ((e[b] - e[j]) * (e[a] - e[i]));
                    }
                }
                let got = t.coefficient(&[a], &[b]).unwrap();
                assert!(
                    (got - expect).abs() <= 1e-12 * expect.abs().max(1e-3),
                    "{got} vs {expect}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 4);
    }

    #[test]
    fn scaling_the_perturbation_scales_groups_quadratically() {
        let m = random_model::<f64>(6, 2, 2, 2, 1);
        let g = &group_skeletons(&all_orderings(&transition_chain()))[0];
        let a = evaluate_group(g, &m, EvalOptions::core_virtual()).unwrap();
        let mut m2 = m.clone();
        m2.lambda *= 0.5;
        let b = evaluate_group(g, &m2, EvalOptions::core_virtual()).unwrap();
        let mut diff = a.scale(-0.25);
        diff.accumulate(&b).unwrap();
        assert!(diff.max_abs() <= 1e-13 * a.max_abs());
    }
}
