//! Diagram enumeration by exhaustive port pairing, and the algebraic folded
//! term of third order.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::diagram::{CanonicalKey, Diagram, End, Level, Line, LineKind, Target, Vertex, VertexKind};
use crate::error::{Error, Result};
use crate::model::{ModelInstance, OperatorSum};
use crate::oracle::{model_space_operator, Oracle};
use crate::scalar::Scalar;

/// Vertex kinds bottom to top.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VertexSequence(pub Vec<VertexKind>);

impl VertexSequence {
    pub fn heff(order: usize) -> Self {
        Self(vec![VertexKind::Perturbation; order])
    }

    /// Every placement of `O` among `order` perturbation vertices.
    pub fn oeff(order: usize) -> Vec<Self> {
        (0..=order)
            .map(|pos| {
                let mut kinds = vec![VertexKind::Perturbation; order];
                kinds.insert(pos, VertexKind::Transition);
                Self(kinds)
            })
            .collect()
    }

    pub fn target(&self) -> Target {
        if self.0.contains(&VertexKind::Transition) {
            Target::Oeff
        } else {
            Target::Heff
        }
    }
}

/// Hole/particle classifications of the external lines of a single rank-`n`
/// vertex: how many of its `n` creators and of its `n` annihilators are
/// hole-type. There are `(n + 1)²` of them.
pub fn external_classifications(rank: usize) -> Vec<(usize, usize)> {
    (0..=rank).flat_map(|c| (0..=rank).map(move |a| (c, a))).collect()
}

/// Body ranks with a nonzero normal-ordered part; rank 0 stands for the
/// constant.
pub fn available_ranks<T: Scalar>(op: &OperatorSum<T>) -> Vec<usize> {
    let mut out = Vec::new();
    if op.constant != T::zero() {
        out.push(0);
    }
    for (i, p) in op.parts.iter().enumerate() {
        if !p.is_zero() {
            out.push(i + 1);
        }
    }
    out
}

/// Whether every horizontal cut is crossed by at least one internal line,
/// i.e. no intermediate state can lie in the model space by construction.
pub fn cuts_admissible(d: &Diagram) -> bool {
    (1..d.n_vertices()).all(|i| {
        let cut = d.vertices()[i - 1].level;
        d.internal_lines().any(|k| {
            let l = &d.lines()[k];
            let a = d.node_level(d.node_of(l.from));
            let b = d.node_level(d.node_of(l.to));
            (a <= cut) != (b <= cut)
        })
    })
}

/// Names lines by kind (`p1`, `h1`, `v1`, `f1`, …) and perturbation
/// vertices by their skeleton position, so diagrams sharing a skeleton use
/// the same vertex names.
fn label_lines(d: &Diagram) -> Diagram {
    let ids = d.skeleton_ids();
    let d = d.rename_vertices(|v, vx| match vx.kind {
        VertexKind::Perturbation => format!("V_{}", ids[v] + 1),
        _ => vx.name.clone(),
    });
    let mut counters: BTreeMap<char, usize> = BTreeMap::new();
    let kinds: Vec<LineKind> = (0..d.lines().len()).map(|i| d.line_kind(i)).collect();
    let mut k = 0;
    d.relabel(|_| {
        let c = match kinds[k] {
            LineKind::Particle => 'p',
            LineKind::Hole => 'h',
            LineKind::Dashed => 'v',
            LineKind::Free => 'f',
        };
        k += 1;
        let n = counters.entry(c).or_insert(0);
        *n += 1;
        format!("{c}{n}")
    })
}

fn sequence_vertices(seq: &VertexSequence, ranks: &[usize]) -> (Vec<Vertex>, Level) {
    let mut v_count = 0;
    let vertices: Vec<Vertex> = seq
        .0
        .iter()
        .zip(ranks)
        .enumerate()
        .map(|(i, (&kind, &rank))| Vertex {
            kind,
            rank,
            level: Level::from_integer(i as i64 + 1),
            name: match kind {
                VertexKind::Transition => "O".to_string(),
                _ => {
                    v_count += 1;
                    format!("V_{v_count}")
                }
            },
        })
        .collect();
    let eff = match seq.target() {
        Target::Heff => Level::from_integer(vertices.len() as i64 + 1),
        Target::Oeff => vertices
            .iter()
            .find(|v| v.kind == VertexKind::Transition)
            .map(|v| v.level)
            .unwrap_or_default(),
    };
    (vertices, eff)
}

/// All linked, cut-admissible diagrams of one vertex sequence with fixed
/// ranks, deduplicated by canonical key.
///
/// Every creator port is paired with every free annihilator port on another
/// vertex or left external; the survivors are canonicalized.
pub fn contract(seq: &VertexSequence, ranks: &[usize]) -> Vec<Diagram> {
    let (vertices, eff) = sequence_vertices(seq, ranks);
    if vertices.len() > 1 && ranks.contains(&0) {
        return Vec::new();
    }
    let outs: Vec<(usize, usize)> = vertices
        .iter()
        .enumerate()
        .flat_map(|(v, x)| (0..x.rank).map(move |s| (v, s)))
        .collect();
    let ins = outs.clone();
    let mut used = vec![false; ins.len()];
    let mut choice: Vec<Option<usize>> = Vec::with_capacity(outs.len());
    let mut found: BTreeMap<CanonicalKey, Diagram> = BTreeMap::new();
    let target = seq.target();

    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: usize,
        outs: &[(usize, usize)],
        ins: &[(usize, usize)],
        used: &mut Vec<bool>,
        choice: &mut Vec<Option<usize>>,
        vertices: &[Vertex],
        eff: Level,
        target: Target,
        found: &mut BTreeMap<CanonicalKey, Diagram>,
    ) {
        if k == outs.len() {
            let mut lines = Vec::new();
            for (o, c) in outs.iter().zip(choice.iter()) {
                let from = End::Port { vertex: o.0, slot: o.1 };
                let to = match c {
                    Some(i) => End::Port {
                        vertex: ins[*i].0,
                        slot: ins[*i].1,
                    },
                    None => End::Effective,
                };
                lines.push(Line {
                    from,
                    to,
                    label: format!("l{}", lines.len()),
                });
            }
            for (i, inp) in ins.iter().enumerate() {
                if !used[i] {
                    lines.push(Line {
                        from: End::Effective,
                        to: End::Port {
                            vertex: inp.0,
                            slot: inp.1,
                        },
                        label: format!("l{}", lines.len()),
                    });
                }
            }
            let d = match Diagram::new(target, vertices.to_vec(), eff, lines) {
                Ok(d) => d,
                Err(_) => return,
            };
            if d.is_linked() && cuts_admissible(&d) {
                let key = d.canonical_key();
                found.entry(key).or_insert_with(|| label_lines(&d));
            }
            return;
        }
        choice.push(None);
        rec(k + 1, outs, ins, used, choice, vertices, eff, target, found);
        choice.pop();
        for i in 0..ins.len() {
            if used[i] || ins[i].0 == outs[k].0 {
                continue;
            }
            used[i] = true;
            choice.push(Some(i));
            rec(k + 1, outs, ins, used, choice, vertices, eff, target, found);
            choice.pop();
            used[i] = false;
        }
    }

    rec(
        0,
        &outs,
        &ins,
        &mut used,
        &mut choice,
        &vertices,
        eff,
        target,
        &mut found,
    );
    found.into_values().collect()
}

fn rank_combinations(seq: &VertexSequence, v_ranks: &[usize], o_ranks: &[usize]) -> Vec<Vec<usize>> {
    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for kind in &seq.0 {
        let options = match kind {
            VertexKind::Transition => o_ranks,
            _ => v_ranks,
        };
        combos = combos
            .into_iter()
            .flat_map(|c| {
                options.iter().map(move |&r| {
                    let mut c = c.clone();
                    c.push(r);
                    c
                })
            })
            .collect();
    }
    combos
}

fn merge(groups: impl IntoIterator<Item = Vec<Diagram>>) -> Vec<Diagram> {
    let mut all: BTreeMap<CanonicalKey, Diagram> = BTreeMap::new();
    for g in groups {
        for d in g {
            all.entry(d.canonical_key()).or_insert(d);
        }
    }
    all.into_values().collect()
}

/// Diagrams of a vertex sequence for every admissible rank assignment.
pub fn wick_contractions_with_ranks(seq: &VertexSequence, v_ranks: &[usize], o_ranks: &[usize]) -> Vec<Diagram> {
    merge(
        rank_combinations(seq, v_ranks, o_ranks)
            .iter()
            .map(|ranks| contract(seq, ranks)),
    )
}

/// Diagrams of a vertex sequence with ranks taken from the model's
/// normal-ordered `V` and `O`.
pub fn wick_contractions<T: Scalar>(seq: &VertexSequence, m: &ModelInstance<T>) -> Result<Vec<Diagram>> {
    let v = available_ranks(&m.normal_ordered_perturbation()?);
    let o = available_ranks(&m.normal_ordered_transition()?);
    Ok(wick_contractions_with_ranks(seq, &v, &o))
}

pub fn enumerate_heff_with_ranks(order: usize, v_ranks: &[usize]) -> Result<Vec<Diagram>> {
    if !(1..=3).contains(&order) {
        return Err(Error::Unsupported {
            what: "effective Hamiltonian order",
            detail: order.to_string(),
        });
    }
    Ok(wick_contractions_with_ranks(&VertexSequence::heff(order), v_ranks, &[]))
}

pub fn enumerate_oeff_with_ranks(order: usize, v_ranks: &[usize], o_ranks: &[usize]) -> Result<Vec<Diagram>> {
    if order > 2 {
        return Err(Error::Unsupported {
            what: "effective operator order",
            detail: order.to_string(),
        });
    }
    Ok(merge(
        VertexSequence::oeff(order)
            .iter()
            .map(|s| wick_contractions_with_ranks(s, v_ranks, o_ranks)),
    ))
}

/// Linked effective-Hamiltonian diagrams of order 1 to 3 in `V`.
pub fn enumerate_heff<T: Scalar>(order: usize, m: &ModelInstance<T>) -> Result<Vec<Diagram>> {
    enumerate_heff_with_ranks(order, &available_ranks(&m.normal_ordered_perturbation()?))
}

/// Linked effective-operator diagrams of order 0 to 2 in `V`, over every
/// placement of `O`.
pub fn enumerate_oeff<T: Scalar>(order: usize, m: &ModelInstance<T>) -> Result<Vec<Diagram>> {
    enumerate_oeff_with_ranks(
        order,
        &available_ranks(&m.normal_ordered_perturbation()?),
        &available_ranks(&m.normal_ordered_transition()?),
    )
}

/// Folded third-order contribution `−(P V R² V P)(P V P)` with the closed
/// core parts removed from both factors, as an operator on the valence
/// space of the model's sector.
///
/// The closed-core pieces (the constant `c` of normal ordering and the
/// core-only `⟨core|V R² V|core⟩`) multiply the identity on P; the linked
/// diagrams already account for them.
pub fn folded_third_order<T: Scalar>(m: &ModelInstance<T>) -> Result<OperatorSum<T>> {
    let o = Oracle::new(m)?;
    let core = Oracle::with_valence_electrons(m, 0)?;
    let c = core.pvp()[[0, 0]];
    let big_c = core.pv_rk_vp(2)[[0, 0]];
    let d = o.dim();
    let shift = |x: Array2<T>, s: T| -> Array2<T> {
        let mut x = x;
        for i in 0..d {
            x[[i, i]] = x[[i, i]] - s;
        }
        x
    };
    let w = shift(o.pv_rk_vp(2), big_c);
    let f = shift(o.pvp(), c);
    let folded = w.dot(&f).mapv(|x| -x);
    model_space_operator(&folded, &o.basis, &o.model_space, &m.valence())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_model, OperatorTensor};

    /// Independent count: distinct adjacency multigraphs between vertices of
    /// fixed ranks, filtered the same way.
    fn multigraph_count(seq: &VertexSequence, ranks: &[usize]) -> usize {
        let n = ranks.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        let mut count = 0;
        let mut mult = vec![0usize; pairs.len()];
        loop {
            let mut out = vec![0; n];
            let mut inn = vec![0; n];
            for (k, &(a, b)) in pairs.iter().enumerate() {
                out[a] += mult[k];
                inn[b] += mult[k];
            }
            if (0..n).all(|v| out[v] <= ranks[v] && inn[v] <= ranks[v]) {
                // materialize one representative and apply the filters
                let (vertices, eff) = sequence_vertices(seq, ranks);
                let mut lines = Vec::new();
                let mut next_out = vec![0; n];
                let mut next_in = vec![0; n];
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    for _ in 0..mult[k] {
                        lines.push(Line {
                            from: End::Port {
                                vertex: a,
                                slot: next_out[a],
                            },
                            to: End::Port {
                                vertex: b,
                                slot: next_in[b],
                            },
                            label: format!("l{}", lines.len()),
                        });
                        next_out[a] += 1;
                        next_in[b] += 1;
                    }
                }
                for v in 0..n {
                    for s in next_out[v]..ranks[v] {
                        lines.push(Line {
                            from: End::Port { vertex: v, slot: s },
                            to: End::Effective,
                            label: format!("l{}", lines.len()),
                        });
                    }
                    for s in next_in[v]..ranks[v] {
                        lines.push(Line {
                            from: End::Effective,
                            to: End::Port { vertex: v, slot: s },
                            label: format!("l{}", lines.len()),
                        });
                    }
                }
                let d = Diagram::new(seq.target(), vertices, eff, lines).unwrap();
                if d.is_linked() && cuts_admissible(&d) {
                    count += 1;
                }
            }
            // odometer over multiplicities 0..=2
            let mut i = 0;
            loop {
                if i == mult.len() {
                    return count;
                }
                mult[i] += 1;
                if mult[i] <= 2 {
                    break;
                }
                mult[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn classification_count() {
        assert_eq!(external_classifications(2).len(), 9);
        assert_eq!(external_classifications(1).len(), 4);
    }

    #[test]
    fn pairing_matches_multigraph_oracle() {
        for order in 1..=3 {
            let seq = VertexSequence::heff(order);
            for ranks in rank_combinations(&seq, &[1, 2], &[]) {
                assert_eq!(
                    contract(&seq, &ranks).len(),
                    multigraph_count(&seq, &ranks),
                    "{ranks:?}"
                );
            }
        }
        for seq in VertexSequence::oeff(2) {
            for ranks in rank_combinations(&seq, &[1, 2], &[1, 2]) {
                assert_eq!(
                    contract(&seq, &ranks).len(),
                    multigraph_count(&seq, &ranks),
                    "{ranks:?}"
                );
            }
        }
    }

    #[test]
    fn order_zero_operator_is_single_vertex() {
        let d = enumerate_oeff_with_ranks(0, &[1, 2], &[1]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].n_vertices(), 1);
    }

    #[test]
    fn enumerations_are_linked_unique_and_stable() {
        for order in 1..=3 {
            let a = enumerate_heff_with_ranks(order, &[0, 1, 2]).unwrap();
            let b = enumerate_heff_with_ranks(order, &[0, 1, 2]).unwrap();
            assert_eq!(a, b);
            let mut keys: Vec<_> = a.iter().map(Diagram::canonical_key).collect();
            keys.dedup();
            assert_eq!(keys.len(), a.len());
            assert!(a.iter().all(|d| d.is_linked()));
            assert!(a
                .iter()
                .all(|d| d.effective().level > d.vertices().last().unwrap().level));
        }
        assert!(enumerate_heff_with_ranks(4, &[2]).is_err());
        assert!(enumerate_oeff_with_ranks(3, &[2], &[1]).is_err());
        for order in 0..=2 {
            assert!(enumerate_oeff_with_ranks(order, &[1, 2], &[1, 2])
                .unwrap()
                .iter()
                .all(|d| d.is_linked()));
        }
    }

    #[test]
    fn folded_term_vanishes_without_q_coupling() {
        let mut m = random_model::<f64>(2, 1, 3, 2, 2);
        let mut t = OperatorTensor::zeros(2, m.n_orbitals());
        t.set(&[1, 2], &[2, 3], 0.4).unwrap();
        t.set(&[2, 3], &[1, 2], 0.4).unwrap();
        m.perturbation = vec![t];
        let f = folded_third_order(&m).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn folded_term_is_cubic() {
        let m = random_model::<f64>(8, 2, 2, 2, 1);
        let f1 = folded_third_order(&m).unwrap();
        let f2 = folded_third_order(&m.with_scaled_perturbation(0.5)).unwrap();
        let scaled = f1.scale(0.125);
        for (a, b) in scaled.parts.iter().zip(&f2.parts) {
            for (bra, ket, v) in a.entries() {
                assert!((b.coefficient(bra, ket).unwrap() - v).abs() < 1e-14);
            }
        }
    }
}
