//! Numerical evaluation of diagrams against a model.

use num_rational::Ratio;
use rayon::prelude::*;

use crate::diagram::{Diagram, LineKind, LinearForm, Target, VertexKind};
use crate::error::{Error, Result};
use crate::gen::{enumerate_heff, enumerate_oeff, folded_third_order};
use crate::model::{DenseTensor, ModelInstance, OperatorSum, OperatorTensor, Space};
use crate::scalar::Scalar;

/// Orbitals an internal particle line is summed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineRange {
    /// Particle lines run over virtual and valence orbitals; a term is kept
    /// only if every intermediate state lies outside the model space.
    CompleteModelSpace,
    /// Particle lines run over virtual orbitals only.
    CoreVirtual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub lines: LineRange,
    /// Skip terms whose independent line sums put two particles, or two
    /// holes, in one orbital of an intermediate state.
    pub drop_exclusion_violating: bool,
    /// Relative size below which a denominator counts as zero.
    pub zero_tolerance: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            lines: LineRange::CompleteModelSpace,
            drop_exclusion_violating: false,
            zero_tolerance: 1e-12,
        }
    }
}

impl EvalOptions {
    pub fn core_virtual() -> Self {
        Self {
            lines: LineRange::CoreVirtual,
            ..Self::default()
        }
    }
}

/// Value of one diagram with its bookkeeping.
#[derive(Debug, Clone)]
pub struct DiagramValue<T> {
    /// Rank-`m` tensor over the external indices, or a constant when the
    /// diagram has no external lines.
    pub tensor: OperatorSum<T>,
    pub sign: i32,
    /// External weight times the equivalent internal line factor.
    pub weight: Ratio<i64>,
    pub denominators: Vec<LinearForm>,
    /// Index assignments that contributed.
    pub terms: usize,
}

/// Vertex tensors and orbital data prepared once per model.
pub struct EvalContext<T> {
    n_orbitals: usize,
    energies: Vec<T>,
    core: Vec<usize>,
    valence: Vec<usize>,
    virtuals: Vec<usize>,
    particles: Vec<usize>,
    space: Vec<Space>,
    v: OperatorSum<T>,
    o: OperatorSum<T>,
    v_dense: Vec<DenseTensor<T>>,
    o_dense: Vec<DenseTensor<T>>,
    scale: T,
    opts: EvalOptions,
}

/// Per-cut line lists used in the inner loop.
struct Cut {
    /// `(line, ±1)`: the denominator is `Σ c ε`.
    form: Vec<(usize, i64)>,
    internal: Vec<usize>,
    holes: Vec<usize>,
    /// Lines whose orbital is particle-occupied in the intermediate state.
    particles: Vec<usize>,
}

impl<T: Scalar> EvalContext<T> {
    pub fn new(m: &ModelInstance<T>, opts: EvalOptions) -> Result<Self> {
        let v = m.normal_ordered_perturbation()?;
        let o = m.normal_ordered_transition()?;
        let virtuals = m.virtuals();
        let valence = m.valence();
        let particles = match opts.lines {
            LineRange::CompleteModelSpace => {
                let mut p: Vec<usize> = valence.iter().chain(&virtuals).copied().collect();
                p.sort_unstable();
                p
            }
            LineRange::CoreVirtual => virtuals.clone(),
        };
        let energies = m.energies();
        let scale = energies.iter().fold(T::one(), |s, e| s.max(e.abs()));
        Ok(Self {
            n_orbitals: m.n_orbitals(),
            core: m.core(),
            valence,
            virtuals,
            particles,
            space: m.orbitals.iter().map(|o| o.space).collect(),
            v_dense: v.parts.iter().map(OperatorTensor::to_dense).collect(),
            o_dense: o.parts.iter().map(OperatorTensor::to_dense).collect(),
            v,
            o,
            energies,
            scale,
            opts,
        })
    }

    pub fn options(&self) -> EvalOptions {
        self.opts
    }

    fn range(&self, kind: LineKind) -> &[usize] {
        match kind {
            LineKind::Particle => &self.particles,
            LineKind::Hole => &self.core,
            LineKind::Dashed | LineKind::Free => &self.valence,
        }
    }

    fn cuts(&self, d: &Diagram) -> Vec<Cut> {
        (1..d.n_vertices())
            .map(|i| {
                let level = d.vertices()[i - 1].level;
                let mut cut = Cut {
                    form: Vec::new(),
                    internal: Vec::new(),
                    holes: Vec::new(),
                    particles: Vec::new(),
                };
                let f = d.cut_denominator(i).expect("cut in range");
                for (label, c) in f.terms() {
                    cut.form.push((d.line_index(label).expect("label of this diagram"), c));
                }
                for (k, l) in d.lines().iter().enumerate() {
                    let a = d.node_level(d.node_of(l.from));
                    let b = d.node_level(d.node_of(l.to));
                    let crossing = (a <= level) != (b <= level);
                    match d.line_kind(k) {
                        LineKind::Particle if crossing => {
                            cut.internal.push(k);
                            cut.particles.push(k);
                        }
                        LineKind::Hole if crossing => {
                            cut.internal.push(k);
                            cut.holes.push(k);
                        }
                        LineKind::Dashed | LineKind::Free => {
                            // created below and absorbed later, or absorbed
                            // above: occupied at this time either way
                            let out_line = l.to == crate::diagram::End::Effective;
                            let created_below = out_line && a <= level;
                            let absorbed_above = !out_line && b > level;
                            if created_below || absorbed_above {
                                cut.particles.push(k);
                            }
                        }
                        _ => {}
                    }
                }
                cut
            })
            .collect()
    }

    /// Evaluates one diagram by independent summation of every line index.
    pub fn evaluate(&self, d: &Diagram) -> Result<DiagramValue<T>> {
        self.evaluate_with(d, None)
    }

    /// Evaluates `d` with the cut denominators replaced by
    /// `sign · ∏ forms`, as produced by factorizing an ordering family.
    ///
    /// Only core/virtual line ranges without exclusion dropping are
    /// supported, since both need the individual cuts.
    pub fn evaluate_factored(&self, d: &Diagram, sign: i32, forms: &[LinearForm]) -> Result<DiagramValue<T>> {
        if self.opts.lines != LineRange::CoreVirtual || self.opts.drop_exclusion_violating {
            return Err(Error::Unsupported {
                what: "factored evaluation",
                detail: "needs core/virtual line ranges and all exclusion-violating terms".into(),
            });
        }
        self.evaluate_with(d, Some((sign, forms)))
    }

    fn evaluate_with(&self, d: &Diagram, factored: Option<(i32, &[LinearForm])>) -> Result<DiagramValue<T>> {
        let m = d.external_rank();
        let sign = d.sign_factor() * factored.map_or(1, |(s, _)| s);
        let weight = d.weight_factor() * d.equivalent_line_factor();
        let denominators = match factored {
            Some((_, forms)) => forms.to_vec(),
            None => d.cut_denominators(),
        };
        let zero = |terms| DiagramValue {
            tensor: OperatorSum::zero(self.n_orbitals, 0),
            sign,
            weight,
            denominators: denominators.clone(),
            terms,
        };

        // vertex factors: constants for rank 0, dense tensors otherwise
        let mut constant = T::one();
        let mut factors: Vec<(&DenseTensor<T>, Vec<usize>)> = Vec::new();
        for (v, vx) in d.vertices().iter().enumerate() {
            let (sum, dense) = match vx.kind {
                VertexKind::Transition => (&self.o, &self.o_dense),
                _ => (&self.v, &self.v_dense),
            };
            if vx.rank == 0 {
                constant = constant * sum.constant;
                continue;
            }
            match dense.get(vx.rank - 1) {
                Some(t) if !sum.parts[vx.rank - 1].is_zero() => {
                    let lines = (0..vx.rank)
                        .map(|s| d.creator_line(v, s))
                        .chain((0..vx.rank).map(|s| d.annihilator_line(v, s)))
                        .collect();
                    factors.push((t, lines));
                }
                _ => return Ok(zero(0)),
            }
        }
        if constant == T::zero() {
            return Ok(zero(0));
        }

        let n_lines = d.lines().len();
        let ranges: Vec<&[usize]> = (0..n_lines).map(|k| self.range(d.line_kind(k))).collect();
        if ranges.iter().any(|r| r.is_empty()) {
            return Ok(zero(0));
        }
        let (bra_lines, ket_lines) = d.external_pairing();
        let externals: Vec<usize> = bra_lines.iter().chain(&ket_lines).copied().collect();
        let internals: Vec<usize> = d.internal_lines().collect();
        let cuts = match factored {
            Some((_, forms)) => forms
                .iter()
                .map(|f| {
                    let form = f
                        .terms()
                        .map(|(label, c)| {
                            d.line_index(label)
                                .map(|l| (l, c))
                                .ok_or_else(|| Error::InvalidDiagram(format!("unknown line {label}")))
                        })
                        .collect::<Result<_>>()?;
                    Ok(Cut {
                        form,
                        internal: Vec::new(),
                        holes: Vec::new(),
                        particles: Vec::new(),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => self.cuts(d),
        };

        // work items: every external assignment, split further on the first
        // internal line so closed diagrams parallelize too
        let mut items: Vec<Vec<usize>> = vec![Vec::new()];
        for &l in &externals {
            items = items
                .into_iter()
                .flat_map(|a| {
                    ranges[l].iter().map(move |&x| {
                        let mut a = a.clone();
                        a.push(x);
                        a
                    })
                })
                .filter(|a: &Vec<usize>| {
                    // repeated bra or ket indices cancel on antisymmetrization
                    let (b, k) = a.split_at(a.len().min(m));
                    distinct(b) && distinct(k)
                })
                .collect();
        }
        let split = internals.first().copied();
        let work: Vec<(Vec<usize>, Option<usize>)> = items
            .iter()
            .flat_map(|a| match split {
                Some(l) => ranges[l].iter().map(|&x| (a.clone(), Some(x))).collect::<Vec<_>>(),
                None => vec![(a.clone(), None)],
            })
            .collect();
        let rest: Vec<usize> = internals.iter().skip(1).copied().collect();

        let partials: Vec<(T, usize)> = work
            .par_iter()
            .map(|(ext, first)| {
                let mut values = vec![0usize; n_lines];
                for (&l, &x) in externals.iter().zip(ext) {
                    values[l] = x;
                }
                if let (Some(l), Some(x)) = (split, first) {
                    values[l] = *x;
                }
                self.inner_sum(&mut values, &rest, &ranges, &factors, &cuts)
            })
            .collect::<Result<_>>()?;

        let mut terms = 0;
        let mut raw: Vec<(Vec<usize>, Vec<usize>, T)> = Vec::new();
        let mut closed = T::zero();
        let per_item = work.len() / items.len().max(1);
        for (i, ext) in items.iter().enumerate() {
            let mut s = T::zero();
            for p in &partials[i * per_item..(i + 1) * per_item] {
                s = s + p.0;
                terms += p.1;
            }
            if m == 0 {
                closed = closed + s;
            } else if s != T::zero() {
                raw.push((ext[..m].to_vec(), ext[m..].to_vec(), s));
            }
        }
        let factor = T::of(sign as f64) * T::of(*weight.numer() as f64) / T::of(*weight.denom() as f64) * constant;
        let mut tensor = OperatorSum::zero(self.n_orbitals, 0);
        if m == 0 {
            tensor.constant = closed * factor;
        } else {
            let t = OperatorTensor::from_unsymmetrized(
                m,
                self.n_orbitals,
                raw.into_iter().map(|(b, k, v)| (b, k, v * factor)),
            )?;
            tensor.add_tensor(&t)?;
        }
        Ok(DiagramValue {
            tensor,
            sign,
            weight,
            denominators,
            terms,
        })
    }

    fn inner_sum(
        &self,
        values: &mut [usize],
        rest: &[usize],
        ranges: &[&[usize]],
        factors: &[(&DenseTensor<T>, Vec<usize>)],
        cuts: &[Cut],
    ) -> Result<(T, usize)> {
        let mut total = T::zero();
        let mut terms = 0;
        let mut counter = vec![0usize; rest.len()];
        for (&l, _) in rest.iter().zip(&counter) {
            values[l] = ranges[l][0];
        }
        'outer: loop {
            if let Some(v) = self.term(values, factors, cuts)? {
                total = total + v;
                terms += 1;
            }
            for (pos, &l) in rest.iter().enumerate() {
                counter[pos] += 1;
                if counter[pos] < ranges[l].len() {
                    values[l] = ranges[l][counter[pos]];
                    continue 'outer;
                }
                counter[pos] = 0;
                values[l] = ranges[l][0];
            }
            break;
        }
        Ok((total, terms))
    }

    #[inline]
    fn term(&self, values: &[usize], factors: &[(&DenseTensor<T>, Vec<usize>)], cuts: &[Cut]) -> Result<Option<T>> {
        let mut num = T::one();
        for (t, lines) in factors {
            let x = t.get(lines.iter().map(|&l| values[l]));
            if x == T::zero() {
                return Ok(None);
            }
            num = num * x;
        }
        for cut in cuts {
            if self.opts.lines == LineRange::CompleteModelSpace
                && cut.holes.is_empty()
                && cut.internal.iter().all(|&l| self.space[values[l]] != Space::Virtual)
            {
                return Ok(None);
            }
            if self.opts.drop_exclusion_violating
                && (has_repeat(cut.particles.iter().map(|&l| values[l]))
                    || has_repeat(cut.holes.iter().map(|&l| values[l])))
            {
                return Ok(None);
            }
        }
        let mut den = T::one();
        for (i, cut) in cuts.iter().enumerate() {
            let e = cut
                .form
                .iter()
                .fold(T::zero(), |s, &(l, c)| s + T::of(c as f64) * self.energies[values[l]]);
            if e.abs() < T::of(self.opts.zero_tolerance) * self.scale {
                return Err(Error::DegenerateDenominator {
                    cut: i + 1,
                    value: e.to_f64_lossy(),
                    assignment: values.to_vec(),
                });
            }
            den = den * e;
        }
        Ok(Some(num / den))
    }

    /// Orbitals of the virtual space, for callers building custom sums.
    pub fn virtuals(&self) -> &[usize] {
        &self.virtuals
    }
}

fn distinct(xs: &[usize]) -> bool {
    xs.iter().enumerate().all(|(i, x)| !xs[..i].contains(x))
}

fn has_repeat(xs: impl Iterator<Item = usize>) -> bool {
    let mut seen: u64 = 0;
    for x in xs {
        let bit = 1u64 << x;
        if seen & bit != 0 {
            return true;
        }
        seen |= bit;
    }
    false
}

/// Evaluates a single diagram.
pub fn evaluate_diagram<T: Scalar>(d: &Diagram, m: &ModelInstance<T>, opts: EvalOptions) -> Result<DiagramValue<T>> {
    EvalContext::new(m, opts)?.evaluate(d)
}

/// Sum of all diagrams of one order; third-order effective Hamiltonians
/// include the folded term.
pub fn evaluate_order_sum<T: Scalar>(
    target: Target,
    order: usize,
    m: &ModelInstance<T>,
    opts: EvalOptions,
) -> Result<OperatorSum<T>> {
    let diagrams = match target {
        Target::Heff => enumerate_heff(order, m)?,
        Target::Oeff => enumerate_oeff(order, m)?,
    };
    let ctx = EvalContext::new(m, opts)?;
    let mut total = OperatorSum::zero(m.n_orbitals(), 0);
    for d in &diagrams {
        total.accumulate(&ctx.evaluate(d)?.tensor)?;
    }
    if target == Target::Heff && order == 3 {
        total.accumulate(&folded_third_order(m)?)?;
    }
    for p in &mut total.parts {
        p.prune();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{DiagramBuilder, VertexKind};
    use crate::model::random_model;
    use crate::oracle::{compare_tensors, Oracle};

    #[test]
    fn first_order_is_valence_block() {
        let m = random_model::<f64>(4, 2, 3, 2, 2);
        let h1 = evaluate_order_sum(Target::Heff, 1, &m, EvalOptions::default()).unwrap();
        let o = Oracle::new(&m).unwrap();
        let err = compare_tensors(&h1, &o.bloch_heff(1).unwrap(), &o.basis, &o.model_space).unwrap();
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn single_vertex_has_no_denominator() {
        let m = random_model::<f64>(4, 1, 2, 2, 1);
        let d = DiagramBuilder::new(Target::Heff)
            .vertex(VertexKind::Perturbation, "V", &["p", "q"], &["r", "s"])
            .build()
            .unwrap();
        let v = evaluate_diagram(&d, &m, EvalOptions::default()).unwrap();
        assert!(v.denominators.is_empty());
        assert_eq!(v.sign, 1);
        let t = v.tensor.part(2).unwrap();
        let expect = m.perturbation[1].restrict(|i| m.space_of(i) == Space::Valence);
        for (b, k, x) in expect.entries() {
            assert!((t.coefficient(b, k).unwrap() - x).abs() < 1e-15);
        }
    }

    #[test]
    fn second_order_matches_oracle() {
        for seed in 0..3 {
            let m = random_model::<f64>(seed, 2, 3, 2, 2);
            let h2 = evaluate_order_sum(Target::Heff, 2, &m, EvalOptions::default()).unwrap();
            let o = Oracle::new(&m).unwrap();
            let err = compare_tensors(&h2, &o.bloch_heff(2).unwrap(), &o.basis, &o.model_space).unwrap();
            assert!(err < 1e-10, "seed {seed}: {err}");
        }
    }

    #[test]
    fn third_order_with_folded_term_matches_oracle() {
        for (seed, shape) in [(0u64, (2, 3, 2, 2)), (1, (1, 2, 3, 1)), (2, (2, 2, 2, 2))] {
            let (c, v, x, e) = shape;
            let m = random_model::<f64>(seed, c, v, x, e);
            let h3 = evaluate_order_sum(Target::Heff, 3, &m, EvalOptions::default()).unwrap();
            let o = Oracle::new(&m).unwrap();
            let err = compare_tensors(&h3, &o.bloch_heff(3).unwrap(), &o.basis, &o.model_space).unwrap();
            assert!(err < 1e-9, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_order_operator_is_valence_block() {
        let m = random_model::<f64>(6, 1, 2, 2, 1);
        let o0 = evaluate_order_sum(Target::Oeff, 0, &m, EvalOptions::default()).unwrap();
        let o = Oracle::new(&m).unwrap();
        let mut om = m.clone();
        om.perturbation = vec![m.transition.clone()];
        om.lambda = 1.0;
        let reference = Oracle::new(&om).unwrap().pvp();
        let err = compare_tensors(&o0, &reference, &o.basis, &o.model_space).unwrap();
        assert!(err < 1e-14, "{err}");
    }
}
