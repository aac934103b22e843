//! Orbital spaces, operator tensors and model instances.

mod file;
mod random;
mod tensor;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use file::{load_model, model_from_json, model_to_json, tensor_to_entries, TensorEntry, TensorFile};
pub use random::{random_model, random_model_with, RandomModelOptions};
pub use tensor::{for_each_permutation, sort_with_sign, DenseTensor, OperatorTensor, Tuple};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Partition of the one-particle space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Core,
    Valence,
    Virtual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbital<T> {
    pub id: usize,
    pub energy: T,
    pub space: Space,
}

/// A complete model: orbitals, perturbation, transition operator and the
/// coupling scale applied to the perturbation.
#[derive(Debug, Clone)]
pub struct ModelInstance<T> {
    pub orbitals: Vec<Orbital<T>>,
    pub valence_electrons: usize,
    pub perturbation: Vec<OperatorTensor<T>>,
    pub transition: OperatorTensor<T>,
    pub lambda: T,
}

/// A broken model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonContiguousIds { position: usize, id: usize },
    CoreAboveVirtual { core: usize, virtual_: usize },
    NonDegenerateModelSpace { first: usize, other: usize },
    UndeclaredOrbital { operator: String, id: usize },
    TooManyValenceElectrons { electrons: usize, orbitals: usize },
    UnsupportedRank { operator: String, rank: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonContiguousIds { position, id } => {
                write!(f, "orbital ids not contiguous: position {position} holds id {id}")
            }
            Violation::CoreAboveVirtual { core, virtual_ } => write!(
                f,
                "core orbital {core} is not strictly below virtual orbital {virtual_}"
            ),
            Violation::NonDegenerateModelSpace { first, other } => write!(
                f,
                "non-degenerate model space: valence orbitals {first} and {other} differ in energy"
            ),
            Violation::UndeclaredOrbital { operator, id } => {
                write!(f, "{operator} references undeclared orbital {id}")
            }
            Violation::TooManyValenceElectrons { electrons, orbitals } => write!(
                f,
                "{electrons} valence electrons do not fit in {orbitals} valence orbitals"
            ),
            Violation::UnsupportedRank { operator, rank } => {
                write!(f, "{operator} has unsupported rank {rank}")
            }
        }
    }
}

/// A constant plus one antisymmetrized tensor per body rank.
///
/// Used both for operators normal-ordered with respect to the closed core
/// and for effective operators, which carry up to four-body parts at third
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSum<T> {
    pub constant: T,
    /// `parts[r - 1]` holds the rank-`r` part.
    pub parts: Vec<OperatorTensor<T>>,
}

impl<T: Scalar> OperatorSum<T> {
    pub fn zero(n_orbitals: usize, max_rank: usize) -> Self {
        Self {
            constant: T::zero(),
            parts: (1..=max_rank).map(|r| OperatorTensor::zeros(r, n_orbitals)).collect(),
        }
    }

    pub fn part(&self, rank: usize) -> Option<&OperatorTensor<T>> {
        rank.checked_sub(1).and_then(|r| self.parts.get(r))
    }

    pub fn max_rank(&self) -> usize {
        self.parts.len()
    }

    /// Adds a tensor of any rank; rank 0 is not representable as a tensor,
    /// use [`OperatorSum::add_constant`].
    pub fn add_tensor(&mut self, t: &OperatorTensor<T>) -> Result<()> {
        let n = t.n_orbitals();
        while self.parts.len() < t.rank() {
            let r = self.parts.len() + 1;
            self.parts.push(OperatorTensor::zeros(r, n));
        }
        self.parts[t.rank() - 1].accumulate(t)
    }

    pub fn add_constant(&mut self, c: T) {
        self.constant = self.constant + c;
    }

    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.add_constant(other.constant);
        for p in &other.parts {
            self.add_tensor(p)?;
        }
        Ok(())
    }

    #[must_use]
    pub fn scale(&self, factor: T) -> Self {
        Self {
            constant: self.constant * factor,
            parts: self.parts.iter().map(|p| p.scale(factor)).collect(),
        }
    }

    /// Largest absolute coefficient over all parts.
    pub fn max_abs(&self) -> T {
        self.parts
            .iter()
            .map(|p| p.max_abs())
            .fold(self.constant.abs(), |m, v| if v > m { v } else { m })
    }
}

impl<T: Scalar> ModelInstance<T> {
    pub fn n_orbitals(&self) -> usize {
        self.orbitals.len()
    }

    pub fn energies(&self) -> Vec<T> {
        self.orbitals.iter().map(|o| o.energy).collect()
    }

    pub fn space_of(&self, id: usize) -> Space {
        self.orbitals[id].space
    }

    pub fn orbitals_in(&self, space: Space) -> Vec<usize> {
        self.orbitals
            .iter()
            .filter(|o| o.space == space)
            .map(|o| o.id)
            .collect()
    }

    pub fn core(&self) -> Vec<usize> {
        self.orbitals_in(Space::Core)
    }

    pub fn valence(&self) -> Vec<usize> {
        self.orbitals_in(Space::Valence)
    }

    pub fn virtuals(&self) -> Vec<usize> {
        self.orbitals_in(Space::Virtual)
    }

    /// Total electron count of the model-space determinants.
    pub fn electron_count(&self) -> usize {
        self.core().len() + self.valence_electrons
    }

    /// Model-space energy under the unperturbed Hamiltonian.
    pub fn model_space_energy(&self) -> T {
        let core: T = self
            .orbitals
            .iter()
            .filter(|o| o.space == Space::Core)
            .fold(T::zero(), |s, o| s + o.energy);
        let valence = self
            .orbitals
            .iter()
            .find(|o| o.space == Space::Valence)
            .map(|o| o.energy)
            .unwrap_or_else(T::zero);
        core + valence * T::of(self.valence_electrons as f64)
    }

    /// Perturbation tensors multiplied by the coupling scale.
    pub fn scaled_perturbation(&self) -> Vec<OperatorTensor<T>> {
        self.perturbation.iter().map(|t| t.scale(self.lambda)).collect()
    }

    /// Copy with every perturbation tensor scaled by `factor` (the coupling
    /// scale is left alone).
    pub fn with_scaled_perturbation(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.perturbation = self.perturbation.iter().map(|t| t.scale(factor)).collect();
        out
    }

    pub fn normal_ordered_perturbation(&self) -> Result<OperatorSum<T>> {
        normal_order(&self.scaled_perturbation(), &self.core(), self.n_orbitals())
    }

    pub fn normal_ordered_transition(&self) -> Result<OperatorSum<T>> {
        normal_order(std::slice::from_ref(&self.transition), &self.core(), self.n_orbitals())
    }

    pub fn cast<U: Scalar>(&self) -> ModelInstance<U> {
        ModelInstance {
            orbitals: self
                .orbitals
                .iter()
                .map(|o| Orbital {
                    id: o.id,
                    energy: U::of(o.energy.to_f64_lossy()),
                    space: o.space,
                })
                .collect(),
            valence_electrons: self.valence_electrons,
            perturbation: self.perturbation.iter().map(|t| t.cast()).collect(),
            transition: self.transition.cast(),
            lambda: U::of(self.lambda.to_f64_lossy()),
        }
    }
}

/// Normal-orders a sum of one- and two-body tensors with respect to the
/// closed-core vacuum.
///
/// `Σ t a+a+aa` picks up a one-body piece `Σ_c t[pc; qc]` and a constant
/// `½ Σ_cd t[cd; cd]`; a one-body tensor contributes `Σ_c t[c; c]`.
pub fn normal_order<T: Scalar>(
    tensors: &[OperatorTensor<T>],
    core: &[usize],
    n_orbitals: usize,
) -> Result<OperatorSum<T>> {
    let max_rank = tensors.iter().map(|t| t.rank()).max().unwrap_or(0).max(1);
    if max_rank > 2 {
        return Err(Error::Unsupported {
            what: "normal ordering",
            detail: format!("rank {max_rank} operators"),
        });
    }
    let mut constant = T::zero();
    let mut parts: Vec<OperatorTensor<T>> = (1..=max_rank).map(|r| OperatorTensor::zeros(r, n_orbitals)).collect();
    let is_core = |i: usize| core.contains(&i);
    for t in tensors {
        match t.rank() {
            0 => {}
            1 => {
                for (b, k, v) in t.entries() {
                    if b == k && is_core(b[0]) {
                        constant = constant + v;
                    }
                }
                parts[0].accumulate(t)?;
            }
            2 => {
                for (b, k, v) in t.entries() {
                    // entries are stored sorted; expand every placement of a
                    // shared core index
                    for (bi, ki) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let c = b[bi];
                        if c != k[ki] || !is_core(c) {
                            continue;
                        }
                        let p = b[1 - bi];
                        let q = k[1 - ki];
                        let sign = if bi == ki { v } else { -v };
                        // t[pc; qc] with c in slot 1 of both tuples
                        parts[0].add(&[p], &[q], sign)?;
                    }
                    if b == k && is_core(b[0]) && is_core(b[1]) {
                        constant = constant + v;
                    }
                }
                parts[1].accumulate(t)?;
            }
            _ => unreachable!(),
        }
    }
    for p in &mut parts {
        p.prune();
    }
    Ok(OperatorSum { constant, parts })
}

/// Checks every model invariant and returns the violations found.
pub fn validate_model<T: Scalar>(m: &ModelInstance<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    for (position, o) in m.orbitals.iter().enumerate() {
        if o.id != position {
            out.push(Violation::NonContiguousIds { position, id: o.id });
        }
    }
    let n = m.orbitals.len();
    for c in m.orbitals.iter().filter(|o| o.space == Space::Core) {
        for v in m.orbitals.iter().filter(|o| o.space == Space::Virtual) {
            if c.energy >= v.energy {
                out.push(Violation::CoreAboveVirtual {
                    core: c.id,
                    virtual_: v.id,
                });
            }
        }
    }
    let valence: Vec<&Orbital<T>> = m.orbitals.iter().filter(|o| o.space == Space::Valence).collect();
    if let Some(first) = valence.first() {
        for other in &valence[1..] {
            if other.energy != first.energy {
                out.push(Violation::NonDegenerateModelSpace {
                    first: first.id,
                    other: other.id,
                });
            }
        }
    }
    if m.valence_electrons > valence.len() {
        out.push(Violation::TooManyValenceElectrons {
            electrons: m.valence_electrons,
            orbitals: valence.len(),
        });
    }
    let named = m
        .perturbation
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("V[{i}]"), t))
        .chain(std::iter::once(("O".to_string(), &m.transition)));
    for (name, t) in named {
        if t.rank() == 0 || t.rank() > 2 {
            out.push(Violation::UnsupportedRank {
                operator: name.clone(),
                rank: t.rank(),
            });
        }
        let bad = t
            .entries()
            .flat_map(|(b, k, _)| b.iter().chain(k.iter()).copied().collect::<Vec<_>>())
            .filter(|&id| id >= n)
            .max();
        if t.n_orbitals() > n || bad.is_some() {
            out.push(Violation::UndeclaredOrbital {
                operator: name,
                id: bad.unwrap_or(t.n_orbitals() - 1),
            });
        }
    }
    out
}
