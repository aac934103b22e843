//! Antisymmetrized n-body operator tensors.
//!
//! An n-body operator is written as
//!
//! ```text
//! T_n = 1/(n!)^2 Σ t[α1..αn; β1..βn] a+(α1)..a+(αn) a(βn)..a(β1)
//! ```
//!
//! with `t` antisymmetric under any transposition inside the bra tuple or
//! inside the ket tuple. Only entries with strictly increasing bra and ket
//! tuples are stored; every other entry follows from the permutation sign.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Orbital index tuple.
pub type Tuple = Vec<usize>;

/// Sorts `tuple` in place and returns the permutation sign, or `None` when
/// the tuple contains a repeated index.
pub fn sort_with_sign(tuple: &mut [usize]) -> Option<i32> {
    let mut sign = 1;
    // insertion sort; tuples are short
    for i in 1..tuple.len() {
        let mut j = i;
        while j > 0 && tuple[j - 1] > tuple[j] {
            tuple.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if tuple.windows(2).any(|w| w[0] == w[1]) {
        None
    } else {
        Some(sign)
    }
}

/// Calls `f(perm, sign)` for every permutation of `0..n`.
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize], i32)) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut sign = 1;
    f(&perm, sign);
    // Heap's algorithm
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            sign = -sign;
            f(&perm, sign);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Antisymmetrized coefficient table of an n-body operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTensor<T> {
    rank: usize,
    n_orbitals: usize,
    entries: BTreeMap<(Tuple, Tuple), T>,
}

impl<T: Scalar> OperatorTensor<T> {
    /// The zero tensor.
    pub fn zeros(rank: usize, n_orbitals: usize) -> Self {
        Self {
            rank,
            n_orbitals,
            entries: BTreeMap::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    /// Stored entries, keyed by strictly increasing (bra, ket) tuples.
    pub fn entries(&self) -> impl Iterator<Item = (&Tuple, &Tuple, T)> + '_ {
        self.entries.iter().map(|((b, k), v)| (b, k, *v))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.is_zero())
    }

    fn check(&self, tuple: &[usize]) -> Result<()> {
        if tuple.len() != self.rank {
            return Err(Error::RankMismatch {
                rank: self.rank,
                found: tuple.len(),
            });
        }
        if let Some(&id) = tuple.iter().find(|&&id| id >= self.n_orbitals) {
            return Err(Error::UnknownOrbital {
                id,
                count: self.n_orbitals,
            });
        }
        Ok(())
    }

    /// Coefficient `t[bra; ket]` for arbitrary index order.
    pub fn coefficient(&self, bra: &[usize], ket: &[usize]) -> Result<T> {
        self.check(bra)?;
        self.check(ket)?;
        let mut b = bra.to_vec();
        let mut k = ket.to_vec();
        let (Some(sb), Some(sk)) = (sort_with_sign(&mut b), sort_with_sign(&mut k)) else {
            return Ok(T::zero());
        };
        let v = self.entries.get(&(b, k)).copied().unwrap_or_else(T::zero);
        Ok(if sb * sk < 0 { -v } else { v })
    }

    /// Sets `t[bra; ket]` (and, implicitly, every permuted entry).
    ///
    /// Setting an entry with a repeated index is a no-op unless the value is
    /// nonzero, which is rejected.
    pub fn set(&mut self, bra: &[usize], ket: &[usize], value: T) -> Result<()> {
        self.check(bra)?;
        self.check(ket)?;
        let mut b = bra.to_vec();
        let mut k = ket.to_vec();
        match (sort_with_sign(&mut b), sort_with_sign(&mut k)) {
            (Some(sb), Some(sk)) => {
                let v = if sb * sk < 0 { -value } else { value };
                if v.is_zero() {
                    self.entries.remove(&(b, k));
                } else {
                    self.entries.insert((b, k), v);
                }
                Ok(())
            }
            _ if value.is_zero() => Ok(()),
            _ => Err(Error::InvalidModel(format!(
                "nonzero coefficient {value} on repeated index ({bra:?}; {ket:?})"
            ))),
        }
    }

    /// Adds `value` to `t[bra; ket]`; repeated indices are dropped.
    pub fn add(&mut self, bra: &[usize], ket: &[usize], value: T) -> Result<()> {
        self.check(bra)?;
        self.check(ket)?;
        let mut b = bra.to_vec();
        let mut k = ket.to_vec();
        if let (Some(sb), Some(sk)) = (sort_with_sign(&mut b), sort_with_sign(&mut k)) {
            let v = if sb * sk < 0 { -value } else { value };
            let slot = self.entries.entry((b, k)).or_insert_with(T::zero);
            *slot = *slot + v;
        }
        Ok(())
    }

    /// Builds the tensor from a plain product-basis kernel.
    ///
    /// For each kernel entry the ket is antisymmetrized,
    /// `t[α; β] = Σ_σ sgn(σ) raw(α; σβ)`, and the bra is taken in increasing
    /// order. Kernel entries whose bra is not increasing duplicate their
    /// particle-relabeled partner and are not consulted.
    pub fn antisymmetrize(
        rank: usize,
        n_orbitals: usize,
        raw: impl IntoIterator<Item = (Tuple, Tuple, T)>,
    ) -> Result<Self> {
        let mut out = Self::zeros(rank, n_orbitals);
        for (bra, ket, value) in raw {
            out.check(&bra)?;
            out.check(&ket)?;
            if !bra.windows(2).all(|w| w[0] < w[1]) {
                continue;
            }
            // raw(α; β) feeds t[α; σ⁻¹β] with sign sgn(σ); accumulating it
            // at the canonical ket with the sorting sign covers every σ.
            out.add(&bra, &ket, value)?;
        }
        out.prune();
        Ok(out)
    }

    /// Projects an arbitrary coefficient function onto its antisymmetric
    /// part, `t = 1/(n!)^2 Σ_{π,σ} sgn(π) sgn(σ) c(πα; σβ)`.
    ///
    /// This is the tensor whose normalized operator equals
    /// `1/(n!)^2 Σ c a+..a` summed over all index values.
    pub fn from_unsymmetrized(
        rank: usize,
        n_orbitals: usize,
        terms: impl IntoIterator<Item = (Tuple, Tuple, T)>,
    ) -> Result<Self> {
        let mut out = Self::zeros(rank, n_orbitals);
        let norm = T::of(factorial(rank) as f64);
        for (bra, ket, value) in terms {
            out.add(&bra, &ket, value)?;
        }
        let scale = T::one() / (norm * norm);
        for v in out.entries.values_mut() {
            *v = *v * scale;
        }
        out.prune();
        Ok(out)
    }

    /// Drops numerically exact zeros.
    pub fn prune(&mut self) {
        self.entries.retain(|_, v| !v.is_zero());
    }

    pub fn scale(&self, factor: T) -> Self {
        let mut out = self.clone();
        for v in out.entries.values_mut() {
            *v = *v * factor;
        }
        out.prune();
        out
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if other.rank != self.rank || other.n_orbitals != self.n_orbitals {
            return Err(Error::ShapeMismatch(format!(
                "rank {}/{} orbitals {}/{}",
                self.rank, other.rank, self.n_orbitals, other.n_orbitals
            )));
        }
        for (key, v) in &other.entries {
            let slot = self.entries.entry(key.clone()).or_insert_with(T::zero);
            *slot = *slot + *v;
        }
        Ok(())
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> T {
        self.entries
            .values()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    /// Restriction to entries whose indices all satisfy `keep`.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = Self::zeros(self.rank, self.n_orbitals);
        for ((b, k), v) in &self.entries {
            if b.iter().chain(k).all(|&i| keep(i)) {
                out.entries.insert((b.clone(), k.clone()), *v);
            }
        }
        out
    }

    /// Converts the scalar type.
    pub fn cast<U: Scalar>(&self) -> OperatorTensor<U> {
        OperatorTensor {
            rank: self.rank,
            n_orbitals: self.n_orbitals,
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), U::of(v.to_f64_lossy())))
                .collect(),
        }
    }

    /// Dense array with every index order filled in; length `n^(2·rank)`,
    /// bra indices first.
    pub fn to_dense(&self) -> DenseTensor<T> {
        let n = self.n_orbitals;
        let r = self.rank;
        let len = n.pow(2 * r as u32);
        let mut data = vec![T::zero(); len];
        for ((b, k), v) in &self.entries {
            for_each_permutation(r, |pb, sb| {
                for_each_permutation(r, |pk, sk| {
                    let mut idx = 0;
                    for &p in pb {
                        idx = idx * n + b[p];
                    }
                    for &p in pk {
                        idx = idx * n + k[p];
                    }
                    data[idx] = if sb * sk < 0 { -*v } else { *v };
                });
            });
        }
        DenseTensor { rank: r, n, data }
    }
}

/// Dense, fully expanded copy of an [`OperatorTensor`] for inner loops.
#[derive(Debug, Clone)]
pub struct DenseTensor<T> {
    rank: usize,
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Value at the bra/ket index iterators.
    #[inline]
    pub fn get(&self, indices: impl Iterator<Item = usize>) -> T {
        let mut idx = 0;
        for i in indices {
            idx = idx * self.n + i;
        }
        self.data[idx]
    }
}
