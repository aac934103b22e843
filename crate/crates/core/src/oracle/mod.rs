//! Exact dense Fock-space realization of a model.
//!
//! Determinants are occupation bit patterns. Creation and annihilation
//! operators act with the sign `(−1)^k`, `k` the number of occupied orbitals
//! with a smaller id.

mod bloch;
mod lambda;

use std::collections::HashMap;

use ndarray::Array2;

pub use bloch::Oracle;
pub use lambda::{lambda_extract, LambdaOptions};

use crate::error::{Error, Result};
use crate::model::{OperatorSum, OperatorTensor};
use crate::scalar::Scalar;

/// Largest sector the oracle builds.
pub const MAX_SECTOR: usize = 5000;

/// All determinants of a fixed electron count.
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_orbitals: usize,
    n_electrons: usize,
    determinants: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl FockBasis {
    pub fn sector(n_orbitals: usize, n_electrons: usize) -> Result<Self> {
        Self::sector_with_limit(n_orbitals, n_electrons, MAX_SECTOR)
    }

    pub fn sector_with_limit(n_orbitals: usize, n_electrons: usize, limit: usize) -> Result<Self> {
        if n_orbitals > 63 {
            return Err(Error::Unsupported {
                what: "Fock basis",
                detail: format!("{n_orbitals} orbitals"),
            });
        }
        if n_electrons > n_orbitals {
            return Err(Error::ElectronCount(format!(
                "{n_electrons} electrons do not fit in {n_orbitals} orbitals"
            )));
        }
        let dim = binomial(n_orbitals, n_electrons);
        if dim > limit {
            return Err(Error::SectorTooLarge { dim, limit });
        }
        let mut determinants = Vec::with_capacity(dim);
        let mut occ: Vec<usize> = (0..n_electrons).collect();
        loop {
            determinants.push(occ.iter().fold(0u64, |m, &o| m | (1 << o)));
            // next combination in lexicographic order
            let mut i = n_electrons;
            loop {
                if i == 0 {
                    let index = determinants.iter().enumerate().map(|(k, &d)| (d, k)).collect();
                    return Ok(Self {
                        n_orbitals,
                        n_electrons,
                        determinants,
                        index,
                    });
                }
                i -= 1;
                if occ[i] < n_orbitals - n_electrons + i {
                    break;
                }
            }
            occ[i] += 1;
            for j in (i + 1)..n_electrons {
                occ[j] = occ[j - 1] + 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.determinants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.determinants.is_empty()
    }

    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn determinants(&self) -> &[u64] {
        &self.determinants
    }

    pub fn index_of(&self, det: u64) -> Option<usize> {
        self.index.get(&det).copied()
    }

    /// Indices of determinants with every `core` orbital filled and all
    /// remaining electrons in `valence` orbitals.
    pub fn model_space(&self, core: &[usize], valence: &[usize]) -> Vec<usize> {
        let core_mask = core.iter().fold(0u64, |m, &o| m | (1 << o));
        let allowed = valence.iter().fold(core_mask, |m, &o| m | (1 << o));
        (0..self.len())
            .filter(|&i| {
                let d = self.determinants[i];
                d & core_mask == core_mask && d & !allowed == 0
            })
            .collect()
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Applies an operator string to a determinant. `ops` lists `(creator?,
/// orbital)` left to right as written; the rightmost acts first.
pub fn apply_string(det: u64, ops: &[(bool, usize)]) -> Option<(u64, i32)> {
    let mut d = det;
    let mut sign = 1;
    for &(create, o) in ops.iter().rev() {
        let bit = 1u64 << o;
        let occupied = d & bit != 0;
        if occupied == create {
            return None;
        }
        if (d & (bit - 1)).count_ones() % 2 == 1 {
            sign = -sign;
        }
        d ^= bit;
    }
    Some((d, sign))
}

/// `a+_{α1} … a+_{αn} a_{βn} … a_{β1}`.
pub fn operator_string(bra: &[usize], ket: &[usize]) -> Vec<(bool, usize)> {
    bra.iter()
        .map(|&a| (true, a))
        .chain(ket.iter().rev().map(|&b| (false, b)))
        .collect()
}

fn check_orbitals<T: Scalar>(t: &OperatorTensor<T>, b: &FockBasis) -> Result<()> {
    if t.n_orbitals() > b.n_orbitals() {
        return Err(Error::ShapeMismatch(format!(
            "tensor over {} orbitals applied to a {}-orbital basis",
            t.n_orbitals(),
            b.n_orbitals()
        )));
    }
    Ok(())
}

/// Dense matrix of `Σ_{sorted α, sorted β} t a+_α… a_β…` on the sector.
pub fn matrix_of<T: Scalar>(t: &OperatorTensor<T>, b: &FockBasis) -> Result<Array2<T>> {
    check_orbitals(t, b)?;
    let mut m = Array2::<T>::zeros((b.len(), b.len()));
    for (bra, ket, v) in t.entries() {
        let ops = operator_string(bra, ket);
        let ket_mask = ket.iter().fold(0u64, |m, &o| m | (1 << o));
        for (j, &det) in b.determinants().iter().enumerate() {
            if det & ket_mask != ket_mask {
                continue;
            }
            if let Some((out, s)) = apply_string(det, &ops) {
                let i = b.index_of(out).expect("particle number is conserved");
                m[[i, j]] = m[[i, j]] + if s > 0 { v } else { -v };
            }
        }
    }
    Ok(m)
}

/// Dense matrix of a constant plus tensors.
pub fn sum_matrix<T: Scalar>(op: &OperatorSum<T>, b: &FockBasis) -> Result<Array2<T>> {
    let mut m = Array2::<T>::eye(b.len()).mapv(|x| x * op.constant);
    for p in &op.parts {
        m = m + matrix_of(p, b)?;
    }
    Ok(m)
}

/// Matrix of an operator sum between model-space determinants only.
pub fn model_space_matrix<T: Scalar>(op: &OperatorSum<T>, b: &FockBasis, p: &[usize]) -> Result<Array2<T>> {
    let position: HashMap<usize, usize> = p.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut m = Array2::<T>::eye(p.len()).mapv(|x| x * op.constant);
    for t in &op.parts {
        check_orbitals(t, b)?;
        for (bra, ket, v) in t.entries() {
            let ops = operator_string(bra, ket);
            for (col, &j) in p.iter().enumerate() {
                if let Some((out, s)) = apply_string(b.determinants()[j], &ops) {
                    if let Some(&row) = b.index_of(out).and_then(|i| position.get(&i)) {
                        m[[row, col]] = m[[row, col]] + if s > 0 { v } else { -v };
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Inverse of [`model_space_matrix`] for a single-rank operator: the
/// valence tensor of rank `n_v` (a constant when `n_v = 0`) whose model-space
/// matrix is `m`.
pub fn model_space_operator<T: Scalar>(
    m: &Array2<T>,
    b: &FockBasis,
    p: &[usize],
    valence: &[usize],
) -> Result<OperatorSum<T>> {
    if m.nrows() != p.len() || m.ncols() != p.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix for a {}-dimensional model space",
            m.nrows(),
            m.ncols(),
            p.len()
        )));
    }
    let valence_mask = valence.iter().fold(0u64, |acc, &o| acc | (1 << o));
    let occupied = |det: u64| -> Vec<usize> { (0..64).filter(|&o| det & valence_mask & (1 << o) != 0).collect() };
    let n_v = p.first().map(|&i| occupied(b.determinants()[i]).len()).unwrap_or(0);
    let mut out = OperatorSum::zero(b.n_orbitals(), 0);
    if n_v == 0 {
        out.constant = if p.is_empty() { T::zero() } else { m[[0, 0]] };
        return Ok(out);
    }
    let mut t = OperatorTensor::zeros(n_v, b.n_orbitals());
    for (row, &i) in p.iter().enumerate() {
        for (col, &j) in p.iter().enumerate() {
            let v = m[[row, col]];
            if v == T::zero() {
                continue;
            }
            let bra = occupied(b.determinants()[i]);
            let ket = occupied(b.determinants()[j]);
            let (_, s) = apply_string(b.determinants()[j], &operator_string(&bra, &ket))
                .expect("string maps model-space determinants onto each other");
            t.set(&bra, &ket, if s > 0 { v } else { -v })?;
        }
    }
    out.add_tensor(&t)?;
    Ok(out)
}

/// Max `|Δ| / scale` between the model-space matrix of `a` and `b`, with
/// `scale = max(max |b|, 1e−6)`.
pub fn compare_tensors<T: Scalar>(a: &OperatorSum<T>, b: &Array2<T>, basis: &FockBasis, p: &[usize]) -> Result<T> {
    if b.nrows() != p.len() || b.ncols() != p.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} reference for a {}-dimensional model space",
            b.nrows(),
            b.ncols(),
            p.len()
        )));
    }
    let ma = model_space_matrix(a, basis, p)?;
    Ok(relative_difference(&ma, b))
}

/// Max `|a − b| / max(max |b|, 1e−6)`.
pub fn relative_difference<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    let scale = crate::linalg::max_abs(b).max(T::of(1e-6));
    let diff = a
        .iter()
        .zip(b.iter())
        .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()));
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_model;

    /// Applies `a+a+aa` to kets literally, term by term over all index
    /// tuples, with the `1/(n!)²` normalization.
    fn literal_matrix(t: &OperatorTensor<f64>, b: &FockBasis) -> Array2<f64> {
        let n = t.n_orbitals();
        let r = t.rank();
        let mut m = Array2::zeros((b.len(), b.len()));
        let total = n.pow(2 * r as u32);
        let norm = (1..=r).map(|k| k as f64).product::<f64>().powi(2);
        for code in 0..total {
            let mut idx = Vec::with_capacity(2 * r);
            let mut c = code;
            for _ in 0..2 * r {
                idx.push(c % n);
                c /= n;
            }
            let (bra, ket) = idx.split_at(r);
            let v = t.coefficient(bra, ket).unwrap();
            if v == 0.0 {
                continue;
            }
            for (j, &det) in b.determinants().iter().enumerate() {
                // act one operator at a time, rightmost first
                let mut d = det;
                let mut sign = 1.0;
                let mut alive = true;
                for &(create, o) in operator_string(bra, ket).iter().rev() {
                    let below = (0..o).filter(|&q| d & (1 << q) != 0).count();
                    let occ = d & (1 << o) != 0;
                    if occ == create {
                        alive = false;
                        break;
                    }
                    if below % 2 == 1 {
                        sign = -sign;
                    }
                    d ^= 1 << o;
                }
                if alive {
                    m[[b.index_of(d).unwrap(), j]] += sign * v / norm;
                }
            }
        }
        m
    }

    #[test]
    fn sector_sizes() {
        assert_eq!(FockBasis::sector(6, 3).unwrap().len(), 20);
        assert!(matches!(FockBasis::sector(30, 15), Err(Error::SectorTooLarge { .. })));
        assert!(FockBasis::sector(3, 4).is_err());
    }

    #[test]
    fn number_operator_counts_electrons() {
        let b = FockBasis::sector(5, 2).unwrap();
        let mut t = OperatorTensor::zeros(1, 5);
        for o in 0..5 {
            t.set(&[o], &[o], 1.0).unwrap();
        }
        let m = matrix_of(&t, &b).unwrap();
        assert_eq!(m, Array2::<f64>::eye(b.len()) * 2.0);
    }

    #[test]
    fn one_body_on_one_electron() {
        let m = random_model::<f64>(3, 1, 1, 2, 1);
        let b = FockBasis::sector(4, 1).unwrap();
        let t = &m.perturbation[0];
        let mat = matrix_of(t, &b).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                assert_eq!(
                    mat[[b.index_of(1 << p).unwrap(), b.index_of(1 << q).unwrap()]],
                    t.coefficient(&[p], &[q]).unwrap()
                );
            }
        }
    }

    #[test]
    fn two_body_matches_literal_application() {
        let m = random_model::<f64>(11, 1, 2, 3, 2);
        let b = FockBasis::sector(6, 3).unwrap();
        let t = &m.perturbation[1];
        let fast = matrix_of(t, &b).unwrap();
        let slow = literal_matrix(t, &b);
        assert!(relative_difference(&fast, &slow) < 1e-14);
        // hermitian tensors give symmetric matrices
        assert!(relative_difference(&fast.t().to_owned(), &fast) < 1e-15);
    }

    #[test]
    fn model_space_round_trip() {
        let m = random_model::<f64>(5, 1, 3, 2, 2);
        let b = FockBasis::sector(6, 3).unwrap();
        let p = b.model_space(&m.core(), &m.valence());
        assert_eq!(p.len(), 3);
        let mat = Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64 - 2.5);
        let op = model_space_operator(&mat, &b, &p, &m.valence()).unwrap();
        let back = model_space_matrix(&op, &b, &p).unwrap();
        assert!(relative_difference(&back, &mat) < 1e-15);
        assert_eq!(compare_tensors(&op, &mat, &b, &p).unwrap(), 0.0);
    }
}
