use ndarray::{Array1, Array2, Axis};

use super::Oracle;
use crate::error::{Error, Result};
use crate::linalg::{inverse, solve, symmetric_eigen};
use crate::model::ModelInstance;
use crate::scalar::Scalar;

/// Coupling values at which the exact effective Hamiltonian is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaOptions {
    pub samples: Vec<f64>,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        Self {
            samples: vec![-0.08, -0.06, -0.04, -0.02, 0.02, 0.04, 0.06, 0.08],
        }
    }
}

impl LambdaOptions {
    /// `±h, ±2h, …, ±k h`.
    pub fn symmetric(h: f64, k: usize) -> Self {
        let mut samples: Vec<f64> = (1..=k).flat_map(|i| [-(i as f64) * h, i as f64 * h]).collect();
        samples.sort_by(f64::total_cmp);
        Self { samples }
    }
}

/// Exact non-hermitian `H_eff(λ) = P H Ω` at one coupling value.
fn exact_heff<T: Scalar>(o: &Oracle<T>, lambda: T) -> Result<Array2<T>> {
    let dim = o.basis.len();
    let d = o.dim();
    let mut h = o.v.mapv(|x| x * lambda);
    for i in 0..dim {
        h[[i, i]] = h[[i, i]] + o.h0[i];
    }
    let (values, vectors) = symmetric_eigen(&h)?;
    let p_rows = vectors.select(Axis(0), &o.model_space);
    let mut overlaps: Vec<(T, usize)> = (0..dim)
        .map(|k| (p_rows.column(k).iter().fold(T::zero(), |s, x| s + *x * *x), k))
        .collect();
    overlaps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    if d < dim && overlaps[d].0 > overlaps[d - 1].0 * T::of(0.5) {
        return Err(Error::OverlapAmbiguity(format!(
            "at λ = {}: model-space weights {} and {} are comparable",
            lambda.to_f64_lossy(),
            overlaps[d - 1].0.to_f64_lossy(),
            overlaps[d].0.to_f64_lossy()
        )));
    }
    let mut chosen: Vec<usize> = overlaps[..d].iter().map(|&(_, k)| k).collect();
    chosen.sort_unstable();
    let c = p_rows.select(Axis(1), &chosen);
    let e = Array2::from_diag(&Array1::from_iter(chosen.iter().map(|&k| values[k])));
    Ok(c.dot(&e).dot(&inverse(&c)?))
}

/// Order-by-order coefficients of the exact effective Hamiltonian, found by
/// sampling `H_eff(λ)` and interpolating each entry with a polynomial through
/// the samples and the known `λ = 0` value `E0·1`.
///
/// Returns matrices for orders `0..=max_order` on the model space of the
/// model's own sector. The perturbation must be hermitian.
pub fn lambda_extract<T: Scalar>(
    m: &ModelInstance<T>,
    max_order: usize,
    opts: &LambdaOptions,
) -> Result<Vec<Array2<T>>> {
    let k = opts.samples.len();
    if max_order > k || opts.samples.contains(&0.0) {
        return Err(Error::Unsupported {
            what: "λ sampling",
            detail: format!("{k} nonzero samples cannot resolve order {max_order}"),
        });
    }
    let o = Oracle::new(m)?;
    let asym = (&o.v - &o.v.t()).iter().fold(T::zero(), |s, x| s.max(x.abs()));
    if asym > T::zero() {
        return Err(Error::Unsupported {
            what: "λ extraction",
            detail: "non-hermitian perturbation".into(),
        });
    }
    let d = o.dim();
    let identity = Array2::<T>::eye(d);
    // rows: samples, columns: flattened H_eff(λ) − E0
    let mut rhs = Array2::<T>::zeros((k, d * d));
    for (row, &s) in opts.samples.iter().enumerate() {
        let h = exact_heff(&o, T::of(s))? - identity.mapv(|x| x * o.e0);
        for (col, x) in h.iter().enumerate() {
            rhs[[row, col]] = *x;
        }
    }
    let vandermonde = Array2::from_shape_fn((k, k), |(i, j)| T::of(opts.samples[i]).powi(j as i32 + 1));
    let coeffs = solve(&vandermonde, &rhs)?;
    let mut out = vec![identity.mapv(|x| x * o.e0)];
    for j in 0..max_order {
        out.push(
            coeffs
                .row(j)
                .to_owned()
                .into_shape_with_order((d, d))
                .expect("row holds d² entries"),
        );
    }
    Ok(out)
}
