use ndarray::{Array1, Array2, Axis};

use super::{matrix_of, FockBasis};
use crate::error::{Error, Result};
use crate::model::ModelInstance;
use crate::scalar::Scalar;

/// Dense `H0` and `V` of one electron-number sector with its model space.
#[derive(Debug, Clone)]
pub struct Oracle<T> {
    pub basis: FockBasis,
    /// Basis indices of the model-space determinants.
    pub model_space: Vec<usize>,
    /// Unperturbed energy shared by all model-space determinants.
    pub e0: T,
    /// Diagonal of `H0`.
    pub h0: Array1<T>,
    /// The coupling-scaled perturbation.
    pub v: Array2<T>,
    /// `1 / (E0 − H0)` on Q, zero on P.
    pub resolvent: Array1<T>,
}

impl<T: Scalar> Oracle<T> {
    /// Sector of the model's own electron count.
    pub fn new(m: &ModelInstance<T>) -> Result<Self> {
        Self::with_valence_electrons(m, m.valence_electrons)
    }

    /// Sector with the core filled plus `n_valence` electrons.
    pub fn with_valence_electrons(m: &ModelInstance<T>, n_valence: usize) -> Result<Self> {
        let core = m.core();
        let valence = m.valence();
        if n_valence > valence.len() {
            return Err(Error::ElectronCount(format!(
                "{n_valence} valence electrons in {} valence orbitals",
                valence.len()
            )));
        }
        let basis = FockBasis::sector(m.n_orbitals(), core.len() + n_valence)?;
        let model_space = basis.model_space(&core, &valence);
        let energies = m.energies();
        let h0 = Array1::from_iter(basis.determinants().iter().map(|&d| {
            (0..m.n_orbitals())
                .filter(|&o| d & (1 << o) != 0)
                .fold(T::zero(), |s, o| s + energies[o])
        }));
        let mut v = Array2::zeros((basis.len(), basis.len()));
        for t in m.scaled_perturbation() {
            v = v + matrix_of(&t, &basis)?;
        }
        let e0 = model_space.first().map(|&i| h0[i]).unwrap_or_else(T::zero);
        let scale = energies.iter().fold(T::one(), |s, e| s.max(e.abs()));
        let mut resolvent = Array1::zeros(basis.len());
        let mut in_p = vec![false; basis.len()];
        for &i in &model_space {
            in_p[i] = true;
        }
        for i in 0..basis.len() {
            if in_p[i] {
                continue;
            }
            let gap = e0 - h0[i];
            if gap.abs() < T::of(1e-12) * scale {
                return Err(Error::SingularResolvent {
                    state: i,
                    energy: h0[i].to_f64_lossy(),
                });
            }
            resolvent[i] = T::one() / gap;
        }
        Ok(Self {
            basis,
            model_space,
            e0,
            h0,
            v,
            resolvent,
        })
    }

    pub fn dim(&self) -> usize {
        self.model_space.len()
    }

    /// `V` restricted to columns in P.
    fn v_p(&self) -> Array2<T> {
        self.v.select(Axis(1), &self.model_space)
    }

    /// `V` restricted to rows in P.
    fn p_v(&self) -> Array2<T> {
        self.v.select(Axis(0), &self.model_space)
    }

    fn scale_rows(&self, m: &Array2<T>, power: i32) -> Array2<T> {
        let mut out = m.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let r = self.resolvent[i].powi(power);
            row.mapv_inplace(|x| x * r);
        }
        out
    }

    /// `P V P`.
    pub fn pvp(&self) -> Array2<T> {
        self.p_v().select(Axis(1), &self.model_space)
    }

    /// `P V R^k V P`.
    pub fn pv_rk_vp(&self, k: i32) -> Array2<T> {
        self.p_v().dot(&self.scale_rows(&self.v_p(), k))
    }

    /// Bloch effective Hamiltonian contribution of the given order in `V`.
    pub fn bloch_heff(&self, order: usize) -> Result<Array2<T>> {
        match order {
            1 => Ok(self.pvp()),
            2 => Ok(self.pv_rk_vp(1)),
            3 => {
                let rvp = self.scale_rows(&self.v_p(), 1);
                let principal = self.p_v().dot(&self.scale_rows(&self.v.dot(&rvp), 1));
                let folded = self.pv_rk_vp(2).dot(&self.pvp());
                Ok(principal - folded)
            }
            _ => Err(Error::Unsupported {
                what: "Bloch order",
                detail: order.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::model::{random_model, OperatorTensor};

    #[test]
    fn zero_perturbation_gives_zero() {
        let mut m = random_model::<f64>(2, 2, 2, 2, 1);
        m.lambda = 0.0;
        let o = Oracle::new(&m).unwrap();
        for k in 1..=3 {
            assert_eq!(max_abs(&o.bloch_heff(k).unwrap()), 0.0);
        }
        assert!(o.bloch_heff(4).is_err());
    }

    #[test]
    fn no_q_coupling_kills_higher_orders() {
        // V acting inside the valence block only
        let mut m = random_model::<f64>(2, 1, 3, 2, 2);
        let mut t = OperatorTensor::zeros(2, m.n_orbitals());
        t.set(&[1, 2], &[2, 3], 0.4).unwrap();
        t.set(&[2, 3], &[1, 2], 0.4).unwrap();
        m.perturbation = vec![t];
        let o = Oracle::new(&m).unwrap();
        assert!(max_abs(&o.pvp()) > 0.0);
        assert_eq!(max_abs(&o.bloch_heff(2).unwrap()), 0.0);
        assert_eq!(max_abs(&o.bloch_heff(3).unwrap()), 0.0);
    }

    #[test]
    fn resolvent_inverts_on_q() {
        let m = random_model::<f64>(9, 2, 2, 3, 1);
        let o = Oracle::new(&m).unwrap();
        for i in 0..o.basis.len() {
            let in_p = o.model_space.contains(&i);
            let r = o.resolvent[i] * (o.e0 - o.h0[i]);
            if in_p {
                assert_eq!(o.resolvent[i], 0.0);
            } else {
                assert!((r - 1.0).abs() < 1e-15);
            }
        }
    }
}
