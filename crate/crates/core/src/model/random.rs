use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelInstance, OperatorTensor, Orbital, Space};
use crate::scalar::Scalar;

/// Knobs for [`random_model`].
#[derive(Debug, Clone)]
pub struct RandomModelOptions {
    /// Smallest allowed distance of any core or virtual energy from the
    /// valence level. Every admissible cut denominator is at least this
    /// large in magnitude.
    pub min_gap: f64,
    /// Core energies are drawn from `[-band, -gap]`, virtual ones from
    /// `[gap, band]`, where `gap = max(min_gap, 1)`.
    pub band: f64,
    /// Rank of the generated transition operator.
    pub transition_rank: usize,
    /// Whether the perturbation gets a one-body part besides the two-body one.
    pub one_body: bool,
}

impl Default for RandomModelOptions {
    fn default() -> Self {
        Self {
            min_gap: 0.1,
            band: 3.0,
            transition_rank: 1,
            one_body: true,
        }
    }
}

fn random_hermitian<T: Scalar>(rank: usize, n: usize, rng: &mut ChaCha8Rng) -> OperatorTensor<T> {
    let mut tuples: Vec<Vec<usize>> = Vec::new();
    let mut cur = Vec::with_capacity(rank);
    fn rec(start: usize, n: usize, rank: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == rank {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, rank, cur, out);
            cur.pop();
        }
    }
    rec(0, n, rank, &mut cur, &mut tuples);
    let mut t = OperatorTensor::zeros(rank, n);
    for (i, bra) in tuples.iter().enumerate() {
        for ket in &tuples[i..] {
            let v: f64 = rng.gen_range(-1.0..=1.0);
            t.set(bra, ket, T::of(v)).expect("generated tuples are valid");
            t.set(ket, bra, T::of(v)).expect("generated tuples are valid");
        }
    }
    t
}

/// Deterministic random model for property tests.
///
/// Orbitals are numbered core first, then valence, then virtual. Valence
/// orbitals sit at energy 0; the perturbation and the transition operator are
/// hermitian with antisymmetrized entries drawn uniformly from `[-1, 1]`.
pub fn random_model<T: Scalar>(
    seed: u64,
    n_core: usize,
    n_valence: usize,
    n_virtual: usize,
    valence_electrons: usize,
) -> ModelInstance<T> {
    random_model_with(
        seed,
        n_core,
        n_valence,
        n_virtual,
        valence_electrons,
        &RandomModelOptions::default(),
    )
}

/// [`random_model`] with explicit options.
pub fn random_model_with<T: Scalar>(
    seed: u64,
    n_core: usize,
    n_valence: usize,
    n_virtual: usize,
    valence_electrons: usize,
    opts: &RandomModelOptions,
) -> ModelInstance<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = opts.min_gap.max(1.0);
    let band = opts.band.max(gap + 0.5);
    let mut core: Vec<f64> = (0..n_core).map(|_| -rng.gen_range(gap..=band)).collect();
    let mut virt: Vec<f64> = (0..n_virtual).map(|_| rng.gen_range(gap..=band)).collect();
    core.sort_by(f64::total_cmp);
    virt.sort_by(f64::total_cmp);
    let mut orbitals = Vec::new();
    let spaces = core
        .iter()
        .map(|&e| (e, Space::Core))
        .chain((0..n_valence).map(|_| (0.0, Space::Valence)))
        .chain(virt.iter().map(|&e| (e, Space::Virtual)));
    for (id, (e, space)) in spaces.enumerate() {
        orbitals.push(Orbital {
            id,
            energy: T::of(e),
            space,
        });
    }
    let n = orbitals.len();
    let mut perturbation = Vec::new();
    if opts.one_body {
        perturbation.push(random_hermitian(1, n, &mut rng));
    }
    perturbation.push(random_hermitian(2, n, &mut rng));
    let transition = random_hermitian(opts.transition_rank, n, &mut rng);
    ModelInstance {
        orbitals,
        valence_electrons,
        perturbation,
        transition,
        lambda: T::one(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a: ModelInstance<f64> = random_model(1, 2, 2, 3, 2);
        let b: ModelInstance<f64> = random_model(1, 2, 2, 3, 2);
        assert_eq!(a.orbitals, b.orbitals);
        assert_eq!(a.perturbation, b.perturbation);
        assert_eq!(a.transition, b.transition);
    }

    #[test]
    fn seeds_differ() {
        let a: ModelInstance<f64> = random_model(1, 2, 2, 3, 2);
        let b: ModelInstance<f64> = random_model(2, 2, 2, 3, 2);
        assert_ne!(a.perturbation, b.perturbation);
    }

    #[test]
    fn generated_model_validates() {
        for seed in 0..10 {
            let m: ModelInstance<f64> = random_model(seed, 2, 3, 3, 2);
            assert!(validate_model(&m).is_empty());
        }
    }

    #[test]
    fn perturbation_is_hermitian() {
        let m: ModelInstance<f64> = random_model(4, 1, 2, 2, 1);
        for t in &m.perturbation {
            for (b, k, v) in t.entries() {
                assert_eq!(t.coefficient(k, b).unwrap(), v);
            }
        }
    }
}
