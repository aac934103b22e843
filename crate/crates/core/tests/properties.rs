use std::sync::OnceLock;

use mbdiag_core::diagram::{Diagram, LinearForm, Target};
use mbdiag_core::eval::{evaluate_order_sum, EvalContext};
use mbdiag_core::gen::{enumerate_heff_with_ranks, enumerate_oeff_with_ranks};
use mbdiag_core::golden::relative_error;
use mbdiag_core::model::{random_model, OperatorTensor};
use mbdiag_core::transform::{random_family, verify_factorization, Notation};
use mbdiag_core::{EvalOptions, Model};
use proptest::prelude::*;
use proptest::sample::Index;

fn diagrams() -> &'static [Diagram] {
    static ALL: OnceLock<Vec<Diagram>> = OnceLock::new();
    ALL.get_or_init(|| {
        let mut all = Vec::new();
        for k in 1..=3 {
            all.extend(enumerate_heff_with_ranks(k, &[0, 1, 2]).unwrap());
        }
        for k in 0..=2 {
            all.extend(enumerate_oeff_with_ranks(k, &[0, 1, 2], &[0, 1, 2]).unwrap());
        }
        all
    })
}

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| random_model(42, 1, 2, 2, 1))
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut s = seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        p.swap(i, (s >> 33) as usize % (i + 1));
    }
    p
}

fn redrawn(d: &Diagram, seed: u64) -> Diagram {
    let mut r = d.clone();
    for (v, vx) in d.vertices().iter().enumerate() {
        let s = seed.wrapping_add(v as u64 * 7919);
        r = r.permute_ports(v, &shuffled(vx.rank, s), &shuffled(vx.rank, s ^ 0x5bd1));
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_entries_are_antisymmetric(
        n in 4usize..7,
        idx in proptest::collection::vec(0usize..7, 4),
        value in -1.0f64..1.0,
    ) {
        let idx: Vec<usize> = idx.into_iter().map(|i| i % n).collect();
        prop_assume!(idx[0] != idx[1] && idx[2] != idx[3]);
        let mut t = OperatorTensor::<f64>::zeros(2, n);
        t.set(&idx[..2], &idx[2..], value).unwrap();
        let c = |b: [usize; 2], k: [usize; 2]| t.coefficient(&b, &k).unwrap();
        prop_assert_eq!(c([idx[0], idx[1]], [idx[2], idx[3]]), value);
        prop_assert_eq!(c([idx[1], idx[0]], [idx[2], idx[3]]), -value);
        prop_assert_eq!(c([idx[0], idx[1]], [idx[3], idx[2]]), -value);
        prop_assert_eq!(c([idx[1], idx[0]], [idx[3], idx[2]]), value);
        prop_assert_eq!(c([idx[0], idx[0]], [idx[2], idx[3]]), 0.0);
    }

    #[test]
    fn keys_ignore_labels_and_redraws(i in any::<Index>(), seed in any::<u64>()) {
        let d = i.get(diagrams());
        let relabeled = d.relabel(|l| format!("x{l}"));
        prop_assert_eq!(relabeled.canonical_key(), d.canonical_key());
        prop_assert_eq!(redrawn(d, seed).canonical_key(), d.canonical_key());
        prop_assert_eq!(redrawn(d, seed).skeleton_key(), d.skeleton_key());
    }

    #[test]
    fn outflow_sums_to_zero(i in any::<Index>()) {
        let d = i.get(diagrams());
        let total = d.vertex_e_noe().into_iter().fold(LinearForm::zero(), |s, f| s + f);
        prop_assert!(total.is_zero(), "{}", total.render(&[]));
    }

    #[test]
    fn redraws_keep_the_value(i in any::<Index>(), seed in any::<u64>()) {
        let d = i.get(diagrams());
        let ctx = EvalContext::new(model(), EvalOptions::default()).unwrap();
        let a = ctx.evaluate(d).unwrap().tensor;
        let b = ctx.evaluate(&redrawn(d, seed)).unwrap().tensor;
        prop_assert!(relative_error(&b, &a).unwrap() <= 1e-12);
    }

    #[test]
    fn skeleton_notation_round_trips(i in any::<Index>()) {
        let d = i.get(diagrams());
        let n = Notation::skeleton(d);
        let text = n.to_string();
        prop_assert_eq!(text.parse::<Notation>().unwrap(), n);
    }

    #[test]
    fn families_factorize(seed in any::<u64>()) {
        let fam = random_family(seed, 6);
        let report = verify_factorization(&fam, 5, seed);
        prop_assert!(report.passed(), "{}", report.max_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn orders_scale_homogeneously(lambda in 0.1f64..3.0, order in 1usize..=3) {
        let m = model();
        let base = evaluate_order_sum(Target::Heff, order, m, EvalOptions::default()).unwrap();
        let scaled = evaluate_order_sum(Target::Heff, order, &m.with_scaled_perturbation(lambda), EvalOptions::default()).unwrap();
        let expect = base.scale(lambda.powi(order as i32));
        prop_assert!(relative_error(&scaled, &expect).unwrap() <= 1e-12);
    }
}
