//! Reference diagrams with their hand-derived expressions, checked
//! symbolically and against a plain reference summation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagram::file::DiagramFile;
use crate::diagram::{Diagram, Level, LineKind};
use crate::error::{Error, Result};
use crate::eval::{EvalContext, EvalOptions};
use crate::model::{OperatorSum, OperatorTensor};
use crate::transform::{evaluate_group, group_skeletons, verify_factorization, OrderingFamily};
use crate::Model;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputIndices {
    pub bra: Vec<String>,
    pub ket: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupExpectation {
    pub notations: Vec<String>,
    pub eta1: Vec<i32>,
    pub eta2: Vec<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Expectations {
    /// Cut denominators bottom to top, rendered with the case's label order.
    pub denominators: Option<Vec<String>>,
    pub sign: Option<i32>,
    /// Weight as a rational, e.g. `"2"`.
    pub weight: Option<String>,
    /// Output index order of the hand-written expression; `prefactor` is the
    /// number multiplying the sum in that order.
    pub output_indices: Option<OutputIndices>,
    pub prefactor: Option<i64>,
    /// Factored denominator of the ordering family of the diagram.
    pub factored: Option<String>,
    /// Expected skeleton group of all vertex orderings of the diagram.
    pub group: Option<GroupExpectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub diagram: DiagramFile,
    #[serde(default)]
    pub label_order: Vec<String>,
    pub expect: Expectations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCheck {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenReport {
    pub case: String,
    pub checks: Vec<GoldenCheck>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Relative tolerance of numerical golden checks.
pub const GOLDEN_TOLERANCE: f64 = 1e-12;

fn parity(from: &[String], to: &[String]) -> Option<i32> {
    let perm: Vec<usize> = from
        .iter()
        .map(|x| to.iter().position(|y| y == x))
        .collect::<Option<_>>()?;
    let inversions = (0..perm.len())
        .flat_map(|i| (i + 1..perm.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| perm[i] > perm[j])
        .count();
    Some(if inversions % 2 == 0 { 1 } else { -1 })
}

/// Every vertex ordering of `d`.
pub fn all_orderings(d: &Diagram) -> Result<Vec<Diagram>> {
    let mut out = Vec::new();
    let mut err = None;
    crate::model::for_each_permutation(d.n_vertices(), |perm, _| {
        let levels: Vec<Level> = perm.iter().map(|&p| Level::from_integer(p as i64 + 1)).collect();
        match d.with_levels(&levels) {
            Ok(x) => out.push(x),
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Plain single-threaded summation of `d` with core/virtual line ranges:
/// sparse coefficient lookups, symbolic denominators evaluated per term.
pub fn reference_value(d: &Diagram, m: &Model) -> Result<OperatorSum<f64>> {
    let v = m.normal_ordered_perturbation()?;
    let o = m.normal_ordered_transition()?;
    let energies = m.energies();
    let n = m.n_orbitals();
    let range = |k: LineKind| match k {
        LineKind::Particle => m.virtuals(),
        LineKind::Hole => m.core(),
        _ => m.valence(),
    };
    let ranges: Vec<Vec<usize>> = (0..d.lines().len()).map(|i| range(d.line_kind(i))).collect();
    let cuts = d.cut_denominators();
    let (bra, ket) = d.external_pairing();
    let mut raw: BTreeMap<(Vec<usize>, Vec<usize>), f64> = BTreeMap::new();
    let mut values = vec![0usize; d.lines().len()];
    fn recurse(
        k: usize,
        values: &mut Vec<usize>,
        ranges: &[Vec<usize>],
        visit: &mut dyn FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if k == ranges.len() {
            return visit(values);
        }
        for &x in &ranges[k] {
            values[k] = x;
            recurse(k + 1, values, ranges, visit)?;
        }
        Ok(())
    }
    let mut visit = |vals: &[usize]| -> Result<()> {
        let mut num = 1.0;
        for (i, vx) in d.vertices().iter().enumerate() {
            let sum = match vx.kind {
                crate::diagram::VertexKind::Transition => &o,
                _ => &v,
            };
            if vx.rank == 0 {
                num *= sum.constant;
                continue;
            }
            let Some(t) = sum.part(vx.rank) else {
                num = 0.0;
                continue;
            };
            let b: Vec<usize> = (0..vx.rank).map(|s| vals[d.creator_line(i, s)]).collect();
            let k: Vec<usize> = (0..vx.rank).map(|s| vals[d.annihilator_line(i, s)]).collect();
            num *= t.coefficient(&b, &k)?;
        }
        if num == 0.0 {
            return Ok(());
        }
        let label = |l: &str| energies[vals[d.line_index(l).expect("own label")]];
        let den: f64 = cuts.iter().map(|c| c.eval(label)).product();
        let key = (
            bra.iter().map(|&l| vals[l]).collect(),
            ket.iter().map(|&l| vals[l]).collect(),
        );
        *raw.entry(key).or_insert(0.0) += num / den;
        Ok(())
    };
    recurse(0, &mut values, &ranges, &mut visit)?;
    let w = d.weight_factor() * d.equivalent_line_factor();
    let factor = d.sign_factor() as f64 * *w.numer() as f64 / *w.denom() as f64;
    let mut out = OperatorSum::zero(n, 0);
    if bra.is_empty() {
        out.constant = raw.values().sum::<f64>() * factor;
    } else {
        let t =
            OperatorTensor::from_unsymmetrized(bra.len(), n, raw.into_iter().map(|((b, k), x)| (b, k, x * factor)))?;
        out.add_tensor(&t)?;
    }
    Ok(out)
}

/// `max |a − b| / max(max |b|, 1e-12)`.
pub fn relative_error(a: &OperatorSum<f64>, b: &OperatorSum<f64>) -> Result<f64> {
    let mut diff = a.scale(-1.0);
    diff.accumulate(b)?;
    Ok(diff.max_abs() / b.max_abs().max(1e-12))
}

fn check(checks: &mut Vec<GoldenCheck>, name: &str, passed: bool, detail: String) {
    checks.push(GoldenCheck {
        check: name.to_string(),
        passed,
        detail,
    });
}

/// Runs every expectation of `case`; numerical checks use each model.
pub fn run_case(case: &GoldenCase, models: &[Model]) -> Result<GoldenReport> {
    let d = case.diagram.build()?;
    let order: Vec<&str> = case.label_order.iter().map(String::as_str).collect();
    let e = &case.expect;
    let mut checks = Vec::new();
    if let Some(want) = &e.denominators {
        let got: Vec<String> = d.cut_denominators().iter().map(|f| f.render(&order)).collect();
        check(&mut checks, "denominators", &got == want, got.join(""));
    }
    if let Some(want) = e.sign {
        let got = d.sign_factor();
        check(&mut checks, "sign", got == want, got.to_string());
    }
    let weight = d.weight_factor() * d.equivalent_line_factor();
    if let Some(want) = &e.weight {
        let got = weight.to_string();
        check(&mut checks, "weight", &got == want, got);
    }
    if let (Some(expected), Some(want)) = (&e.output_indices, e.prefactor) {
        let (bra, ket) = d.external_pairing();
        let labels = |ls: Vec<usize>| ls.into_iter().map(|l| d.lines()[l].label.clone()).collect::<Vec<_>>();
        let (bra, ket) = (labels(bra), labels(ket));
        match (parity(&bra, &expected.bra), parity(&ket, &expected.ket)) {
            (Some(pb), Some(pk)) => {
                let got = weight * (d.sign_factor() * pb * pk) as i64;
                let detail = format!("{got} with output indices ({};{})", bra.concat(), ket.concat());
                check(&mut checks, "prefactor", got == want.into(), detail);
            }
            _ => check(
                &mut checks,
                "prefactor",
                false,
                "expected indices are not the external lines".into(),
            ),
        }
    }
    if let Some(want) = &e.factored {
        let fam = OrderingFamily::from_diagram(&d)?;
        let got = fam.factorize().to_string();
        check(&mut checks, "factored denominator", &got == want, got);
        let report = verify_factorization(&fam, 100, 0);
        check(
            &mut checks,
            "factorization identity",
            report.passed(),
            format!("{} orderings, max relative error {:.3e}", fam.len(), report.max_error),
        );
    }
    if let Some(want) = &e.group {
        let groups = group_skeletons(&all_orderings(&d)?);
        if groups.len() != 1 {
            check(&mut checks, "group", false, format!("{} groups", groups.len()));
        } else {
            let g = &groups[0];
            let notes: Vec<String> = g.members.iter().map(|m| m.notation.to_string()).collect();
            check(
                &mut checks,
                "group notations",
                notes == want.notations,
                notes.join(", "),
            );
            check(&mut checks, "eta1", g.eta1() == want.eta1, format!("{:?}", g.eta1()));
            check(&mut checks, "eta2", g.eta2() == want.eta2, format!("{:?}", g.eta2()));
            let mut worst: f64 = 0.0;
            for m in models {
                let ctx = EvalContext::new(m, EvalOptions::core_virtual())?;
                let grouped = evaluate_group(g, m, EvalOptions::core_virtual())?;
                let mut sum = OperatorSum::zero(m.n_orbitals(), 0);
                for x in g.members.iter().flat_map(|x| x.family.members()) {
                    sum.accumulate(&ctx.evaluate(x)?.tensor)?;
                }
                worst = worst.max(relative_error(&grouped, &sum)?);
            }
            check(
                &mut checks,
                "grouped value",
                worst <= GOLDEN_TOLERANCE,
                format!("max relative error {worst:.3e} over {} models", models.len()),
            );
        }
    }
    let mut worst: f64 = 0.0;
    for m in models {
        let engine = EvalContext::new(m, EvalOptions::core_virtual())?.evaluate(&d)?.tensor;
        worst = worst.max(relative_error(&engine, &reference_value(&d, m)?)?);
    }
    if !models.is_empty() {
        check(
            &mut checks,
            "value",
            worst <= GOLDEN_TOLERANCE,
            format!("max relative error {worst:.3e} over {} models", models.len()),
        );
    }
    Ok(GoldenReport {
        case: case.name.clone(),
        checks,
    })
}

/// Loads `cases/*.json` and `models/*.json` below `dir`, sorted by file name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<(Vec<GoldenCase>, Vec<Model>)> {
    let dir = dir.as_ref();
    let files = |sub: &str| -> Result<Vec<std::path::PathBuf>> {
        let mut v: Vec<_> = std::fs::read_dir(dir.join(sub))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        Ok(v)
    };
    let cases = files("cases")?
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidModel(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<GoldenCase>>>()?;
    let models = files("models")?
        .iter()
        .map(crate::model::load_model)
        .collect::<Result<Vec<_>>>()?;
    Ok((cases, models))
}
