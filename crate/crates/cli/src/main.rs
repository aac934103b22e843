use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use mbdiag_core::diagram::file::diagram_from_json;
use mbdiag_core::diagram::{catalog, render_dot, render_text, Diagram, Target};
use mbdiag_core::eval::evaluate_order_sum;
use mbdiag_core::gen::{enumerate_heff, enumerate_heff_with_ranks, enumerate_oeff, enumerate_oeff_with_ranks};
use mbdiag_core::golden::{load_corpus, run_case};
use mbdiag_core::model::{load_model, random_model, tensor_to_entries, OperatorSum};
use mbdiag_core::oracle::{compare_tensors, lambda_extract, LambdaOptions, Oracle};
use mbdiag_core::transform::{evaluate_group, group_skeletons};
use mbdiag_core::{EvalOptions, LineRange, Model, Quad, Scalar};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "mbdiag",
    version,
    about = "Perturbation-theory diagrams for effective operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the distinct diagrams of one order.
    Enumerate(EnumerateArgs),
    /// Sum all diagrams of one order and write the resulting operator.
    Eval(EvalArgs),
    /// Group diagrams by skeleton and evaluate each group.
    Group(GroupArgs),
    /// Compare diagram sums with the exact oracle.
    Verify(VerifyArgs),
    /// Run the shipped golden fixtures.
    Golden(GoldenArgs),
    /// Draw one diagram as text or Graphviz.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Heff,
    Oeff,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Heff => Target::Heff,
            TargetArg::Oeff => Target::Oeff,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Dot,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lines {
    /// Internal particle lines also run over valence orbitals.
    Complete,
    /// Internal lines run over core and virtual orbitals only.
    CoreVirtual,
}

#[derive(Args)]
struct EvalFlags {
    /// Summation range of internal lines.
    #[arg(long, value_enum, default_value = "complete")]
    lines: Lines,
    /// Skip exclusion-violating index assignments.
    #[arg(long)]
    drop_exclusion_violating: bool,
}

impl EvalFlags {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            lines: match self.lines {
                Lines::Complete => LineRange::CompleteModelSpace,
                Lines::CoreVirtual => LineRange::CoreVirtual,
            },
            drop_exclusion_violating: self.drop_exclusion_violating,
            ..EvalOptions::default()
        }
    }
}

#[derive(Args)]
struct EnumerateArgs {
    #[arg(long, value_enum)]
    target: TargetArg,
    #[arg(long)]
    order: usize,
    /// Model whose operator ranks select the vertex types; without it all
    /// ranks up to two are used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    render: Option<Format>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    target: TargetArg,
    #[arg(long)]
    order: usize,
    #[arg(long)]
    model: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: EvalFlags,
}

#[derive(Args)]
struct GroupArgs {
    #[arg(long, value_enum)]
    target: TargetArg,
    #[arg(long)]
    order: usize,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    flags: EvalFlags,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Highest effective-Hamiltonian order checked (1 to 3).
    #[arg(long)]
    order: usize,
    /// Also check this many seeded random models of the same shape.
    #[arg(long, default_value_t = 0)]
    seed_sweep: u64,
    /// Relative tolerance for every order instead of the per-order defaults.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Also compare against coefficients extracted from exact
    /// diagonalization at small couplings.
    #[arg(long)]
    lambda: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GoldenArgs {
    #[arg(long, default_value = "fixtures/golden")]
    dir: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Diagram file (vertices bottom to top with line labels).
    #[arg(long, conflicts_with = "catalog", required_unless_present = "catalog")]
    diagram: Option<PathBuf>,
    /// Built-in diagram: ladder-ring, transition-sandwich, factorizable or
    /// transition-chain.
    #[arg(long)]
    catalog: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Verification(String),
    Input(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<mbdiag_core::Error> for Failure {
    fn from(e: mbdiag_core::Error) -> Self {
        Failure::Input(e.into())
    }
}

type Outcome = Result<(), Failure>;

/// Rounds to 15 significant digits.
fn sig15(x: f64) -> f64 {
    format!("{x:.14e}").parse().unwrap_or(x)
}

fn fmt15(x: f64) -> String {
    format!("{x:.14e}")
}

fn read_model(path: &Path) -> anyhow::Result<Model> {
    load_model(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(v: &impl Serialize) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn operator_json(op: &OperatorSum<f64>) -> Value {
    let tensors: Vec<Value> = op
        .parts
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| {
            let mut file = tensor_to_entries(t);
            for e in &mut file.entries {
                e.value = sig15(e.value);
            }
            serde_json::to_value(file).expect("tensor entries serialize")
        })
        .collect();
    json!({ "constant": sig15(op.constant), "tensors": tensors })
}

fn enumerate(a: &EnumerateArgs) -> Outcome {
    let target = Target::from(a.target);
    let diagrams: Vec<Diagram> = match (&a.model, target) {
        (Some(p), Target::Heff) => enumerate_heff(a.order, &read_model(p)?)?,
        (Some(p), Target::Oeff) => enumerate_oeff(a.order, &read_model(p)?)?,
        (None, Target::Heff) => enumerate_heff_with_ranks(a.order, &[0, 1, 2])?,
        (None, Target::Oeff) => enumerate_oeff_with_ranks(a.order, &[0, 1, 2], &[0, 1, 2])?,
    };
    let mut out = String::new();
    if a.json {
        let list: Vec<Value> = diagrams
            .iter()
            .map(|d| {
                json!({
                    "key": d.canonical_key().to_string(),
                    "sign": d.sign_factor(),
                    "weight": (d.weight_factor() * d.equivalent_line_factor()).to_string(),
                    "denominators": d.cut_denominators().iter().map(|f| f.render(&[])).collect::<Vec<_>>(),
                })
            })
            .collect();
        out = to_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "enumerate",
            "target": target.to_string(),
            "order": a.order,
            "count": diagrams.len(),
            "diagrams": list,
        }))?;
    } else {
        out.push_str(&format!("{} order {}: {} diagrams\n", target, a.order, diagrams.len()));
        for (i, d) in diagrams.iter().enumerate() {
            out.push_str(&format!("{:>4} {}\n", i + 1, d.canonical_key()));
            match a.render {
                Some(Format::Text) => out.push_str(&render_text(d)),
                Some(Format::Dot) => out.push_str(&render_dot(d)),
                None => {}
            }
        }
    }
    emit(&out, None)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Outcome {
    let m = read_model(&a.model)?;
    let target = Target::from(a.target);
    let op = evaluate_order_sum(target, a.order, &m, a.flags.options())?;
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "eval",
        "target": target.to_string(),
        "order": a.order,
    });
    if let (Value::Object(r), Value::Object(o)) = (&mut report, operator_json(&op)) {
        r.extend(o);
    }
    emit(&to_json(&report)?, a.out.as_deref())?;
    Ok(())
}

fn group(a: &GroupArgs) -> Outcome {
    let m = read_model(&a.model)?;
    let target = Target::from(a.target);
    let diagrams = match target {
        Target::Heff => enumerate_heff(a.order, &m)?,
        Target::Oeff => enumerate_oeff(a.order, &m)?,
    };
    let groups = group_skeletons(&diagrams);
    let mut rows = Vec::new();
    let mut text = format!(
        "{} order {}: {} groups, {} diagrams\n",
        target,
        a.order,
        groups.len(),
        diagrams.len()
    );
    for (i, g) in groups.iter().enumerate() {
        let value = evaluate_group(g, &m, a.flags.options())?;
        let notations: Vec<String> = g.members.iter().map(|x| x.notation.to_string()).collect();
        text.push_str(&format!(
            "group {}: {} members, {} diagrams, max |value| {}, constant {}\n",
            i + 1,
            g.members.len(),
            g.diagram_count(),
            fmt15(value.max_abs()),
            fmt15(value.constant)
        ));
        for (n, x) in notations.iter().zip(&g.members) {
            text.push_str(&format!("  {n}  eta1 {:+} eta2 {:+}\n", x.eta1, x.eta2));
        }
        rows.push(json!({
            "skeleton": g.notation().to_string(),
            "members": notations,
            "diagrams": g.diagram_count(),
            "eta1": g.eta1(),
            "eta2": g.eta2(),
            "max_abs": sig15(value.max_abs()),
            "value": operator_json(&value),
        }));
    }
    if a.json {
        text = to_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "group",
            "target": target.to_string(),
            "order": a.order,
            "groups": rows,
        }))?;
    }
    emit(&text, None)?;
    Ok(())
}

fn default_tolerance(order: usize) -> f64 {
    match order {
        1 => 1e-12,
        2 => 1e-10,
        _ => 1e-9,
    }
}

fn verify(a: &VerifyArgs) -> Outcome {
    if !(1..=3).contains(&a.order) {
        return Err(Failure::Input(anyhow!(
            "order must be between 1 and 3, got {}",
            a.order
        )));
    }
    if let Some(t) = a.tolerance {
        if t.is_nan() || t <= 0.0 {
            return Err(Failure::Input(anyhow!("tolerance must be positive, got {t}")));
        }
    }
    let base = read_model(&a.model)?;
    let mut models = vec![base.clone()];
    let shape = (
        base.core().len(),
        base.valence().len(),
        base.virtuals().len(),
        base.valence_electrons,
    );
    for seed in 0..a.seed_sweep {
        models.push(random_model(seed, shape.0, shape.1, shape.2, shape.3));
    }
    let mut worst = vec![0.0f64; a.order];
    let mut worst_lambda = vec![0.0f64; a.order];
    for m in &models {
        let o = Oracle::new(m)?;
        let extracted = if a.lambda {
            Some(lambda_extract(
                &m.cast::<Quad>(),
                a.order,
                &LambdaOptions::symmetric(1e-3, 4),
            )?)
        } else {
            None
        };
        for k in 1..=a.order {
            let h = evaluate_order_sum(Target::Heff, k, m, EvalOptions::default())?;
            let err = compare_tensors(&h, &o.bloch_heff(k)?, &o.basis, &o.model_space)?;
            worst[k - 1] = worst[k - 1].max(err);
            if let Some(x) = &extracted {
                let reference = x[k].mapv(|q| q.to_f64_lossy());
                let err = compare_tensors(&h, &reference, &o.basis, &o.model_space)?;
                worst_lambda[k - 1] = worst_lambda[k - 1].max(err);
            }
        }
    }
    let mut passed = true;
    let orders: Vec<Value> = (1..=a.order)
        .map(|k| {
            let tol = a.tolerance.unwrap_or_else(|| default_tolerance(k));
            let mut ok = worst[k - 1] <= tol;
            let mut row = json!({
                "order": k,
                "max_relative_error": sig15(worst[k - 1]),
                "tolerance": tol,
            });
            if a.lambda {
                ok &= worst_lambda[k - 1] <= tol;
                row["max_relative_error_lambda"] = json!(sig15(worst_lambda[k - 1]));
            }
            row["passed"] = json!(ok);
            passed &= ok;
            row
        })
        .collect();
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "verify",
        "models": models.len(),
        "orders": orders,
        "passed": passed,
    });
    emit(&to_json(&report)?, a.out.as_deref())?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("diagram sums disagree with the oracle".into()))
    }
}

fn golden(a: &GoldenArgs) -> Outcome {
    let (cases, models) =
        load_corpus(&a.dir).with_context(|| format!("cannot load golden fixtures from {}", a.dir.display()))?;
    if cases.is_empty() {
        return Err(Failure::Input(anyhow!("no golden cases in {}", a.dir.display())));
    }
    let mut reports = Vec::new();
    for c in &cases {
        reports.push(run_case(c, &models)?);
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let text = if a.json {
        to_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "golden",
            "models": models.len(),
            "cases": reports,
            "passed": failed == 0,
        }))?
    } else {
        let mut s = String::new();
        for r in &reports {
            s.push_str(&format!("{} {}\n", if r.passed() { "PASS" } else { "FAIL" }, r.case));
            for c in &r.checks {
                s.push_str(&format!(
                    "  {} {}: {}\n",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.check,
                    c.detail
                ));
            }
        }
        s.push_str(&format!(
            "{} of {} fixtures passed\n",
            reports.len() - failed,
            reports.len()
        ));
        s
    };
    emit(&text, None)?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{failed} golden fixtures failed")))
    }
}

fn render(a: &RenderArgs) -> Outcome {
    let d = match (&a.diagram, a.catalog.as_deref()) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            diagram_from_json(&text)?
        }
        (None, Some("ladder-ring")) => catalog::ladder_ring(),
        (None, Some("transition-sandwich")) => catalog::transition_sandwich(),
        (None, Some("factorizable")) => catalog::factorizable(),
        (None, Some("transition-chain")) => catalog::transition_chain(),
        (None, Some(other)) => return Err(Failure::Input(anyhow!("unknown catalog diagram {other:?}"))),
        (None, None) => return Err(Failure::Input(anyhow!("no diagram given"))),
    };
    let text = match a.format {
        Format::Text => render_text(&d),
        Format::Dot => render_dot(&d),
    };
    emit(&text, None)?;
    Ok(())
}

/// Applies `MBDIAG_THREADS` (0 or unset: one worker per core).
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("MBDIAG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("MBDIAG_THREADS must be a non-negative integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads()
        .map_err(Failure::Input)
        .and_then(|()| match &cli.command {
            Command::Enumerate(a) => enumerate(a),
            Command::Eval(a) => eval(a),
            Command::Group(a) => group(a),
            Command::Verify(a) => verify(a),
            Command::Golden(a) => golden(a),
            Command::Render(a) => render(a),
        });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("mbdiag: verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("mbdiag: {e:#}");
            ExitCode::from(2)
        }
    }
}
