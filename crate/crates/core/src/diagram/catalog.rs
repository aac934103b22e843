//! Hand-built reference diagrams used by tests, golden checks and the CLI.

use super::{Diagram, DiagramBuilder, Target, VertexKind};

/// Third-order two-body diagram with `V_c(tn,ba)` at the bottom,
/// `V_b(sa,pq)` in the middle and `V_a(mb,st)` on top.
pub fn ladder_ring() -> Diagram {
    DiagramBuilder::new(Target::Heff)
        .vertex(VertexKind::Perturbation, "V_c", &["t", "n"], &["b", "a"])
        .vertex(VertexKind::Perturbation, "V_b", &["s", "a"], &["p", "q"])
        .vertex(VertexKind::Perturbation, "V_a", &["m", "b"], &["s", "t"])
        .build()
        .expect("valid diagram")
}

/// Second-order effective-operator diagram with `O(as,pq)` between
/// `V_1(nt,ab)` and `V_3(mb,st)`.
pub fn transition_sandwich() -> Diagram {
    DiagramBuilder::new(Target::Oeff)
        .vertex(VertexKind::Perturbation, "V_1", &["n", "t"], &["a", "b"])
        .vertex(VertexKind::Transition, "O", &["a", "s"], &["p", "q"])
        .vertex(VertexKind::Perturbation, "V_3", &["m", "b"], &["s", "t"])
        .build()
        .expect("valid diagram")
}

/// Six-vertex one-body diagram whose two bottom vertices `V_f`, `V_e` and
/// two top parts `V_a`, `V_c V_b` are mutually disconnected.
pub fn factorizable() -> Diagram {
    DiagramBuilder::new(Target::Heff)
        .vertex(VertexKind::Perturbation, "V_f", &["t"], &["b"])
        .vertex(VertexKind::Perturbation, "V_e", &["s"], &["a"])
        .vertex(VertexKind::Perturbation, "V_d", &["a", "b"], &["c", "d"])
        .vertex(VertexKind::Perturbation, "V_c", &["u", "d"], &["t", "e"])
        .vertex(VertexKind::Perturbation, "V_a", &["m", "c"], &["s", "n"])
        .vertex(VertexKind::Perturbation, "V_b", &["e"], &["u"])
        .build()
        .expect("valid diagram")
}

/// One-body chain `V_{mi} D_{ij} W_{jn}` with `W` at the bottom and `V` on
/// top, so both internal lines are particles.
pub fn transition_chain() -> Diagram {
    DiagramBuilder::new(Target::Oeff)
        .vertex(VertexKind::Perturbation, "W", &["j"], &["n"])
        .vertex(VertexKind::Transition, "D", &["i"], &["j"])
        .vertex(VertexKind::Perturbation, "V", &["m"], &["i"])
        .build()
        .expect("valid diagram")
}
