//! JSON form of a diagram: vertices bottom to top with their line labels.

use serde::{Deserialize, Serialize};

use super::{Diagram, DiagramBuilder, Target, VertexKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexEntry {
    /// `"V"` for a perturbation vertex, `"O"` for the transition operator.
    pub kind: String,
    pub name: String,
    pub bra: Vec<String>,
    pub ket: Vec<String>,
}

/// A diagram as labeled vertex expressions. A label used as a bra index at
/// one vertex and a ket index at another is an internal line; a label used
/// once is an external line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramFile {
    pub target: String,
    /// Bottom to top.
    pub vertices: Vec<VertexEntry>,
}

impl DiagramFile {
    pub fn build(&self) -> Result<Diagram> {
        let target: Target = self.target.parse()?;
        let mut b = DiagramBuilder::new(target);
        for v in &self.vertices {
            let kind = match v.kind.as_str() {
                "V" => VertexKind::Perturbation,
                "O" => VertexKind::Transition,
                other => return Err(Error::InvalidDiagram(format!("unknown vertex kind {other:?}"))),
            };
            b.push(kind, v.name.clone(), v.bra.clone(), v.ket.clone());
        }
        b.build()
    }

    pub fn from_diagram(d: &Diagram) -> Self {
        let label = |i: usize| d.lines()[i].label.clone();
        Self {
            target: d.target().to_string(),
            vertices: d
                .vertices()
                .iter()
                .enumerate()
                .map(|(v, vx)| VertexEntry {
                    kind: vx.kind.code().to_string(),
                    name: vx.name.clone(),
                    bra: (0..vx.rank).map(|s| label(d.creator_line(v, s))).collect(),
                    ket: (0..vx.rank).map(|s| label(d.annihilator_line(v, s))).collect(),
                })
                .collect(),
        }
    }
}

pub fn diagram_from_json(text: &str) -> Result<Diagram> {
    serde_json::from_str::<DiagramFile>(text)?.build()
}

pub fn diagram_to_json(d: &Diagram) -> Result<String> {
    Ok(serde_json::to_string_pretty(&DiagramFile::from_diagram(d))?)
}
