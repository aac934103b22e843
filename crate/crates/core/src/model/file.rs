//! JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelInstance, OperatorTensor, Orbital, Space};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitalFile {
    id: usize,
    energy: f64,
    space: Space,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub bra: Vec<usize>,
    pub ket: Vec<usize>,
    pub value: f64,
}

/// One operator in entry form. Unless `antisymmetrized` is set the entries
/// are a plain kernel and get antisymmetrized on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorFile {
    pub rank: usize,
    pub entries: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub antisymmetrized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    orbitals: Vec<OrbitalFile>,
    valence_electrons: usize,
    #[serde(rename = "V")]
    v: Vec<TensorFile>,
    #[serde(rename = "O", default, skip_serializing_if = "Option::is_none")]
    o: Option<TensorFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

impl TensorFile {
    pub fn to_tensor(&self, n_orbitals: usize) -> Result<OperatorTensor<f64>> {
        if self.antisymmetrized {
            let mut t = OperatorTensor::zeros(self.rank, n_orbitals);
            for e in &self.entries {
                t.set(&e.bra, &e.ket, e.value)?;
            }
            Ok(t)
        } else {
            OperatorTensor::antisymmetrize(
                self.rank,
                n_orbitals,
                self.entries.iter().map(|e| (e.bra.clone(), e.ket.clone(), e.value)),
            )
        }
    }
}

/// Canonical entries of a tensor, flagged as already antisymmetrized.
pub fn tensor_to_entries(t: &OperatorTensor<f64>) -> TensorFile {
    TensorFile {
        rank: t.rank(),
        entries: t
            .entries()
            .map(|(b, k, value)| TensorEntry {
                bra: b.clone(),
                ket: k.clone(),
                value,
            })
            .collect(),
        antisymmetrized: true,
    }
}

pub fn model_from_json(text: &str) -> Result<ModelInstance<f64>> {
    let file: ModelFile = serde_json::from_str(text)?;
    let n = file.orbitals.len();
    let mut orbitals: Vec<Orbital<f64>> = file
        .orbitals
        .iter()
        .map(|o| Orbital {
            id: o.id,
            energy: o.energy,
            space: o.space,
        })
        .collect();
    orbitals.sort_by_key(|o| o.id);
    let perturbation = file.v.iter().map(|t| t.to_tensor(n)).collect::<Result<Vec<_>>>()?;
    let transition = match &file.o {
        Some(t) => t.to_tensor(n)?,
        None => OperatorTensor::zeros(1, n),
    };
    if perturbation.is_empty() {
        return Err(Error::InvalidModel("V must list at least one tensor".into()));
    }
    Ok(ModelInstance {
        orbitals,
        valence_electrons: file.valence_electrons,
        perturbation,
        transition,
        lambda: file.lambda.unwrap_or(1.0),
    })
}

pub fn model_to_json(m: &ModelInstance<f64>) -> Result<String> {
    let file = ModelFile {
        orbitals: m
            .orbitals
            .iter()
            .map(|o| OrbitalFile {
                id: o.id,
                energy: o.energy,
                space: o.space,
            })
            .collect(),
        valence_electrons: m.valence_electrons,
        v: m.perturbation.iter().map(tensor_to_entries).collect(),
        o: Some(tensor_to_entries(&m.transition)),
        lambda: Some(m.lambda),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelInstance<f64>> {
    let text = std::fs::read_to_string(path)?;
    model_from_json(&text)
}
