//! Embedding stores, interaction tables and synthetic fixtures.

mod format;
mod synth;
mod tables;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::nn::Tensor2;
use crate::scalar::Scalar;

pub use format::{
    load_embeddings, read_binary, read_jsonl, save_embeddings, write_binary, write_jsonl, BinaryReader,
    EmbeddingFormat, BINARY_MAGIC,
};
pub use synth::{gen_synthetic, SynthConfig, SynthData};
pub use tables::{
    check_ids, read_interactions, read_smiles, smiles_map, validate_interactions, write_interactions, write_smiles,
    Interaction, SmilesRecord, Split, INTERACTION_COLUMNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Drug,
    Protein,
    Pocket,
    Peptide,
    Rna,
}

impl Modality {
    pub const ALL: [Modality; 5] = [Self::Drug, Self::Protein, Self::Pocket, Self::Peptide, Self::Rna];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Drug => "drug",
            Self::Protein => "protein",
            Self::Pocket => "pocket",
            Self::Peptide => "peptide",
            Self::Rna => "rna",
        }
    }

    /// Ligand-like modalities share the drug encoder.
    pub fn is_ligand(self) -> bool {
        matches!(self, Self::Drug | Self::Peptide | Self::Rna)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown modality '{s}'")))
    }
}

/// Fixed-width vectors of one modality, keyed by id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    modality: Modality,
    width: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            width: 0,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Zero while empty; fixed by the first record.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vec.is_empty() {
            return Err(Error::Format(format!("{} '{id}': empty vector", self.modality)));
        }
        if self.ids.is_empty() {
            self.width = vec.len();
        } else if vec.len() != self.width {
            return Err(Error::Format(format!(
                "{} '{id}': width {} does not match store width {}",
                self.modality,
                vec.len(),
                self.width
            )));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("{} '{id}': non-finite entry", self.modality)));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Format(format!("{} '{id}': duplicate id", self.modality)));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend(vec);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Ids not present in the store, in first-seen order without repeats.
    pub fn missing<'a, I: IntoIterator<Item = &'a str>>(&self, ids: I) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        ids.into_iter()
            .filter(|id| !self.contains(id) && seen.insert(*id))
            .map(str::to_string)
            .collect()
    }

    /// Stacks the named vectors as columns (`width x ids.len()`).
    pub fn columns<T: Scalar>(&self, ids: &[&str]) -> Result<Tensor2<T>> {
        let missing = self.missing(ids.iter().copied());
        if !missing.is_empty() {
            return Err(Error::MissingIds(missing));
        }
        let mut out = Tensor2::zeros(self.width, ids.len());
        for (c, id) in ids.iter().enumerate() {
            let v = self.get(id).expect("checked above");
            for (r, &x) in v.iter().enumerate() {
                out.set(r, c, T::lit(x));
            }
        }
        Ok(out)
    }
}

/// Writes each vector of `store` passed through its encoder branch as TSV
/// `id f0 f1 ...`. Ligand modalities use the drug branch, proteins the
/// protein branch alone, pockets the pocket branch.
pub fn export_projections<T: Scalar>(model: &ModelState<T>, store: &EmbeddingStore, path: &Path) -> Result<usize> {
    let rows = project(model, store)?;
    let width = rows.first().map_or(model.config.output_dim, |(_, v)| v.len());
    let mut out = String::from("id");
    for i in 0..width {
        out.push_str(&format!("\tf{i}"));
    }
    out.push('\n');
    for (id, v) in &rows {
        out.push_str(id);
        for x in v {
            out.push('\t');
            out.push_str(&x.as_f64().to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(width)
}

pub fn project<T: Scalar>(model: &ModelState<T>, store: &EmbeddingStore) -> Result<Vec<(String, Vec<T>)>> {
    store
        .iter()
        .map(|(id, v)| {
            let x: Vec<T> = v.iter().map(|&x| T::lit(x)).collect();
            let p = match store.modality() {
                m if m.is_ligand() => model.encode_drug(&x)?,
                Modality::Protein => model.encode_protein_only(&x)?,
                _ => model.encode_pocket_only(&x)?,
            };
            Ok((id.to_string(), p))
        })
        .collect()
}

/// Parses a projection TSV back into `(id, vector)` rows.
pub fn read_projections(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty projection file".into()))?;
    let width = header.split('\t').count() - 1;
    lines
        .map(|line| {
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let v = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Format(format!("'{id}': bad number '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != width {
                return Err(Error::Format(format!("'{id}': {} values, header has {width}", v.len())));
            }
            Ok((id, v))
        })
        .collect()
}
