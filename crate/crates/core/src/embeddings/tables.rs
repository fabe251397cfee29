//! Tab-separated interaction and SMILES tables. Empty field = absent.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EmbeddingStore;
use crate::error::{Error, Result};
use crate::model::Mode;

pub const INTERACTION_COLUMNS: [&str; 6] = ["drug_id", "target_id", "pocket_id", "label", "affinity", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
            Self::Unassigned => "",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Self::Train,
            "valid" | "val" | "validation" => Self::Valid,
            "test" => Self::Test,
            "" | "unassigned" => Self::Unassigned,
            other => return Err(Error::Format(format!("unknown split tag '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub drug_id: String,
    pub target_id: String,
    pub pocket_id: Option<String>,
    pub label: Option<bool>,
    /// p-scale (−log10 molar) unless the caller declares otherwise.
    pub affinity: Option<f64>,
    pub split: Split,
}

impl Interaction {
    pub fn labelled(drug: &str, target: &str, label: bool) -> Self {
        Self {
            drug_id: drug.into(),
            target_id: target.into(),
            pocket_id: None,
            label: Some(label),
            affinity: None,
            split: Split::Unassigned,
        }
    }

    pub fn pair(&self) -> (&str, &str) {
        (&self.drug_id, &self.target_id)
    }
}

fn column(header: &[&str], name: &str) -> Option<usize> {
    header.iter().position(|h| *h == name)
}

fn opt(s: &str) -> Option<&str> {
    let s = s.trim();
    (!s.is_empty()).then_some(s)
}

/// `drug_id` and `target_id` are required, as is one of `label` /
/// `affinity`; other columns may be omitted and extra columns are ignored.
pub fn read_interactions<R: BufRead>(r: R) -> Result<Vec<Interaction>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Empty("interaction table has no header".into()))??;
    let header: Vec<&str> = header.split('\t').map(str::trim).collect();
    let need = |name: &str| column(&header, name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let drug = need("drug_id")?;
    let target = need("target_id")?;
    let pocket = column(&header, "pocket_id");
    let label = column(&header, "label");
    let affinity = column(&header, "affinity");
    let split = column(&header, "split");
    if label.is_none() && affinity.is_none() {
        return Err(Error::MissingColumn("label|affinity".into()));
    }

    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let row = n + 2;
        let get = |i: Option<usize>| i.and_then(|i| f.get(i).copied()).and_then(opt);
        let id = |i: usize, what: &str| {
            get(Some(i))
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("row {row}: empty {what}")))
        };
        let label = match get(label) {
            None => None,
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(other) => return Err(Error::Format(format!("row {row}: label '{other}' is not 0/1"))),
        };
        let affinity = match get(affinity) {
            None => None,
            Some(a) => Some(
                a.parse::<f64>()
                    .ok()
                    .filter(|a| a.is_finite())
                    .ok_or_else(|| Error::Format(format!("row {row}: bad affinity '{a}'")))?,
            ),
        };
        out.push(Interaction {
            drug_id: id(drug, "drug_id")?,
            target_id: id(target, "target_id")?,
            pocket_id: get(pocket).map(str::to_string),
            label,
            affinity,
            split: get(split).unwrap_or("").parse()?,
        });
    }
    Ok(out)
}

pub fn write_interactions<W: Write>(records: &[Interaction], mut w: W) -> Result<()> {
    writeln!(w, "{}", INTERACTION_COLUMNS.join("\t"))?;
    for r in records {
        let label = r.label.map_or("", |l| if l { "1" } else { "0" });
        let affinity = r.affinity.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.drug_id,
            r.target_id,
            r.pocket_id.as_deref().unwrap_or(""),
            label,
            affinity,
            r.split
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Every referenced id must resolve, and every record must carry the value
/// the mode trains on. Missing ids are reported together.
pub fn validate_interactions(
    records: &[Interaction],
    mode: Mode,
    drugs: &EmbeddingStore,
    targets: &EmbeddingStore,
    pockets: Option<&EmbeddingStore>,
) -> Result<()> {
    check_ids(records, drugs, targets, pockets)?;
    for r in records {
        let ok = match mode {
            Mode::Classification => r.label.is_some(),
            Mode::Regression => r.affinity.is_some(),
        };
        if !ok {
            let what = if mode == Mode::Classification {
                "label"
            } else {
                "affinity"
            };
            return Err(Error::Format(format!(
                "pair ({}, {}) has no {what}",
                r.drug_id, r.target_id
            )));
        }
    }
    Ok(())
}

/// Every id of `records` resolves in its store; unresolved ids are listed
/// as `drug:`, `target:` or `pocket:` entries.
pub fn check_ids(
    records: &[Interaction],
    drugs: &EmbeddingStore,
    targets: &EmbeddingStore,
    pockets: Option<&EmbeddingStore>,
) -> Result<()> {
    let mut missing: Vec<String> = drugs
        .missing(records.iter().map(|r| r.drug_id.as_str()))
        .into_iter()
        .map(|id| format!("drug:{id}"))
        .collect();
    missing.extend(
        targets
            .missing(records.iter().map(|r| r.target_id.as_str()))
            .into_iter()
            .map(|id| format!("target:{id}")),
    );
    if let Some(pockets) = pockets {
        for r in records {
            if r.pocket_id.is_none() {
                return Err(Error::Format(format!(
                    "pair ({}, {}) has no pocket_id but pockets are enabled",
                    r.drug_id, r.target_id
                )));
            }
        }
        missing.extend(
            pockets
                .missing(records.iter().filter_map(|r| r.pocket_id.as_deref()))
                .into_iter()
                .map(|id| format!("pocket:{id}")),
        );
    }
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmilesRecord {
    pub drug_id: String,
    pub smiles: String,
}

pub fn read_smiles<R: BufRead>(r: R) -> Result<Vec<SmilesRecord>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Empty("SMILES table has no header".into()))??;
    let header: Vec<&str> = header.split('\t').map(str::trim).collect();
    let drug = column(&header, "drug_id").ok_or_else(|| Error::MissingColumn("drug_id".into()))?;
    let smiles = column(&header, "smiles").ok_or_else(|| Error::MissingColumn("smiles".into()))?;
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match (f.get(drug).copied().and_then(opt), f.get(smiles).copied().and_then(opt)) {
            (Some(d), Some(s)) => out.push(SmilesRecord {
                drug_id: d.into(),
                smiles: s.into(),
            }),
            _ => return Err(Error::Format(format!("row {}: empty drug_id or smiles", n + 2))),
        }
    }
    Ok(out)
}

pub fn write_smiles<W: Write>(records: &[SmilesRecord], mut w: W) -> Result<()> {
    writeln!(w, "drug_id\tsmiles")?;
    for r in records {
        writeln!(w, "{}\t{}", r.drug_id, r.smiles)?;
    }
    w.flush()?;
    Ok(())
}

pub fn smiles_map(records: &[SmilesRecord]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.drug_id.clone(), r.smiles.clone()).is_some() {
            return Err(Error::Format(format!("duplicate SMILES for '{}'", r.drug_id)));
        }
    }
    Ok(map)
}
