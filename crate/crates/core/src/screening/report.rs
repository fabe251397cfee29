//! Reliability filtering, census and the enrichment report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::budget::{
    ef_at_k, kpct_actives_budget, random_baseline, recall_at_k, target_count, top_fraction_recall, topk_potency_budget,
    BaselineRow,
};
use super::{actives_in, align_actives, ActiveSet, RankCriterion, RankedLibrary, ScoreRow};
use crate::error::{Error, Result};

pub const DEFAULT_K_GRID: [f64; 5] = [1.0, 5.0, 20.0, 50.0, 100.0];

/// Per-compound unfamiliarity: the first value seen across methods.
fn unfamiliarity_by_compound(rows: &[ScoreRow]) -> Result<BTreeMap<&str, f64>> {
    let mut u = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.unfamiliarity {
            u.entry(r.compound_id.as_str()).or_insert(v);
        }
    }
    if let Some(r) = rows.iter().find(|r| !u.contains_key(r.compound_id.as_str())) {
        return Err(Error::MissingColumn(format!("unfamiliarity of '{}'", r.compound_id)));
    }
    Ok(u)
}

/// Keeps rows of compounds with `U < threshold`; the compound's value is
/// taken from whichever method row carries it.
pub fn filter_unfamiliar(rows: &[ScoreRow], threshold: f64) -> Result<Vec<ScoreRow>> {
    let u = unfamiliarity_by_compound(rows)?;
    Ok(rows
        .iter()
        .filter(|r| u[r.compound_id.as_str()] < threshold)
        .cloned()
        .collect())
}

/// Compound counts of one population through the two reliability filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRow {
    pub population: String,
    pub total: usize,
    /// Compounds with a docking score.
    pub docked: usize,
    /// Docked compounds that also pass `U < threshold`.
    pub unf_below: usize,
}

/// With `docking_method = None` any scored row counts as docked.
pub fn census(population: &str, rows: &[ScoreRow], docking_method: Option<&str>, threshold: f64) -> Result<CensusRow> {
    let u = unfamiliarity_by_compound(rows)?;
    let all: BTreeSet<&str> = rows.iter().map(|r| r.compound_id.as_str()).collect();
    let docked: BTreeSet<&str> = rows
        .iter()
        .filter(|r| r.score.is_some() && docking_method.is_none_or(|m| r.method == m))
        .map(|r| r.compound_id.as_str())
        .collect();
    Ok(CensusRow {
        population: population.into(),
        total: all.len(),
        docked: docked.len(),
        unf_below: docked.iter().filter(|id| u[*id] < threshold).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub criterion: RankCriterion,
    pub n: usize,
    /// `k%` actives-recovered budgets, percent of library.
    pub ar: Vec<f64>,
    /// Top-potency budgets; absent when any aligned active lacks potency.
    pub topk: Option<Vec<f64>>,
    /// Percent of actives inside the top `k%` of the library.
    pub top_fraction_recall: Vec<f64>,
    /// Compound cutoffs `ceil(k% · N)` used for recall and EF.
    pub cutoffs: Vec<usize>,
    pub recall: Vec<f64>,
    pub ef: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomColumn {
    pub n: usize,
    pub a: usize,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<BaselineRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentReport {
    pub k_grid: Vec<f64>,
    /// Actives shared by every method's library.
    pub actives: Vec<String>,
    pub methods: Vec<MethodReport>,
    pub random: RandomColumn,
}

/// Full table over `k_grid` for every ranked method against the aligned
/// actives. The random column uses the first method's library size.
pub fn enrichment_report(
    methods: &[(String, RankedLibrary)],
    actives: &ActiveSet,
    k_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<EnrichmentReport> {
    if methods.is_empty() {
        return Err(Error::Usage("enrichment_report needs at least one method".into()));
    }
    if k_grid.is_empty() {
        return Err(Error::Usage("empty k grid".into()));
    }
    let per_method: Vec<ActiveSet> = methods.iter().map(|(_, lib)| actives_in(lib, actives)).collect();
    let aligned = align_actives(&per_method)?;
    let has_potency = aligned.potency.values().all(Option::is_some);

    let mut reports = Vec::with_capacity(methods.len());
    for (name, lib) in methods {
        let cutoffs: Vec<usize> = k_grid.iter().map(|&k| target_count(k, lib.n())).collect();
        reports.push(MethodReport {
            method: name.clone(),
            criterion: lib.criterion,
            n: lib.n(),
            ar: k_grid
                .iter()
                .map(|&k| kpct_actives_budget(lib, &aligned, k))
                .collect::<Result<_>>()?,
            topk: if has_potency {
                Some(
                    k_grid
                        .iter()
                        .map(|&k| topk_potency_budget(lib, &aligned, k))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            },
            top_fraction_recall: k_grid
                .iter()
                .map(|&k| top_fraction_recall(lib, &aligned, k))
                .collect::<Result<_>>()?,
            recall: cutoffs
                .iter()
                .map(|&c| recall_at_k(lib, &aligned, c))
                .collect::<Result<_>>()?,
            ef: cutoffs
                .iter()
                .map(|&c| ef_at_k(lib, &aligned, c))
                .collect::<Result<_>>()?,
            cutoffs,
        });
    }
    let n = methods[0].1.n();
    Ok(EnrichmentReport {
        k_grid: k_grid.to_vec(),
        actives: aligned.ids().map(str::to_string).collect(),
        random: RandomColumn {
            n,
            a: aligned.len(),
            trials,
            seed,
            rows: random_baseline(n, aligned.len(), k_grid, trials, seed)?,
        },
        methods: reports,
    })
}

impl EnrichmentReport {
    /// One row per (view, k), one column per method plus `Random`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("view\tk_percent");
        for m in &self.methods {
            let _ = write!(out, "\t{}", m.method);
        }
        out.push_str("\tRandom\n");
        let fmt = |v: f64| format!("{v:.2}");
        type Cell<'a> = Box<dyn Fn(&MethodReport, usize) -> Option<f64> + 'a>;
        let views: [(&str, Cell, Box<dyn Fn(usize) -> f64>); 5] = [
            (
                "ar",
                Box::new(|m, i| Some(m.ar[i])),
                Box::new(|i| self.random.rows[i].ar_mean),
            ),
            (
                "topk",
                Box::new(|m, i| m.topk.as_ref().map(|t| t[i])),
                Box::new(|i| self.random.rows[i].topk_mean),
            ),
            (
                "top_fraction_recall",
                Box::new(|m, i| Some(m.top_fraction_recall[i])),
                Box::new(|i| self.k_grid[i]),
            ),
            (
                "recall",
                Box::new(|m, i| Some(m.recall[i])),
                Box::new(|i| self.k_grid[i] / 100.0),
            ),
            ("ef", Box::new(|m, i| Some(m.ef[i])), Box::new(|_| 1.0)),
        ];
        for (view, cell, random) in &views {
            for (i, k) in self.k_grid.iter().enumerate() {
                let _ = write!(out, "{view}\t{k}");
                for m in &self.methods {
                    let _ = write!(out, "\t{}", cell(m, i).map_or("NA".to_string(), fmt));
                }
                let _ = writeln!(out, "\t{}", fmt(random(i)));
            }
        }
        out
    }
}
