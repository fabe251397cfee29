//! Virtual-screening analytics: ranking criteria, active alignment,
//! enrichment budgets and reliability filtering.

mod budget;
mod report;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use budget::{
    active_ranks, ef_at_k, kpct_actives_budget, random_baseline, recall_at_k, target_count, top_fraction_recall,
    topk_potency_budget, BaselineRow,
};
pub use report::{
    census, enrichment_report, filter_unfamiliar, CensusRow, EnrichmentReport, MethodReport, RandomColumn,
    DEFAULT_K_GRID,
};

/// One row of the score ingestion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub compound_id: String,
    pub method: String,
    /// Absent when the method produced no score (e.g. docking failed).
    pub score: Option<f64>,
    pub label: Option<bool>,
    pub confidence: Option<f64>,
    pub unfamiliarity: Option<f64>,
    pub potency: Option<f64>,
}

impl ScoreRow {
    pub fn new(compound_id: &str, method: &str, score: f64) -> Self {
        Self {
            compound_id: compound_id.into(),
            method: method.into(),
            score: Some(score),
            label: None,
            confidence: None,
            unfamiliarity: None,
            potency: None,
        }
    }
}

pub const SCORE_COLUMNS: [&str; 7] = [
    "compound_id",
    "method",
    "score",
    "label",
    "confidence",
    "unfamiliarity",
    "potency",
];

fn parse_opt(s: Option<&str>, what: &str, row: usize) -> Result<Option<f64>> {
    match s.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .map(Some)
            .ok_or_else(|| Error::Format(format!("row {row}: bad {what} '{v}'"))),
    }
}

/// Reads `compound_id method score [label] [confidence] [unfamiliarity] [potency]`.
pub fn read_scores<R: BufRead>(r: R) -> Result<Vec<ScoreRow>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Empty("score table has no header".into()))??;
    let header: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (id, method, score) = (need("compound_id")?, need("method")?, need("score")?);
    let (label, conf, unf, pot) = (col("label"), col("confidence"), col("unfamiliarity"), col("potency"));
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = n + 2;
        let f: Vec<&str> = line.split('\t').collect();
        let get = |i: Option<usize>| i.and_then(|i| f.get(i).copied());
        let text = |i: usize, what: &str| {
            get(Some(i))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("row {row}: empty {what}")))
        };
        let label = match get(label).map(str::trim) {
            None | Some("") => None,
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(other) => return Err(Error::Format(format!("row {row}: label '{other}' is not 0/1"))),
        };
        out.push(ScoreRow {
            compound_id: text(id, "compound_id")?,
            method: text(method, "method")?,
            score: parse_opt(get(Some(score)), "score", row)?,
            label,
            confidence: parse_opt(get(conf), "confidence", row)?,
            unfamiliarity: parse_opt(get(unf), "unfamiliarity", row)?,
            potency: parse_opt(get(pot), "potency", row)?,
        });
    }
    Ok(out)
}

pub fn write_scores<W: Write>(rows: &[ScoreRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", SCORE_COLUMNS.join("\t"))?;
    let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.compound_id,
            r.method,
            num(r.score),
            r.label.map_or("", |l| if l { "1" } else { "0" }),
            num(r.confidence),
            num(r.unfamiliarity),
            num(r.potency)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by method, keeping first-seen method order.
pub fn by_method(rows: &[ScoreRow]) -> Vec<(String, Vec<ScoreRow>)> {
    let mut order: Vec<(String, Vec<ScoreRow>)> = Vec::new();
    for r in rows {
        match order.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, v)) => v.push(r.clone()),
            None => order.push((r.method.clone(), vec![r.clone()])),
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankCriterion {
    /// Most negative score first.
    DockingScoreAsc,
    /// Lowest score first.
    AffinityAsc,
    /// Predicted positives first, then confidence ascending.
    TwoKey,
}

impl RankCriterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DockingScoreAsc => "docking",
            Self::AffinityAsc => "affinity",
            Self::TwoKey => "two_key",
        }
    }
}

impl fmt::Display for RankCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "docking" | "docking_score_asc" => Self::DockingScoreAsc,
            "affinity" | "affinity_asc" => Self::AffinityAsc,
            "two_key" | "two_key_label_then_confidence" => Self::TwoKey,
            other => return Err(Error::Usage(format!("unknown ranking '{other}'"))),
        })
    }
}

/// Sort key; smaller ranks earlier.
#[derive(Debug, Clone, PartialEq)]
struct RankKey {
    group: u8,
    value: f64,
    id: String,
}

impl Eq for RankKey {}

impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.group
            .cmp(&other.group)
            .then(self.value.total_cmp(&other.value))
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Score-based criteria put unscored compounds after all scored ones.
fn key(row: &ScoreRow, criterion: RankCriterion) -> Result<RankKey> {
    let (group, value) = match criterion {
        RankCriterion::DockingScoreAsc | RankCriterion::AffinityAsc => match row.score {
            Some(s) => (0, s),
            None => (1, 0.0),
        },
        RankCriterion::TwoKey => {
            let label = row.label.ok_or_else(|| Error::MissingColumn("label".into()))?;
            let conf = row
                .confidence
                .ok_or_else(|| Error::MissingColumn("confidence".into()))?;
            (u8::from(!label), conf)
        }
    };
    Ok(RankKey {
        group,
        value,
        id: row.compound_id.clone(),
    })
}

/// Total order of compound ids under one criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedLibrary {
    pub criterion: RankCriterion,
    pub ids: Vec<String>,
}

impl RankedLibrary {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn write_tsv<W: Write>(&self, method: &str, w: W) -> Result<()> {
        write_ranked(&[(method.to_string(), self.clone())], w)
    }
}

pub const RANKED_COLUMNS: [&str; 4] = ["rank", "compound_id", "method", "criterion"];

/// One block per method, ranks 1-based.
pub fn write_ranked<W: Write>(libraries: &[(String, RankedLibrary)], mut w: W) -> Result<()> {
    writeln!(w, "{}", RANKED_COLUMNS.join("\t"))?;
    for (method, lib) in libraries {
        for (i, id) in lib.ids.iter().enumerate() {
            writeln!(w, "{}\t{id}\t{method}\t{}", i + 1, lib.criterion)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_ranked`]; methods keep their first-appearance order
/// and each must list ranks `1..=N` in sequence under one criterion.
pub fn read_ranked<R: BufRead>(r: R) -> Result<Vec<(String, RankedLibrary)>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Empty("ranked table has no header".into()))??;
    let header: Vec<&str> = header.split('\t').map(str::trim).collect();
    let pos: Vec<usize> = RANKED_COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::MissingColumn(c.to_string()))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<(String, RankedLibrary)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        let bad = |what: &str| Error::Format(format!("ranked row {}: {what}", n + 2));
        let get = |i: usize| f.get(pos[i]).copied().ok_or_else(|| bad("short row"));
        let rank: usize = get(0)?.parse().map_err(|_| bad("bad rank"))?;
        let (id, method) = (get(1)?, get(2)?);
        let criterion: RankCriterion = get(3)?.parse()?;
        let i = match out.iter().position(|(m, _)| m == method) {
            Some(i) => i,
            None => {
                out.push((
                    method.to_string(),
                    RankedLibrary {
                        criterion,
                        ids: Vec::new(),
                    },
                ));
                out.len() - 1
            }
        };
        let lib = &mut out[i].1;
        if lib.criterion != criterion || rank != lib.ids.len() + 1 {
            return Err(bad("ranks must run 1..N under one criterion per method"));
        }
        lib.ids.push(id.to_string());
    }
    for (_, lib) in &out {
        check_unique(lib.ids.iter().map(String::as_str))?;
    }
    Ok(out)
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Format(format!("compound '{id}' scored twice by one method")));
        }
    }
    Ok(())
}

fn keyed(rows: &[ScoreRow], criterion: RankCriterion) -> Result<Vec<RankKey>> {
    let mut keys = rows.iter().map(|r| key(r, criterion)).collect::<Result<Vec<_>>>()?;
    keys.sort_unstable();
    Ok(keys)
}

pub fn rank(rows: &[ScoreRow], criterion: RankCriterion) -> Result<RankedLibrary> {
    if rows.is_empty() {
        return Err(Error::Empty("nothing to rank".into()));
    }
    check_unique(rows.iter().map(|r| r.compound_id.as_str()))?;
    Ok(RankedLibrary {
        criterion,
        ids: keyed(rows, criterion)?.into_iter().map(|k| k.id).collect(),
    })
}

/// Ranks shards concurrently and k-way merges them; identical to ranking
/// the concatenation.
pub fn rank_sharded(shards: &[Vec<ScoreRow>], criterion: RankCriterion) -> Result<RankedLibrary> {
    let sorted: Vec<Vec<RankKey>> = shards.par_iter().map(|s| keyed(s, criterion)).collect::<Result<_>>()?;
    let total: usize = sorted.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Empty("nothing to rank".into()));
    }
    let mut iters: Vec<_> = sorted.into_iter().map(Vec::into_iter).collect();
    let mut heap = BinaryHeap::new();
    for (s, it) in iters.iter_mut().enumerate() {
        if let Some(k) = it.next() {
            heap.push(std::cmp::Reverse((k, s)));
        }
    }
    let mut ids: Vec<String> = Vec::with_capacity(total);
    while let Some(std::cmp::Reverse((k, s))) = heap.pop() {
        ids.push(k.id);
        if let Some(next) = iters[s].next() {
            heap.push(std::cmp::Reverse((next, s)));
        }
    }
    check_unique(ids.iter().map(String::as_str))?;
    Ok(RankedLibrary { criterion, ids })
}

/// Active compounds with optional potency (higher = more potent).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub potency: BTreeMap<String, Option<f64>>,
}

impl ActiveSet {
    pub fn from_ids<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        Self {
            potency: ids.into_iter().map(|i| (i.into(), None)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.potency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potency.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.potency.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.potency.keys().map(String::as_str)
    }

    /// Restricted to ids in `keep`.
    pub fn restrict(&self, keep: &BTreeSet<String>) -> Self {
        Self {
            potency: self
                .potency
                .iter()
                .filter(|(k, _)| keep.contains(*k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Reads `compound_id [potency]`.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Empty("actives table has no header".into()))??;
        let header: Vec<&str> = header.split('\t').map(str::trim).collect();
        let id = header
            .iter()
            .position(|h| *h == "compound_id")
            .ok_or_else(|| Error::MissingColumn("compound_id".into()))?;
        let pot = header.iter().position(|h| *h == "potency");
        let mut out = Self::default();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let cid = f
                .get(id)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Format(format!("row {}: empty compound_id", n + 2)))?;
            let p = parse_opt(pot.and_then(|p| f.get(p).copied()), "potency", n + 2)?;
            out.potency.insert(cid.to_string(), p);
        }
        Ok(out)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "compound_id\tpotency")?;
        for (id, p) in &self.potency {
            writeln!(w, "{id}\t{}", p.map(|p| p.to_string()).unwrap_or_default())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Intersection of per-method active sets; potency taken from the first set.
pub fn align_actives(sets: &[ActiveSet]) -> Result<ActiveSet> {
    let (first, rest) = sets
        .split_first()
        .ok_or_else(|| Error::Usage("align_actives needs at least one method".into()))?;
    let potency: BTreeMap<String, Option<f64>> = first
        .potency
        .iter()
        .filter(|(id, _)| rest.iter().all(|s| s.contains(id)))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    if potency.is_empty() {
        return Err(Error::Empty("no active shared by all methods".into()));
    }
    Ok(ActiveSet { potency })
}

/// The actives of `all` that appear in `library`.
pub fn actives_in(library: &RankedLibrary, all: &ActiveSet) -> ActiveSet {
    let ids: BTreeSet<String> = library.ids.iter().filter(|id| all.contains(id)).cloned().collect();
    all.restrict(&ids)
}
