//! Dataset construction: Kd labelling, negative sampling, splits and
//! train-set balancing. Every operation is a pure function of its inputs
//! and seed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{Interaction, Split};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdUnits {
    /// Affinity column holds raw Kd in nM.
    #[default]
    Nanomolar,
    /// Affinity column holds pKd (−log10 M); converted to nM before the test.
    PScale,
}

pub const DEFAULT_KD_THRESHOLD_NM: f64 = 30.0;

/// `label = Kd < threshold` (strict), affinity kept. Records without an
/// affinity are reported together.
pub fn label_by_kd(records: &[Interaction], threshold_nm: f64, units: KdUnits) -> Result<Vec<Interaction>> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.affinity.is_none())
        .map(|r| format!("{}|{}", r.drug_id, r.target_id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format(format!(
            "records without affinity: {}",
            missing.join(", ")
        )));
    }
    Ok(records
        .iter()
        .map(|r| {
            let a = r.affinity.expect("checked above");
            let kd = match units {
                KdUnits::Nanomolar => a,
                KdUnits::PScale => 10f64.powf(9.0 - a),
            };
            Interaction {
                label: Some(kd < threshold_nm),
                ..r.clone()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegStrategy {
    RandomPair,
    /// Drug of a positive paired with a target whose pocket is dissimilar
    /// to the positive's pocket.
    PocketDissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegSampleSpec {
    pub strategy: NegStrategy,
    /// Negatives per positive.
    pub ratio: f64,
    /// Minimum `1 − similarity` for pocket-dissimilar negatives.
    pub threshold: f64,
}

impl Default for NegSampleSpec {
    fn default() -> Self {
        Self {
            strategy: NegStrategy::RandomPair,
            ratio: 1.0,
            threshold: 0.7,
        }
    }
}

/// Symmetric pocket similarity scores in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityTable {
    scores: HashMap<(String, String), f64>,
}

impl SimilarityTable {
    pub fn insert(&mut self, a: &str, b: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Format(format!("similarity {a}/{b} = {score} outside [0, 1]")));
        }
        self.scores.insert(Self::key(a, b), score);
        Ok(())
    }

    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.into(), b.into())
        } else {
            (b.into(), a.into())
        }
    }

    /// A pocket is fully similar to itself; unlisted pairs are unknown.
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(1.0);
        }
        self.scores.get(&Self::key(a, b)).copied()
    }

    pub fn dissimilarity(&self, a: &str, b: &str) -> Option<f64> {
        self.similarity(a, b).map(|s| 1.0 - s)
    }

    /// Reads `pocket_a pocket_b score`.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Empty("similarity table has no header".into()))??;
        let header: Vec<&str> = header.split('\t').map(str::trim).collect();
        let col = |n: &str| {
            header
                .iter()
                .position(|h| *h == n)
                .ok_or_else(|| Error::MissingColumn(n.into()))
        };
        let (a, b, s) = (col("pocket_a")?, col("pocket_b")?, col("score")?);
        let mut t = Self::default();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            let field = |i: usize| {
                f.get(i)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("row {}: short row", n + 2)))
            };
            let score = field(s)?
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: bad score", n + 2)))?;
            t.insert(field(a)?, field(b)?, score)?;
        }
        Ok(t)
    }
}

/// Entities negatives may be drawn from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pool {
    pub drugs: Vec<String>,
    /// `(target id, pocket id)`.
    pub targets: Vec<(String, Option<String>)>,
}

impl Pool {
    /// Distinct drugs and targets of `records`, sorted by id.
    pub fn from_records(records: &[Interaction]) -> Self {
        let drugs: BTreeSet<&str> = records.iter().map(|r| r.drug_id.as_str()).collect();
        let targets: BTreeMap<&str, Option<&str>> = records
            .iter()
            .map(|r| (r.target_id.as_str(), r.pocket_id.as_deref()))
            .collect();
        Self {
            drugs: drugs.into_iter().map(str::to_string).collect(),
            targets: targets
                .into_iter()
                .map(|(t, p)| (t.to_string(), p.map(str::to_string)))
                .collect(),
        }
    }
}

pub type PairSet = HashSet<(String, String)>;

pub fn positive_pairs(records: &[Interaction]) -> PairSet {
    records
        .iter()
        .filter(|r| r.label == Some(true))
        .map(|r| (r.drug_id.clone(), r.target_id.clone()))
        .collect()
}

/// Draws `round(ratio · |positives|)` negatives from `pool`, never hitting a
/// pair in `known_positives` or repeating one. Gives up after `100 · count`
/// draws.
pub fn sample_negatives(
    positives: &[Interaction],
    known_positives: &PairSet,
    pool: &Pool,
    spec: &NegSampleSpec,
    similarity: Option<&SimilarityTable>,
    seed: u64,
) -> Result<Vec<Interaction>> {
    if !(spec.ratio > 0.0) || !spec.ratio.is_finite() {
        return Err(Error::Config("negative ratio must be positive".into()));
    }
    if positives.is_empty() {
        return Err(Error::Empty("no positives to sample negatives for".into()));
    }
    if pool.drugs.is_empty() || pool.targets.is_empty() {
        return Err(Error::Empty("empty negative pool".into()));
    }
    let count = (spec.ratio * positives.len() as f64).round() as usize;
    let common_split = {
        let s = positives[0].split;
        positives.iter().all(|r| r.split == s).then_some(s).unwrap_or_default()
    };
    let sim = match spec.strategy {
        NegStrategy::RandomPair => None,
        NegStrategy::PocketDissimilar => {
            let sim = similarity.ok_or_else(|| Error::Config("pocket_dissimilar needs a similarity table".into()))?;
            if positives.iter().any(|r| r.pocket_id.is_none()) || pool.targets.iter().any(|t| t.1.is_none()) {
                return Err(Error::Config(
                    "pocket_dissimilar needs pocket ids on every record".into(),
                ));
            }
            Some(sim)
        }
    };

    let mut rng = seed::rng(seed, 0);
    let mut taken: HashSet<(String, String)> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = 100 * count.max(1);
    let mut draws = 0;
    while out.len() < count {
        if draws == budget {
            return Err(Error::Infeasible(format!(
                "only {} of {count} negatives found in {budget} draws",
                out.len()
            )));
        }
        draws += 1;
        let (target, pocket) = &pool.targets[rng.random_range(0..pool.targets.len())];
        let (drug, split) = match sim {
            None => (&pool.drugs[rng.random_range(0..pool.drugs.len())], common_split),
            Some(sim) => {
                let anchor = &positives[out.len() % positives.len()];
                let (a, b) = (
                    anchor.pocket_id.as_deref().expect("checked"),
                    pocket.as_deref().expect("checked"),
                );
                match sim.dissimilarity(a, b) {
                    Some(d) if d >= spec.threshold => (&anchor.drug_id, anchor.split),
                    _ => continue,
                }
            }
        };
        let pair = (drug.clone(), target.clone());
        if known_positives.contains(&pair) || taken.contains(&pair) {
            continue;
        }
        taken.insert(pair);
        out.push(Interaction {
            drug_id: drug.clone(),
            target_id: target.clone(),
            pocket_id: pocket.clone(),
            label: Some(false),
            affinity: None,
            split,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Random,
    UnseenDrug,
    UnseenTarget,
    ExternalTag,
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Self::Random,
            "unseen_drug" => Self::UnseenDrug,
            "unseen_target" => Self::UnseenTarget,
            "external_tag" => Self::ExternalTag,
            other => return Err(Error::Usage(format!("unknown split strategy '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    /// Train, valid, test.
    pub fractions: [f64; 3],
    pub seed: u64,
    pub balance_train: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            strategy: SplitStrategy::Random,
            fractions: [0.7, 0.1, 0.2],
            seed: 0,
            balance_train: false,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| !(f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.fractions
            )));
        }
        Ok(())
    }
}

/// Partition sizes `round(f_train·n)`, `round(f_valid·n)`, remainder.
fn sizes(n: usize, f: [f64; 3]) -> [usize; 3] {
    let train = ((f[0] * n as f64).round() as usize).min(n);
    let valid = ((f[1] * n as f64).round() as usize).min(n - train);
    [train, valid, n - train - valid]
}

/// Shuffles the distinct keys and tags them train/valid/test by `fractions`.
fn assign<'a>(keys: BTreeSet<&'a str>, f: [f64; 3], seed: u64) -> HashMap<&'a str, Split> {
    let mut keys: Vec<&str> = keys.into_iter().collect();
    keys.shuffle(&mut seed::rng(seed, 1));
    let [train, valid, _] = sizes(keys.len(), f);
    keys.into_iter()
        .enumerate()
        .map(|(i, k)| {
            let s = if i < train {
                Split::Train
            } else if i < train + valid {
                Split::Valid
            } else {
                Split::Test
            };
            (k, s)
        })
        .collect()
}

/// Tags records by `spec`; random splits assign whole (drug, target) pairs
/// so duplicates never straddle partitions.
pub fn split(records: &[Interaction], spec: &SplitSpec) -> Result<Vec<Interaction>> {
    spec.validate()?;
    let pair_key = |r: &Interaction| format!("{}\u{1f}{}", r.drug_id, r.target_id);
    let mut out = records.to_vec();
    match spec.strategy {
        SplitStrategy::ExternalTag => {
            if let Some(r) = records.iter().find(|r| r.split == Split::Unassigned) {
                return Err(Error::Usage(format!(
                    "external_tag split but ({}, {}) is untagged",
                    r.drug_id, r.target_id
                )));
            }
        }
        SplitStrategy::Random => {
            let keys: Vec<String> = records.iter().map(pair_key).collect();
            let tags = assign(keys.iter().map(String::as_str).collect(), spec.fractions, spec.seed);
            for (r, k) in out.iter_mut().zip(&keys) {
                r.split = tags[k.as_str()];
            }
        }
        SplitStrategy::UnseenDrug | SplitStrategy::UnseenTarget => {
            let by_drug = spec.strategy == SplitStrategy::UnseenDrug;
            let key = |r: &Interaction| {
                if by_drug {
                    r.drug_id.clone()
                } else {
                    r.target_id.clone()
                }
            };
            let keys: Vec<String> = records.iter().map(key).collect();
            let tags = assign(keys.iter().map(String::as_str).collect(), spec.fractions, spec.seed);
            for (r, k) in out.iter_mut().zip(&keys) {
                r.split = tags[k.as_str()];
            }
        }
    }
    for s in [Split::Train, Split::Valid, Split::Test] {
        if !out.iter().any(|r| r.split == s) {
            return Err(Error::Empty(format!("{s} partition is empty")));
        }
    }
    if spec.balance_train {
        out = balance_train(&out, spec.seed)?;
    }
    Ok(out)
}

/// Subsamples the majority class of the train partition to the minority
/// size; other partitions and record order are untouched.
pub fn balance_train(records: &[Interaction], seed: u64) -> Result<Vec<Interaction>> {
    let train: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(Error::Empty("no train records to balance".into()));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in &train {
        match records[i].label {
            Some(true) => pos.push(i),
            Some(false) => neg.push(i),
            None => {
                return Err(Error::Format(format!(
                    "train record ({}, {}) has no label",
                    records[i].drug_id, records[i].target_id
                )))
            }
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("train partition lacks one class".into()));
    }
    let (major, minor) = if pos.len() > neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = seed::rng(seed, 2);
    let keep: HashSet<usize> = sample(&mut rng, major.len(), minor.len())
        .into_iter()
        .map(|j| major[j])
        .chain(minor.iter().copied())
        .collect();
    Ok(records
        .iter()
        .enumerate()
        .filter(|(i, r)| r.split != Split::Train || keep.contains(i))
        .map(|(_, r)| r.clone())
        .collect())
}

pub fn partition(records: &[Interaction], split: Split) -> Vec<Interaction> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}
