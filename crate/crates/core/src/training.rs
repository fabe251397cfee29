//! Mini-batch training with early stopping, multi-seed runs and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{check_ids, EmbeddingStore, Interaction, Split};
use crate::error::{Error, Result};
use crate::losses::{composite_objective, LossBreakdown, TrainBatch};
use crate::metrics::MetricBundle;
use crate::model::{tokenize, BatchInput, Mode, ModelConfig, ModelState, TokenSeq};
use crate::nn::{AdamConfig, AdamState, Tape, Tensor2};
use crate::scalar::{sigmoid, Scalar};
use crate::seed::{derive_seed, rng};

pub use crate::model::{load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMetric {
    Aupr,
    Pcc,
}

impl FromStr for EvalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aupr" => Ok(Self::Aupr),
            "pcc" => Ok(Self::Pcc),
            other => Err(Error::Usage(format!("unknown eval metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub eval_metric: EvalMetric,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Classification)
    }
}

impl TrainConfig {
    pub fn for_mode(mode: Mode) -> Self {
        let (lr, eval_metric) = match mode {
            Mode::Classification => (5e-5, EvalMetric::Aupr),
            Mode::Regression => (1e-4, EvalMetric::Pcc),
        };
        Self {
            lr,
            weight_decay: 1e-5,
            max_epochs: 1000,
            patience: 20,
            batch_size: 256,
            seeds: vec![0],
            eval_metric,
            mode,
        }
    }

    /// `lr = 0` is accepted so a run can be checked to leave parameters
    /// untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "patience, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let expected = match self.mode {
            Mode::Classification => EvalMetric::Aupr,
            Mode::Regression => EvalMetric::Pcc,
        };
        if self.eval_metric != expected {
            return Err(Error::Config(format!(
                "{:?} mode evaluates with {expected:?}",
                self.mode
            )));
        }
        Ok(())
    }
}

/// Embedding stores, SMILES and split-tagged records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub drugs: EmbeddingStore,
    pub proteins: EmbeddingStore,
    pub pockets: Option<EmbeddingStore>,
    pub smiles: BTreeMap<String, String>,
    pub records: Vec<Interaction>,
}

impl Dataset {
    /// Records of one partition ordered by `(drug_id, target_id)`.
    pub fn partition(&self, split: Split) -> Vec<Interaction> {
        let mut out: Vec<Interaction> = self.records.iter().filter(|r| r.split == split).cloned().collect();
        out.sort_by(|a, b| a.pair().cmp(&b.pair()));
        out
    }
}

fn target_of(r: &Interaction, mode: Mode) -> Option<f64> {
    match mode {
        Mode::Classification => r.label.map(|l| if l { 1.0 } else { 0.0 }),
        Mode::Regression => r.affinity,
    }
}

/// Resolved columns of a record set.
struct Prepared<T> {
    drugs: Vec<Vec<T>>,
    proteins: Vec<Vec<T>>,
    pockets: Option<Vec<Vec<T>>>,
    targets: Vec<Option<f64>>,
    tokens: Option<Vec<Vec<usize>>>,
}

impl<T: Scalar> Prepared<T> {
    fn new(cfg: &ModelConfig, data: &Dataset, records: &[Interaction], with_tokens: bool) -> Result<Self> {
        let pockets =
            if cfg.pockets_enabled() {
                Some(data.pockets.as_ref().ok_or_else(|| {
                    Error::Config("model has a pocket branch but no pocket embeddings were given".into())
                })?)
            } else {
                None
            };
        check_ids(records, &data.drugs, &data.proteins, pockets)?;
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let tokens = if with_tokens && records.iter().all(|r| data.smiles.contains_key(&r.drug_id)) {
            let vocab = cfg.vocab()?;
            let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
            let mut out = Vec::with_capacity(records.len());
            for r in records {
                if !cache.contains_key(r.drug_id.as_str()) {
                    let seq = tokenize(&vocab, &data.smiles[&r.drug_id], cfg.max_len)?;
                    cache.insert(&r.drug_id, seq.ids);
                }
                out.push(cache[r.drug_id.as_str()].clone());
            }
            Some(out)
        } else {
            if with_tokens {
                log::warn!("SMILES missing for some drugs; reconstruction term disabled");
            }
            None
        };
        Ok(Self {
            drugs: records
                .iter()
                .map(|r| conv(data.drugs.get(&r.drug_id).expect("checked")))
                .collect(),
            proteins: records
                .iter()
                .map(|r| conv(data.proteins.get(&r.target_id).expect("checked")))
                .collect(),
            pockets: pockets.map(|p| {
                records
                    .iter()
                    .map(|r| conv(p.get(r.pocket_id.as_deref().expect("checked")).expect("checked")))
                    .collect()
            }),
            targets: records.iter().map(|r| target_of(r, cfg.mode)).collect(),
            tokens,
        })
    }

    fn len(&self) -> usize {
        self.drugs.len()
    }

    fn input(&self, idx: &[usize]) -> Result<BatchInput<T>> {
        let pick = |v: &[Vec<T>]| Tensor2::from_columns(&idx.iter().map(|&i| v[i].as_slice()).collect::<Vec<_>>());
        Ok(BatchInput {
            drugs: pick(&self.drugs)?,
            proteins: pick(&self.proteins)?,
            pockets: self.pockets.as_deref().map(pick).transpose()?,
        })
    }

    fn batch(&self, idx: &[usize], negatives: Option<Vec<usize>>) -> Result<TrainBatch<T>> {
        Ok(TrainBatch {
            input: self.input(idx)?,
            targets: idx
                .iter()
                .map(|&i| T::lit(self.targets[i].expect("train targets are checked")))
                .collect(),
            tokens: self
                .tokens
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i].clone()).collect()),
            negatives,
        })
    }

    /// Raw outputs and confidences, in chunks.
    fn score(&self, state: &ModelState<T>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut raw = Vec::with_capacity(self.len());
        let mut conf = Vec::with_capacity(self.len());
        let all: Vec<usize> = (0..self.len()).collect();
        for idx in all.chunks(1024) {
            let out = state.predict(&self.input(idx)?, false)?;
            raw.extend(out.logits.iter().map(|v| v.as_f64()));
            conf.extend(out.conf.iter().map(|v| v.as_f64()));
        }
        Ok((raw, conf))
    }
}

/// A uniformly random permutation without fixed points (Sattolo's cycle).
fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

fn metric_bundle(mode: Mode, raw: &[f64], targets: &[Option<f64>]) -> MetricBundle {
    let (pred, truth): (Vec<f64>, Vec<f64>) = raw.iter().zip(targets).filter_map(|(&p, t)| t.map(|t| (p, t))).unzip();
    if pred.is_empty() {
        return MetricBundle {
            flags: vec!["no labelled records".into()],
            ..Default::default()
        };
    }
    match mode {
        Mode::Classification => {
            let probs: Vec<f64> = pred.iter().map(|&z| sigmoid(z)).collect();
            let labels: Vec<bool> = truth.iter().map(|&t| t > 0.5).collect();
            MetricBundle::classification(&probs, &labels, 0.5)
        }
        Mode::Regression => MetricBundle::regression(&pred, &truth),
    }
}

fn selection_metric(b: &MetricBundle, m: EvalMetric) -> Option<f64> {
    match m {
        EvalMetric::Aupr => b.aupr,
        EvalMetric::Pcc => b.pcc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Size-weighted mean over the epoch's batches.
    pub train: LossBreakdown,
    /// `None` when undefined on the validation split.
    pub valid_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_metric: f64,
    pub stopped_early: bool,
    pub valid: MetricBundle,
    pub test: MetricBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, sd, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub eval_metric: EvalMetric,
    pub train_config: TrainConfig,
    pub runs: Vec<RunReport>,
    /// Test metrics over seeds; a metric undefined in any run is omitted.
    pub test_summary: BTreeMap<String, MeanSd>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn summarize(runs: &[RunReport]) -> BTreeMap<String, MeanSd> {
    let fields: [(&str, fn(&MetricBundle) -> Option<f64>); 4] = [
        ("aupr", |b| b.aupr),
        ("f1", |b| b.f1),
        ("pcc", |b| b.pcc),
        ("rmse", |b| b.rmse),
    ];
    fields
        .iter()
        .filter_map(|(name, get)| {
            let v: Option<Vec<f64>> = runs.iter().map(|r| get(&r.test)).collect();
            Some((name.to_string(), MeanSd::of(&v?)?))
        })
        .collect()
}

/// One run per seed (in parallel); returns the state of the first seed and
/// the report over all of them.
pub fn train<T: Scalar + Send + Sync>(
    model_config: &ModelConfig,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    config.validate()?;
    model_config.validate()?;
    if model_config.mode != config.mode {
        return Err(Error::Config("model and training modes differ".into()));
    }
    let results: Vec<Result<(ModelState<T>, RunReport)>> = config
        .seeds
        .par_iter()
        .map(|&s| train_seed(model_config, data, config, s))
        .collect();
    let mut states = Vec::with_capacity(results.len());
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        let (s, run) = r?;
        states.push(s);
        runs.push(run);
    }
    let report = TrainReport {
        mode: config.mode,
        eval_metric: config.eval_metric,
        train_config: config.clone(),
        test_summary: summarize(&runs),
        runs,
    };
    Ok((states.swap_remove(0), report))
}

/// A single seeded run. Parameters come from the best validation epoch.
pub fn train_seed<T: Scalar>(
    model_config: &ModelConfig,
    data: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelState<T>, RunReport)> {
    let parts: Vec<Vec<Interaction>> = [Split::Train, Split::Valid, Split::Test]
        .iter()
        .map(|&s| data.partition(s))
        .collect();
    for (p, name) in parts.iter().zip(["train", "valid", "test"]) {
        if p.is_empty() {
            return Err(Error::Empty(format!("{name} split is empty")));
        }
    }
    let mode = config.mode;
    if let Some(r) = parts[0].iter().find(|r| target_of(r, mode).is_none()) {
        return Err(Error::Format(format!(
            "train pair ({}, {}) has no target",
            r.drug_id, r.target_id
        )));
    }
    let with_tokens = model_config.weights.recon > 0.0;
    let train = Prepared::<T>::new(model_config, data, &parts[0], with_tokens)?;
    let valid = Prepared::<T>::new(model_config, data, &parts[1], false)?;
    let test = Prepared::<T>::new(model_config, data, &parts[2], false)?;

    let mut state = ModelState::<T>::new(model_config.clone(), derive_seed(seed, 0))?;
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let triplet = model_config.contrastive == crate::model::ContrastiveVariant::TripletL2;
    let n = train.len();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelState<T>)> = None;
    let mut wait = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(derive_seed(seed, 1), epoch as u64));
        let mut neg_rng = rng(derive_seed(seed, 2), epoch as u64);
        let mut sum = LossBreakdown::default();
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let negatives = triplet.then(|| derangement(idx.len(), &mut neg_rng));
            let batch = train.batch(idx, negatives)?;
            let grads = {
                let mut tape = Tape::new();
                let obj = composite_objective(&mut tape, &state, &batch)?;
                let total = obj.breakdown.l_total;
                if !total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "seed {seed}, epoch {epoch}, batch {bi}: composite loss {total} (bce {}, con {}, conf {}, recon {}, mse {})",
                        obj.breakdown.l_bce,
                        obj.breakdown.l_con,
                        obj.breakdown.l_conf,
                        obj.breakdown.l_recon,
                        obj.breakdown.l_mse
                    )));
                }
                sum.accumulate(&obj.breakdown, idx.len() as f64 / n as f64);
                tape.backward(obj.total, Tensor2::scalar(T::one()))?
            };
            adam.step(&mut state, &grads)?;
        }
        let (raw, _) = valid.score(&state)?;
        let metric = selection_metric(&metric_bundle(mode, &raw, &valid.targets), config.eval_metric);
        log::debug!("seed {seed} epoch {epoch}: loss {:.6} valid {:?}", sum.l_total, metric);
        epochs.push(EpochRecord {
            epoch,
            train: sum,
            valid_metric: metric,
        });
        let improved = metric.is_some_and(|m| best.as_ref().is_none_or(|b| m > b.1));
        if improved {
            best = Some((epoch, metric.expect("improved"), state.clone()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_valid_metric, state) = best.ok_or_else(|| {
        Error::Numeric(format!(
            "seed {seed}: validation {:?} undefined in every epoch",
            config.eval_metric
        ))
    })?;
    let (raw, _) = valid.score(&state)?;
    let valid_bundle = metric_bundle(mode, &raw, &valid.targets);
    let (raw, _) = test.score(&state)?;
    let test_bundle = metric_bundle(mode, &raw, &test.targets);
    Ok((
        state,
        RunReport {
            seed,
            epochs,
            best_epoch,
            best_valid_metric,
            stopped_early,
            valid: valid_bundle,
            test: test_bundle,
        },
    ))
}

pub const PREDICTION_COLUMNS: [&str; 8] = [
    "drug_id",
    "target_id",
    "logit",
    "prob",
    "pred_label",
    "affinity_pred",
    "confidence",
    "unfamiliarity",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub drug_id: String,
    pub target_id: String,
    /// Classification only.
    pub logit: Option<f64>,
    pub prob: Option<f64>,
    pub pred_label: Option<bool>,
    /// Regression only.
    pub affinity_pred: Option<f64>,
    pub confidence: f64,
    /// Present when the drug has a SMILES string.
    pub unfamiliarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricBundle,
    /// Ordered by `(drug_id, target_id)`.
    pub predictions: Vec<PredictionRecord>,
}

/// Scores `records` (labels optional); metrics cover the labelled subset.
pub fn evaluate<T: Scalar>(state: &ModelState<T>, data: &Dataset, records: &[Interaction]) -> Result<Evaluation> {
    let mode = state.config.mode;
    let mut records = records.to_vec();
    records.sort_by(|a, b| a.pair().cmp(&b.pair()));
    let prep = Prepared::<T>::new(&state.config, data, &records, false)?;
    let (raw, conf) = prep.score(state)?;
    let unf = unfamiliarity_map(state, data, records.iter().map(|r| r.drug_id.as_str()))?;
    let predictions = records
        .iter()
        .zip(raw.iter().zip(&conf))
        .map(|(r, (&z, &c))| {
            let (logit, prob, pred_label, affinity_pred) = match mode {
                Mode::Classification => {
                    let p = sigmoid(z);
                    (Some(z), Some(p), Some(p >= 0.5), None)
                }
                Mode::Regression => (None, None, None, Some(z)),
            };
            PredictionRecord {
                drug_id: r.drug_id.clone(),
                target_id: r.target_id.clone(),
                logit,
                prob,
                pred_label,
                affinity_pred,
                confidence: c,
                unfamiliarity: unf.get(r.drug_id.as_str()).copied(),
            }
        })
        .collect();
    Ok(Evaluation {
        metrics: metric_bundle(mode, &raw, &prep.targets),
        predictions,
    })
}

/// Unfamiliarity of every listed drug that has a SMILES string.
pub fn unfamiliarity_map<'a, T: Scalar>(
    state: &ModelState<T>,
    data: &Dataset,
    drugs: impl Iterator<Item = &'a str>,
) -> Result<BTreeMap<&'a str, f64>> {
    let vocab = state.vocab();
    let mut out = BTreeMap::new();
    for id in drugs {
        if out.contains_key(id) {
            continue;
        }
        let (Some(smiles), Some(vec)) = (data.smiles.get(id), data.drugs.get(id)) else {
            continue;
        };
        let tokens: TokenSeq = tokenize(vocab, smiles, state.config.max_len)?;
        let v: Vec<T> = vec.iter().map(|&x| T::lit(x)).collect();
        out.insert(id, state.unfamiliarity(&v, &tokens)?.as_f64());
    }
    Ok(out)
}

fn opt<V: ToString>(v: Option<V>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], mut w: W) -> Result<()> {
    writeln!(w, "{}", PREDICTION_COLUMNS.join("\t"))?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.drug_id,
            r.target_id,
            opt(r.logit),
            opt(r.prob),
            opt(r.pred_label.map(u8::from)),
            opt(r.affinity_pred),
            r.confidence,
            opt(r.unfamiliarity)
        )?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Empty("prediction table has no header".into()))??;
    let header: Vec<&str> = header.split('\t').collect();
    let pos: Vec<usize> = PREDICTION_COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::MissingColumn(c.to_string()))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::Format(format!("predictions row {}: bad {what}", n + 2));
        let get = |i: usize| f.get(pos[i]).copied().ok_or_else(|| bad(PREDICTION_COLUMNS[i]));
        let num = |i: usize| -> Result<Option<f64>> {
            match get(i)? {
                "NA" | "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(PREDICTION_COLUMNS[i])),
            }
        };
        out.push(PredictionRecord {
            drug_id: get(0)?.to_string(),
            target_id: get(1)?.to_string(),
            logit: num(2)?,
            prob: num(3)?,
            pred_label: match get(4)? {
                "NA" | "" => None,
                "1" => Some(true),
                "0" => Some(false),
                _ => return Err(bad("pred_label")),
            },
            affinity_pred: num(5)?,
            confidence: num(6)?.ok_or_else(|| bad("confidence"))?,
            unfamiliarity: num(7)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut r = rng(1, 0);
        for n in 2..20 {
            let p = derangement(n, &mut r);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
        assert_eq!(derangement(1, &mut r), [0]);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::for_mode(Mode::Regression).lr, 1e-4);
        let bad = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().class(), "CONFIG");
        let neg = TrainConfig {
            lr: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.sd, m.n), (2.0, 1.0, 3));
        assert_eq!(MeanSd::of(&[4.0]).unwrap().sd, 0.0);
        assert!(MeanSd::of(&[]).is_none());
    }

    #[test]
    fn prediction_tsv_round_trip() {
        let recs = vec![
            PredictionRecord {
                drug_id: "d".into(),
                target_id: "t".into(),
                logit: Some(-0.25),
                prob: Some(sigmoid(-0.25)),
                pred_label: Some(false),
                affinity_pred: None,
                confidence: 0.125,
                unfamiliarity: Some(-1.5e-3),
            },
            PredictionRecord {
                drug_id: "e".into(),
                target_id: "t".into(),
                logit: None,
                prob: None,
                pred_label: None,
                affinity_pred: Some(7.1),
                confidence: 0.3,
                unfamiliarity: None,
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&recs, &mut buf).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), recs);
    }
}
