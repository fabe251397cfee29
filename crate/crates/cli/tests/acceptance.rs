//! Acceptance suite. Each criterion prints one PASS or FAIL line; the binary
//! exits non-zero when any fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_dti::embeddings::{
    gen_synthetic, read_binary, read_jsonl, smiles_map, write_binary, write_jsonl, Interaction, Modality, Split,
    SynthConfig,
};
use tensor_dti::losses::{
    bce_with_logits, composite_objective, composite_objective_with, confidence_loss, contrastive_cosine,
    contrastive_triplet, mse_loss, reconstruction_loss, Detached, LossBreakdown, LossWeights, TrainBatch,
};
use tensor_dti::metrics::{aupr, confusion_confidence, f1, pcc, rmse};
use tensor_dti::model::checkpoint::{decode, encode};
use tensor_dti::model::state::{reconstruction_nll, unfamiliarity_from_nll};
use tensor_dti::model::{tokenize, BatchInput, Mode, ModelConfig, ModelState, Vocab};
use tensor_dti::nn::{grad_check, GradCheckOptions, Gradients, ParamSet, Tape, Tensor2};
use tensor_dti::pipeline::{split, SplitSpec, SplitStrategy};
use tensor_dti::screening::{
    ef_at_k, filter_unfamiliar, kpct_actives_budget, random_baseline, rank, recall_at_k, top_fraction_recall,
    topk_potency_budget, write_ranked, ActiveSet, EnrichmentReport, RankCriterion, RankedLibrary, ScoreRow,
    DEFAULT_K_GRID,
};
use tensor_dti::training::{evaluate, train, Dataset, TrainConfig};
use tensor_dti::Model;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient correctness", c01_gradients),
        ("loss closed forms", c02_loss_closed_forms),
        ("stop-gradient", c03_stop_gradient),
        ("pocket linearity", c04_pocket_linearity),
        ("planted-data learning", c05_planted_learning),
        ("confidence semantics", c06_confidence),
        ("unfamiliarity closed forms", c07_unfamiliarity),
        ("enrichment identities", c08_enrichment),
        ("random baseline vs CDK2 table", c09_random_baseline),
        ("metric oracles", c10_metrics),
        ("determinism and round-trips", c11_determinism),
        ("pipeline smoke", c12_pipeline),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- objective

fn small_config(pocket: bool) -> ModelConfig {
    ModelConfig {
        drug_dim: 6,
        protein_dim: 5,
        pocket_dim: pocket.then_some(4),
        hidden_dim: 8,
        output_dim: 8,
        max_len: 6,
        alphabet: "CNO()=".into(),
        latent_dim: 3,
        ..ModelConfig::default()
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2<f64> {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_batch(cfg: &ModelConfig, seed: u64) -> TrainBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = cfg.vocab().unwrap();
    let smiles = ["CCO", "C(=O)N", "NCCCCC", "OC"];
    TrainBatch {
        input: BatchInput {
            drugs: random_tensor(cfg.drug_dim, 4, &mut rng),
            proteins: random_tensor(cfg.protein_dim, 4, &mut rng),
            pockets: cfg.pocket_dim.map(|k| random_tensor(k, 4, &mut rng)),
        },
        targets: vec![1.0, 0.0, 1.0, 0.0],
        tokens: Some(
            smiles
                .iter()
                .map(|s| tokenize(&vocab, s, cfg.max_len).unwrap().ids)
                .collect(),
        ),
        negatives: None,
    }
}

fn loss_and_grads(
    state: &ModelState<f64>,
    batch: &TrainBatch<f64>,
    frozen: Option<&Detached<f64>>,
) -> tensor_dti::Result<(f64, Gradients<f64>)> {
    let mut tape = Tape::new();
    let obj = composite_objective_with(&mut tape, state, batch, frozen)?;
    let value = tape.value(obj.total).item();
    Ok((value, tape.backward(obj.total, Tensor2::scalar(1.0))?))
}

fn c01_gradients() -> Outcome {
    let t = Instant::now();
    let w = LossWeights::default();
    ensure!(
        (w.cls, w.con, w.conf, w.recon) == (0.4, 0.2, 0.2, 0.2),
        "default weights {w:?}"
    );
    let cfg = small_config(true);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5 {
        let mut state = ModelState::<f64>::new(cfg.clone(), seed).unwrap();
        let batch = random_batch(&cfg, 1000 + seed);
        // the confidence term sees its input and target as constants
        let frozen = {
            let mut tape = Tape::new();
            composite_objective(&mut tape, &state, &batch).unwrap().detached
        };
        let opts = GradCheckOptions {
            tolerance: 1e-4,
            samples: usize::MAX,
            seed,
            ..GradCheckOptions::default()
        };
        let r = grad_check(
            &mut state,
            |s: &ModelState<f64>| loss_and_grads(s, &batch, Some(&frozen)),
            opts,
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            r.max_rel_error < 1e-4,
            "batch {seed}: max relative error {:.3e} at {:?}",
            r.max_rel_error,
            r.worst
        );
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!(
        "5 batches of 4 pairs, {checked} coordinates, max rel err {worst:.2e}"
    ))
}

fn c02_loss_closed_forms() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let col = |v: &[f64]| Tensor2::column(v);
    let mut n = 0;
    let mut check = |ok: bool, what: &str| -> Result<(), String> {
        n += 1;
        if ok {
            Ok(())
        } else {
            Err(what.to_string())
        }
    };
    check(close(bce_with_logits(0.0, 1.0), 2f64.ln()), "bce(0, 1)")?;
    check(close(bce_with_logits(3f64.ln(), 0.0), -(0.25f64).ln()), "bce(ln 3, 0)")?;
    check(
        bce_with_logits(50.0, 1.0) < 1e-20 && bce_with_logits(-50.0, 0.0) < 1e-20,
        "bce(±50)",
    )?;

    let v = col(&[0.3, -1.2, 2.0]);
    let cos = |a: &Tensor2<f64>, b: &Tensor2<f64>, y: f64| contrastive_cosine(a, b, &[y], 1.0).unwrap();
    check(close(cos(&v, &v, 1.0), 0.0), "cosine y=1 identical")?;
    check(close(cos(&v, &v, 0.0), 1.0), "cosine y=0 identical")?;
    check(
        close(cos(&col(&[1.0, 0.0]), &col(&[0.0, 2.0]), 0.0), 0.0),
        "cosine y=0 orthogonal",
    )?;

    let alpha = 0.8;
    let d = col(&[0.5, -0.5]);
    let far = col(&[0.5 + 2.0 * alpha, -0.5]);
    check(
        close(contrastive_triplet(&d, &d, &far, alpha).unwrap(), 0.0),
        "triplet pos=anchor",
    )?;
    let (p, q) = (col(&[1.5, -0.5]), col(&[0.5, 0.5]));
    check(
        close(contrastive_triplet(&d, &p, &q, alpha).unwrap(), alpha),
        "triplet equidistant",
    )?;
    let z = col(&[0.0, 0.0]);
    check(
        close(
            contrastive_triplet(&z, &col(&[1.0, 0.0]), &col(&[0.0, 3.0]), 1.0).unwrap(),
            0.0,
        ),
        "triplet arithmetic",
    )?;

    check(
        close(confidence_loss(&[0.35], &[0.0], &[0.35]).unwrap(), 0.0),
        "conf c=|y-p|",
    )?;
    check(
        close(confidence_loss(&[0.5], &[1.0], &[1.0]).unwrap(), 0.25),
        "conf 0.25",
    )?;
    check(
        close(confidence_loss(&[0.3], &[1.0], &[0.8]).unwrap(), 0.01),
        "conf 0.01",
    )?;

    let vocab = Vocab::new("CNOSPFIcnos()=#1").unwrap();
    check(vocab.len() == 20, "vocab size 20")?;
    for s in ["C", "CCO", "c1ccccc1"] {
        let toks = tokenize(&vocab, s, 12).unwrap();
        check(
            close(reconstruction_loss(&Tensor2::zeros(12, 20), &toks).unwrap(), 20f64.ln()),
            "recon uniform",
        )?;
    }
    // +20 on the true token over the smallest vocabulary: 4·e^-20 < 1e-8
    let tiny = Vocab::new("C").unwrap();
    let toks = tokenize(&tiny, "CCC", 8).unwrap();
    let mut peaked = Tensor2::zeros(8, tiny.len());
    for (t, &id) in toks.ids.iter().enumerate() {
        peaked.set(t, id, 20.0);
    }
    check(reconstruction_loss(&peaked, &toks).unwrap() < 1e-8, "recon saturated")?;
    let long = tokenize(&vocab, "CCO", 10).unwrap();
    let short = tokenize(&vocab, "CCO", 5).unwrap();
    let mut logits = Tensor2::zeros(10, 20);
    for (i, x) in logits.as_mut_slice().iter_mut().enumerate() {
        *x = ((i * 31) % 17) as f64 / 9.0;
    }
    check(
        close(
            reconstruction_loss(&logits, &long).unwrap(),
            reconstruction_loss(&logits.row_block(0, 5), &short).unwrap(),
        ),
        "recon PAD suffix",
    )?;

    check(mse_loss(&[1.5, -2.0], &[1.5, -2.0]).unwrap() == 0.0, "mse equal")?;
    check(close(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0), "mse ones")?;
    check(close(mse_loss(&[2.0], &[5.0]).unwrap(), 9.0), "mse single")?;

    let parts = LossBreakdown {
        l_bce: 1.0,
        l_con: 0.5,
        l_conf: 0.5,
        l_recon: 0.5,
        ..LossBreakdown::default()
    };
    let zero = LossWeights {
        cls: 0.0,
        con: 0.0,
        conf: 0.0,
        recon: 0.0,
    };
    check(
        parts.combine(&zero, Mode::Classification).unwrap().l_total == 0.0,
        "composite zero weights",
    )?;
    check(
        close(
            parts
                .combine(&LossWeights::default(), Mode::Classification)
                .unwrap()
                .l_total,
            0.7,
        ),
        "composite 0.7",
    )?;
    Ok(format!("{n} closed forms"))
}

fn c03_stop_gradient() -> Outcome {
    let mut cfg = small_config(true);
    cfg.weights = LossWeights {
        cls: 0.0,
        con: 0.0,
        conf: 1.0,
        recon: 0.0,
    };
    let (mut probed, mut batches, mut dead) = (0, 0, 0);
    for seed in 0.. {
        if batches == 10 {
            break;
        }
        let state = ModelState::<f64>::new(cfg.clone(), seed).unwrap();
        // A tiny ReLU encoder can map a whole column to zero at init; the
        // cosine term then has no direction, so draw another batch.
        let g = match loss_and_grads(&state, &random_batch(&cfg, seed), None) {
            Ok((_, g)) => g,
            Err(e) if e.class() == "NUMERIC" && e.to_string().contains("zero-norm") => {
                dead += 1;
                ensure!(dead <= 5, "too many degenerate initialisations");
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        batches += 1;
        let conf = state.layout().conf_params();
        let mut conf_moved = false;
        for id in state.param_ids() {
            let zero = g.get(id).is_none_or(|t| t.as_slice().iter().all(|&v| v == 0.0));
            if conf.contains(&id) {
                conf_moved |= !zero;
            } else {
                ensure!(zero, "seed {seed}: confidence loss reaches {id:?}");
                probed += 1;
            }
        }
        ensure!(conf_moved, "seed {seed}: confidence head received no gradient");
        ensure!(
            !state.layout().classifier_params().iter().any(|c| conf.contains(c)),
            "classifier and confidence parameters overlap"
        );
    }
    Ok(format!(
        "10 batches ({dead} degenerate skipped), {probed} non-confidence tensors exactly zero"
    ))
}

fn c04_pocket_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let (lp, lk) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let m = Model::new(
            ModelConfig {
                lambda_protein: lp,
                lambda_pocket: lk,
                ..small_config(true)
            },
            i,
        )
        .unwrap();
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = m.encode_protein_only(&p).unwrap();
        let kk = m.encode_pocket_only(&k).unwrap();
        let agg = m.encode_protein_with_pocket(&p, Some(&k)).unwrap();
        for j in 0..agg.len() {
            worst = worst.max((agg[j] - (lp * e[j] + lk * kk[j])).abs());
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:.3e}");
    let m = Model::new(
        ModelConfig {
            lambda_protein: 1.0,
            lambda_pocket: 0.0,
            ..small_config(true)
        },
        77,
    )
    .unwrap();
    let ed = m.encode_drug(&[0.2, -0.1, 0.4, 0.9, -0.3, 0.0]).unwrap();
    for _ in 0..200 {
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let with = m.encode_protein_with_pocket(&p, Some(&k)).unwrap();
        let without = m.encode_protein_only(&p).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure!(
            bits(&with) == bits(&without),
            "lambda_pocket=0 differs from the protein-only path"
        );
        let (a, b) = (
            m.interaction_logit(&ed, &with).unwrap(),
            m.interaction_logit(&ed, &without).unwrap(),
        );
        ensure!(a.to_bits() == b.to_bits(), "logits differ: {a} vs {b}");
    }
    Ok(format!(
        "1000 inputs, max deviation {worst:.1e}; 200 bit-exact zero-weight checks"
    ))
}

// ---------------------------------------------------------------- planted data

const DESK_SYNTH: SynthConfig = SynthConfig {
    n_drugs: 200,
    n_targets: 50,
    drug_dim: 32,
    protein_dim: 48,
    pocket_dim: None,
    n_latent: 4,
    noise: 0.0,
    seed: 0,
    affinity: false,
};

fn desk_model() -> ModelConfig {
    ModelConfig {
        drug_dim: 32,
        protein_dim: 48,
        hidden_dim: 32,
        output_dim: 16,
        max_len: 24,
        alphabet: "CNOS()=".into(),
        latent_dim: 8,
        ..ModelConfig::default()
    }
}

fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 64,
        max_epochs: 200,
        patience: 20,
        seeds: vec![seed],
        ..TrainConfig::for_mode(Mode::Classification)
    }
}

fn planted_dataset(seed: u64, strategy: SplitStrategy) -> Dataset {
    let data = gen_synthetic(&SynthConfig { seed, ..DESK_SYNTH }).unwrap();
    let spec = SplitSpec {
        strategy,
        seed,
        ..SplitSpec::default()
    };
    Dataset {
        drugs: data.drugs,
        proteins: data.proteins,
        pockets: None,
        smiles: smiles_map(&data.smiles).unwrap(),
        records: split(&data.interactions, &spec).unwrap(),
    }
}

/// Permutes labels among train and valid records; test labels stay true.
fn shuffle_fit_labels(data: &Dataset, seed: u64) -> Dataset {
    let mut out = data.clone();
    let idx: Vec<usize> = (0..out.records.len())
        .filter(|&i| out.records[i].split != Split::Test)
        .collect();
    let mut labels: Vec<Option<bool>> = idx.iter().map(|&i| out.records[i].label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (&i, l) in idx.iter().zip(labels) {
        out.records[i].label = l;
    }
    out
}

/// Single-core training run with its wall time.
fn timed_train(data: &Dataset, seed: u64) -> (Model, tensor_dti::training::TrainReport, f64) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let (state, report) = pool
        .install(|| train::<f64>(&desk_model(), data, &desk_train(seed)))
        .unwrap();
    (state, report, t.elapsed().as_secs_f64())
}

struct UnseenRun {
    data: Dataset,
    state: Model,
    aupr: f64,
    control: f64,
}

fn unseen_runs() -> &'static Vec<UnseenRun> {
    static RUNS: OnceLock<Vec<UnseenRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..3)
            .map(|seed| {
                let data = planted_dataset(seed, SplitStrategy::UnseenTarget);
                let (state, report, _) = timed_train(&data, seed);
                let (_, ctrl, _) = timed_train(&shuffle_fit_labels(&data, 100 + seed), seed);
                UnseenRun {
                    aupr: report.runs[0].test.aupr.unwrap(),
                    control: ctrl.runs[0].test.aupr.unwrap(),
                    data,
                    state,
                }
            })
            .collect()
    })
}

fn c05_planted_learning() -> Outcome {
    let data = planted_dataset(0, SplitStrategy::Random);
    let (_, report, secs) = timed_train(&data, 0);
    let run = &report.runs[0];
    let test = run.test.aupr.ok_or("test AUPR undefined")?;
    ensure!(test >= 0.95, "random split test AUPR {test:.4} < 0.95");
    ensure!(run.epochs.len() <= 200, "{} epochs", run.epochs.len());
    ensure!(secs < 120.0, "training took {secs:.1}s on one core");

    let runs = unseen_runs();
    let gaps: Vec<f64> = runs.iter().map(|r| r.aupr - r.control).collect();
    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let listed: Vec<String> = runs.iter().map(|r| format!("{:.3}/{:.3}", r.aupr, r.control)).collect();
    ensure!(gap >= 0.25, "unseen-target gap {gap:.3} < 0.25 ({})", listed.join(", "));
    Ok(format!(
        "random split AUPR {test:.4} in {} epochs, {secs:.1}s; unseen-target vs shuffled {} (mean gap {gap:.3})",
        run.epochs.len(),
        listed.join(", ")
    ))
}

fn c06_confidence() -> Outcome {
    let mut detail = Vec::new();
    for (seed, run) in unseen_runs().iter().enumerate() {
        let test = run.data.partition(Split::Test);
        let eval = evaluate(&run.state, &run.data, &test).map_err(|e| e.to_string())?;
        let truth: HashMap<(&str, &str), bool> = test.iter().map(|r| (r.pair(), r.label.unwrap())).collect();
        let labels: Vec<bool> = eval
            .predictions
            .iter()
            .map(|p| truth[&(p.drug_id.as_str(), p.target_id.as_str())])
            .collect();
        let probs: Vec<f64> = eval.predictions.iter().map(|p| p.prob.unwrap()).collect();
        let conf: Vec<f64> = eval.predictions.iter().map(|p| p.confidence).collect();
        let s = confusion_confidence(&labels, &probs, &conf, 0.5).map_err(|e| e.to_string())?;
        let (c, w) = (s.mean_correct.ok_or("no correct predictions")?, s.mean_incorrect);
        let w = w.ok_or(format!("seed {seed}: no incorrect predictions"))?;
        ensure!(c < w, "seed {seed}: mean confidence correct {c:.4} >= incorrect {w:.4}");
        detail.push(format!("{c:.3}<{w:.3}"));
    }
    Ok(format!("correct<incorrect in 3/3 seeds: {}", detail.join(", ")))
}

fn c07_unfamiliarity() -> Outcome {
    let vocab = Vocab::new("CNOS()=").unwrap();
    let v = vocab.len();
    for s in ["C", "CCO", "C(=O)NCCS", "CCCCCCCCCCCCCCCCCCCCCCCCCCCCCC"] {
        let toks = tokenize(&vocab, s, 16).unwrap();
        let nll = reconstruction_nll(&Tensor2::<f64>::zeros(16, v), &toks).map_err(|e| e.to_string())?;
        ensure!((nll - (v as f64).ln()).abs() <= 1e-9, "{s}: NLL {nll} vs ln {v}");
    }
    let eps = 1e-8;
    let u = unfamiliarity_from_nll(std::f64::consts::E - eps, eps);
    ensure!((u - 1.0).abs() <= 1e-9, "boundary U = {u}");
    let m = Model::zeros(ModelConfig {
        drug_dim: 4,
        alphabet: "CNOS()=".into(),
        max_len: 16,
        ..small_config(false)
    })
    .unwrap();
    let mu = m
        .unfamiliarity(&[0.5; 4], &tokenize(&vocab, "CCO", 16).unwrap())
        .unwrap();
    ensure!(
        (mu - ((v as f64).ln() + eps).ln()).abs() <= 1e-12,
        "zero model U = {mu}"
    );
    let rows: Vec<ScoreRow> = [0.2, 1.0, 1.7]
        .iter()
        .enumerate()
        .map(|(i, &u)| ScoreRow {
            unfamiliarity: Some(u),
            ..ScoreRow::new(&format!("c{i}"), "m", 0.0)
        })
        .collect();
    let kept: Vec<String> = filter_unfamiliar(&rows, 1.0)
        .unwrap()
        .into_iter()
        .map(|r| r.compound_id)
        .collect();
    ensure!(kept == ["c0"], "filter kept {kept:?}");
    Ok(format!("NLL = ln {v}, U(e-eps) = {u:.12}, boundary dropped"))
}

// ---------------------------------------------------------------- screening

fn need(k: u32, a: usize) -> usize {
    (k as usize * a).div_ceil(100).max(1)
}

fn lib(ids: &[String]) -> RankedLibrary {
    RankedLibrary {
        criterion: RankCriterion::AffinityAsc,
        ids: ids.to_vec(),
    }
}

fn hits(order: &[String], actives: &[&String], l: usize) -> usize {
    order[..l].iter().filter(|id| actives.contains(id)).count()
}

/// Checks every budget metric at every k of the grid and every cutoff; returns cells checked.
fn brute_force(order: &[String], potency: &[(String, f64)]) -> Result<usize, String> {
    let n = order.len();
    let l = lib(order);
    let mut act = ActiveSet::default();
    for (id, p) in potency {
        act.potency.insert(id.clone(), Some(*p));
    }
    let ids: Vec<&String> = potency.iter().map(|(id, _)| id).collect();
    let mut by_potency = potency.to_vec();
    by_potency.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cells = 0;
    for k in 1..=n {
        let r = hits(order, &ids, k) as f64 / ids.len() as f64;
        ensure!(recall_at_k(&l, &act, k).unwrap() == r, "recall@{k} on {order:?}");
        ensure!(
            ef_at_k(&l, &act, k).unwrap() == r * n as f64 / k as f64,
            "ef@{k} on {order:?}"
        );
        cells += 2;
    }
    for k in [1u32, 5, 20, 50, 100] {
        let target = need(k, ids.len());
        let ar = (1..=n).find(|&m| hits(order, &ids, m) >= target).unwrap();
        ensure!(
            kpct_actives_budget(&l, &act, k as f64).unwrap() == 100.0 * ar as f64 / n as f64,
            "k%AR k={k} on {order:?}"
        );
        let wanted: Vec<&String> = by_potency[..target].iter().map(|(id, _)| id).collect();
        let topk = (1..=n)
            .find(|&m| wanted.iter().all(|w| order[..m].contains(w)))
            .unwrap();
        ensure!(
            topk_potency_budget(&l, &act, k as f64).unwrap() == 100.0 * topk as f64 / n as f64,
            "top-k k={k} on {order:?}"
        );
        let cut = need(k, n);
        let tfr = 100.0 * (hits(order, &ids, cut) as f64 / ids.len() as f64);
        ensure!(
            top_fraction_recall(&l, &act, k as f64).unwrap() == tfr,
            "top-fraction recall k={k} on {order:?}"
        );
        cells += 3;
    }
    Ok(cells)
}

fn permutations(v: &[String]) -> Vec<Vec<String>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn c08_enrichment() -> Outcome {
    let names = |n: usize| (0..n).map(|i| format!("m{i:02}")).collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let n = rng.random_range(2..80);
        let mut order = names(n);
        order.shuffle(&mut rng);
        let a = rng.random_range(1..=n);
        let act = ActiveSet::from_ids(order.choose_multiple(&mut rng, a).cloned());
        let k = rng.random_range(1..=n);
        let l = lib(&order);
        let r = recall_at_k(&l, &act, k).unwrap();
        ensure!(
            ef_at_k(&l, &act, k).unwrap() == r * n as f64 / k as f64,
            "EF identity fails at N={n} k={k}"
        );
    }
    let mut cells = 0;
    let mut orders = 0;
    for n in 1..=12 {
        let ids = names(n);
        let a = n.div_ceil(3);
        let potency: Vec<(String, f64)> = ids[..a]
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (i % 2) as f64))
            .collect();
        let perms = if n <= 8 {
            permutations(&ids)
        } else {
            (0..400)
                .map(|_| {
                    let mut p = ids.clone();
                    p.shuffle(&mut rng);
                    p
                })
                .collect()
        };
        for p in &perms {
            cells += brute_force(p, &potency)?;
        }
        orders += perms.len();
    }
    Ok(format!(
        "EF identity on 1000 rankings; {cells} cells over {orders} orderings (N <= 12)"
    ))
}

fn c09_random_baseline() -> Outcome {
    // CDK2 k%AR table, Random column
    let paper = [1.00, 5.00, 20.00, 50.00, 100.00];
    let rows = random_baseline(2450, 796, &DEFAULT_K_GRID, 10_000, 0).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (row, want) in rows.iter().zip(paper) {
        ensure!(
            (row.ar_mean - want).abs() <= 0.3,
            "k={}: {:.3} vs {want}",
            row.k_percent,
            row.ar_mean
        );
        got.push(format!("{:.2}", row.ar_mean));
    }
    Ok(format!("N=2450 A=796, 10000 trials: {}", got.join("/")))
}

// ---------------------------------------------------------------- metrics

fn ap_reference(s: &[f64], l: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let p = l.iter().filter(|&&x| x).count() as f64;
    let (mut tp, mut area) = (0.0, 0.0);
    for (k, &i) in idx.iter().enumerate() {
        if l[i] {
            tp += 1.0;
            area += tp / (k + 1) as f64 / p;
        }
    }
    area
}

fn f1_reference(s: &[f64], l: &[bool]) -> f64 {
    let tp = s.iter().zip(l).filter(|(&p, &y)| p >= 0.5 && y).count() as f64;
    let fp = s.iter().zip(l).filter(|(&p, &y)| p >= 0.5 && !y).count() as f64;
    let fneg = s.iter().zip(l).filter(|(&p, &y)| p < 0.5 && y).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

fn pcc_reference(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 1e-12 && vy > 1e-12).then(|| cov / (vx * vy).sqrt())
}

fn rmse_reference(x: &[f64], y: &[f64]) -> f64 {
    (x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn all_vectors(alphabet: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..alphabet.len().pow(n as u32))
        .map(|mut m| {
            (0..n)
                .map(|_| {
                    let a = alphabet[m % alphabet.len()];
                    m /= alphabet.len();
                    a
                })
                .collect()
        })
        .collect()
}

fn c10_metrics() -> Outcome {
    let mut cases = 0;
    for n in 1..=6 {
        let scores = all_vectors(&[0.1, 0.5, 0.9], n);
        for mask in 0..1u32 << n {
            let l: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let both = l.contains(&true) && l.contains(&false);
            for s in &scores {
                match aupr(s, &l) {
                    Ok(v) => ensure!(both && (v - ap_reference(s, &l)).abs() <= 1e-9, "AUPR {s:?} {l:?}"),
                    Err(_) => ensure!(!both, "AUPR undefined on {s:?} {l:?}"),
                }
                ensure!(
                    (f1(s, &l, 0.5).unwrap() - f1_reference(s, &l)).abs() <= 1e-9,
                    "F1 {s:?} {l:?}"
                );
                cases += 1;
            }
        }
    }
    for n in 1..=6 {
        let xs = all_vectors(&[-1.0, 0.0, 2.5], n);
        let ys: Vec<&Vec<f64>> = if n <= 4 {
            xs.iter().collect()
        } else {
            xs.iter().step_by(17).collect()
        };
        for x in &xs {
            for y in &ys {
                ensure!(
                    (rmse(x, y).unwrap() - rmse_reference(x, y)).abs() <= 1e-9,
                    "RMSE {x:?} {y:?}"
                );
                match (pcc(x, y), pcc_reference(x, y)) {
                    (Ok(a), Some(b)) => ensure!((a - b).abs() <= 1e-9, "PCC {x:?} {y:?}"),
                    (Err(_), None) => {}
                    _ => return Err(format!("PCC definedness differs on {x:?} {y:?}")),
                }
                cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let s: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let mut l: Vec<bool> = (0..100).map(|_| rng.random_bool(0.4)).collect();
        (l[0], l[1]) = (true, false);
        ensure!(
            (aupr(&s, &l).unwrap() - ap_reference(&s, &l)).abs() <= 1e-9,
            "random AUPR"
        );
        ensure!(
            (f1(&s, &l, 0.5).unwrap() - f1_reference(&s, &l)).abs() <= 1e-9,
            "random F1"
        );
        let x: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.7 + rng.random_range(-1.0..1.0)).collect();
        ensure!(
            (pcc(&x, &y).unwrap() - pcc_reference(&x, &y).unwrap()).abs() <= 1e-9,
            "random PCC"
        );
        ensure!(
            (rmse(&x, &y).unwrap() - rmse_reference(&x, &y)).abs() <= 1e-9,
            "random RMSE"
        );
        cases += 1;
    }
    Ok(format!("{cases} exhaustive and random cases"))
}

// ---------------------------------------------------------------- determinism

fn c11_determinism() -> Outcome {
    let small = SynthConfig {
        n_drugs: 60,
        n_targets: 15,
        drug_dim: 32,
        protein_dim: 48,
        pocket_dim: Some(9),
        seed: 11,
        ..DESK_SYNTH
    };
    let data = gen_synthetic(&small).unwrap();
    let ds = Dataset {
        drugs: data.drugs.clone(),
        proteins: data.proteins.clone(),
        pockets: data.pockets.clone(),
        smiles: smiles_map(&data.smiles).unwrap(),
        records: split(&data.interactions, &SplitSpec::default()).unwrap(),
    };
    let mc = ModelConfig {
        pocket_dim: Some(9),
        ..desk_model()
    };
    let tc = TrainConfig {
        max_epochs: 6,
        seeds: vec![1, 2],
        ..desk_train(0)
    };
    let (s1, r1) = train::<f64>(&mc, &ds, &tc).unwrap();
    let (s2, r2) = train::<f64>(&mc, &ds, &tc).unwrap();
    ensure!(r1.to_json().unwrap() == r2.to_json().unwrap(), "TrainReports differ");
    ensure!(s1 == s2, "trained states differ");

    let ranked_bytes = |state: &Model| -> Vec<u8> {
        let recs: Vec<Interaction> = ds.records.iter().filter(|r| r.target_id == "T00").cloned().collect();
        let eval = evaluate(state, &ds, &recs).unwrap();
        let rows: Vec<ScoreRow> = eval
            .predictions
            .iter()
            .map(|p| ScoreRow {
                confidence: Some(p.confidence),
                label: p.pred_label,
                ..ScoreRow::new(&p.drug_id, "m", p.prob.unwrap())
            })
            .collect();
        let mut out = Vec::new();
        for c in [RankCriterion::AffinityAsc, RankCriterion::TwoKey] {
            write_ranked(&[(c.as_str().to_string(), rank(&rows, c).unwrap())], &mut out).unwrap();
        }
        out
    };
    ensure!(ranked_bytes(&s1) == ranked_bytes(&s2), "ranked outputs differ");

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    tensor_dti::model::save_checkpoint(&s1, &ckpt).unwrap();
    let loaded: Model = tensor_dti::model::load_checkpoint(&ckpt).unwrap();
    ensure!(
        encode(&loaded).unwrap() == std::fs::read(&ckpt).unwrap(),
        "checkpoint re-save differs"
    );
    ensure!(
        decode::<f64>(&encode(&s1).unwrap()).unwrap() == s1,
        "checkpoint decode differs"
    );

    let bits = |s: &tensor_dti::embeddings::EmbeddingStore| -> Vec<(String, Vec<u64>)> {
        s.iter()
            .map(|(id, v)| (id.to_string(), v.iter().map(|x| x.to_bits()).collect()))
            .collect()
    };
    for (store, m) in [
        (&data.drugs, Modality::Drug),
        (&data.proteins, Modality::Protein),
        (data.pockets.as_ref().unwrap(), Modality::Pocket),
    ] {
        let mut j = Vec::new();
        write_jsonl(store, &mut j).unwrap();
        ensure!(
            bits(&read_jsonl(&j[..], m).unwrap()) == bits(store),
            "{m} JSONL round trip"
        );
        let mut b = Vec::new();
        write_binary(store, &mut b).unwrap();
        ensure!(
            bits(&read_binary(&b[..], m).unwrap()) == bits(store),
            "{m} binary round trip"
        );
    }
    Ok("reports, states, ranked tables, checkpoints and embeddings identical".into())
}

// ---------------------------------------------------------------- CLI

const SMOKE_CONFIG: &str = r#"
[synth]
n_drugs = 200
n_targets = 50
drug_dim = 32
protein_dim = 48

[split]
strategy = "unseen_target"

[model]
hidden_dim = 32
output_dim = 16
max_len = 24
alphabet = "CNOS()="
latent_dim = 8

[train]
lr = 1e-3
batch_size = 64
max_epochs = 200
"#;

fn tdti(dir: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_tdti"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())
}

fn step(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = tdti(dir, args)?;
    ensure!(
        out.status.success(),
        "`tdti {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(())
}

fn digests(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().into(), std::fs::read(&p).unwrap()))
        .collect()
}

fn c12_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("cfg.toml"), SMOKE_CONFIG).unwrap();
    let t = Instant::now();
    let common = ["--config", "cfg.toml", "--seed", "7", "--threads", "1"];
    let with = |cmd: &str, rest: &[&'static str]| -> Vec<String> {
        std::iter::once(cmd)
            .chain(common.iter().copied())
            .chain(rest.iter().copied())
            .map(str::to_string)
            .collect()
    };
    let steps = [
        with("gen-synth", &["--out", "synth"]),
        with("split", &["--data", "synth", "--mode", "dti", "--out", "split"]),
        with(
            "train",
            &[
                "--mode",
                "dti",
                "--data",
                "split",
                "--embeddings",
                "synth",
                "--out",
                "model",
            ],
        ),
        with(
            "predict",
            &[
                "--model",
                "model",
                "--data",
                "split",
                "--embeddings",
                "synth",
                "--target",
                "T00",
                "--out",
                "pred",
            ],
        ),
        with(
            "rank",
            &["--data", "pred/scores.tsv", "--ranking", "two_key", "--out", "ranked"],
        ),
        with(
            "enrich",
            &[
                "--data",
                "ranked/ranked.tsv",
                "--actives",
                "pred/actives.tsv",
                "--out",
                "enrich",
            ],
        ),
    ];
    for s in &steps {
        step(dir, &s.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "pipeline took {secs:.1}s");

    let report: EnrichmentReport =
        serde_json::from_str(&std::fs::read_to_string(dir.join("enrich/enrichment.json")).unwrap())
            .map_err(|e| format!("enrichment.json does not parse: {e}"))?;
    ensure!(
        report.k_grid == [1.0, 5.0, 20.0, 50.0, 100.0],
        "k grid {:?}",
        report.k_grid
    );
    ensure!(
        report.methods.len() == 1 && report.methods[0].criterion == RankCriterion::TwoKey,
        "methods {:?}",
        report.methods
    );
    ensure!(
        report.methods[0].ar.len() == 5 && report.random.rows.len() == 5,
        "incomplete report rows"
    );
    for name in ["synth", "split", "model", "pred", "ranked", "enrich"] {
        ensure!(
            dir.join(name).join("manifest.json").is_file(),
            "{name}/manifest.json missing"
        );
    }

    // same seed, same bytes
    step(
        dir,
        &["gen-synth", "--config", "cfg.toml", "--seed", "7", "--out", "synth2"],
    )?;
    ensure!(
        digests(&dir.join("synth")) == digests(&dir.join("synth2")),
        "gen-synth is not reproducible"
    );
    step(
        dir,
        &[
            "rank",
            "--data",
            "pred/scores.tsv",
            "--ranking",
            "two_key",
            "--out",
            "ranked2",
        ],
    )?;
    ensure!(
        digests(&dir.join("ranked")) == digests(&dir.join("ranked2")),
        "rank is not reproducible"
    );

    // one-line error with its class and exit code
    let missing = tdti(
        dir,
        &["rank", "--data", "nope.tsv", "--ranking", "docking", "--out", "x"],
    )?;
    let err = String::from_utf8_lossy(&missing.stderr);
    ensure!(
        missing.status.code() == Some(1) && err.starts_with("error: IO:"),
        "missing input: {:?} {err}",
        missing.status
    );
    let usage = tdti(dir, &["rank", "--ranking", "sideways", "--out", "x"])?;
    let err = String::from_utf8_lossy(&usage.stderr);
    ensure!(
        usage.status.code() == Some(2) && err.starts_with("error: USAGE:"),
        "bad flag: {:?} {err}",
        usage.status
    );

    let ar: Vec<String> = report.methods[0].ar.iter().map(|v| format!("{v:.1}")).collect();
    Ok(format!("end-to-end in {secs:.1}s; two_key k%AR {}", ar.join("/")))
}
