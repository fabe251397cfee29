//! `tdti`: batch pipelines over the tensor-dti library. Every command writes
//! its outputs and a `manifest.json` under `--out`.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tensor_dti::embeddings::{
    gen_synthetic, load_embeddings, read_interactions, read_smiles, smiles_map, validate_interactions,
    write_interactions, EmbeddingFormat, EmbeddingStore, Interaction, Modality, Split, SynthConfig,
};
use tensor_dti::metrics::confusion_confidence;
use tensor_dti::model::{load_checkpoint, save_checkpoint, Mode, ModelConfig};
use tensor_dti::pipeline::{
    label_by_kd, positive_pairs, sample_negatives, split, NegSampleSpec, Pool, SimilarityTable, SplitSpec,
};
use tensor_dti::screening::{
    by_method, census, enrichment_report, filter_unfamiliar, rank, read_ranked, read_scores, write_ranked,
    write_scores, ActiveSet, RankCriterion, RankedLibrary, ScoreRow,
};
use tensor_dti::seed::derive_seed;
use tensor_dti::training::{evaluate, read_predictions, train, write_predictions, Dataset, TrainConfig};
use tensor_dti::{Error, Result};

use config::{ConfigFile, LabelConfig, NegativeConfig, ScreenConfig};
use manifest::Run;

#[derive(Debug, Parser)]
#[command(
    name = "tdti",
    version,
    about = "Drug-target interaction training, scoring and screening analytics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML settings file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutFormat::Tsv)]
    pub format: OutFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Tsv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dti,
    Dta,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dti => Mode::Classification,
            ModeArg::Dta => Mode::Regression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankingArg {
    Docking,
    Affinity,
    #[value(name = "two_key")]
    TwoKey,
}

impl From<RankingArg> for RankCriterion {
    fn from(r: RankingArg) -> Self {
        match r {
            RankingArg::Docking => RankCriterion::DockingScoreAsc,
            RankingArg::Affinity => RankCriterion::AffinityAsc,
            RankingArg::TwoKey => RankCriterion::TwoKey,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted synthetic dataset.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Label, add negatives and tag train/valid/test.
    Split {
        #[command(flatten)]
        common: Common,
        /// Interaction table, or a directory holding `interactions.tsv`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Train on a split-tagged dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory with `drugs.*`, `proteins.*` and optional `pockets.*`; defaults to the data directory.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Score pairs, or with `--target` every drug of the library.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file or a training output directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Restrict pair scoring to one partition.
        #[arg(long)]
        split: Option<String>,
    },
    /// Order a score table per method.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        ranking: RankingArg,
        /// Methods to rank; all by default.
        #[arg(long)]
        method: Vec<String>,
        /// Drop compounds with unfamiliarity at or above this value first.
        #[arg(long)]
        unf_threshold: Option<f64>,
    },
    /// Enrichment report against a set of actives.
    Enrich {
        #[command(flatten)]
        common: Common,
        /// Ranked tables, or score tables together with `--ranking`. Repeatable.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        actives: PathBuf,
        #[arg(long, value_enum)]
        ranking: Option<RankingArg>,
        /// Comma-separated percentages, e.g. `1,5,20,50,100`.
        #[arg(long)]
        k_grid: Option<String>,
        #[arg(long)]
        unf_threshold: Option<f64>,
        #[arg(long)]
        method: Vec<String>,
    },
    /// Confidence by confusion category and reliability census.
    Report {
        #[command(flatten)]
        common: Common,
        /// Labelled interaction table for the confusion summary.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        actives: Option<PathBuf>,
        #[arg(long)]
        unf_threshold: Option<f64>,
        #[arg(long)]
        docking_method: Option<String>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenSynth { common }
            | Command::Split { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Rank { common, .. }
            | Command::Enrich { common, .. }
            | Command::Report { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::GenSynth { .. } => "gen-synth",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Rank { .. } => "rank",
            Command::Enrich { .. } => "enrich",
            Command::Report { .. } => "report",
        }
    }
}

/// Parses `args` (program name first) and runs the command. Help and
/// version requests print and succeed.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(Error::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    init_logging();
    let common = cli.command.common();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    let arg_strings: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut run = Run::new(cli.command.name(), arg_strings, &common.out);
    if let Some(c) = &common.config {
        run.input(c)?;
    }
    let file = ConfigFile::load(common.config.as_deref())?;
    match &cli.command {
        Command::GenSynth { common } => cmd_gen_synth(&mut run, &file, common)?,
        Command::Split { common, data, mode } => cmd_split(&mut run, &file, common, data, *mode)?,
        Command::Train {
            common,
            data,
            embeddings,
            mode,
        } => cmd_train(&mut run, &file, common, data, embeddings.as_deref(), *mode)?,
        Command::Predict {
            common,
            model,
            data,
            embeddings,
            target,
            split,
        } => cmd_predict(
            &mut run,
            &file,
            common,
            model,
            data.as_deref(),
            embeddings.as_deref(),
            target.as_deref(),
            split.as_deref(),
        )?,
        Command::Rank {
            common,
            data,
            ranking,
            method,
            unf_threshold,
        } => cmd_rank(&mut run, common, data, (*ranking).into(), method, *unf_threshold)?,
        Command::Enrich {
            common,
            data,
            actives,
            ranking,
            k_grid,
            unf_threshold,
            method,
        } => cmd_enrich(
            &mut run,
            &file,
            common,
            data,
            actives,
            ranking.map(Into::into),
            k_grid.as_deref(),
            *unf_threshold,
            method,
        )?,
        Command::Report {
            common,
            data,
            predictions,
            scores,
            actives,
            unf_threshold,
            docking_method,
        } => cmd_report(
            &mut run,
            &file,
            common,
            data.as_deref(),
            predictions.as_deref(),
            scores.as_deref(),
            actives.as_deref(),
            *unf_threshold,
            docking_method.as_deref(),
        )?,
    }
    run.finish()?;
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("TDTI_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn mode_of(file: &ConfigFile, flag: Option<ModeArg>) -> Result<Mode> {
    if let Some(m) = flag {
        return Ok(m.into());
    }
    match file.top::<String>("mode")?.as_deref() {
        None | Some("dti") => Ok(Mode::Classification),
        Some("dta") => Ok(Mode::Regression),
        Some(other) => Err(Error::Config(format!("mode must be dti or dta, got '{other}'"))),
    }
}

fn seed_of(file: &ConfigFile, common: &Common) -> Result<u64> {
    Ok(match common.seed {
        Some(s) => s,
        None => file.top("seed")?.unwrap_or(0),
    })
}

fn check_threshold(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(t) if !t.is_finite() => Err(Error::Usage(format!("--{name} must be finite"))),
        _ => Ok(()),
    }
}

pub fn parse_k_grid(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("bad --k-grid entry '{p}'")))
        })
        .collect::<Result<_>>()?;
    if let Some(k) = grid.iter().find(|k| !(**k > 0.0 && **k <= 100.0)) {
        return Err(Error::Usage(format!("--k-grid entries must lie in (0, 100], got {k}")));
    }
    Ok(grid)
}

fn reader(run: &mut Run, path: &Path) -> Result<BufReader<File>> {
    let p = run.input(path)?;
    Ok(BufReader::new(File::open(p)?))
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A file argument, or `<dir>/<default>` when it names a directory.
fn file_in(path: &Path, default: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default)
    } else {
        path.to_path_buf()
    }
}

fn dir_of(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn find_store(dir: &Path, name: &str) -> Option<PathBuf> {
    ["jsonl", "bin", "emb"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

struct Stores {
    drugs: EmbeddingStore,
    proteins: EmbeddingStore,
    pockets: Option<EmbeddingStore>,
    smiles: BTreeMap<String, String>,
}

/// Embedding stores from `emb_dir`; SMILES from the first of `smiles_dirs`
/// holding a `smiles.tsv`.
fn load_stores(run: &mut Run, emb_dir: &Path, smiles_dirs: &[&Path]) -> Result<Stores> {
    let need = |name: &str| {
        find_store(emb_dir, name).ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no {name}.jsonl or {name}.bin in '{}'", emb_dir.display()),
            ))
        })
    };
    let d = need("drugs")?;
    let p = need("proteins")?;
    let drugs = load_embeddings(&run.input(&d)?, Modality::Drug)?;
    let proteins = load_embeddings(&run.input(&p)?, Modality::Protein)?;
    let pockets = match find_store(emb_dir, "pockets") {
        Some(k) => Some(load_embeddings(&run.input(&k)?, Modality::Pocket)?),
        None => None,
    };
    let mut smiles = BTreeMap::new();
    if let Some(s) = smiles_dirs.iter().map(|d| d.join("smiles.tsv")).find(|p| p.is_file()) {
        smiles = smiles_map(&read_smiles(reader(run, &s)?)?)?;
    }
    Ok(Stores {
        drugs,
        proteins,
        pockets,
        smiles,
    })
}

fn cmd_gen_synth(run: &mut Run, file: &ConfigFile, common: &Common) -> Result<()> {
    let mut cfg = file.section("synth", SynthConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    } else if let Some(s) = file.top("seed")? {
        cfg.seed = s;
    }
    let format = match file.top::<String>("embedding_format")?.as_deref() {
        None | Some("jsonl") => EmbeddingFormat::Jsonl,
        Some("binary") => EmbeddingFormat::Binary,
        Some(other) => {
            return Err(Error::Config(format!(
                "embedding_format must be jsonl or binary, got '{other}'"
            )))
        }
    };
    run.seeds = vec![cfg.seed];
    run.config = json!({ "synth": cfg, "embedding_format": format!("{format:?}").to_lowercase() });
    let data = gen_synthetic(&cfg)?;
    std::fs::create_dir_all(&common.out)?;
    for p in data.write_to(&common.out, format)? {
        run.written(&p)?;
    }
    log::info!(
        "{} drugs, {} targets, positive rate {:.3}",
        data.drugs.len(),
        data.proteins.len(),
        data.positive_rate()
    );
    Ok(())
}

fn cmd_split(run: &mut Run, file: &ConfigFile, common: &Common, data: &Path, mode: Option<ModeArg>) -> Result<()> {
    let mode = mode_of(file, mode)?;
    let seed = seed_of(file, common)?;
    let labels = file.section("labels", LabelConfig::default())?;
    let negatives = if file.has("negatives") {
        Some(file.section("negatives", NegativeConfig::default())?)
    } else {
        None
    };
    let spec = file.section(
        "split",
        SplitSpec {
            seed,
            ..Default::default()
        },
    )?;
    let spec = SplitSpec {
        seed: common.seed.unwrap_or(spec.seed),
        ..spec
    };
    run.seeds = vec![spec.seed];
    run.config = json!({ "mode": mode, "labels": labels, "negatives": negatives, "split": spec });

    let mut records = read_interactions(reader(run, &file_in(data, "interactions.tsv"))?)?;
    if labels.from_affinity {
        records = label_by_kd(&records, labels.kd_threshold_nm, labels.units)?;
    }
    if let Some(neg) = &negatives {
        if mode != Mode::Classification {
            return Err(Error::Config("negative sampling applies to dti data only".into()));
        }
        let sim = match &neg.similarity {
            Some(p) => Some(SimilarityTable::read(reader(run, p)?)?),
            None => None,
        };
        let positives: Vec<Interaction> = records.iter().filter(|r| r.label == Some(true)).cloned().collect();
        let spec = NegSampleSpec {
            strategy: neg.strategy,
            ratio: neg.ratio,
            threshold: neg.threshold,
        };
        let sampled = sample_negatives(
            &positives,
            &positive_pairs(&records),
            &Pool::from_records(&records),
            &spec,
            sim.as_ref(),
            derive_seed(spec_seed(seed), 0),
        )?;
        records.extend(sampled);
    }
    for r in &records {
        let ok = match mode {
            Mode::Classification => r.label.is_some(),
            Mode::Regression => r.affinity.is_some(),
        };
        if !ok {
            return Err(Error::Format(format!(
                "pair ({}, {}) lacks the {} target",
                r.drug_id,
                r.target_id,
                if mode == Mode::Classification {
                    "label"
                } else {
                    "affinity"
                }
            )));
        }
    }
    let tagged = split(&records, &spec)?;
    let out = run.artifact("interactions.tsv")?;
    write_interactions(&tagged, writer(&out)?)?;
    Ok(())
}

/// Negative sampling gets its own stream, apart from the split shuffle.
fn spec_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x6e65_6773)
}

fn cmd_train(
    run: &mut Run,
    file: &ConfigFile,
    common: &Common,
    data: &Path,
    embeddings: Option<&Path>,
    mode: Option<ModeArg>,
) -> Result<()> {
    let mode = mode_of(file, mode)?;
    let mut tc = file.section("train", TrainConfig::for_mode(mode))?;
    tc.mode = mode;
    if let Some(s) = common.seed {
        tc.seeds = vec![s];
    } else if !file.has("train") || tc.seeds == TrainConfig::default().seeds {
        if let Some(s) = file.top("seed")? {
            tc.seeds = vec![s];
        }
    }
    tc.validate()?;
    let mut mc = file.section("model", ModelConfig::default())?;
    mc.mode = mode;

    let data_dir = dir_of(data);
    let emb_dir = embeddings.map(Path::to_path_buf).unwrap_or_else(|| data_dir.clone());
    let records = read_interactions(reader(run, &file_in(data, "interactions.tsv"))?)?;
    let stores = load_stores(run, &emb_dir, &[&data_dir, &emb_dir])?;
    mc.drug_dim = stores.drugs.width();
    mc.protein_dim = stores.proteins.width();
    let use_pockets = stores.pockets.is_some() && records.iter().all(|r| r.pocket_id.is_some());
    mc.pocket_dim = if use_pockets {
        stores.pockets.as_ref().map(EmbeddingStore::width)
    } else {
        None
    };
    mc.validate()?;
    let dataset = Dataset {
        drugs: stores.drugs,
        proteins: stores.proteins,
        pockets: if use_pockets { stores.pockets } else { None },
        smiles: stores.smiles,
        records,
    };
    validate_interactions(
        &dataset.records,
        mode,
        &dataset.drugs,
        &dataset.proteins,
        dataset.pockets.as_ref(),
    )?;
    run.seeds = tc.seeds.clone();
    run.config = json!({ "mode": mode, "model": mc, "train": tc });

    let (state, report) = train::<f64>(&mc, &dataset, &tc)?;
    let ckpt = run.artifact("model.ckpt")?;
    save_checkpoint(&state, &ckpt)?;
    run.written(&tensor_dti::model::checkpoint::sidecar_path(&ckpt))?;
    write_json(&run.artifact("train_report.json")?, &report)?;
    let test = dataset.partition(Split::Test);
    let ev = evaluate(&state, &dataset, &test)?;
    let mut w = writer(&run.artifact("predictions.tsv")?)?;
    write_predictions(&ev.predictions, &mut w)?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    run: &mut Run,
    file: &ConfigFile,
    common: &Common,
    model: &Path,
    data: Option<&Path>,
    embeddings: Option<&Path>,
    target: Option<&str>,
    split_name: Option<&str>,
) -> Result<()> {
    let partition: Option<Split> = split_name.map(str::parse).transpose()?;
    if partition.is_some() && target.is_some() {
        return Err(Error::Usage("--split and --target are exclusive".into()));
    }
    if data.is_none() && embeddings.is_none() {
        return Err(Error::Usage("predict needs --data or --embeddings".into()));
    }
    if data.is_none() && target.is_none() {
        return Err(Error::Usage("pair scoring needs --data".into()));
    }
    let screen = file.section("screen", ScreenConfig::default())?;
    let seed = seed_of(file, common)?;
    run.seeds = vec![seed];
    let ckpt = run.input(&file_in(model, "model.ckpt"))?;
    let state = load_checkpoint::<f64>(&ckpt)?;
    run.input(&tensor_dti::model::checkpoint::sidecar_path(&ckpt))?;
    run.config = json!({ "model": state.config, "screen": screen, "target": target, "split": split_name });

    let data_dir = data.map(dir_of);
    let emb_dir = embeddings
        .map(Path::to_path_buf)
        .or_else(|| data_dir.clone())
        .expect("checked above");
    let records = match data {
        Some(d) => read_interactions(reader(run, &file_in(d, "interactions.tsv"))?)?,
        None => Vec::new(),
    };
    let mut smiles_dirs: Vec<&Path> = data_dir.iter().map(PathBuf::as_path).collect();
    smiles_dirs.push(&emb_dir);
    let stores = load_stores(run, &emb_dir, &smiles_dirs)?;
    let dataset = Dataset {
        drugs: stores.drugs,
        proteins: stores.proteins,
        pockets: if state.config.pockets_enabled() {
            stores.pockets
        } else {
            None
        },
        smiles: stores.smiles,
        records: Vec::new(),
    };

    match target {
        None => {
            let chosen: Vec<Interaction> = records
                .into_iter()
                .filter(|r| partition.is_none_or(|p| r.split == p))
                .collect();
            if chosen.is_empty() {
                return Err(Error::Empty("no pairs to score".into()));
            }
            let ev = evaluate(&state, &dataset, &chosen)?;
            let mut w = writer(&run.artifact("predictions.tsv")?)?;
            write_predictions(&ev.predictions, &mut w)?;
            w.flush()?;
            write_json(&run.artifact("metrics.json")?, &ev.metrics)?;
        }
        Some(t) => {
            if !dataset.proteins.contains(t) {
                return Err(Error::MissingIds(vec![format!("target:{t}")]));
            }
            let pocket = records
                .iter()
                .find(|r| r.target_id == t)
                .and_then(|r| r.pocket_id.clone());
            let library: Vec<Interaction> = dataset
                .drugs
                .ids()
                .iter()
                .map(|d| Interaction {
                    pocket_id: pocket.clone(),
                    ..Interaction::labelled(d, t, false)
                })
                .map(|r| Interaction { label: None, ..r })
                .collect();
            let ev = evaluate(&state, &dataset, &library)?;
            let rows: Vec<ScoreRow> = ev
                .predictions
                .iter()
                .map(|p| ScoreRow {
                    compound_id: p.drug_id.clone(),
                    method: screen.method_name.clone(),
                    score: p.prob.or(p.affinity_pred),
                    label: p.prob.map(|q| q >= screen.threshold),
                    confidence: Some(p.confidence),
                    unfamiliarity: p.unfamiliarity,
                    potency: None,
                })
                .collect();
            let mut w = writer(&run.artifact("scores.tsv")?)?;
            write_scores(&rows, &mut w)?;
            let mut w = writer(&run.artifact("predictions.tsv")?)?;
            write_predictions(&ev.predictions, &mut w)?;
            w.flush()?;
            let known: Vec<&Interaction> = records
                .iter()
                .filter(|r| r.target_id == t && r.label == Some(true))
                .collect();
            if !known.is_empty() {
                let actives = ActiveSet::from_ids(known.iter().map(|r| r.drug_id.clone()));
                let mut w = writer(&run.artifact("actives.tsv")?)?;
                actives.write(&mut w)?;
            }
        }
    }
    Ok(())
}

fn select_methods(rows: &[ScoreRow], methods: &[String]) -> Result<Vec<(String, Vec<ScoreRow>)>> {
    let groups = by_method(rows);
    if methods.is_empty() {
        return Ok(groups);
    }
    let present: BTreeSet<&str> = groups.iter().map(|(m, _)| m.as_str()).collect();
    if let Some(m) = methods.iter().find(|m| !present.contains(m.as_str())) {
        return Err(Error::Usage(format!("method '{m}' not found in the score table")));
    }
    Ok(groups.into_iter().filter(|(m, _)| methods.contains(m)).collect())
}

fn rank_scores(
    rows: Vec<ScoreRow>,
    criterion: RankCriterion,
    methods: &[String],
    unf: Option<f64>,
) -> Result<Vec<(String, RankedLibrary)>> {
    let rows = match unf {
        Some(t) => filter_unfamiliar(&rows, t)?,
        None => rows,
    };
    select_methods(&rows, methods)?
        .into_iter()
        .map(|(m, r)| Ok((m, rank(&r, criterion)?)))
        .collect()
}

fn cmd_rank(
    run: &mut Run,
    common: &Common,
    data: &Path,
    criterion: RankCriterion,
    methods: &[String],
    unf: Option<f64>,
) -> Result<()> {
    check_threshold("unf-threshold", unf)?;
    run.seeds = common.seed.into_iter().collect();
    run.config = json!({ "ranking": criterion, "methods": methods, "unf_threshold": unf });
    let rows = read_scores(reader(run, &file_in(data, "scores.tsv"))?)?;
    let libs = rank_scores(rows, criterion, methods, unf)?;
    write_ranked(&libs, writer(&run.artifact("ranked.tsv")?)?)?;
    Ok(())
}

fn is_ranked_table(path: &Path) -> Result<bool> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(first.trim_end().split('\t').any(|c| c == "rank"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_enrich(
    run: &mut Run,
    file: &ConfigFile,
    common: &Common,
    data: &[PathBuf],
    actives: &Path,
    criterion: Option<RankCriterion>,
    k_grid: Option<&str>,
    unf: Option<f64>,
    methods: &[String],
) -> Result<()> {
    let flag_grid = k_grid.map(parse_k_grid).transpose()?;
    check_threshold("unf-threshold", unf)?;
    let screen = file.section("screen", ScreenConfig::default())?;
    let grid = match flag_grid {
        Some(g) => g,
        None => {
            let g = screen.k_grid.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            parse_k_grid(&g)?
        }
    };
    let seed = seed_of(file, common)?;
    run.seeds = vec![seed];
    run.config = json!({ "k_grid": grid, "trials": screen.trials, "ranking": criterion, "unf_threshold": unf, "methods": methods });

    let mut libs: Vec<(String, RankedLibrary)> = Vec::new();
    for d in data {
        let path = run.input(&file_in(d, "ranked.tsv"))?;
        let mut part = if is_ranked_table(&path)? {
            if unf.is_some() {
                return Err(Error::Usage(
                    "--unf-threshold applies to score tables, not ranked ones".into(),
                ));
            }
            let ranked = read_ranked(BufReader::new(File::open(&path)?))?;
            if methods.is_empty() {
                ranked
            } else {
                ranked.into_iter().filter(|(m, _)| methods.contains(m)).collect()
            }
        } else {
            let criterion =
                criterion.ok_or_else(|| Error::Usage(format!("'{}' holds scores; pass --ranking", path.display())))?;
            rank_scores(
                read_scores(BufReader::new(File::open(&path)?))?,
                criterion,
                methods,
                unf,
            )?
        };
        libs.append(&mut part);
    }
    let mut seen = BTreeSet::new();
    if let Some((m, _)) = libs.iter().find(|(m, _)| !seen.insert(m.clone())) {
        return Err(Error::Format(format!("method '{m}' appears in more than one input")));
    }
    let actives = ActiveSet::read(reader(run, actives)?)?;
    let report = enrichment_report(&libs, &actives, &grid, screen.trials, seed)?;
    write_json(&run.artifact("enrichment.json")?, &report)?;
    if common.format == OutFormat::Tsv {
        std::fs::write(run.artifact("enrichment.tsv")?, report.to_tsv())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_report(
    run: &mut Run,
    file: &ConfigFile,
    common: &Common,
    data: Option<&Path>,
    predictions: Option<&Path>,
    scores: Option<&Path>,
    actives: Option<&Path>,
    unf: Option<f64>,
    docking_method: Option<&str>,
) -> Result<()> {
    check_threshold("unf-threshold", unf)?;
    if predictions.is_some() != data.is_some() {
        return Err(Error::Usage("--predictions and --data go together".into()));
    }
    if predictions.is_none() && scores.is_none() {
        return Err(Error::Usage(
            "report needs --predictions with --data, or --scores".into(),
        ));
    }
    if actives.is_some() && scores.is_none() {
        return Err(Error::Usage("--actives needs --scores".into()));
    }
    let screen = file.section("screen", ScreenConfig::default())?;
    let t = unf.unwrap_or(screen.unf_threshold);
    let docking = docking_method.map(str::to_string).or(screen.docking_method.clone());
    run.seeds = common.seed.into_iter().collect();
    run.config = json!({ "unf_threshold": t, "docking_method": docking, "threshold": screen.threshold });

    let mut report = serde_json::Map::new();
    if let (Some(p), Some(d)) = (predictions, data) {
        let preds = read_predictions(reader(run, &file_in(p, "predictions.tsv"))?)?;
        let records = read_interactions(reader(run, &file_in(d, "interactions.tsv"))?)?;
        let labels: BTreeMap<(&str, &str), bool> =
            records.iter().filter_map(|r| r.label.map(|l| (r.pair(), l))).collect();
        let (mut l, mut pr, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for p in &preds {
            if let (Some(&y), Some(prob)) = (labels.get(&(p.drug_id.as_str(), p.target_id.as_str())), p.prob) {
                l.push(y);
                pr.push(prob);
                c.push(p.confidence);
            }
        }
        if l.is_empty() {
            return Err(Error::Empty(
                "no labelled classification predictions to summarise".into(),
            ));
        }
        let summary = confusion_confidence(&l, &pr, &c, screen.threshold)?;
        report.insert("confusion".into(), serde_json::to_value(summary)?);
    }
    let mut census_rows = Vec::new();
    if let Some(s) = scores {
        let rows = read_scores(reader(run, &file_in(s, "scores.tsv"))?)?;
        census_rows.push(census("library", &rows, docking.as_deref(), t)?);
        if let Some(a) = actives {
            let act = ActiveSet::read(reader(run, a)?)?;
            let sub: Vec<ScoreRow> = rows.iter().filter(|r| act.contains(&r.compound_id)).cloned().collect();
            census_rows.push(census("actives", &sub, docking.as_deref(), t)?);
        }
        report.insert("census".into(), serde_json::to_value(&census_rows)?);
    }
    write_json(&run.artifact("report.json")?, &report)?;
    if common.format == OutFormat::Tsv && !census_rows.is_empty() {
        let mut w = writer(&run.artifact("census.tsv")?)?;
        writeln!(w, "population\ttotal\tdocked\tunf_below")?;
        for r in &census_rows {
            writeln!(w, "{}\t{}\t{}\t{}", r.population, r.total, r.docked, r.unf_below)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// One-line rendering for the process exit path.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error: {}: {msg}", e.class())
}

/// Process exit code of an error: 2 for usage errors, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.class() == "USAGE" {
        2
    } else {
        1
    }
}
