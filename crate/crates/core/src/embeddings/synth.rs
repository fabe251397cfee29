//! Planted bilinear fixtures.
//!
//! Drug `i` and target `j` get latent factors `u_i`, `v_j ~ N(0, I_r)`; the
//! pair interacts iff `u_i · v_j > 0`. Embeddings are fixed random linear
//! images of the factors plus Gaussian noise, narrowed to `f32` so that
//! every output format stores them exactly.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::format::{save_embeddings, EmbeddingFormat};
use super::tables::{write_interactions, write_smiles, Interaction, SmilesRecord, Split};
use super::{EmbeddingStore, Modality};
use crate::error::{Error, Result};
use crate::seed;

const MAX_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_drugs: usize,
    pub n_targets: usize,
    pub drug_dim: usize,
    pub protein_dim: usize,
    /// Emits one pocket per target when set.
    pub pocket_dim: Option<usize>,
    pub n_latent: usize,
    /// Standard deviation of the additive embedding noise.
    pub noise: f64,
    pub seed: u64,
    /// Also emits `affinity = 6 + u·v / sqrt(r)` (p-scale).
    pub affinity: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_drugs: 200,
            n_targets: 50,
            drug_dim: 32,
            protein_dim: 48,
            pocket_dim: None,
            n_latent: 4,
            noise: 0.0,
            seed: 0,
            affinity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub drugs: EmbeddingStore,
    pub proteins: EmbeddingStore,
    pub pockets: Option<EmbeddingStore>,
    /// Every drug-target pair, untagged.
    pub interactions: Vec<Interaction>,
    pub smiles: Vec<SmilesRecord>,
    pub drug_factors: Vec<Vec<f64>>,
    pub target_factors: Vec<Vec<f64>>,
    /// Draws needed to get both classes.
    pub attempts: u64,
}

impl SynthData {
    pub fn positive_rate(&self) -> f64 {
        let pos = self.interactions.iter().filter(|r| r.label == Some(true)).count();
        pos as f64 / self.interactions.len() as f64
    }

    /// Writes `drugs`, `proteins`, optional `pockets` embeddings,
    /// `interactions.tsv` and `smiles.tsv` into `dir`.
    pub fn write_to(&self, dir: &Path, format: EmbeddingFormat) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let ext = match format {
            EmbeddingFormat::Jsonl => "jsonl",
            EmbeddingFormat::Binary => "bin",
        };
        let mut written = Vec::new();
        let mut stores = vec![("drugs", &self.drugs), ("proteins", &self.proteins)];
        if let Some(p) = &self.pockets {
            stores.push(("pockets", p));
        }
        for (name, store) in stores {
            let path = dir.join(format!("{name}.{ext}"));
            save_embeddings(store, &path, format)?;
            written.push(path);
        }
        let path = dir.join("interactions.tsv");
        write_interactions(&self.interactions, BufWriter::new(File::create(&path)?))?;
        written.push(path);
        let path = dir.join("smiles.tsv");
        write_smiles(&self.smiles, BufWriter::new(File::create(&path)?))?;
        written.push(path);
        Ok(written)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dim x r` projection with `N(0, 1/r)` entries, row-major.
fn projection(rng: &mut ChaCha8Rng, dim: usize, r: usize) -> Vec<f64> {
    let s = (r as f64).sqrt().recip();
    normal_vec(rng, dim * r).into_iter().map(|x| x * s).collect()
}

fn embed(rng: &mut ChaCha8Rng, proj: &[f64], factors: &[f64], noise: f64) -> Vec<f64> {
    let r = factors.len();
    proj.chunks_exact(r)
        .map(|row| {
            let e: f64 = rng.sample(StandardNormal);
            (dot(row, factors) + noise * e) as f32 as f64
        })
        .collect()
}

/// Carbon chain decorated per factor: the atom encodes the factor's
/// quartile, strong values add a branch.
fn smiles_for(u: &[f64]) -> String {
    let mut s = String::from("C");
    for &x in u {
        s.push(match x {
            x if x < -0.674 => 'N',
            x if x < 0.0 => 'C',
            x if x < 0.674 => 'O',
            _ => 'S',
        });
        if x > 1.0 {
            s.push_str("(=O)");
        } else if x < -1.0 {
            s.push_str("(N)");
        }
    }
    s
}

fn ids(prefix: char, n: usize) -> Vec<String> {
    let w = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0w$}")).collect()
}

fn draw(cfg: &SynthConfig, master: u64) -> Result<SynthData> {
    let r = cfg.n_latent;
    let mut rng = seed::rng(master, 0);
    let drug_factors: Vec<Vec<f64>> = (0..cfg.n_drugs).map(|_| normal_vec(&mut rng, r)).collect();
    let target_factors: Vec<Vec<f64>> = (0..cfg.n_targets).map(|_| normal_vec(&mut rng, r)).collect();
    let pd = projection(&mut rng, cfg.drug_dim, r);
    let pp = projection(&mut rng, cfg.protein_dim, r);
    let pk = cfg.pocket_dim.map(|k| projection(&mut rng, k, r));

    let drug_ids = ids('D', cfg.n_drugs);
    let target_ids = ids('T', cfg.n_targets);
    let mut drugs = EmbeddingStore::new(Modality::Drug);
    let mut smiles = Vec::with_capacity(cfg.n_drugs);
    for (id, u) in drug_ids.iter().zip(&drug_factors) {
        drugs.insert(id.clone(), embed(&mut rng, &pd, u, cfg.noise))?;
        smiles.push(SmilesRecord {
            drug_id: id.clone(),
            smiles: smiles_for(u),
        });
    }
    let mut proteins = EmbeddingStore::new(Modality::Protein);
    let mut pockets = pk.as_ref().map(|_| EmbeddingStore::new(Modality::Pocket));
    for (id, v) in target_ids.iter().zip(&target_factors) {
        proteins.insert(id.clone(), embed(&mut rng, &pp, v, cfg.noise))?;
        if let (Some(store), Some(pk)) = (pockets.as_mut(), pk.as_ref()) {
            store.insert(format!("K{}", &id[1..]), embed(&mut rng, pk, v, cfg.noise))?;
        }
    }

    let mut interactions = Vec::with_capacity(cfg.n_drugs * cfg.n_targets);
    for (di, u) in drug_ids.iter().zip(&drug_factors) {
        for (ti, v) in target_ids.iter().zip(&target_factors) {
            let s = dot(u, v);
            interactions.push(Interaction {
                drug_id: di.clone(),
                target_id: ti.clone(),
                pocket_id: pockets.as_ref().map(|_| format!("K{}", &ti[1..])),
                label: Some(s > 0.0),
                affinity: cfg.affinity.then(|| 6.0 + s / (r as f64).sqrt()),
                split: Split::Unassigned,
            });
        }
    }
    Ok(SynthData {
        drugs,
        proteins,
        pockets,
        interactions,
        smiles,
        drug_factors,
        target_factors,
        attempts: 1,
    })
}

/// Pure function of `cfg`. A draw with a single class is redrawn from a
/// derived seed, at most ten times.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n_drugs < 2 || cfg.n_targets < 2 {
        return Err(Error::Config(
            "gen_synthetic needs at least 2 drugs and 2 targets".into(),
        ));
    }
    if cfg.n_latent == 0 || cfg.drug_dim == 0 || cfg.protein_dim == 0 || cfg.pocket_dim == Some(0) {
        return Err(Error::Config("gen_synthetic dimensions must be positive".into()));
    }
    if !(cfg.noise >= 0.0) || !cfg.noise.is_finite() {
        return Err(Error::Config("noise must be finite and non-negative".into()));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let master = if attempt == 0 {
            cfg.seed
        } else {
            seed::derive_seed(cfg.seed, attempt)
        };
        let mut data = draw(cfg, master)?;
        let rate = data.positive_rate();
        if rate > 0.0 && rate < 1.0 {
            data.attempts = attempt + 1;
            return Ok(data);
        }
        log::warn!("synthetic draw {} has a single class, redrawing", attempt + 1);
    }
    Err(Error::Infeasible(format!(
        "no two-class synthetic draw in {MAX_ATTEMPTS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_bytes_for_identical_seed() {
        let cfg = SynthConfig {
            n_drugs: 20,
            n_targets: 6,
            pocket_dim: Some(5),
            affinity: true,
            noise: 0.1,
            seed: 7,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = gen_synthetic(&cfg)
            .unwrap()
            .write_to(a.path(), EmbeddingFormat::Binary)
            .unwrap();
        let fb = gen_synthetic(&cfg)
            .unwrap()
            .write_to(b.path(), EmbeddingFormat::Binary)
            .unwrap();
        assert_eq!(fa.len(), 5);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let eight = gen_synthetic(&SynthConfig { seed: 8, ..cfg.clone() }).unwrap();
        assert_ne!(eight.drugs, gen_synthetic(&cfg).unwrap().drugs);
    }

    #[test]
    fn labels_follow_planted_factors() {
        let d = gen_synthetic(&SynthConfig {
            n_drugs: 30,
            n_targets: 10,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.interactions.len(), 300);
        for (k, rec) in d.interactions.iter().enumerate() {
            let s = dot(&d.drug_factors[k / 10], &d.target_factors[k % 10]);
            assert_eq!(rec.label, Some(s > 0.0));
        }
        for (_, v) in d.drugs.iter() {
            assert!(v.iter().all(|&x| x as f32 as f64 == x));
        }
    }

    #[test]
    fn smiles_tokenize_and_track_factors() {
        let vocab = crate::model::Vocab::default();
        let d = gen_synthetic(&SynthConfig::default()).unwrap();
        for s in &d.smiles {
            let t = crate::model::tokenize(&vocab, &s.smiles, 32).unwrap();
            assert!(!t.truncated);
            assert!(t.ids.iter().all(|&i| i != crate::model::tokenizer::UNK));
        }
        assert_eq!(smiles_for(&[-2.0, 0.5]), "CN(N)O");
    }

    #[test]
    fn degenerate_configs() {
        let bad = SynthConfig {
            n_drugs: 1,
            ..Default::default()
        };
        assert_eq!(gen_synthetic(&bad).unwrap_err().class(), "CONFIG");
        let bad = SynthConfig {
            noise: -1.0,
            ..Default::default()
        };
        assert_eq!(gen_synthetic(&bad).unwrap_err().class(), "CONFIG");
    }
}
