//! Recall/EF at a cutoff and screening budgets.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ActiveSet, RankedLibrary};
use crate::error::{Error, Result};
use crate::seed;

/// 1-based library positions of the actives present, ascending.
pub fn active_ranks(lib: &RankedLibrary, actives: &ActiveSet) -> Vec<usize> {
    lib.ids
        .iter()
        .enumerate()
        .filter(|(_, id)| actives.contains(id))
        .map(|(i, _)| i + 1)
        .collect()
}

/// `ceil(k% · A)`, at least one. The slack keeps products such as
/// `0.2 · 5` from rounding up to 2.
pub fn target_count(k_percent: f64, a: usize) -> usize {
    ((k_percent / 100.0 * a as f64 - 1e-9).ceil() as usize).clamp(1, a.max(1))
}

fn check_k_percent(k: f64) -> Result<()> {
    if !(k > 0.0 && k <= 100.0) {
        return Err(Error::Usage(format!("k_percent must lie in (0, 100], got {k}")));
    }
    Ok(())
}

fn check_actives(actives: &ActiveSet) -> Result<()> {
    if actives.is_empty() {
        return Err(Error::Empty("no actives".into()));
    }
    Ok(())
}

/// Fraction of the actives found in the top `k` compounds.
pub fn recall_at_k(lib: &RankedLibrary, actives: &ActiveSet, k: usize) -> Result<f64> {
    check_actives(actives)?;
    if k == 0 || k > lib.n() {
        return Err(Error::Usage(format!("k must lie in [1, {}], got {k}", lib.n())));
    }
    let hits = lib.ids[..k].iter().filter(|id| actives.contains(id)).count();
    Ok(hits as f64 / actives.len() as f64)
}

/// `Recall@k · N / k`.
pub fn ef_at_k(lib: &RankedLibrary, actives: &ActiveSet, k: usize) -> Result<f64> {
    let recall = recall_at_k(lib, actives, k)?;
    Ok(recall * lib.n() as f64 / k as f64)
}

/// Percentage of the library to screen to recover `ceil(k% · A)` actives.
pub fn kpct_actives_budget(lib: &RankedLibrary, actives: &ActiveSet, k_percent: f64) -> Result<f64> {
    check_k_percent(k_percent)?;
    check_actives(actives)?;
    let ranks = active_ranks(lib, actives);
    let need = target_count(k_percent, actives.len());
    let last = ranks.get(need - 1).ok_or_else(|| {
        Error::Infeasible(format!(
            "{need} actives needed for {k_percent}% but only {} are in the library",
            ranks.len()
        ))
    })?;
    Ok(100.0 * *last as f64 / lib.n() as f64)
}

/// Percentage of the library to screen to recover every one of the
/// `ceil(k% · A)` most potent actives (potency descending, ties by id).
pub fn topk_potency_budget(lib: &RankedLibrary, actives: &ActiveSet, k_percent: f64) -> Result<f64> {
    check_k_percent(k_percent)?;
    check_actives(actives)?;
    let mut by_potency: Vec<(&str, f64)> = actives
        .potency
        .iter()
        .map(|(id, p)| {
            p.map(|p| (id.as_str(), p))
                .ok_or_else(|| Error::MissingColumn(format!("potency of '{id}'")))
        })
        .collect::<Result<_>>()?;
    by_potency.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let need = target_count(k_percent, actives.len());
    let pos: HashMap<&str, usize> = lib.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i + 1)).collect();
    let mut last = 0;
    for (id, _) in &by_potency[..need] {
        let r = pos
            .get(id)
            .ok_or_else(|| Error::Infeasible(format!("active '{id}' is not in the library")))?;
        last = last.max(*r);
    }
    Ok(100.0 * last as f64 / lib.n() as f64)
}

/// Percentage of actives inside the top `ceil(k% · N)` compounds.
pub fn top_fraction_recall(lib: &RankedLibrary, actives: &ActiveSet, k_percent: f64) -> Result<f64> {
    check_k_percent(k_percent)?;
    let k = target_count(k_percent, lib.n());
    Ok(100.0 * recall_at_k(lib, actives, k)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub k_percent: f64,
    pub ar_mean: f64,
    pub ar_sd: f64,
    pub topk_mean: f64,
    pub topk_sd: f64,
}

/// Monte-Carlo budgets of a uniformly random ranking of `n` compounds with
/// `a` actives. Under a random ranking the top-potency subset is a uniform
/// subset of the actives, so the Top-k budget is the deepest of
/// `ceil(k% · A)` random active positions.
pub fn random_baseline(n: usize, a: usize, k_grid: &[f64], trials: usize, seed: u64) -> Result<Vec<BaselineRow>> {
    if trials == 0 {
        return Err(Error::Usage("random_baseline needs at least one trial".into()));
    }
    if a == 0 || a > n {
        return Err(Error::Usage(format!("need 1 <= A <= N, got A={a}, N={n}")));
    }
    for &k in k_grid {
        check_k_percent(k)?;
    }
    let needs: Vec<usize> = k_grid.iter().map(|&k| target_count(k, a)).collect();
    let mut rng = seed::rng(seed, 0);
    let mut ar = vec![Vec::with_capacity(trials); k_grid.len()];
    let mut topk = vec![Vec::with_capacity(trials); k_grid.len()];
    let mut prefix_max = vec![0usize; a];
    for _ in 0..trials {
        let mut pos = sample(&mut rng, n, a).into_vec();
        pos.shuffle(&mut rng);
        let mut m = 0;
        for (i, &p) in pos.iter().enumerate() {
            m = m.max(p + 1);
            prefix_max[i] = m;
        }
        pos.sort_unstable();
        for (j, &need) in needs.iter().enumerate() {
            ar[j].push(100.0 * (pos[need - 1] + 1) as f64 / n as f64);
            topk[j].push(100.0 * prefix_max[need - 1] as f64 / n as f64);
        }
    }
    Ok(k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let (ar_mean, ar_sd) = mean_sd(&ar[j]);
            let (topk_mean, topk_sd) = mean_sd(&topk[j]);
            BaselineRow {
                k_percent: k,
                ar_mean,
                ar_sd,
                topk_mean,
                topk_sd,
            }
        })
        .collect())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
